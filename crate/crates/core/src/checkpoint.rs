//! Binary checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! magic "ERRNETCK" | version u32 | stage u8 | flags u8 | epoch u32 | step u64
//! spec: resolution u32, base_width u32, width_scale f64
//! shuffle rng: seed [u8; 32], stream u64, word_pos u128
//! latent rng: same layout, then draws u64
//! selection: best f64, best_epoch u32, stale u32
//! networks: count u32, then per network
//!     kind u8 | adam_step u64 | params u32, then per parameter
//!         name (u32 len + utf8) | kind u8 | frozen u8 | rank u8 | dims u32* |
//!         values f32* | first moment f32* | second moment f32*
//! ```

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{ParamKind, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::nn::{LatentSampler, NetKind, NetworkSpec};
use crate::train::Stage;

pub const MAGIC: &[u8; 8] = b"ERRNETCK";
pub const VERSION: u32 = 1;

/// Flag bit: the error predictor was trained without error injection.
pub const FLAG_NO_INJECTION: u8 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Early-stopping bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub best: f64,
    pub best_epoch: u32,
    pub stale: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub stage: Stage,
    pub flags: u8,
    /// Completed epochs.
    pub epoch: u32,
    /// Completed optimizer steps.
    pub step: u64,
    pub spec: NetworkSpec,
    pub rng: RngState,
    pub latent_rng: RngState,
    pub latent_draws: u64,
    pub selection: Selection,
    pub nets: Vec<(NetKind, ParamStore)>,
}

impl Checkpoint {
    pub fn net(&self, kind: NetKind) -> Option<&ParamStore> {
        self.nets.iter().find(|(k, _)| *k == kind).map(|(_, s)| s)
    }

    pub fn latent_sampler(&self) -> LatentSampler {
        LatentSampler::resume(self.latent_rng.restore(), self.latent_draws)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        w.extend_from_slice(&VERSION.to_le_bytes());
        w.push(self.stage.tag());
        w.push(self.flags);
        w.extend_from_slice(&self.epoch.to_le_bytes());
        w.extend_from_slice(&self.step.to_le_bytes());
        w.extend_from_slice(&(self.spec.resolution as u32).to_le_bytes());
        w.extend_from_slice(&(self.spec.base_width as u32).to_le_bytes());
        w.extend_from_slice(&self.spec.width_scale.to_le_bytes());
        for r in [&self.rng, &self.latent_rng] {
            w.extend_from_slice(&r.seed);
            w.extend_from_slice(&r.stream.to_le_bytes());
            w.extend_from_slice(&r.word_pos.to_le_bytes());
        }
        w.extend_from_slice(&self.latent_draws.to_le_bytes());
        w.extend_from_slice(&self.selection.best.to_le_bytes());
        w.extend_from_slice(&self.selection.best_epoch.to_le_bytes());
        w.extend_from_slice(&self.selection.stale.to_le_bytes());
        w.extend_from_slice(&(self.nets.len() as u32).to_le_bytes());
        for (kind, store) in &self.nets {
            w.push(kind_tag(*kind));
            w.extend_from_slice(&store.step.to_le_bytes());
            w.extend_from_slice(&(store.len() as u32).to_le_bytes());
            for p in store.params() {
                w.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
                w.extend_from_slice(p.name.as_bytes());
                w.push(match p.kind {
                    ParamKind::Trainable => 0,
                    ParamKind::Buffer => 1,
                });
                w.push(p.frozen as u8);
                w.push(p.value.shape().len() as u8);
                for &d in p.value.shape() {
                    w.extend_from_slice(&(d as u32).to_le_bytes());
                }
                for buf in [p.value.data(), &p.m, &p.v] {
                    for x in buf {
                        w.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
        }
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(r.fail(0, "not a checkpoint (bad magic)"));
        }
        let at = r.pos;
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(r.fail(at, format!("unsupported version {version}, expected {VERSION}")));
        }
        let at = r.pos;
        let stage = Stage::from_tag(r.u8("stage")?).ok_or_else(|| r.fail(at, "unknown stage tag"))?;
        let flags = r.u8("flags")?;
        let epoch = r.u32("epoch")?;
        let step = r.u64("step")?;
        let spec = NetworkSpec {
            resolution: r.u32("resolution")? as usize,
            base_width: r.u32("base_width")? as usize,
            width_scale: r.f64("width_scale")?,
        };
        let rng = r.rng()?;
        let latent_rng = r.rng()?;
        let latent_draws = r.u64("latent draws")?;
        let selection = Selection {
            best: r.f64("best metric")?,
            best_epoch: r.u32("best epoch")?,
            stale: r.u32("stale epochs")?,
        };
        let n_nets = r.u32("network count")?;
        let mut nets = Vec::new();
        for _ in 0..n_nets {
            let at = r.pos;
            let kind = kind_from_tag(r.u8("network kind")?).ok_or_else(|| r.fail(at, "unknown network kind"))?;
            let mut store = ParamStore::new();
            store.step = r.u64("adam step")?;
            let n_params = r.u32("parameter count")?;
            for _ in 0..n_params {
                let len = r.u32("name length")? as usize;
                let at = r.pos;
                let name = std::str::from_utf8(r.take(len, "name")?)
                    .map_err(|_| r.fail(at, "parameter name is not utf-8"))?
                    .to_string();
                let at = r.pos;
                let pkind = match r.u8("parameter kind")? {
                    0 => ParamKind::Trainable,
                    1 => ParamKind::Buffer,
                    _ => return Err(r.fail(at, "unknown parameter kind")),
                };
                let frozen = r.u8("frozen flag")? != 0;
                let rank = r.u8("rank")? as usize;
                let mut dims = Vec::with_capacity(rank);
                for _ in 0..rank {
                    dims.push(r.u32("dimension")? as usize);
                }
                let n: usize = dims.iter().product();
                let value = r.floats(n, &name)?;
                let m = r.floats(n, &name)?;
                let v = r.floats(n, &name)?;
                let idx = store.push(name, pkind, Tensor::new(dims, value)?);
                let p = &mut store.params_mut()[idx];
                p.frozen = frozen;
                p.m = m;
                p.v = v;
            }
            nets.push((kind, store));
        }
        if r.pos != bytes.len() {
            return Err(r.fail(r.pos, "trailing bytes after last network"));
        }
        Ok(Self {
            stage,
            flags,
            epoch,
            step,
            spec,
            rng,
            latent_rng,
            latent_draws,
            selection,
            nets,
        })
    }

    /// Writes via a temporary file so an interrupted save never leaves a
    /// truncated checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn kind_tag(k: NetKind) -> u8 {
    match k {
        NetKind::Segmentation => 0,
        NetKind::Injection => 1,
        NetKind::Prediction => 2,
    }
}

fn kind_from_tag(t: u8) -> Option<NetKind> {
    match t {
        0 => Some(NetKind::Segmentation),
        1 => Some(NetKind::Injection),
        2 => Some(NetKind::Prediction),
        _ => None,
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, offset: usize, detail: impl Into<String>) -> Error {
        Error::Format {
            offset: offset as u64,
            detail: detail.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(
                self.pos,
                format!(
                    "truncated while reading {what}: need {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("slice has length N"))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }

    fn rng(&mut self) -> Result<RngState> {
        Ok(RngState {
            seed: self.array("rng seed")?,
            stream: self.u64("rng stream")?,
            word_pos: u128::from_le_bytes(self.array("rng position")?),
        })
    }

    fn floats(&mut self, n: usize, name: &str) -> Result<Vec<f32>> {
        let raw = self.take(n * 4, name)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}
