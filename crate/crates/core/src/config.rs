//! Flat `key = value` run configuration. Values are kept as the strings the
//! user gave (after validation) so the effective config echoes verbatim.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{SplitSpec, PRESETS};
use crate::error::{Error, Result};
use crate::loss::TargetMode;
use crate::nn::NetworkSpec;
use crate::train::{JointInput, Stage, TrainConfig};

type Check = fn(&str) -> Result<()>;

struct Key {
    name: &'static str,
    default: &'static str,
    check: Check,
}

fn parsed<T: FromStr>(name: &'static str) -> impl Fn(&str) -> Result<T> {
    move |v| {
        v.parse()
            .map_err(|_| Error::Config(format!("bad value {v:?} for {name}")))
    }
}

fn is_usize(v: &str) -> Result<()> {
    parsed::<usize>("integer key")(v).map(drop)
}
fn is_u64(v: &str) -> Result<()> {
    parsed::<u64>("integer key")(v).map(drop)
}
fn is_f64(v: &str) -> Result<()> {
    parsed::<f64>("numeric key")(v).map(drop)
}
fn is_bool(v: &str) -> Result<()> {
    parse_bool(v).map(drop)
}
fn anything(_: &str) -> Result<()> {
    Ok(())
}
fn is_stage(v: &str) -> Result<()> {
    v.parse::<Stage>().map(drop)
}
fn is_target(v: &str) -> Result<()> {
    v.parse::<TargetMode>().map(drop)
}
fn is_joint_input(v: &str) -> Result<()> {
    v.parse::<JointInput>().map(drop)
}
fn is_split(v: &str) -> Result<()> {
    parse_split(v).map(drop)
}
fn is_test_split(v: &str) -> Result<()> {
    if v == "all" {
        Ok(())
    } else {
        is_split(v)
    }
}
fn is_kl(v: &str) -> Result<()> {
    if v == "auto" {
        Ok(())
    } else {
        is_f64(v)
    }
}
fn is_optional_u64(v: &str) -> Result<()> {
    if v == "none" {
        Ok(())
    } else {
        is_u64(v)
    }
}
fn is_list(v: &str) -> Result<()> {
    if v.split(',').any(|d| d.trim().is_empty()) {
        return Err(Error::Config(format!("empty entry in list {v:?}")));
    }
    Ok(())
}

const KEYS: &[Key] = &[
    Key {
        name: "stage",
        default: "seg",
        check: is_stage,
    },
    Key {
        name: "data",
        default: "data",
        check: anything,
    },
    Key {
        name: "train_domain",
        default: "chase-like",
        check: anything,
    },
    Key {
        name: "split",
        default: "24,4,20",
        check: is_split,
    },
    Key {
        name: "split_seed",
        default: "0",
        check: is_u64,
    },
    Key {
        name: "test_domains",
        default: "chase-like,drive-like,stare-like,aria-like,hrf-like",
        check: is_list,
    },
    Key {
        name: "test_split",
        default: "all",
        check: is_test_split,
    },
    Key {
        name: "resolution",
        default: "64",
        check: is_usize,
    },
    Key {
        name: "base_width",
        default: "4",
        check: is_usize,
    },
    Key {
        name: "width_scale",
        default: "1",
        check: is_f64,
    },
    Key {
        name: "seed",
        default: "0",
        check: is_u64,
    },
    Key {
        name: "epochs",
        default: "40",
        check: is_usize,
    },
    Key {
        name: "batch_size",
        default: "2",
        check: is_usize,
    },
    Key {
        name: "lr",
        default: "0.002",
        check: is_f64,
    },
    Key {
        name: "patience",
        default: "10",
        check: is_usize,
    },
    Key {
        name: "kl_weight",
        default: "auto",
        check: is_kl,
    },
    Key {
        name: "inject_variance",
        default: "0.0001",
        check: is_f64,
    },
    Key {
        name: "inject",
        default: "true",
        check: is_bool,
    },
    Key {
        name: "target",
        default: "signed",
        check: is_target,
    },
    Key {
        name: "joint_input",
        default: "raw",
        check: is_joint_input,
    },
    Key {
        name: "seg_weight",
        default: "1",
        check: is_f64,
    },
    Key {
        name: "pred_weight",
        default: "1",
        check: is_f64,
    },
    Key {
        name: "halt_after",
        default: "none",
        check: is_optional_u64,
    },
    Key {
        name: "resume",
        default: "false",
        check: is_bool,
    },
    Key {
        name: "out",
        default: "runs",
        check: anything,
    },
];

pub fn parse_bool(v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("expected true or false, got {v:?}"))),
    }
}

/// `train,val,test` counts.
pub fn parse_split(v: &str) -> Result<SplitSpec> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    let bad = || Error::Config(format!("split must be train,val,test counts, got {v:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let n: Vec<usize> = parts
        .iter()
        .map(|p| p.parse().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    Ok(SplitSpec::new(n[0], n[1], n[2]))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|k| k.default.to_string()).collect(),
        }
    }
}

impl RunConfig {
    pub fn keys() -> impl Iterator<Item = &'static str> {
        KEYS.iter().map(|k| k.name)
    }

    fn index(key: &str) -> Result<usize> {
        KEYS.iter().position(|k| k.name == key).ok_or_else(|| {
            Error::Config(format!(
                "unknown config key {key:?} (known: {})",
                KEYS.iter().map(|k| k.name).collect::<Vec<_>>().join(", ")
            ))
        })
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let i = Self::index(key)?;
        let value = value.trim();
        (KEYS[i].check)(value).map_err(|e| Error::Config(format!("{key}: {e}")))?;
        self.values[i] = value.to_string();
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {assignment:?}")))?;
        self.set(k.trim(), v)
    }

    pub fn get(&self, key: &str) -> &str {
        &self.values[Self::index(key).expect("known key")]
    }

    /// Applies every assignment of a config file on top of `self`.
    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.apply(line)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.merge_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Every key in declaration order; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in KEYS.iter().zip(&self.values) {
            let _ = writeln!(s, "{} = {v}", k.name);
        }
        s
    }

    fn num<T: FromStr>(&self, key: &'static str) -> T {
        parsed::<T>(key)(self.get(key)).expect("validated on set")
    }

    pub fn stage(&self) -> Stage {
        self.num("stage")
    }

    pub fn spec(&self) -> NetworkSpec {
        NetworkSpec {
            resolution: self.num("resolution"),
            base_width: self.num("base_width"),
            width_scale: self.num("width_scale"),
        }
    }

    pub fn out(&self) -> PathBuf {
        PathBuf::from(self.get("out"))
    }

    pub fn data_root(&self) -> PathBuf {
        PathBuf::from(self.get("data"))
    }

    pub fn train_domain(&self) -> &str {
        self.get("train_domain")
    }

    pub fn split(&self) -> SplitSpec {
        parse_split(self.get("split")).expect("validated on set")
    }

    /// Split of test-only domains holding `n` samples.
    pub fn test_split(&self, n: usize) -> SplitSpec {
        match self.get("test_split") {
            "all" => SplitSpec::new(0, 0, n),
            v => parse_split(v).expect("validated on set"),
        }
    }

    pub fn split_seed(&self) -> u64 {
        self.num("split_seed")
    }

    pub fn test_domains(&self) -> Vec<String> {
        self.get("test_domains")
            .split(',')
            .map(|d| d.trim().to_string())
            .collect()
    }

    /// `auto` scales the summed KL to the per-pixel reconstruction mean.
    pub fn kl_weight(&self) -> f64 {
        match self.get("kl_weight") {
            "auto" => {
                let r = self.spec().resolution as f64;
                1.0 / (r * r)
            }
            _ => self.num("kl_weight"),
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut t = TrainConfig::new(self.stage(), self.spec(), self.out());
        t.epochs = self.num("epochs");
        t.batch_size = self.num("batch_size");
        t.lr = self.num::<f64>("lr") as f32;
        t.seed = self.num("seed");
        t.patience = self.num("patience");
        t.kl_weight = self.kl_weight();
        t.inject_variance = self.num("inject_variance");
        t.inject = parse_bool(self.get("inject"))?;
        t.target = self.num("target");
        t.joint_input = self.num("joint_input");
        t.seg_weight = self.num("seg_weight");
        t.pred_weight = self.num("pred_weight");
        t.halt_after = match self.get("halt_after") {
            "none" => None,
            v => Some(parsed::<u64>("halt_after")(v)?),
        };
        t.resume = parse_bool(self.get("resume"))?;
        t.validate()?;
        Ok(t)
    }

    /// Whether `train_domain` names a built-in synthetic preset.
    pub fn is_synthetic(&self) -> bool {
        PRESETS.contains(&self.train_domain())
    }
}
