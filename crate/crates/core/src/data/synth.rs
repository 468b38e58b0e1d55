//! Procedural fundus-like images: random-walk vessels radiating from an
//! optic disc, rendered dark on a textured background inside a circular
//! field of view. Everything is a pure function of (domain, seed, index).

use std::f32::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::Sample;
use crate::autograd::Tensor;
use crate::error::{Error, Result};

/// Blob-shaped distractors that are not vessels (exudates when bright,
/// haemorrhages when dark).
#[derive(Clone, Debug, PartialEq)]
pub struct Lesions {
    pub count: (u32, u32),
    /// Radius range as a fraction of the image side.
    pub radius: (f32, f32),
    /// Signed peak intensity change.
    pub intensity: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDomain {
    pub name: String,
    pub vessel_count: (u32, u32),
    /// Vessel diameter in pixels at the root; vessels taper to 60%.
    pub thickness: (f32, f32),
    /// Vessel length as a fraction of the image side.
    pub length: (f32, f32),
    /// Standard deviation of the heading change per pixel, radians.
    pub curvature: f32,
    /// Chance that a vessel spawns one thinner side branch.
    pub branch_prob: f32,
    /// Intensity drop at a vessel centre relative to the background.
    pub contrast: f32,
    pub central_reflex: bool,
    /// Reflex peak as a fraction of `contrast`.
    pub reflex_brightness: f32,
    pub background: f32,
    /// Amplitude of the low-frequency background texture.
    pub texture: f32,
    pub noise_sigma: f32,
    /// Gaussian blur sigma in pixels; 0 disables blurring.
    pub blur_radius: f32,
    pub lesions: Option<Lesions>,
}

pub const PRESETS: &[&str] = &["chase-like", "drive-like", "stare-like", "aria-like", "hrf-like"];

impl SynthDomain {
    /// Built-in domain by preset name.
    pub fn preset(name: &str) -> Option<Self> {
        let base = SynthDomain {
            name: name.to_string(),
            vessel_count: (5, 7),
            thickness: (2.5, 4.0),
            length: (0.45, 0.8),
            curvature: 0.05,
            branch_prob: 0.4,
            contrast: 0.35,
            central_reflex: true,
            reflex_brightness: 0.6,
            background: 0.55,
            texture: 0.04,
            noise_sigma: 0.015,
            blur_radius: 0.7,
            lesions: None,
        };
        let d = match name {
            // Few thick, high-contrast vessels with a bright centre line.
            "chase-like" => base,
            "drive-like" => SynthDomain {
                vessel_count: (7, 10),
                thickness: (1.5, 3.0),
                contrast: 0.25,
                central_reflex: false,
                noise_sigma: 0.03,
                texture: 0.06,
                ..base
            },
            "stare-like" => SynthDomain {
                vessel_count: (6, 9),
                thickness: (1.8, 3.2),
                contrast: 0.22,
                central_reflex: false,
                noise_sigma: 0.035,
                texture: 0.08,
                lesions: Some(Lesions {
                    count: (3, 6),
                    radius: (0.02, 0.05),
                    intensity: 0.25,
                }),
                ..base
            },
            "aria-like" => SynthDomain {
                vessel_count: (6, 9),
                thickness: (2.0, 3.5),
                contrast: 0.18,
                central_reflex: false,
                noise_sigma: 0.04,
                blur_radius: 1.2,
                lesions: Some(Lesions {
                    count: (2, 4),
                    radius: (0.02, 0.04),
                    intensity: -0.15,
                }),
                ..base
            },
            "hrf-like" => SynthDomain {
                vessel_count: (9, 13),
                thickness: (1.2, 2.5),
                curvature: 0.08,
                contrast: 0.3,
                central_reflex: false,
                noise_sigma: 0.02,
                blur_radius: 0.5,
                ..base
            },
            _ => return None,
        };
        Some(d)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("synthetic domain {}: {what}", self.name)));
        if self.vessel_count.0 > self.vessel_count.1 {
            return bad("vessel_count range is reversed");
        }
        if !(self.thickness.0 >= 1.0 && self.thickness.0 <= self.thickness.1) {
            return bad("thickness must be at least 1 px with min <= max");
        }
        if !(self.length.0 > 0.0 && self.length.0 <= self.length.1) {
            return bad("length range must be positive with min <= max");
        }
        if !(self.contrast > 0.0 && self.contrast <= 1.0) {
            return bad("contrast must lie in (0, 1]");
        }
        if !(self.curvature >= 0.0 && self.noise_sigma >= 0.0 && self.blur_radius >= 0.0) {
            return bad("curvature, noise_sigma and blur_radius must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.branch_prob) || !(0.0..=1.0).contains(&self.background) {
            return bad("branch_prob and background must lie in [0, 1]");
        }
        if let Some(l) = &self.lesions {
            if l.count.0 > l.count.1 || !(l.radius.0 > 0.0 && l.radius.0 <= l.radius.1) {
                return bad("lesion ranges must be non-degenerate");
            }
        }
        Ok(())
    }

    /// `key = value` lines, parseable by [`SynthDomain::from_params`].
    pub fn to_params(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "name = {}", self.name);
        let _ = writeln!(s, "vessel_count = {}..{}", self.vessel_count.0, self.vessel_count.1);
        let _ = writeln!(s, "thickness = {}..{}", self.thickness.0, self.thickness.1);
        let _ = writeln!(s, "length = {}..{}", self.length.0, self.length.1);
        let _ = writeln!(s, "curvature = {}", self.curvature);
        let _ = writeln!(s, "branch_prob = {}", self.branch_prob);
        let _ = writeln!(s, "contrast = {}", self.contrast);
        let _ = writeln!(s, "central_reflex = {}", self.central_reflex);
        let _ = writeln!(s, "reflex_brightness = {}", self.reflex_brightness);
        let _ = writeln!(s, "background = {}", self.background);
        let _ = writeln!(s, "texture = {}", self.texture);
        let _ = writeln!(s, "noise_sigma = {}", self.noise_sigma);
        let _ = writeln!(s, "blur_radius = {}", self.blur_radius);
        match &self.lesions {
            Some(l) => {
                let _ = writeln!(s, "lesion_count = {}..{}", l.count.0, l.count.1);
                let _ = writeln!(s, "lesion_radius = {}..{}", l.radius.0, l.radius.1);
                let _ = writeln!(s, "lesion_intensity = {}", l.intensity);
            }
            None => {
                let _ = writeln!(s, "lesion_count = 0..0");
            }
        }
        s
    }

    pub fn from_params(text: &str) -> Result<Self> {
        let mut d = Self::preset("chase-like").expect("built-in preset");
        let mut lesion_count = (0, 0);
        let mut lesion_radius = (0.02, 0.04);
        let mut lesion_intensity = 0.0;
        for line in text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            let (k, v) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Config(format!("expected key = value, got {line:?}")))?;
            match k {
                "name" => d.name = v.to_string(),
                "vessel_count" => d.vessel_count = range(k, v)?,
                "thickness" => d.thickness = range(k, v)?,
                "length" => d.length = range(k, v)?,
                "curvature" => d.curvature = num(k, v)?,
                "branch_prob" => d.branch_prob = num(k, v)?,
                "contrast" => d.contrast = num(k, v)?,
                "central_reflex" => d.central_reflex = num(k, v)?,
                "reflex_brightness" => d.reflex_brightness = num(k, v)?,
                "background" => d.background = num(k, v)?,
                "texture" => d.texture = num(k, v)?,
                "noise_sigma" => d.noise_sigma = num(k, v)?,
                "blur_radius" => d.blur_radius = num(k, v)?,
                "lesion_count" => lesion_count = range(k, v)?,
                "lesion_radius" => lesion_radius = range(k, v)?,
                "lesion_intensity" => lesion_intensity = num(k, v)?,
                _ => return Err(Error::Config(format!("unknown synthetic domain key {k:?}"))),
            }
        }
        d.lesions = (lesion_count.1 > 0).then_some(Lesions {
            count: lesion_count,
            radius: lesion_radius,
            intensity: lesion_intensity,
        });
        d.validate()?;
        Ok(d)
    }

    fn stream_seed(&self, seed: u64) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.name.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
    }

    fn rng_for(&self, seed: u64, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.stream_seed(seed));
        rng.set_stream(index as u64);
        rng
    }
}

fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("bad value {v:?} for {k}")))
}

fn range<T: std::str::FromStr>(k: &str, v: &str) -> Result<(T, T)> {
    let (a, b) = v
        .split_once("..")
        .ok_or_else(|| Error::Config(format!("{k} expects lo..hi, got {v:?}")))?;
    Ok((num(k, a.trim())?, num(k, b.trim())?))
}

/// Generates `n` samples; sample `i` depends only on (domain, seed, i).
pub fn synth_generate(domain: &SynthDomain, n: usize, resolution: usize, seed: u64) -> Result<Vec<Sample>> {
    domain.validate()?;
    if resolution < 8 {
        return Err(Error::Config(format!("synthetic resolution {resolution} is too small")));
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = domain.rng_for(seed, i);
            let scene = Scene::random(domain, resolution, &mut rng);
            scene.render(domain, &mut rng, &format!("{}-{:04}", domain.name, i))
        })
        .collect()
}

/// Everything needed to regenerate a synthetic dataset, plus its sample ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub domain: SynthDomain,
    pub n: usize,
    pub resolution: usize,
    pub seed: u64,
    pub ids: Vec<String>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = String::from("# synthetic dataset\n");
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "resolution = {}", self.resolution);
        let _ = writeln!(s, "seed = {}", self.seed);
        s.push_str(&self.domain.to_params());
        s.push_str("[ids]\n");
        for id in &self.ids {
            s.push_str(id);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (head, ids) = text.split_once("[ids]").unwrap_or((text, ""));
        let (mut n, mut resolution, mut seed) = (None, None, None);
        let mut params = String::new();
        for line in head.lines() {
            match line.split_once('=').map(|(k, v)| (k.trim(), v.trim())) {
                Some(("n", v)) => n = Some(num("n", v)?),
                Some(("resolution", v)) => resolution = Some(num("resolution", v)?),
                Some(("seed", v)) => seed = Some(num("seed", v)?),
                _ => {
                    params.push_str(line);
                    params.push('\n');
                }
            }
        }
        let missing = |k: &str| Error::Config(format!("manifest lacks {k}"));
        Ok(Self {
            domain: SynthDomain::from_params(&params)?,
            n: n.ok_or_else(|| missing("n"))?,
            resolution: resolution.ok_or_else(|| missing("resolution"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
            ids: ids
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
        })
    }

    /// Regenerates the samples this manifest describes.
    pub fn generate(&self) -> Result<Vec<Sample>> {
        synth_generate(&self.domain, self.n, self.resolution, self.seed)
    }
}

/// A synthetic sample with the midpoint of its longest vessel located, for
/// cutting breaks into a segmentation of it.
#[derive(Clone, Debug)]
pub struct VesselBreak {
    pub sample: Sample,
    /// Pixel coordinates `(x, y)` of the vessel midpoint.
    pub centre: (f32, f32),
    /// Unit vector along the vessel at the midpoint.
    pub direction: (f32, f32),
    /// Vessel radius at the midpoint, pixels.
    pub radius: f32,
}

impl VesselBreak {
    /// Zeroes a band `gap_px` long across the vessel in every `[.., H, W]`
    /// plane of `seg`.
    pub fn cut(&self, seg: &Tensor<f32>, gap_px: f32) -> Result<Tensor<f32>> {
        let (h, w) = match seg.shape() {
            [.., h, w] => (*h, *w),
            s => return Err(Error::dim("cut", format!("expected an image-shaped tensor, got {s:?}"))),
        };
        let (dx, dy) = self.direction;
        let reach = self.radius + 1.5;
        let mut out = seg.clone();
        for plane in out.data_mut().chunks_mut(h * w) {
            for y in 0..h {
                for x in 0..w {
                    let (rx, ry) = (x as f32 - self.centre.0, y as f32 - self.centre.1);
                    let along = rx * dx + ry * dy;
                    let across = -rx * dy + ry * dx;
                    if along.abs() <= gap_px / 2.0 && across.abs() <= reach {
                        plane[y * w + x] = 0.0;
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Renders sample `usize::MAX / 2` of `domain` and locates the midpoint of
/// its longest vessel.
pub fn vessel_break(domain: &SynthDomain, resolution: usize, seed: u64) -> Result<VesselBreak> {
    domain.validate()?;
    let mut rng = domain.rng_for(seed, usize::MAX >> 1);
    let scene = Scene::random(domain, resolution, &mut rng);
    let v = scene
        .vessels
        .iter()
        .max_by(|a, b| a.len().total_cmp(&b.len()))
        .ok_or_else(|| Error::Config("domain produced no vessels".into()))?;
    let mid = v.len() / 2.0;
    let mut arc = 0.0;
    let mut found = (v.segments[0].a, (1.0, 0.0), v.segments[0].ra);
    for seg in &v.segments {
        let l = seg.len();
        if l > 0.0 && arc <= mid && mid <= arc + l {
            let t = (mid - arc) / l;
            let d = ((seg.b.0 - seg.a.0) / l, (seg.b.1 - seg.a.1) / l);
            found = (
                (seg.a.0 + t * (seg.b.0 - seg.a.0), seg.a.1 + t * (seg.b.1 - seg.a.1)),
                d,
                seg.ra + t * (seg.rb - seg.ra),
            );
        }
        arc += l;
    }
    let sample = scene.render(domain, &mut rng, &format!("{}-break", domain.name))?;
    Ok(VesselBreak {
        sample,
        centre: found.0,
        direction: found.1,
        radius: found.2,
    })
}

#[derive(Clone, Debug)]
struct Segment {
    a: (f32, f32),
    b: (f32, f32),
    ra: f32,
    rb: f32,
}

impl Segment {
    fn len(&self) -> f32 {
        ((self.b.0 - self.a.0).powi(2) + (self.b.1 - self.a.1).powi(2)).sqrt()
    }

    /// Distance from `p` and the interpolated radius at the closest point.
    fn locate(&self, p: (f32, f32)) -> (f32, f32) {
        let (dx, dy) = (self.b.0 - self.a.0, self.b.1 - self.a.1);
        let l2 = dx * dx + dy * dy;
        let t = if l2 > 0.0 {
            (((p.0 - self.a.0) * dx + (p.1 - self.a.1) * dy) / l2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let q = (self.a.0 + t * dx, self.a.1 + t * dy);
        let d = ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt();
        (d, self.ra + t * (self.rb - self.ra))
    }
}

#[derive(Clone, Debug)]
struct Vessel {
    segments: Vec<Segment>,
}

impl Vessel {
    fn len(&self) -> f32 {
        self.segments.iter().map(Segment::len).sum()
    }
}

struct Blob {
    c: (f32, f32),
    r: f32,
    intensity: f32,
}

struct Scene {
    res: usize,
    fov_c: f32,
    fov_r: f32,
    disc: (f32, f32),
    texture: [(f32, f32, f32, f32); 3],
    vessels: Vec<Vessel>,
    blobs: Vec<Blob>,
}

const STEP: f32 = 0.5;

fn walk(
    rng: &mut ChaCha8Rng,
    start: (f32, f32),
    heading: f32,
    length: f32,
    radius: f32,
    curvature: f32,
    bounds: (f32, f32),
) -> Vessel {
    let turn = Normal::new(0.0, curvature * STEP.sqrt()).expect("finite curvature");
    let steps = (length / STEP).ceil().max(1.0) as usize;
    let mut p = start;
    let mut h = heading;
    let mut segments = Vec::with_capacity(steps);
    for i in 0..steps {
        h += turn.sample(rng);
        let q = (p.0 + STEP * h.cos(), p.1 + STEP * h.sin());
        let taper = |k: usize| radius * (1.0 - 0.4 * k as f32 / steps as f32);
        segments.push(Segment {
            a: p,
            b: q,
            ra: taper(i),
            rb: taper(i + 1),
        });
        p = q;
        let (c, r) = bounds;
        if ((p.0 - c).powi(2) + (p.1 - c).powi(2)).sqrt() > r + 2.0 {
            break;
        }
    }
    Vessel { segments }
}

impl Scene {
    fn random(d: &SynthDomain, res: usize, rng: &mut ChaCha8Rng) -> Self {
        let rf = res as f32;
        let fov_c = (rf - 1.0) / 2.0;
        let fov_r = 0.48 * rf;
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let disc = (
            fov_c + side * rf * rng.random_range(0.12..0.22),
            fov_c + rf * rng.random_range(-0.08..0.08),
        );
        let mut texture = [(0.0, 0.0, 0.0, 0.0); 3];
        for t in &mut texture {
            let ang = rng.random_range(0.0..2.0 * PI);
            let cycles = rng.random_range(0.5..2.5);
            let k = 2.0 * PI * cycles / rf;
            *t = (
                k * ang.cos(),
                k * ang.sin(),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.5..1.0),
            );
        }
        let count = rng.random_range(d.vessel_count.0..=d.vessel_count.1);
        let mut vessels = Vec::new();
        for _ in 0..count {
            let heading = rng.random_range(0.0..2.0 * PI);
            let start = (disc.0 + 1.5 * heading.cos(), disc.1 + 1.5 * heading.sin());
            let diameter = rng.random_range(d.thickness.0..=d.thickness.1);
            let length = rf * rng.random_range(d.length.0..=d.length.1);
            let v = walk(rng, start, heading, length, diameter / 2.0, d.curvature, (fov_c, fov_r));
            if rng.random_bool(d.branch_prob as f64) && v.segments.len() > 8 {
                let at = rng.random_range(v.segments.len() * 3 / 10..v.segments.len() * 7 / 10);
                let s = &v.segments[at];
                let parent = (s.b.1 - s.a.1).atan2(s.b.0 - s.a.0);
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let h = parent + sign * rng.random_range(0.4..0.9);
                let r = (s.ra * 0.7).max(0.5);
                let branch = walk(rng, s.b, h, length * 0.5, r, d.curvature, (fov_c, fov_r));
                vessels.push(v);
                vessels.push(branch);
            } else {
                vessels.push(v);
            }
        }
        let mut blobs = Vec::new();
        if let Some(l) = &d.lesions {
            let n = rng.random_range(l.count.0..=l.count.1);
            for _ in 0..n {
                let a = rng.random_range(0.0..2.0 * PI);
                let rr = fov_r * rng.random_range(0.0f32..0.85).sqrt();
                blobs.push(Blob {
                    c: (fov_c + rr * a.cos(), fov_c + rr * a.sin()),
                    r: rf * rng.random_range(l.radius.0..=l.radius.1),
                    intensity: l.intensity,
                });
            }
        }
        Self {
            res,
            fov_c,
            fov_r,
            disc,
            texture,
            vessels,
            blobs,
        }
    }

    fn render(&self, d: &SynthDomain, rng: &mut ChaCha8Rng, id: &str) -> Result<Sample> {
        let n = self.res;
        let rf = n as f32;
        // Per pixel, the smallest normalized distance u = dist / radius to any
        // vessel, with the radius there.
        let mut near = vec![(f32::INFINITY, 0.0f32); n * n];
        for v in &self.vessels {
            for s in &v.segments {
                let r = s.ra.max(s.rb) + 1.5;
                let x0 = (s.a.0.min(s.b.0) - r).floor().max(0.0) as usize;
                let x1 = ((s.a.0.max(s.b.0) + r).ceil() as usize).min(n - 1);
                let y0 = (s.a.1.min(s.b.1) - r).floor().max(0.0) as usize;
                let y1 = ((s.a.1.max(s.b.1) + r).ceil() as usize).min(n - 1);
                if x0 > x1 || y0 > y1 {
                    continue;
                }
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        let (dist, rad) = s.locate((x as f32, y as f32));
                        let u = dist / rad;
                        let k = y * n + x;
                        if u < near[k].0 {
                            near[k] = (u, rad);
                        }
                    }
                }
            }
        }

        let mut img = vec![0.0f32; n * n];
        let mut fov = vec![0.0f32; n * n];
        let mut mask = vec![0.0f32; n * n];
        for y in 0..n {
            for x in 0..n {
                let k = y * n + x;
                let (xf, yf) = (x as f32, y as f32);
                let rho = ((xf - self.fov_c).powi(2) + (yf - self.fov_c).powi(2)).sqrt() / self.fov_r;
                fov[k] = (rho <= 1.0) as u8 as f32;
                mask[k] = (near[k].0 <= 1.0 && rho <= 1.0) as u8 as f32;
                let mut v = d.background - 0.12 * rho * rho;
                for &(kx, ky, ph, amp) in &self.texture {
                    v += d.texture * amp * (kx * xf + ky * yf + ph).sin();
                }
                let dd = ((xf - self.disc.0).powi(2) + (yf - self.disc.1).powi(2)) / (0.06 * rf).powi(2);
                v += 0.25 * (-dd).exp();
                for b in &self.blobs {
                    let q = ((xf - b.c.0).powi(2) + (yf - b.c.1).powi(2)) / (b.r * b.r);
                    v += b.intensity * (-q).exp();
                }
                let (u, rad) = near[k];
                if u < 1.0 {
                    v -= d.contrast * (1.0 - u * u).sqrt();
                    if d.central_reflex && rad >= 1.0 {
                        v += d.reflex_brightness * d.contrast * (-(u / 0.3).powi(2)).exp();
                    }
                }
                img[k] = v;
            }
        }
        if d.blur_radius > 0.0 {
            gaussian_blur(&mut img, n, d.blur_radius);
        }
        if d.noise_sigma > 0.0 {
            let noise = Normal::new(0.0, d.noise_sigma).expect("finite noise");
            for v in &mut img {
                *v += noise.sample(rng);
            }
        }
        for (v, f) in img.iter_mut().zip(&fov) {
            *v = if *f > 0.0 { v.clamp(0.0, 1.0) } else { 0.0 };
        }
        let shape = vec![1, n, n];
        Sample::new(
            Tensor::new(shape.clone(), img)?,
            Tensor::new(shape.clone(), mask)?,
            Tensor::new(shape, fov)?,
            &d.name,
            id,
        )
    }
}

/// Separable Gaussian with edge clamping.
fn gaussian_blur(img: &mut [f32], n: usize, sigma: f32) {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f32 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let at = |i: isize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0f32; img.len()];
    for y in 0..n {
        for x in 0..n {
            tmp[y * n + x] = kernel
                .iter()
                .enumerate()
                .map(|(j, k)| k * img[y * n + at(x as isize + j as isize - radius)])
                .sum();
        }
    }
    for y in 0..n {
        for x in 0..n {
            img[y * n + x] = kernel
                .iter()
                .enumerate()
                .map(|(j, k)| k * tmp[at(y as isize + j as isize - radius) * n + x])
                .sum();
        }
    }
}
