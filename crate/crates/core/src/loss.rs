//! Training objectives. Each builder records its terms on the graph and
//! returns the differentiable total alongside the named parts for logging.

use crate::autograd::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub scalar: f64,
    pub components: Vec<(&'static str, f64)>,
}

impl LossValue {
    pub fn component(&self, name: &str) -> Option<f64> {
        self.components.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }
}

/// Recorded loss; `total` is the sum of `parts`.
#[derive(Clone, Debug)]
pub struct Loss {
    pub total: Var,
    pub parts: Vec<(&'static str, Var)>,
}

impl Loss {
    fn single(name: &'static str, v: Var) -> Self {
        Self {
            total: v,
            parts: vec![(name, v)],
        }
    }

    pub fn value<T: Real>(&self, g: &Graph<T>) -> LossValue {
        LossValue {
            scalar: g.value(self.total).item().to64(),
            components: self.parts.iter().map(|&(n, v)| (n, g.value(v).item().to64())).collect(),
        }
    }

    /// Sum of two losses, keeping every part.
    pub fn plus<T: Real>(self, g: &mut Graph<T>, other: Loss) -> Result<Loss> {
        let total = g.add(self.total, other.total)?;
        let mut parts = self.parts;
        parts.extend(other.parts);
        Ok(Loss { total, parts })
    }
}

/// Form of the error target the predictor learns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TargetMode {
    /// `clamp(G - S_hat, -1, 1)`.
    #[default]
    Signed,
    /// `(S_hat - G)^2`.
    Squared,
}

impl std::str::FromStr for TargetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "signed" => Ok(TargetMode::Signed),
            "squared" => Ok(TargetMode::Squared),
            _ => Err(Error::Config(format!("target must be signed or squared, got {s:?}"))),
        }
    }
}

impl std::fmt::Display for TargetMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TargetMode::Signed => "signed",
            TargetMode::Squared => "squared",
        })
    }
}

/// Clamped binary cross-entropy averaged over field-of-view pixels.
pub fn seg_loss<T: Real>(g: &mut Graph<T>, s: Var, truth: &Tensor<T>, fov: &Tensor<T>) -> Result<Loss> {
    Ok(Loss::single("seg", g.bce(s, truth, fov)?))
}

pub fn kl<T: Real>(g: &mut Graph<T>, mu: Var, log_var: Var) -> Result<Loss> {
    Ok(Loss::single("kl", g.kl_diag_gaussian(mu, log_var)?))
}

/// Reconstruction MSE plus weighted KL. A two-channel reconstruction is read
/// as (background, foreground) and compared with `[1 - s, s]`. The `kl` part
/// is logged after weighting so the parts still sum to the total.
pub fn vae_loss<T: Real>(
    g: &mut Graph<T>,
    recon: Var,
    s: &Tensor<T>,
    mu: Var,
    log_var: Var,
    kl_weight: f64,
) -> Result<Loss> {
    let target = reconstruction_target(s, g.shape(recon))?;
    let t = g.constant(target);
    let mse = g.mse(recon, t)?;
    let kl = g.kl_diag_gaussian(mu, log_var)?;
    let kl = g.scale(kl, kl_weight)?;
    let total = g.add(mse, kl)?;
    Ok(Loss {
        total,
        parts: vec![("recon", mse), ("kl", kl)],
    })
}

fn reconstruction_target<T: Real>(s: &Tensor<T>, recon_shape: &[usize]) -> Result<Tensor<T>> {
    let (n, c, h, w) = s.dims4("vae_loss")?;
    if c != 1 {
        return Err(Error::dim(
            "vae_loss",
            format!("segmentation must have 1 channel, got {c}"),
        ));
    }
    match recon_shape {
        [rn, 1, rh, rw] if (*rn, *rh, *rw) == (n, h, w) => Ok(s.clone()),
        [rn, 2, rh, rw] if (*rn, *rh, *rw) == (n, h, w) => {
            let plane = h * w;
            let mut data = Vec::with_capacity(2 * s.numel());
            for img in s.data().chunks(plane) {
                data.extend(img.iter().map(|&v| T::one() - v));
                data.extend_from_slice(img);
            }
            Tensor::new(vec![n, 2, h, w], data)
        }
        _ => Err(Error::dim(
            "vae_loss",
            format!(
                "reconstruction {:?} does not match segmentation {:?}",
                recon_shape,
                s.shape()
            ),
        )),
    }
}

/// What the predictor should output so that `s_hat + E` moves toward `truth`.
pub fn err_target(s_hat: &Tensor<f32>, truth: &Tensor<f32>, mode: TargetMode) -> Result<Tensor<f32>> {
    match mode {
        TargetMode::Signed => s_hat.zip_map(truth, |s, t| (t - s).clamp(-1.0, 1.0)),
        TargetMode::Squared => s_hat.zip_map(truth, |s, t| (s - t) * (s - t)),
    }
}

pub fn err_pred_loss<T: Real>(g: &mut Graph<T>, e_hat: Var, target: &Tensor<T>) -> Result<Loss> {
    let t = g.constant(target.clone());
    Ok(Loss::single("pred", g.mse(e_hat, t)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_probability_is_ln2() {
        let mut g = Graph::new();
        let s = g.constant(Tensor::full(vec![1, 1, 4, 4], 0.5));
        let truth = Tensor::from_fn(vec![1, 1, 4, 4], |i| (i % 2) as f32);
        let fov = Tensor::full(vec![1, 1, 4, 4], 1.0);
        let l = seg_loss(&mut g, s, &truth, &fov).unwrap().value(&g);
        assert!((l.scalar - std::f64::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn perfect_prediction_hits_clamp_floor() {
        let mut g = Graph::new();
        let truth = Tensor::from_fn(vec![1, 1, 4, 4], |i| (i % 3 == 0) as u8 as f32);
        let s = g.constant(truth.clone());
        let fov = Tensor::full(vec![1, 1, 4, 4], 1.0);
        let l = seg_loss(&mut g, s, &truth, &fov).unwrap().value(&g);
        assert!(l.scalar > 0.0 && l.scalar <= 1.6e-6, "{}", l.scalar);
    }

    #[test]
    fn empty_fov_is_usage_error() {
        let mut g = Graph::new();
        let s = g.constant(Tensor::full(vec![1, 1, 2, 2], 0.5));
        let z = Tensor::zeros(vec![1, 1, 2, 2]);
        assert!(matches!(seg_loss(&mut g, s, &z, &z), Err(Error::Usage(_))));
    }

    #[test]
    fn kl_closed_forms() {
        let mut g = Graph::new();
        let mu = g.constant(Tensor::zeros(vec![1, 5]));
        let lv = g.constant(Tensor::zeros(vec![1, 5]));
        assert_eq!(kl(&mut g, mu, lv).unwrap().value(&g).scalar, 0.0);
        let mu = g.constant(Tensor::full(vec![1, 1], 1.0));
        let lv = g.constant(Tensor::zeros(vec![1, 1]));
        assert!((kl(&mut g, mu, lv).unwrap().value(&g).scalar - 0.5).abs() < 1e-7);
    }

    #[test]
    fn vae_loss_offset_reconstruction() {
        let s = Tensor::from_fn(vec![1, 1, 3, 3], |i| i as f32 / 10.0);
        let mut g = Graph::new();
        let mu = g.constant(Tensor::zeros(vec![1, 4]));
        let lv = g.constant(Tensor::zeros(vec![1, 4]));
        let same = g.constant(s.clone());
        assert_eq!(vae_loss(&mut g, same, &s, mu, lv, 1.0).unwrap().value(&g).scalar, 0.0);
        let off = g.constant(s.map(|v| v + 0.1));
        let l = vae_loss(&mut g, off, &s, mu, lv, 1.0).unwrap().value(&g);
        assert!((l.scalar - 0.01).abs() < 1e-7);
        assert_eq!(l.components.len(), 2);
        let two = reconstruction_target(&s, &[1, 2, 3, 3]).unwrap();
        let two_off = g.constant(two.map(|v| v + 0.1));
        assert!((vae_loss(&mut g, two_off, &s, mu, lv, 1.0).unwrap().value(&g).scalar - 0.01).abs() < 1e-7);
    }

    #[test]
    fn target_modes() {
        let s = Tensor::new(vec![2], vec![0.2, 0.7]).unwrap();
        let t = Tensor::new(vec![2], vec![1.0, 0.0]).unwrap();
        let signed = err_target(&s, &t, TargetMode::Signed).unwrap();
        let squared = err_target(&s, &t, TargetMode::Squared).unwrap();
        assert!((signed.data()[0] - 0.8).abs() < 1e-7);
        assert!((signed.data()[1] + 0.7).abs() < 1e-7);
        assert!((squared.data()[0] - 0.64).abs() < 1e-6);
        assert!((squared.data()[1] - 0.49).abs() < 1e-6);
        assert_eq!("squared".parse::<TargetMode>().unwrap(), TargetMode::Squared);
        assert!("abs".parse::<TargetMode>().is_err());
    }

    #[test]
    fn pred_loss_offset() {
        let mut g = Graph::new();
        let e = Tensor::from_fn(vec![1, 1, 2, 2], |i| i as f32 * 0.1 - 0.2);
        let eh = g.constant(e.map(|v| v + 0.5));
        let l = err_pred_loss(&mut g, eh, &e).unwrap().value(&g);
        assert!((l.scalar - 0.25).abs() < 1e-7);
    }

    #[test]
    fn plus_keeps_parts() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::scalar(1.5));
        let b = g.constant(Tensor::scalar(0.25));
        let l = Loss::single("pred", a)
            .plus(&mut g, Loss::single("seg", b))
            .unwrap()
            .value(&g);
        assert_eq!(l.scalar, 1.75);
        assert_eq!(l.component("seg"), Some(0.25));
    }
}
