//! Prediction heads for the baselines that regress modality targets
//! directly from the audio embedding.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{join, Linear, Module, ParamMut, ParamRef};
use crate::rng::Rng;

/// Logits are clipped to this magnitude before the cross-entropy.
pub const LOGIT_CLIP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineMode {
    G,
    Cf,
    CfG,
}

impl BaselineMode {
    pub fn uses_genre(self) -> bool {
        matches!(self, BaselineMode::G | BaselineMode::CfG)
    }

    pub fn uses_cf(self) -> bool {
        matches!(self, BaselineMode::Cf | BaselineMode::CfG)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineHeads {
    pub mode: BaselineMode,
    pub genre: Option<Linear>,
    pub cf: Option<Linear>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    /// Genre probabilities in (0, 1).
    pub genre: Option<Array2<f64>>,
    pub cf: Option<Array2<f64>>,
    genre_logits: Option<Array2<f64>>,
}

impl Predictions {
    pub fn arity(&self) -> usize {
        usize::from(self.genre.is_some()) + usize::from(self.cf.is_some())
    }
}

#[derive(Debug, Clone, Default)]
pub struct Targets<'a> {
    /// Multi-hot genre vectors.
    pub genre: Option<&'a Array2<f64>>,
    pub cf: Option<&'a Array2<f64>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselineLoss {
    pub bce: f64,
    pub mse: f64,
    pub total: f64,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy of clipped logits, with `dL/dlogits`.
pub fn bce_with_logits(logits: &Array2<f64>, target: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    if logits.dim() != target.dim() {
        return Err(Error::shape(
            format!("{:?}", logits.dim()),
            format!("{:?}", target.dim()),
        ));
    }
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(logits.dim());
    for ((g, &z), &y) in grad.iter_mut().zip(logits).zip(target) {
        let z = z.clamp(-LOGIT_CLIP, LOGIT_CLIP);
        // log(1 + e^z) - y z, written to stay finite for large |z|
        loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z;
        *g = (sigmoid(z) - y) / n;
    }
    Ok((loss / n, grad))
}

pub fn mse(pred: &Array2<f64>, target: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    if pred.dim() != target.dim() {
        return Err(Error::shape(
            format!("{:?}", pred.dim()),
            format!("{:?}", target.dim()),
        ));
    }
    let n = pred.len() as f64;
    let diff = pred - target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff * (2.0 / n)))
}

impl BaselineHeads {
    pub fn new(
        mode: BaselineMode,
        dim: usize,
        n_genres: usize,
        cf_dim: usize,
        rng: &mut Rng,
    ) -> Self {
        BaselineHeads {
            mode,
            genre: mode.uses_genre().then(|| Linear::new(rng, dim, n_genres)),
            cf: mode.uses_cf().then(|| Linear::new(rng, dim, cf_dim)),
        }
    }

    pub fn forward(&self, phi: &Array2<f64>) -> Result<Predictions> {
        let d_in = self.genre.as_ref().or(self.cf.as_ref()).map(Linear::d_in);
        if d_in.is_some_and(|d| d != phi.ncols()) {
            return Err(Error::shape(d_in.unwrap_or(0), phi.ncols()));
        }
        let genre_logits = self.genre.as_ref().map(|h| h.forward(phi));
        Ok(Predictions {
            genre: genre_logits
                .as_ref()
                .map(|z| z.mapv(|v| sigmoid(v.clamp(-LOGIT_CLIP, LOGIT_CLIP)))),
            cf: self.cf.as_ref().map(|h| h.forward(phi)),
            genre_logits,
        })
    }

    /// Loss of `pred` against `targets` and `dL/dphi`, accumulating head
    /// gradients into `grad`.
    pub fn loss_grad(
        &self,
        phi: &Array2<f64>,
        pred: &Predictions,
        targets: &Targets<'_>,
        grad: &mut BaselineHeads,
    ) -> Result<(BaselineLoss, Array2<f64>)> {
        let mut out = BaselineLoss::default();
        let mut d_phi = Array2::zeros(phi.dim());
        if let (Some(head), Some(z)) = (&self.genre, &pred.genre_logits) {
            let y = targets
                .genre
                .ok_or_else(|| Error::InvalidArgument("genre targets required".into()))?;
            let (l, dz) = bce_with_logits(z, y)?;
            out.bce = l;
            d_phi += &head.backward(phi, &dz, grad.genre.as_mut().expect("same mode"));
        }
        if let (Some(head), Some(p)) = (&self.cf, &pred.cf) {
            let y = targets
                .cf
                .ok_or_else(|| Error::InvalidArgument("cf targets required".into()))?;
            let (l, dp) = mse(p, y)?;
            out.mse = l;
            d_phi += &head.backward(phi, &dp, grad.cf.as_mut().expect("same mode"));
        }
        out.total = out.bce + out.mse;
        Ok((out, d_phi))
    }
}

impl Module for BaselineHeads {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.genre.visit(&join(prefix, "genre"), out);
        self.cf.visit(&join(prefix, "cf"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.genre.visit_mut(&join(prefix, "genre"), out);
        self.cf.visit_mut(&join(prefix, "cf"), out);
    }
}

#[cfg(test)]
mod tests {
    use ndarray::array;
    use rand::{Rng as _, SeedableRng};

    use super::*;

    #[test]
    fn probabilities_stay_in_range_and_zero_heads_give_half() {
        let mut rng = Rng::seed_from_u64(0);
        let mut heads = BaselineHeads::new(BaselineMode::CfG, 4, 219, 6, &mut rng);
        let phi = Array2::from_shape_simple_fn((3, 4), || rng.random_range(-5.0..5.0));
        let p = heads.forward(&phi).unwrap();
        assert_eq!(p.arity(), 2);
        assert!(p
            .genre
            .as_ref()
            .unwrap()
            .iter()
            .all(|&v| v > 0.0 && v < 1.0));
        for t in heads.params_mut() {
            t.data.fill(0.0);
        }
        let p = heads.forward(&phi).unwrap();
        assert!(p.genre.unwrap().iter().all(|&v| v == 0.5));
        assert_eq!(p.cf.unwrap().dim(), (3, 6));
    }

    #[test]
    fn saturated_logits_give_tiny_bce() {
        let y = array![[1.0, 0.0, 1.0]];
        let z = array![[1e9, -1e9, 45.0]];
        let (l, _) = bce_with_logits(&z, &y).unwrap();
        assert!(l < 1e-9 && l >= 0.0);
    }

    #[test]
    fn mse_of_exact_prediction_is_zero() {
        let y = array![[0.5, -1.0]];
        assert_eq!(mse(&y, &y).unwrap().0, 0.0);
        assert!(mse(&y, &array![[0.5]]).is_err());
    }

    #[test]
    fn combined_loss_is_the_sum() {
        let mut rng = Rng::seed_from_u64(1);
        let heads = BaselineHeads::new(BaselineMode::CfG, 4, 5, 3, &mut rng);
        let phi = Array2::from_shape_simple_fn((2, 4), || rng.random_range(-1.0..1.0));
        let yg = array![[1.0, 0.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 0.0, 0.0]];
        let yc = Array2::from_shape_simple_fn((2, 3), || rng.random_range(0.0..1.0));
        let pred = heads.forward(&phi).unwrap();
        let mut grad = heads.zeros_like();
        let t = Targets {
            genre: Some(&yg),
            cf: Some(&yc),
        };
        let (l, _) = heads.loss_grad(&phi, &pred, &t, &mut grad).unwrap();
        let logits = heads.genre.as_ref().unwrap().forward(&phi);
        let bce: f64 = logits
            .iter()
            .zip(&yg)
            .map(|(&z, &y)| -(y * sigmoid(z).ln() + (1.0 - y) * (1.0 - sigmoid(z)).ln()))
            .sum::<f64>()
            / 10.0;
        let cf = heads.cf.as_ref().unwrap().forward(&phi);
        let m: f64 = cf
            .iter()
            .zip(&yc)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / 6.0;
        assert!((l.bce - bce).abs() < 1e-9);
        assert!((l.mse - m).abs() < 1e-9);
        assert!((l.total - (bce + m)).abs() < 1e-9);
    }

    #[test]
    fn genre_mode_has_no_cf_head() {
        let mut rng = Rng::seed_from_u64(2);
        let heads = BaselineHeads::new(BaselineMode::G, 4, 5, 3, &mut rng);
        assert!(heads.cf.is_none());
        assert!(heads.params().iter().all(|p| p.name.starts_with("genre.")));
    }
}
