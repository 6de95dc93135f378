//! Contrastive alignment losses between modality embeddings.

use ndarray::{s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(a.len(), b.len()));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

fn normalize_rows(x: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    let norms = x.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    if norms.iter().any(|&n| n == 0.0 || !n.is_finite()) {
        return Err(Error::ZeroNorm);
    }
    let unit = x / &norms.view().insert_axis(Axis(1));
    Ok((unit, norms))
}

fn check_pair(a: &Array2<f64>, b: &Array2<f64>, tau: f64) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(
            format!("{:?}", a.dim()),
            format!("{:?}", b.dim()),
        ));
    }
    if a.nrows() == 0 {
        return Err(Error::Empty("contrastive batch".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    Ok(())
}

/// NT-Xent loss of anchors `a` against positives `b`, summed over the batch,
/// together with its gradients with respect to `a` and `b`.
///
/// Every anchor competes against all `2M - 1` other rows of `[a; b]`, so the
/// loss is not symmetric in its arguments.
pub fn ntxent_loss_grad(
    a: &Array2<f64>,
    b: &Array2<f64>,
    tau: f64,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    check_pair(a, b, tau)?;
    let m = a.nrows();
    let (a_hat, a_norm) = normalize_rows(a)?;
    let (b_hat, b_norm) = normalize_rows(b)?;
    let mut z = Array2::zeros((2 * m, a.ncols()));
    z.slice_mut(s![..m, ..]).assign(&a_hat);
    z.slice_mut(s![m.., ..]).assign(&b_hat);

    let logits = a_hat.dot(&z.t()) / tau;
    let mut g = Array2::zeros((m, 2 * m));
    let mut loss = 0.0;
    for i in 0..m {
        let row = logits.row(i);
        let max = row
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .map(|(_, &v)| (v - max).exp())
            .sum();
        loss += max + denom.ln() - row[m + i];
        for k in (0..2 * m).filter(|&k| k != i) {
            g[[i, k]] = (row[k] - max).exp() / denom;
        }
        g[[i, m + i]] -= 1.0;
    }

    let mut d_a_hat = g.dot(&z) / tau;
    let d_z = g.t().dot(&a_hat) / tau;
    d_a_hat += &d_z.slice(s![..m, ..]);
    let d_b_hat = d_z.slice(s![m.., ..]).to_owned();
    Ok((
        loss,
        unnormalize_grad(&a_hat, &a_norm, d_a_hat),
        unnormalize_grad(&b_hat, &b_norm, d_b_hat),
    ))
}

/// Pulls a gradient on `x / |x|` back to `x`.
fn unnormalize_grad(unit: &Array2<f64>, norms: &Array1<f64>, d_unit: Array2<f64>) -> Array2<f64> {
    let radial = (&d_unit * unit).sum_axis(Axis(1)).insert_axis(Axis(1));
    (d_unit - unit * &radial) / &norms.view().insert_axis(Axis(1))
}

pub fn ntxent_loss(a: &Array2<f64>, b: &Array2<f64>, tau: f64) -> Result<f64> {
    Ok(ntxent_loss_grad(a, b, tau)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub a2g: f64,
    pub a2p: f64,
    pub g2p: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            a2g: 1.0,
            a2p: 1.0,
            g2p: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.a2g, self.a2p, self.g2p];
        if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) || w.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be non-negative with at least one positive, got {w:?}"
            )));
        }
        Ok(())
    }

    pub fn uses_genre(&self) -> bool {
        self.a2g > 0.0 || self.g2p > 0.0
    }

    pub fn uses_cf(&self) -> bool {
        self.a2p > 0.0 || self.g2p > 0.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub a2g: f64,
    pub a2p: f64,
    pub g2p: f64,
    pub total: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.a2g, self.a2p, self.g2p, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    pub fn add(&mut self, other: &LossReport) {
        self.a2g += other.a2g;
        self.a2p += other.a2p;
        self.g2p += other.g2p;
        self.total += other.total;
    }

    pub fn scaled(&self, f: f64) -> LossReport {
        LossReport {
            a2g: self.a2g * f,
            a2p: self.a2p * f,
            g2p: self.g2p * f,
            total: self.total * f,
        }
    }
}

/// Embeddings of one batch. Modalities not used by the loss weights may be
/// left out.
#[derive(Debug, Clone, Copy)]
pub struct Embeddings<'a> {
    pub audio: &'a Array2<f64>,
    pub genre: Option<&'a Array2<f64>>,
    pub cf: Option<&'a Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct EmbeddingGrads {
    pub audio: Array2<f64>,
    pub genre: Option<Array2<f64>>,
    pub cf: Option<Array2<f64>>,
}

/// Symmetric pair loss `L(x, y) + L(y, x)` with gradients.
fn pair_loss(
    x: &Array2<f64>,
    y: &Array2<f64>,
    tau: f64,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let (l1, dx1, dy1) = ntxent_loss_grad(x, y, tau)?;
    let (l2, dy2, dx2) = ntxent_loss_grad(y, x, tau)?;
    Ok((l1 + l2, dx1 + dx2, dy1 + dy2))
}

fn require<'a>(m: Option<&'a Array2<f64>>, name: &str) -> Result<&'a Array2<f64>> {
    m.ok_or_else(|| {
        Error::InvalidArgument(format!("{name} embeddings required by the loss weights"))
    })
}

pub fn alignment_loss_grad(
    e: Embeddings<'_>,
    w: &LossWeights,
    tau: f64,
) -> Result<(LossReport, EmbeddingGrads)> {
    w.validate()?;
    let mut report = LossReport::default();
    let mut grads = EmbeddingGrads {
        audio: Array2::zeros(e.audio.dim()),
        genre: e.genre.map(|g| Array2::zeros(g.dim())),
        cf: e.cf.map(|c| Array2::zeros(c.dim())),
    };
    if w.a2g > 0.0 {
        let g = require(e.genre, "genre")?;
        let (l, da, dg) = pair_loss(e.audio, g, tau)?;
        report.a2g = l;
        grads.audio.scaled_add(w.a2g, &da);
        grads
            .genre
            .as_mut()
            .expect("present")
            .scaled_add(w.a2g, &dg);
    }
    if w.a2p > 0.0 {
        let c = require(e.cf, "cf")?;
        let (l, da, dc) = pair_loss(e.audio, c, tau)?;
        report.a2p = l;
        grads.audio.scaled_add(w.a2p, &da);
        grads.cf.as_mut().expect("present").scaled_add(w.a2p, &dc);
    }
    if w.g2p > 0.0 {
        let g = require(e.genre, "genre")?;
        let c = require(e.cf, "cf")?;
        let (l, dg, dc) = pair_loss(g, c, tau)?;
        report.g2p = l;
        grads
            .genre
            .as_mut()
            .expect("present")
            .scaled_add(w.g2p, &dg);
        grads.cf.as_mut().expect("present").scaled_add(w.g2p, &dc);
    }
    report.total = w.a2g * report.a2g + w.a2p * report.a2p + w.g2p * report.g2p;
    Ok((report, grads))
}

pub fn alignment_loss(e: Embeddings<'_>, w: &LossWeights, tau: f64) -> Result<LossReport> {
    Ok(alignment_loss_grad(e, w, tau)?.0)
}
