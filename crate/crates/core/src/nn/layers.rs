use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;

use super::{fan_in_uniform, join, Mode, Module, ParamMut, ParamRef};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const NORM_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

fn tensor_ref<'a>(
    out: &mut Vec<ParamRef<'a>>,
    name: String,
    shape: &[usize],
    data: &'a [f64],
    trainable: bool,
) {
    out.push(ParamRef {
        name,
        shape: shape.to_vec(),
        data,
        trainable,
    });
}

fn tensor_mut<'a>(
    out: &mut Vec<ParamMut<'a>>,
    name: String,
    shape: Vec<usize>,
    data: &'a mut [f64],
    trainable: bool,
) {
    out.push(ParamMut {
        name,
        shape,
        data,
        trainable,
    });
}

macro_rules! slice_of {
    ($a:expr) => {
        $a.as_slice().expect("standard layout")
    };
}
macro_rules! slice_mut_of {
    ($a:expr) => {
        $a.as_slice_mut().expect("standard layout")
    };
}

/// Affine map `y = x W^T + b`, weight stored `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn new(rng: &mut Rng, d_in: usize, d_out: usize) -> Self {
        let w = fan_in_uniform(rng, d_in, d_in * d_out);
        let b = fan_in_uniform(rng, d_in, d_out);
        Linear {
            weight: Array2::from_shape_vec((d_out, d_in), w).expect("shape"),
            bias: Array1::from(b),
        }
    }

    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Linear {
            weight: Array2::zeros((d_out, d_in)),
            bias: Array1::zeros(d_out),
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Accumulates parameter gradients into `grad`, returns `dL/dx`.
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.weight += &dy.t().dot(x);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight)
    }
}

impl Module for Linear {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        tensor_ref(
            out,
            join(prefix, "weight"),
            self.weight.shape(),
            slice_of!(self.weight),
            true,
        );
        tensor_ref(
            out,
            join(prefix, "bias"),
            self.bias.shape(),
            slice_of!(self.bias),
            true,
        );
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        let ws = self.weight.shape().to_vec();
        let bs = self.bias.shape().to_vec();
        tensor_mut(
            out,
            join(prefix, "weight"),
            ws,
            slice_mut_of!(self.weight),
            true,
        );
        tensor_mut(
            out,
            join(prefix, "bias"),
            bs,
            slice_mut_of!(self.bias),
            true,
        );
    }
}

/// Feature-wise batch normalization with running statistics for eval mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

/// Batch statistics observed in a train-mode pass.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct NormCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
    pub stats: Option<BatchStats>,
}

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(features),
            beta: Array1::zeros(features),
            running_mean: Array1::zeros(features),
            running_var: Array1::ones(features),
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    pub fn update_running(&mut self, stats: &BatchStats) {
        let unbias = if stats.count > 1 {
            stats.count as f64 / (stats.count - 1) as f64
        } else {
            1.0
        };
        self.running_mean = &self.running_mean * (1.0 - BN_MOMENTUM) + &stats.mean * BN_MOMENTUM;
        self.running_var =
            &self.running_var * (1.0 - BN_MOMENTUM) + &stats.var * (BN_MOMENTUM * unbias);
    }

    /// Normalizes the rows of `(n, features)` input.
    pub fn forward(&self, x: &Array2<f64>, mode: Mode) -> (Array2<f64>, NormCache) {
        let (mean, var, stats) = if mode.is_train() {
            let mean = x.mean_axis(Axis(0)).expect("nonempty batch");
            let var = (x - &mean)
                .mapv(|v| v * v)
                .mean_axis(Axis(0))
                .expect("nonempty batch");
            let stats = BatchStats {
                mean: mean.clone(),
                var: var.clone(),
                count: x.nrows(),
            };
            (mean, var, Some(stats))
        } else {
            (self.running_mean.clone(), self.running_var.clone(), None)
        };
        let inv_std = var.mapv(|v| 1.0 / (v + NORM_EPS).sqrt());
        let xhat = (x - &mean) * &inv_std;
        let y = &xhat * &self.gamma + &self.beta;
        (
            y,
            NormCache {
                xhat,
                inv_std,
                stats,
            },
        )
    }

    pub fn backward(
        &self,
        cache: &NormCache,
        dy: &Array2<f64>,
        grad: &mut BatchNorm,
    ) -> Array2<f64> {
        grad.gamma += &(dy * &cache.xhat).sum_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0));
        let dxhat = dy * &self.gamma;
        if cache.stats.is_none() {
            return dxhat * &cache.inv_std;
        }
        let n = dy.nrows() as f64;
        let sum_d = dxhat.sum_axis(Axis(0));
        let sum_dx = (&dxhat * &cache.xhat).sum_axis(Axis(0));
        ((dxhat * n - &sum_d) - &cache.xhat * &sum_dx) * &(&cache.inv_std / n)
    }
}

impl Module for BatchNorm {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        let s = [self.features()];
        tensor_ref(out, join(prefix, "weight"), &s, slice_of!(self.gamma), true);
        tensor_ref(out, join(prefix, "bias"), &s, slice_of!(self.beta), true);
        tensor_ref(
            out,
            join(prefix, "running_mean"),
            &s,
            slice_of!(self.running_mean),
            false,
        );
        tensor_ref(
            out,
            join(prefix, "running_var"),
            &s,
            slice_of!(self.running_var),
            false,
        );
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        let s = vec![self.features()];
        tensor_mut(
            out,
            join(prefix, "weight"),
            s.clone(),
            slice_mut_of!(self.gamma),
            true,
        );
        tensor_mut(
            out,
            join(prefix, "bias"),
            s.clone(),
            slice_mut_of!(self.beta),
            true,
        );
        tensor_mut(
            out,
            join(prefix, "running_mean"),
            s.clone(),
            slice_mut_of!(self.running_mean),
            false,
        );
        tensor_mut(
            out,
            join(prefix, "running_var"),
            s,
            slice_mut_of!(self.running_var),
            false,
        );
    }
}

/// Per-row layer normalization with variance floor `NORM_EPS`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

impl LayerNorm {
    pub fn new(features: usize) -> Self {
        LayerNorm {
            gamma: Array1::ones(features),
            beta: Array1::zeros(features),
        }
    }

    /// The pre-affine normalized rows.
    pub fn normalize(x: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
        let mean = x.mean_axis(Axis(1)).expect("nonempty row");
        let centered = x - &mean.view().insert_axis(Axis(1));
        let var = centered
            .mapv(|v| v * v)
            .mean_axis(Axis(1))
            .expect("nonempty row");
        let inv_std = var.mapv(|v| 1.0 / (v + NORM_EPS).sqrt());
        let xhat = centered * &inv_std.view().insert_axis(Axis(1));
        (xhat, inv_std)
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, NormCache) {
        let (xhat, inv_std) = Self::normalize(x);
        let y = &xhat * &self.gamma + &self.beta;
        (
            y,
            NormCache {
                xhat,
                inv_std,
                stats: None,
            },
        )
    }

    pub fn backward(
        &self,
        cache: &NormCache,
        dy: &Array2<f64>,
        grad: &mut LayerNorm,
    ) -> Array2<f64> {
        grad.gamma += &(dy * &cache.xhat).sum_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0));
        let dxhat = dy * &self.gamma;
        let mean_d = dxhat
            .mean_axis(Axis(1))
            .expect("nonempty")
            .insert_axis(Axis(1));
        let mean_dx = (&dxhat * &cache.xhat)
            .mean_axis(Axis(1))
            .expect("nonempty")
            .insert_axis(Axis(1));
        (dxhat - &mean_d - &cache.xhat * &mean_dx) * &cache.inv_std.view().insert_axis(Axis(1))
    }
}

impl Module for LayerNorm {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        let s = [self.gamma.len()];
        tensor_ref(out, join(prefix, "weight"), &s, slice_of!(self.gamma), true);
        tensor_ref(out, join(prefix, "bias"), &s, slice_of!(self.beta), true);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        let s = vec![self.gamma.len()];
        tensor_mut(
            out,
            join(prefix, "weight"),
            s.clone(),
            slice_mut_of!(self.gamma),
            true,
        );
        tensor_mut(out, join(prefix, "bias"), s, slice_mut_of!(self.beta), true);
    }
}

/// Inverted dropout mask: zeros with probability `p`, survivors scaled by
/// `1/(1-p)`. `None` means identity.
pub fn dropout_mask(
    rng: &mut Rng,
    shape: (usize, usize),
    p: f64,
    mode: Mode,
) -> Option<Array2<f64>> {
    if !mode.is_train() || p <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some(Array2::from_shape_fn(shape, |_| {
        if rng.random::<f64>() < p {
            0.0
        } else {
            keep
        }
    }))
}

pub fn check_dropout(p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "dropout probability {p} not in [0, 1)"
        )))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SequentialLayer {
    Linear(Linear),
    BatchNorm(BatchNorm),
    LayerNorm(LayerNorm),
    Relu,
    Dropout(f64),
}

#[derive(Debug, Clone)]
enum StepCache {
    Input(Array2<f64>),
    Norm(NormCache),
    Mask(Option<Array2<f64>>),
    Relu(Array2<f64>),
}

#[derive(Debug, Clone)]
pub struct SequentialCache {
    steps: Vec<StepCache>,
}

impl SequentialCache {
    /// Pre-affine output of the last normalization layer, if any.
    pub fn last_normalized(&self) -> Option<&Array2<f64>> {
        self.steps.iter().rev().find_map(|s| match s {
            StepCache::Norm(c) => Some(&c.xhat),
            _ => None,
        })
    }
}

/// A chain of named row-wise layers operating on `(batch, features)` input.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential {
    pub layers: Vec<(String, SequentialLayer)>,
}

impl Sequential {
    pub fn new(layers: Vec<(&str, SequentialLayer)>) -> Self {
        Sequential {
            layers: layers
                .into_iter()
                .map(|(n, l)| (n.to_string(), l))
                .collect(),
        }
    }

    pub fn d_out(&self) -> Option<usize> {
        self.layers.iter().rev().find_map(|(_, l)| match l {
            SequentialLayer::Linear(lin) => Some(lin.d_out()),
            _ => None,
        })
    }

    pub fn d_in(&self) -> Option<usize> {
        self.layers.iter().find_map(|(_, l)| match l {
            SequentialLayer::Linear(lin) => Some(lin.d_in()),
            _ => None,
        })
    }

    pub fn forward(
        &self,
        x: Array2<f64>,
        mode: Mode,
        rng: &mut Rng,
    ) -> (Array2<f64>, SequentialCache) {
        let mut steps = Vec::with_capacity(self.layers.len());
        let mut h = x;
        for (_, layer) in &self.layers {
            h = match layer {
                SequentialLayer::Linear(l) => {
                    let y = l.forward(&h);
                    steps.push(StepCache::Input(h));
                    y
                }
                SequentialLayer::BatchNorm(bn) => {
                    let (y, c) = bn.forward(&h, mode);
                    steps.push(StepCache::Norm(c));
                    y
                }
                SequentialLayer::LayerNorm(ln) => {
                    let (y, c) = ln.forward(&h);
                    steps.push(StepCache::Norm(c));
                    y
                }
                SequentialLayer::Relu => {
                    let y = h.mapv(|v| v.max(0.0));
                    steps.push(StepCache::Relu(y.clone()));
                    y
                }
                SequentialLayer::Dropout(p) => {
                    let mask = dropout_mask(rng, h.dim(), *p, mode);
                    let y = match &mask {
                        Some(m) => h * m,
                        None => h,
                    };
                    steps.push(StepCache::Mask(mask));
                    y
                }
            };
        }
        (h, SequentialCache { steps })
    }

    /// Eval-mode forward without caching concerns.
    pub fn infer(&self, x: Array2<f64>) -> Array2<f64> {
        let mut rng = <Rng as rand::SeedableRng>::seed_from_u64(0);
        self.forward(x, Mode::Eval, &mut rng).0
    }

    pub fn backward(
        &self,
        cache: &SequentialCache,
        dy: Array2<f64>,
        grad: &mut Sequential,
    ) -> Result<Array2<f64>> {
        if cache.steps.len() != self.layers.len() {
            return Err(Error::MissingCache);
        }
        let mut d = dy;
        for (i, (_, layer)) in self.layers.iter().enumerate().rev() {
            let g = &mut grad.layers[i].1;
            d = match (layer, &cache.steps[i], g) {
                (SequentialLayer::Linear(l), StepCache::Input(x), SequentialLayer::Linear(gl)) => {
                    l.backward(x, &d, gl)
                }
                (
                    SequentialLayer::BatchNorm(bn),
                    StepCache::Norm(c),
                    SequentialLayer::BatchNorm(gb),
                ) => bn.backward(c, &d, gb),
                (
                    SequentialLayer::LayerNorm(ln),
                    StepCache::Norm(c),
                    SequentialLayer::LayerNorm(gl),
                ) => ln.backward(c, &d, gl),
                (SequentialLayer::Relu, StepCache::Relu(y), _) => {
                    ndarray::Zip::from(&mut d).and(y).for_each(|dv, &yv| {
                        if yv <= 0.0 {
                            *dv = 0.0
                        }
                    });
                    d
                }
                (SequentialLayer::Dropout(_), StepCache::Mask(m), _) => match m {
                    Some(m) => d * m,
                    None => d,
                },
                _ => return Err(Error::MissingCache),
            };
        }
        Ok(d)
    }

    /// Folds train-mode batch statistics into the running estimates.
    pub fn commit_stats(&mut self, cache: &SequentialCache) {
        for ((_, layer), step) in self.layers.iter_mut().zip(&cache.steps) {
            if let (SequentialLayer::BatchNorm(bn), StepCache::Norm(c)) = (layer, step) {
                if let Some(s) = &c.stats {
                    bn.update_running(s);
                }
            }
        }
    }
}

impl Module for Sequential {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        for (name, l) in &self.layers {
            let p = join(prefix, name);
            match l {
                SequentialLayer::Linear(x) => x.visit(&p, out),
                SequentialLayer::BatchNorm(x) => x.visit(&p, out),
                SequentialLayer::LayerNorm(x) => x.visit(&p, out),
                _ => {}
            }
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        for (name, l) in &mut self.layers {
            let p = join(prefix, name);
            match l {
                SequentialLayer::Linear(x) => x.visit_mut(&p, out),
                SequentialLayer::BatchNorm(x) => x.visit_mut(&p, out),
                SequentialLayer::LayerNorm(x) => x.visit_mut(&p, out),
                _ => {}
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    fn rng() -> Rng {
        Rng::seed_from_u64(5)
    }

    fn random(rng: &mut Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    /// Central differences of `sum(out * probe)` with respect to the input.
    fn fd_input(
        f: &dyn Fn(&Array2<f64>) -> Array2<f64>,
        x: &Array2<f64>,
        probe: &Array2<f64>,
    ) -> Array2<f64> {
        let h = 1e-6;
        let mut g = Array2::zeros(x.dim());
        for idx in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[idx] += h;
            xm.as_slice_mut().unwrap()[idx] -= h;
            let lp = (f(&xp) * probe).sum();
            let lm = (f(&xm) * probe).sum();
            g.as_slice_mut().unwrap()[idx] = (lp - lm) / (2.0 * h);
        }
        g
    }

    fn max_rel(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let num = (a - b).mapv(|v| v * v).sum().sqrt();
        let den = a
            .mapv(|v| v * v)
            .sum()
            .sqrt()
            .max(b.mapv(|v| v * v).sum().sqrt())
            .max(1e-12);
        num / den
    }

    #[test]
    fn batchnorm_input_gradient() {
        let mut r = rng();
        let mut bn = BatchNorm::new(3);
        bn.gamma = Array1::from(vec![0.5, 1.5, -1.0]);
        bn.beta = Array1::from(vec![0.1, 0.0, 0.3]);
        let x = random(&mut r, 5, 3);
        let probe = random(&mut r, 5, 3);
        let (_, cache) = bn.forward(&x, Mode::Train);
        let mut g = bn.zeros_like();
        let dx = bn.backward(&cache, &probe, &mut g);
        let fd = fd_input(&|x| bn.forward(x, Mode::Train).0, &x, &probe);
        assert!(max_rel(&dx, &fd) < 1e-7, "{}", max_rel(&dx, &fd));
    }

    #[test]
    fn layernorm_input_gradient_and_moments() {
        let mut r = rng();
        let mut ln = LayerNorm::new(6);
        ln.gamma = Array1::from(vec![0.5, 1.5, -1.0, 2.0, 1.0, 0.2]);
        let x = random(&mut r, 4, 6);
        let probe = random(&mut r, 4, 6);
        let (_, cache) = ln.forward(&x);
        let mut g = ln.zeros_like();
        let dx = ln.backward(&cache, &probe, &mut g);
        let fd = fd_input(&|x| ln.forward(x).0, &x, &probe);
        assert!(max_rel(&dx, &fd) < 1e-7);
        for row in cache.xhat.rows() {
            let mean = row.mean().unwrap();
            let var = row.mapv(|v| (v - mean).powi(2)).mean().unwrap();
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn layernorm_of_zero_is_shift() {
        let mut ln = LayerNorm::new(4);
        ln.beta = Array1::from(vec![1.0, 2.0, 3.0, 4.0]);
        let (y, _) = ln.forward(&Array2::zeros((1, 4)));
        assert_eq!(y.row(0).to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn dropout_rate_and_scaling() {
        let mut r = rng();
        let m = dropout_mask(&mut r, (100, 100), 0.5, Mode::Train).unwrap();
        let zeros = m.iter().filter(|&&v| v == 0.0).count() as f64 / 1e4;
        assert!((zeros - 0.5).abs() < 0.02, "{zeros}");
        assert!(m.iter().all(|&v| v == 0.0 || v == 2.0));
        assert!(dropout_mask(&mut r, (3, 3), 0.5, Mode::Eval).is_none());
    }

    #[test]
    fn batchnorm_eval_is_batch_independent() {
        let mut r = rng();
        let mut bn = BatchNorm::new(3);
        let (_, c) = bn.forward(&random(&mut r, 8, 3), Mode::Train);
        bn.update_running(c.stats.as_ref().unwrap());
        let x = random(&mut r, 1, 3);
        let a = bn
            .forward(
                &ndarray::concatenate![Axis(0), x.view(), random(&mut r, 2, 3).view()],
                Mode::Eval,
            )
            .0;
        let b = bn
            .forward(
                &ndarray::concatenate![Axis(0), random(&mut r, 4, 3).view(), x.view()],
                Mode::Eval,
            )
            .0;
        assert_eq!(a.row(0), b.row(4));
    }
}
