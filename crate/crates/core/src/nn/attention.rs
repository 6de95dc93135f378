//! Multi-head scaled dot-product self-attention over the real (unmasked)
//! rows of each sequence. Padding rows never enter the computation, which
//! is equivalent to giving them -inf logits and zeroing their outputs.

use ndarray::{s, Array2, Axis};

use super::layers::Linear;
use super::{join, Module, ParamMut, ParamRef};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Row-softmaxed weights, one `(n, n)` matrix per head.
    pub weights: Vec<Array2<f64>>,
    concat: Array2<f64>,
}

impl MultiHeadAttention {
    pub fn new(rng: &mut Rng, d_in: usize, d_model: usize, heads: usize) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "model dim {d_model} not divisible by {heads} heads"
            )));
        }
        Ok(MultiHeadAttention {
            query: Linear::new(rng, d_in, d_model),
            key: Linear::new(rng, d_in, d_model),
            value: Linear::new(rng, d_in, d_model),
            output: Linear::new(rng, d_model, d_model),
            heads,
        })
    }

    fn head_dim(&self) -> usize {
        self.query.d_out() / self.heads
    }

    /// `x` holds only real rows, `(n, d_in)` with `n >= 1`.
    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, AttentionCache) {
        let q = self.query.forward(x);
        let k = self.key.forward(x);
        let v = self.value.forward(x);
        let hd = self.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let mut concat = Array2::zeros(q.dim());
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = s![.., h * hd..(h + 1) * hd];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            for mut row in scores.rows_mut() {
                let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                row.mapv_inplace(|v| (v - max).exp());
                let sum = row.sum();
                row /= sum;
            }
            concat.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
            weights.push(scores);
        }
        let y = self.output.forward(&concat);
        (
            y,
            AttentionCache {
                x: x.clone(),
                q,
                k,
                v,
                weights,
                concat,
            },
        )
    }

    pub fn backward(
        &self,
        cache: &AttentionCache,
        dy: &Array2<f64>,
        grad: &mut MultiHeadAttention,
    ) -> Array2<f64> {
        let d_concat = self.output.backward(&cache.concat, dy, &mut grad.output);
        let hd = self.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let mut dq = Array2::zeros(cache.q.dim());
        let mut dk = Array2::zeros(cache.k.dim());
        let mut dv = Array2::zeros(cache.v.dim());
        for h in 0..self.heads {
            let cols = s![.., h * hd..(h + 1) * hd];
            let a = &cache.weights[h];
            let d_o = d_concat.slice(cols);
            let da = d_o.dot(&cache.v.slice(cols).t());
            dv.slice_mut(cols).assign(&a.t().dot(&d_o));
            let row_dot = (&da * a).sum_axis(Axis(1)).insert_axis(Axis(1));
            let ds = (da - &row_dot) * a * scale;
            dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
        }
        let dx_q = self.query.backward(&cache.x, &dq, &mut grad.query);
        let dx_k = self.key.backward(&cache.x, &dk, &mut grad.key);
        let dx_v = self.value.backward(&cache.x, &dv, &mut grad.value);
        dx_q + dx_k + dx_v
    }
}

impl Module for MultiHeadAttention {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.query.visit(&join(prefix, "query"), out);
        self.key.visit(&join(prefix, "key"), out);
        self.value.visit(&join(prefix, "value"), out);
        self.output.visit(&join(prefix, "output"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.query.visit_mut(&join(prefix, "query"), out);
        self.key.visit_mut(&join(prefix, "key"), out);
        self.value.visit_mut(&join(prefix, "value"), out);
        self.output.visit_mut(&join(prefix, "output"), out);
    }
}
