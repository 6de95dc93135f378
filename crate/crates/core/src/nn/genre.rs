//! Genre encoder: self-attention over the genre word vectors, a residual
//! feed-forward layer with dropout, then layer norm of the row sum.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::attention::{AttentionCache, MultiHeadAttention};
use super::layers::{check_dropout, dropout_mask, LayerNorm, Linear, NormCache};
use super::{child_rngs, join, Mode, Module, ParamMut, ParamRef};
use crate::corpus::GenreSequence;
use crate::error::{Error, Result};
use crate::par;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenreConfig {
    pub input_dim: usize,
    pub dim: usize,
    pub heads: usize,
    pub dropout: f64,
}

impl Default for GenreConfig {
    fn default() -> Self {
        GenreConfig {
            input_dim: crate::corpus::GENRE_DIM,
            dim: 256,
            heads: 4,
            dropout: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenreEncoder {
    pub cfg: GenreConfig,
    pub attention: MultiHeadAttention,
    pub ff: Linear,
    pub ln: LayerNorm,
}

#[derive(Debug, Clone)]
struct SampleCache {
    attention: AttentionCache,
    v_prime: Array2<f64>,
    mask: Option<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct GenreCache {
    samples: Vec<SampleCache>,
    ln: NormCache,
}

impl GenreCache {
    pub fn normalized_output(&self) -> &Array2<f64> {
        &self.ln.xhat
    }

    /// Attention weights of sample `i`, one matrix per head.
    pub fn attention_weights(&self, i: usize) -> &[Array2<f64>] {
        &self.samples[i].attention.weights
    }
}

fn real_rows(seq: &GenreSequence) -> Result<Array2<f64>> {
    let idx: Vec<usize> = seq
        .mask
        .iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect();
    if idx.is_empty() {
        return Err(Error::Empty("genre sequence has no real rows".into()));
    }
    Ok(seq.vectors.select(Axis(0), &idx))
}

impl GenreEncoder {
    pub fn new(cfg: GenreConfig, rng: &mut Rng) -> Result<Self> {
        check_dropout(cfg.dropout)?;
        let attention = MultiHeadAttention::new(rng, cfg.input_dim, cfg.dim, cfg.heads)?;
        let ff = Linear::new(rng, cfg.dim, cfg.dim);
        let ln = LayerNorm::new(cfg.dim);
        Ok(GenreEncoder {
            cfg,
            attention,
            ff,
            ln,
        })
    }

    pub fn forward(
        &self,
        seqs: &[GenreSequence],
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(Array2<f64>, GenreCache)> {
        for s in seqs {
            if s.vectors.ncols() != self.cfg.input_dim || s.mask.len() != s.vectors.nrows() {
                return Err(Error::shape(
                    format!("rows of {} features with matching mask", self.cfg.input_dim),
                    format!("{:?} with {} mask entries", s.vectors.dim(), s.mask.len()),
                ));
            }
        }
        let rngs = child_rngs(rng, seqs.len());
        let items: Vec<(&GenreSequence, Rng)> = seqs.iter().zip(rngs).collect();
        let results: Vec<Result<(Array1<f64>, SampleCache)>> =
            par::map_collect(&items, |(seq, r)| {
                let x = real_rows(seq)?;
                let (v_prime, attention) = self.attention.forward(&x);
                let mut r = r.clone();
                let mask = dropout_mask(&mut r, v_prime.dim(), self.cfg.dropout, mode);
                let f = self.ff.forward(&v_prime);
                let f = match &mask {
                    Some(m) => f * m,
                    None => f,
                };
                let v = &v_prime + &f;
                Ok((
                    v.sum_axis(Axis(0)),
                    SampleCache {
                        attention,
                        v_prime,
                        mask,
                    },
                ))
            });
        let mut sums = Array2::zeros((seqs.len(), self.cfg.dim));
        let mut samples = Vec::with_capacity(seqs.len());
        for (i, r) in results.into_iter().enumerate() {
            let (s, c) = r?;
            sums.row_mut(i).assign(&s);
            samples.push(c);
        }
        let (phi, ln) = self.ln.forward(&sums);
        Ok((phi, GenreCache { samples, ln }))
    }

    pub fn embed(&self, seqs: &[GenreSequence]) -> Result<Array2<f64>> {
        let mut rng = <Rng as rand::SeedableRng>::seed_from_u64(0);
        Ok(self.forward(seqs, Mode::Eval, &mut rng)?.0)
    }

    /// Returns `dL/dx` over the real rows of each sample.
    pub fn backward(
        &self,
        cache: &GenreCache,
        d_phi: &Array2<f64>,
        grad: &mut GenreEncoder,
    ) -> Result<Vec<Array2<f64>>> {
        if cache.samples.len() != d_phi.nrows() {
            return Err(Error::MissingCache);
        }
        let d_sum = self.ln.backward(&cache.ln, d_phi, &mut grad.ln);
        let mut dx = Vec::with_capacity(cache.samples.len());
        for (i, s) in cache.samples.iter().enumerate() {
            let n = s.v_prime.nrows();
            let dv = d_sum
                .row(i)
                .insert_axis(Axis(0))
                .broadcast((n, self.cfg.dim))
                .expect("broadcast")
                .to_owned();
            let df = match &s.mask {
                Some(m) => &dv * m,
                None => dv.clone(),
            };
            let dv_prime = dv + self.ff.backward(&s.v_prime, &df, &mut grad.ff);
            dx.push(
                self.attention
                    .backward(&s.attention, &dv_prime, &mut grad.attention),
            );
        }
        Ok(dx)
    }
}

impl Module for GenreEncoder {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.attention.visit(&join(prefix, "attention"), out);
        self.ff.visit(&join(prefix, "ff"), out);
        self.ln.visit(&join(prefix, "ln"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.attention.visit_mut(&join(prefix, "attention"), out);
        self.ff.visit_mut(&join(prefix, "ff"), out);
        self.ln.visit_mut(&join(prefix, "ln"), out);
    }
}
