//! Audio encoder: a stack of conv blocks followed by the feed-forward block
//! `FF -> BN -> ReLU -> dropout -> FF -> LN`.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::conv::{ConvBlock, ConvBlockCache, Dims};
use super::layers::{
    check_dropout, BatchNorm, LayerNorm, Linear, Sequential, SequentialCache, SequentialLayer,
};
use super::{join, Mode, Module, ParamMut, ParamRef};
use crate::corpus::MelChunk;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioConfig {
    pub frames: usize,
    pub bands: usize,
    pub channels: Vec<usize>,
    /// `(time, freq)` pooling window per block.
    pub pools: Vec<(usize, usize)>,
    pub hidden: usize,
    pub dim: usize,
    pub dropout: f64,
}

/// (2,2) for the first four blocks, (2,1) afterwards, so 48 bands survive
/// seven blocks.
pub fn default_pools(blocks: usize) -> Vec<(usize, usize)> {
    (0..blocks)
        .map(|z| if z < 4 { (2, 2) } else { (2, 1) })
        .collect()
}

impl Default for AudioConfig {
    fn default() -> Self {
        AudioConfig {
            frames: crate::corpus::CHUNK_FRAMES,
            bands: crate::corpus::MEL_BANDS,
            channels: vec![128; 7],
            pools: default_pools(7),
            hidden: 512,
            dim: 256,
            dropout: 0.5,
        }
    }
}

impl AudioConfig {
    pub fn blocks(&self) -> usize {
        self.channels.len()
    }

    pub fn input_dims(&self) -> Dims {
        Dims {
            time: self.frames,
            freq: self.bands,
        }
    }

    /// Spatial size after every block, validating the pooling schedule.
    pub fn output_dims(&self) -> Result<Dims> {
        let mut d = self.input_dims();
        for &p in &self.pools {
            if p.0 == 0 || p.1 == 0 {
                return Err(Error::InvalidArgument("pooling window must be >= 1".into()));
            }
            d = d.pooled(p)?;
        }
        Ok(d)
    }

    pub fn flat_features(&self) -> Result<usize> {
        Ok(self.output_dims()?.area() * self.channels.last().copied().unwrap_or(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.len() != self.pools.len() {
            return Err(Error::InvalidArgument(format!(
                "{} channel counts for {} pooling windows",
                self.channels.len(),
                self.pools.len()
            )));
        }
        if self.channels.contains(&0) || self.hidden == 0 || self.dim == 0 {
            return Err(Error::InvalidArgument("layer widths must be > 0".into()));
        }
        check_dropout(self.dropout)?;
        self.output_dims().map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioEncoder {
    pub cfg: AudioConfig,
    pub blocks: Vec<ConvBlock>,
    pub ffb: Sequential,
}

#[derive(Debug, Clone)]
pub struct AudioCache {
    blocks: Vec<ConvBlockCache>,
    ffb: SequentialCache,
}

impl AudioCache {
    /// Pre-affine output of the final layer norm.
    pub fn normalized_output(&self) -> &Array2<f64> {
        self.ffb
            .last_normalized()
            .expect("audio head ends in a layer norm")
    }
}

/// Converts a mel chunk to the `(1, frames * bands)` encoder input.
pub fn chunk_input(chunk: &MelChunk) -> Array2<f64> {
    Array2::from_shape_vec(
        (1, chunk.data.len()),
        chunk.data.iter().map(|&v| f64::from(v)).collect(),
    )
    .expect("shape")
}

impl AudioEncoder {
    pub fn new(cfg: AudioConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut blocks = Vec::with_capacity(cfg.blocks());
        let mut c_in = 1;
        for (&c, &p) in cfg.channels.iter().zip(&cfg.pools) {
            blocks.push(ConvBlock::new(rng, c_in, c, p));
            c_in = c;
        }
        let flat = cfg.flat_features()?;
        let ffb = Sequential::new(vec![
            (
                "fc1",
                SequentialLayer::Linear(Linear::new(rng, flat, cfg.hidden)),
            ),
            ("bn", SequentialLayer::BatchNorm(BatchNorm::new(cfg.hidden))),
            ("relu", SequentialLayer::Relu),
            ("dropout", SequentialLayer::Dropout(cfg.dropout)),
            (
                "fc2",
                SequentialLayer::Linear(Linear::new(rng, cfg.hidden, cfg.dim)),
            ),
            ("ln", SequentialLayer::LayerNorm(LayerNorm::new(cfg.dim))),
        ]);
        Ok(AudioEncoder { cfg, blocks, ffb })
    }

    pub fn dim(&self) -> usize {
        self.cfg.dim
    }

    /// Encodes a batch of `(1, frames * bands)` inputs to `(batch, dim)`.
    pub fn forward(
        &self,
        inputs: Vec<Array2<f64>>,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(Array2<f64>, AudioCache)> {
        let expect = self.cfg.frames * self.cfg.bands;
        if let Some(x) = inputs.iter().find(|x| x.dim() != (1, expect)) {
            return Err(Error::shape(
                format!("{}x{} chunk", self.cfg.frames, self.cfg.bands),
                format!("{} values", x.len()),
            ));
        }
        let n = inputs.len();
        let mut d = self.cfg.input_dims();
        let mut h = inputs;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (out, cache) = block.forward(h, d, mode)?;
            d = d.pooled(block.pool)?;
            h = out;
            caches.push(cache);
        }
        let flat_len = h[0].len();
        let mut flat = Array2::zeros((n, flat_len));
        for (i, x) in h.iter().enumerate() {
            flat.row_mut(i).assign(&Array1::from(
                x.as_slice().expect("standard layout").to_vec(),
            ));
        }
        let (phi, ffb) = self.ffb.forward(flat, mode, rng);
        Ok((
            phi,
            AudioCache {
                blocks: caches,
                ffb,
            },
        ))
    }

    pub fn encode_chunks(
        &self,
        chunks: &[MelChunk],
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(Array2<f64>, AudioCache)> {
        self.forward(chunks.iter().map(chunk_input).collect(), mode, rng)
    }

    /// Eval-mode embeddings; grouping into batches does not affect results.
    pub fn embed(&self, chunks: &[MelChunk]) -> Result<Array2<f64>> {
        let mut rng = <Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut out = Array2::zeros((chunks.len(), self.dim()));
        for (g, group) in chunks.chunks(32).enumerate() {
            let (phi, _) = self.encode_chunks(group, Mode::Eval, &mut rng)?;
            out.slice_mut(ndarray::s![g * 32..g * 32 + group.len(), ..])
                .assign(&phi);
        }
        Ok(out)
    }

    /// Backpropagates `dL/dphi` into the parameter gradients. The gradient
    /// with respect to the mel input itself is never needed and is skipped.
    pub fn backward(
        &self,
        cache: &AudioCache,
        d_phi: Array2<f64>,
        grad: &mut AudioEncoder,
    ) -> Result<()> {
        if cache.blocks.len() != self.blocks.len() {
            return Err(Error::MissingCache);
        }
        let d_flat = self.ffb.backward(&cache.ffb, d_phi, &mut grad.ffb)?;
        let last_c = *self.cfg.channels.last().expect("validated");
        let area = self.cfg.output_dims()?.area();
        let mut d: Vec<Array2<f64>> = d_flat
            .rows()
            .into_iter()
            .map(|r| Array2::from_shape_vec((last_c, area), r.to_vec()).expect("shape"))
            .collect();
        for (i, block) in self.blocks.iter().enumerate().skip(1).rev() {
            d = block.backward(&cache.blocks[i], d, &mut grad.blocks[i]);
        }
        self.blocks[0].backward_params(&cache.blocks[0], d, &mut grad.blocks[0]);
        Ok(())
    }

    pub fn commit_stats(&mut self, cache: &AudioCache) {
        for (b, c) in self.blocks.iter_mut().zip(&cache.blocks) {
            if let Some(s) = c.stats() {
                b.bn.update_running(s);
            }
        }
        self.ffb.commit_stats(&cache.ffb);
    }
}

impl Module for AudioEncoder {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("block{}", i + 1)), out);
        }
        self.ffb.visit(&join(prefix, "ffb"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("block{}", i + 1)), out);
        }
        self.ffb.visit_mut(&join(prefix, "ffb"), out);
    }
}
