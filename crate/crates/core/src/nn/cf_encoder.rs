use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::layers::{
    check_dropout, LayerNorm, Linear, Sequential, SequentialCache, SequentialLayer,
};
use super::{Mode, Module, ParamMut, ParamRef};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfEncoderConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub dim: usize,
    pub dropout: f64,
}

impl Default for CfEncoderConfig {
    fn default() -> Self {
        CfEncoderConfig {
            input_dim: 300,
            hidden: 512,
            dim: 256,
            dropout: 0.5,
        }
    }
}

/// `FF -> ReLU -> dropout -> FF -> LN` over the playlist factor vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CfEncoder {
    pub cfg: CfEncoderConfig,
    pub net: Sequential,
}

impl CfEncoder {
    pub fn new(cfg: CfEncoderConfig, rng: &mut Rng) -> Result<Self> {
        check_dropout(cfg.dropout)?;
        let net = Sequential::new(vec![
            (
                "fc1",
                SequentialLayer::Linear(Linear::new(rng, cfg.input_dim, cfg.hidden)),
            ),
            ("relu", SequentialLayer::Relu),
            ("dropout", SequentialLayer::Dropout(cfg.dropout)),
            (
                "fc2",
                SequentialLayer::Linear(Linear::new(rng, cfg.hidden, cfg.dim)),
            ),
            ("ln", SequentialLayer::LayerNorm(LayerNorm::new(cfg.dim))),
        ]);
        Ok(CfEncoder { cfg, net })
    }

    pub fn forward(
        &self,
        x: Array2<f64>,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(Array2<f64>, SequentialCache)> {
        if x.ncols() != self.cfg.input_dim {
            return Err(Error::shape(self.cfg.input_dim, x.ncols()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite CF input".into()));
        }
        Ok(self.net.forward(x, mode, rng))
    }

    pub fn embed(&self, x: Array2<f64>) -> Result<Array2<f64>> {
        let mut rng = <Rng as rand::SeedableRng>::seed_from_u64(0);
        Ok(self.forward(x, Mode::Eval, &mut rng)?.0)
    }

    pub fn backward(
        &self,
        cache: &SequentialCache,
        d_phi: Array2<f64>,
        grad: &mut CfEncoder,
    ) -> Result<Array2<f64>> {
        self.net.backward(cache, d_phi, &mut grad.net)
    }
}

impl Module for CfEncoder {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.net.visit(prefix, out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.net.visit_mut(prefix, out);
    }
}
