//! The trainable bundle for one experiment: the audio encoder plus whichever
//! genre/CF encoders or prediction heads the model kind needs.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::align::{alignment_loss_grad, Embeddings, LossReport, LossWeights};
use crate::baseline::{BaselineHeads, BaselineLoss, BaselineMode, Targets};
use crate::corpus::GenreSequence;
use crate::error::{Error, Result};
use crate::nn::audio::AudioCache;
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{
    AudioConfig, AudioEncoder, CfEncoder, CfEncoderConfig, GenreConfig, GenreEncoder, Mode, Module,
    ParamMut, ParamRef,
};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    ContrCfG,
    ContrG,
    ContrCf,
    BlineG,
    BlineCf,
    BlineCfG,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::ContrCfG,
        ModelKind::ContrG,
        ModelKind::ContrCf,
        ModelKind::BlineG,
        ModelKind::BlineCf,
        ModelKind::BlineCfG,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::ContrCfG => "contr-cf-g",
            ModelKind::ContrG => "contr-g",
            ModelKind::ContrCf => "contr-cf",
            ModelKind::BlineG => "bline-g",
            ModelKind::BlineCf => "bline-cf",
            ModelKind::BlineCfG => "bline-cf-g",
        }
    }

    /// Alignment weights for the contrastive kinds, `None` for baselines.
    pub fn loss_weights(self, base: LossWeights) -> Option<LossWeights> {
        match self {
            ModelKind::ContrCfG => Some(base),
            ModelKind::ContrG => Some(LossWeights {
                a2p: 0.0,
                g2p: 0.0,
                ..base
            }),
            ModelKind::ContrCf => Some(LossWeights {
                a2g: 0.0,
                g2p: 0.0,
                ..base
            }),
            _ => None,
        }
    }

    pub fn baseline_mode(self) -> Option<BaselineMode> {
        match self {
            ModelKind::BlineG => Some(BaselineMode::G),
            ModelKind::BlineCf => Some(BaselineMode::Cf),
            ModelKind::BlineCfG => Some(BaselineMode::CfG),
            _ => None,
        }
    }

    pub fn is_contrastive(self) -> bool {
        self.baseline_mode().is_none()
    }

    pub fn uses_genre(self) -> bool {
        match self.baseline_mode() {
            Some(m) => m.uses_genre(),
            None => self
                .loss_weights(LossWeights::default())
                .is_some_and(|w| w.uses_genre()),
        }
    }

    pub fn needs_factors(self) -> bool {
        match self.baseline_mode() {
            Some(m) => m.uses_cf(),
            None => self
                .loss_weights(LossWeights::default())
                .is_some_and(|w| w.uses_cf()),
        }
    }

    /// The baseline that predicts the same modalities a contrastive kind aligns.
    pub fn paired_baseline(self) -> Option<ModelKind> {
        match self {
            ModelKind::ContrCfG => Some(ModelKind::BlineCfG),
            ModelKind::ContrG => Some(ModelKind::BlineG),
            ModelKind::ContrCf => Some(ModelKind::BlineCf),
            _ => None,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub audio: AudioConfig,
    pub genre: GenreConfig,
    pub cf: CfEncoderConfig,
    pub genre_vocab: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            audio: AudioConfig::default(),
            genre: GenreConfig::default(),
            cf: CfEncoderConfig::default(),
            genre_vocab: crate::corpus::GENRE_VOCAB as usize,
        }
    }
}

impl ModelConfig {
    pub fn dim(&self) -> usize {
        self.audio.dim
    }

    /// Sets the shared latent width on every encoder.
    pub fn set_dim(&mut self, dim: usize) {
        self.audio.dim = dim;
        self.genre.dim = dim;
        self.cf.dim = dim;
    }

    pub fn set_dropout(&mut self, p: f64) {
        self.audio.dropout = p;
        self.genre.dropout = p;
        self.cf.dropout = p;
    }

    pub fn validate(&self) -> Result<()> {
        self.audio.validate()?;
        if self.genre.dim != self.audio.dim || self.cf.dim != self.audio.dim {
            return Err(Error::InvalidArgument(format!(
                "encoder widths differ: audio {}, genre {}, cf {}",
                self.audio.dim, self.genre.dim, self.cf.dim
            )));
        }
        Ok(())
    }
}

/// One training or validation batch. Row `i` of every modality belongs to the
/// same track.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    /// `(1, frames * bands)` inputs.
    pub audio: Vec<Array2<f64>>,
    pub genre: Option<Vec<GenreSequence>>,
    pub cf: Option<Array2<f64>>,
    /// Multi-hot over the genre vocabulary.
    pub genre_targets: Option<Array2<f64>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.audio.len()
    }

    pub fn is_empty(&self) -> bool {
        self.audio.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BatchLoss {
    Contrastive(LossReport),
    Baseline(BaselineLoss),
}

impl BatchLoss {
    pub fn total(&self) -> f64 {
        match self {
            BatchLoss::Contrastive(r) => r.total,
            BatchLoss::Baseline(b) => b.total,
        }
    }

    pub fn components(&self) -> Vec<(&'static str, f64)> {
        match self {
            BatchLoss::Contrastive(r) => vec![
                ("L_A2G", r.a2g),
                ("L_A2P", r.a2p),
                ("L_G2P", r.g2p),
                ("L_tot", r.total),
            ],
            BatchLoss::Baseline(b) => vec![("BCE", b.bce), ("MSE", b.mse), ("L_tot", b.total)],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.components().iter().all(|(_, v)| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub kind: ModelKind,
    pub cfg: ModelConfig,
    pub weights: Option<LossWeights>,
    pub audio: AudioEncoder,
    pub genre: Option<GenreEncoder>,
    pub cf: Option<CfEncoder>,
    pub heads: Option<BaselineHeads>,
}

pub struct Forward {
    pub loss: BatchLoss,
    pub audio_cache: AudioCache,
}

impl Model {
    pub fn new(
        kind: ModelKind,
        cfg: ModelConfig,
        base_weights: LossWeights,
        rng: &mut Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let weights = kind.loss_weights(base_weights);
        if let Some(w) = &weights {
            w.validate()?;
        }
        let audio = AudioEncoder::new(cfg.audio.clone(), rng)?;
        let (genre, cf, heads) = match kind.baseline_mode() {
            None => {
                let w = weights.expect("contrastive kind");
                let genre = w
                    .uses_genre()
                    .then(|| GenreEncoder::new(cfg.genre.clone(), rng))
                    .transpose()?;
                let cf = w
                    .uses_cf()
                    .then(|| CfEncoder::new(cfg.cf.clone(), rng))
                    .transpose()?;
                (genre, cf, None)
            }
            Some(mode) => {
                let heads =
                    BaselineHeads::new(mode, cfg.dim(), cfg.genre_vocab, cfg.cf.input_dim, rng);
                (None, None, Some(heads))
            }
        };
        Ok(Model {
            kind,
            cfg,
            weights,
            audio,
            genre,
            cf,
            heads,
        })
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Empty("batch".into()));
        }
        let n = batch.len();
        let rows_ok = batch.genre.as_ref().is_none_or(|g| g.len() == n)
            && batch.cf.as_ref().is_none_or(|c| c.nrows() == n)
            && batch.genre_targets.as_ref().is_none_or(|t| t.nrows() == n);
        if !rows_ok {
            return Err(Error::InvalidArgument(
                "batch modalities have different row counts".into(),
            ));
        }
        Ok(())
    }

    fn missing(what: &str) -> Error {
        Error::InvalidArgument(format!("batch lacks {what} inputs"))
    }

    /// Forward pass, loss, and backward pass. The returned gradient has the
    /// same structure as `self`. Batch-norm running statistics are not
    /// touched; commit them with [`Model::commit_stats`].
    pub fn loss_grad(
        &self,
        batch: &Batch,
        tau: f64,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(Forward, Model)> {
        self.forward_impl(batch, tau, mode, rng, true)
            .map(|(f, g)| (f, g.expect("gradient requested")))
    }

    pub fn loss(&self, batch: &Batch, tau: f64, mode: Mode, rng: &mut Rng) -> Result<Forward> {
        Ok(self.forward_impl(batch, tau, mode, rng, false)?.0)
    }

    fn forward_impl(
        &self,
        batch: &Batch,
        tau: f64,
        mode: Mode,
        rng: &mut Rng,
        want_grad: bool,
    ) -> Result<(Forward, Option<Model>)> {
        self.check_batch(batch)?;
        let mut audio_rng = Rng::seed_from_u64(rng.random());
        let mut genre_rng = Rng::seed_from_u64(rng.random());
        let mut cf_rng = Rng::seed_from_u64(rng.random());
        let (phi_a, audio_cache) = self
            .audio
            .forward(batch.audio.clone(), mode, &mut audio_rng)?;
        let mut grad = want_grad.then(|| self.zeros_like());

        let (loss, d_phi_a) = if let Some(w) = &self.weights {
            let genre = match &self.genre {
                Some(enc) => {
                    let seqs = batch.genre.as_ref().ok_or_else(|| Self::missing("genre"))?;
                    Some(enc.forward(seqs, mode, &mut genre_rng)?)
                }
                None => None,
            };
            let cf = match &self.cf {
                Some(enc) => {
                    let x = batch.cf.as_ref().ok_or_else(|| Self::missing("cf"))?;
                    Some(enc.forward(x.clone(), mode, &mut cf_rng)?)
                }
                None => None,
            };
            let emb = Embeddings {
                audio: &phi_a,
                genre: genre.as_ref().map(|g| &g.0),
                cf: cf.as_ref().map(|c| &c.0),
            };
            let (report, d) = alignment_loss_grad(emb, w, tau)?;
            if let Some(g) = grad.as_mut() {
                if let (Some(enc), Some((_, cache)), Some(d_w)) = (&self.genre, &genre, &d.genre) {
                    enc.backward(cache, d_w, g.genre.as_mut().expect("same structure"))?;
                }
                if let (Some(enc), Some((_, cache)), Some(d_c)) = (&self.cf, &cf, d.cf) {
                    enc.backward(cache, d_c, g.cf.as_mut().expect("same structure"))?;
                }
            }
            (BatchLoss::Contrastive(report), d.audio)
        } else {
            let heads = self.heads.as_ref().expect("baseline kind has heads");
            let targets = Targets {
                genre: if heads.mode.uses_genre() {
                    Some(
                        batch
                            .genre_targets
                            .as_ref()
                            .ok_or_else(|| Self::missing("genre target"))?,
                    )
                } else {
                    None
                },
                cf: if heads.mode.uses_cf() {
                    Some(batch.cf.as_ref().ok_or_else(|| Self::missing("cf"))?)
                } else {
                    None
                },
            };
            let pred = heads.forward(&phi_a)?;
            let mut scratch = heads.zeros_like();
            let head_grad = match grad.as_mut() {
                Some(g) => g.heads.as_mut().expect("same structure"),
                None => &mut scratch,
            };
            let (l, d) = heads.loss_grad(&phi_a, &pred, &targets, head_grad)?;
            (BatchLoss::Baseline(l), d)
        };

        if let Some(g) = grad.as_mut() {
            self.audio.backward(&audio_cache, d_phi_a, &mut g.audio)?;
        }
        Ok((Forward { loss, audio_cache }, grad))
    }

    pub fn commit_stats(&mut self, fwd: &Forward) {
        self.audio.commit_stats(&fwd.audio_cache);
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut config = BTreeMap::new();
        config.insert("kind".to_string(), self.kind.name().to_string());
        config.insert(
            "model".to_string(),
            serde_json::to_string(&self.cfg).expect("config serializes"),
        );
        if let Some(w) = &self.weights {
            config.insert(
                "weights".to_string(),
                serde_json::to_string(w).expect("weights serialize"),
            );
        }
        let mut ck = Checkpoint::new(config);
        ck.add_module("", self);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let kind: ModelKind = ck.config_value("kind")?.parse()?;
        let cfg: ModelConfig = serde_json::from_str(ck.config_value("model")?)
            .map_err(|e| Error::Checkpoint(format!("model config: {e}")))?;
        let weights = match ck.config.get("weights") {
            Some(s) => serde_json::from_str(s)
                .map_err(|e| Error::Checkpoint(format!("loss weights: {e}")))?,
            None => LossWeights::default(),
        };
        let mut model = Model::new(kind, cfg, weights, &mut Rng::seed_from_u64(0))?;
        ck.restore("", &mut model)?;
        Ok(model)
    }

    /// Loads only the audio encoder; works for every model kind.
    pub fn audio_from_checkpoint(ck: &Checkpoint) -> Result<AudioEncoder> {
        let cfg: ModelConfig = serde_json::from_str(ck.config_value("model")?)
            .map_err(|e| Error::Checkpoint(format!("model config: {e}")))?;
        let mut audio = AudioEncoder::new(cfg.audio, &mut Rng::seed_from_u64(0))?;
        ck.restore("audio", &mut audio)?;
        Ok(audio)
    }
}

impl Module for Model {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        use crate::nn::join;
        self.audio.visit(&join(prefix, "audio"), out);
        self.genre.visit(&join(prefix, "genre"), out);
        self.cf.visit(&join(prefix, "cf"), out);
        self.heads.visit(&join(prefix, "head"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        use crate::nn::join;
        self.audio.visit_mut(&join(prefix, "audio"), out);
        self.genre.visit_mut(&join(prefix, "genre"), out);
        self.cf.visit_mut(&join(prefix, "cf"), out);
        self.heads.visit_mut(&join(prefix, "head"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_round_trip_and_select_modalities() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
        assert!("contr".parse::<ModelKind>().is_err());
        assert!(!ModelKind::ContrG.needs_factors());
        assert!(ModelKind::ContrCf.needs_factors() && !ModelKind::ContrCf.uses_genre());
        assert!(!ModelKind::BlineG.needs_factors());
        assert!(ModelKind::BlineCf.needs_factors());
        let w = ModelKind::ContrG
            .loss_weights(LossWeights::default())
            .unwrap();
        assert_eq!((w.a2g, w.a2p, w.g2p), (1.0, 0.0, 0.0));
        let w = ModelKind::ContrCf
            .loss_weights(LossWeights::default())
            .unwrap();
        assert_eq!((w.a2g, w.a2p, w.g2p), (0.0, 1.0, 0.0));
    }
}
