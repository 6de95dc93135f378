//! Shared optimization loop for the contrastive models and the baselines.

use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::align::LossWeights;
use crate::cf::CfFactors;
use crate::corpus::{
    center_chunk, lookup_genre_sequence, sample_chunk, Corpus, MelChunk, SplitAssignment,
};
use crate::error::{Error, Result};
use crate::model::{Batch, BatchLoss, Model, ModelConfig, ModelKind};
use crate::nn::audio::chunk_input;
use crate::nn::{Adam, AdamConfig, Mode, Module};
use crate::par;
use crate::rng::{rng_for, rng_indexed, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub tau: f64,
    pub weights: LossWeights,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            tau: 0.1,
            weights: LossWeights::default(),
            batch_size: 128,
            learning_rate: 1e-4,
            max_epochs: 100,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {}",
                self.tau
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::InvalidArgument(
                "learning rate must be non-negative".into(),
            ));
        }
        self.weights.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Validation,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Validation => "validation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub phase: Phase,
    /// Mean over the epoch's batches.
    pub loss: BatchLoss,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub records: Vec<LossRecord>,
}

impl LossHistory {
    pub fn totals(&self, phase: Phase) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.phase == phase)
            .map(|r| r.loss.total())
            .collect()
    }

    /// Plain-text table, one row per (epoch, phase).
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let Some(first) = self.records.first() else {
            return out;
        };
        let names: Vec<&str> = first.loss.components().iter().map(|c| c.0).collect();
        let _ = write!(out, "{:>5}  {:<10}", "epoch", "split");
        for n in &names {
            let _ = write!(out, "  {n:>12}");
        }
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{:>5}  {:<10}", r.epoch, r.phase.name());
            for (_, v) in r.loss.components() {
                let _ = write!(out, "  {v:>12.6}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best validation loss (the last epoch when there is
    /// no validation split).
    pub model: Model,
    pub best_epoch: usize,
    pub history: LossHistory,
}

/// Everything needed to turn track ids into model batches.
pub struct BatchSource<'a> {
    corpus: &'a Corpus,
    factors: Option<&'a CfFactors>,
    kind: ModelKind,
    genre_vocab: usize,
}

impl<'a> BatchSource<'a> {
    pub fn new(corpus: &'a Corpus, factors: Option<&'a CfFactors>, model: &Model) -> Result<Self> {
        let kind = model.kind;
        if kind.needs_factors() {
            let f = factors.ok_or_else(|| {
                Error::InvalidArgument(format!("model kind {kind} needs CF factors"))
            })?;
            if f.n_tracks() != corpus.len() {
                return Err(Error::shape(
                    format!("factors for {} tracks", corpus.len()),
                    format!("{} rows", f.n_tracks()),
                ));
            }
            if f.rank() != model.cfg.cf.input_dim {
                return Err(Error::shape(model.cfg.cf.input_dim, f.rank()));
            }
        }
        if kind.uses_genre()
            && kind.is_contrastive()
            && corpus.embedding_table().dim() != model.cfg.genre.input_dim
        {
            return Err(Error::shape(
                model.cfg.genre.input_dim,
                corpus.embedding_table().dim(),
            ));
        }
        if (corpus.genre_vocab_size() as usize) > model.cfg.genre_vocab {
            return Err(Error::InvalidArgument(format!(
                "corpus genre vocabulary {} exceeds model vocabulary {}",
                corpus.genre_vocab_size(),
                model.cfg.genre_vocab
            )));
        }
        Ok(BatchSource {
            corpus,
            factors: factors.filter(|_| kind.needs_factors()),
            kind,
            genre_vocab: model.cfg.genre_vocab,
        })
    }

    fn track(&self, id: u32) -> Result<&'a crate::corpus::TrackRecord> {
        self.corpus
            .track(id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown track {id}")))
    }

    /// Builds a batch from tracks and one chunk per track.
    pub fn batch(&self, ids: &[u32], chunks: &[MelChunk]) -> Result<Batch> {
        let audio = par::map_collect(chunks, chunk_input);
        let contrastive = self.kind.is_contrastive();
        let genre = if contrastive && self.kind.uses_genre() {
            let table = self.corpus.embedding_table();
            Some(
                ids.iter()
                    .map(|&id| lookup_genre_sequence(self.track(id)?, table))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        let genre_targets = if !contrastive && self.kind.uses_genre() {
            let mut t = Array2::zeros((ids.len(), self.genre_vocab));
            for (i, &id) in ids.iter().enumerate() {
                for &g in &self.track(id)?.genre_ids {
                    t[[i, g as usize - 1]] = 1.0;
                }
            }
            Some(t)
        } else {
            None
        };
        let cf = match self.factors {
            Some(f) => {
                let mut x = Array2::zeros((ids.len(), f.rank()));
                for (i, &id) in ids.iter().enumerate() {
                    let row = self
                        .corpus
                        .row_of(id)
                        .ok_or_else(|| Error::InvalidArgument(format!("unknown track {id}")))?;
                    x.row_mut(i).assign(&f.cf_vector(row)?);
                }
                Some(x)
            }
            None => None,
        };
        Ok(Batch {
            audio,
            genre,
            cf,
            genre_targets,
        })
    }

    /// A fresh random chunk per track, drawn from a stream keyed by
    /// `(seed, epoch, track)` so the draw does not depend on batch order.
    pub fn random_chunks(&self, ids: &[u32], seed: u64, epoch: usize) -> Result<Vec<MelChunk>> {
        let tracks = ids
            .iter()
            .map(|&id| self.track(id))
            .collect::<Result<Vec<_>>>()?;
        Ok(par::map_collect(&tracks, |t| {
            let key = ((epoch as u64) << 32) | u64::from(t.track_id);
            sample_chunk(t, &mut rng_indexed(seed, "chunk", key))
        }))
    }

    pub fn center_chunks(&self, ids: &[u32]) -> Result<Vec<MelChunk>> {
        let tracks = ids
            .iter()
            .map(|&id| self.track(id))
            .collect::<Result<Vec<_>>>()?;
        Ok(par::map_collect(&tracks, |t| center_chunk(t)))
    }
}

/// Splits `ids` into full batches; a trailing partial batch is dropped unless
/// it would be the only one.
fn batches(ids: &[u32], size: usize) -> Vec<&[u32]> {
    if ids.len() <= size {
        return vec![ids];
    }
    ids.chunks_exact(size).collect()
}

fn mean_loss(losses: &[BatchLoss]) -> BatchLoss {
    let n = losses.len() as f64;
    match losses[0] {
        BatchLoss::Contrastive(_) => {
            let mut acc = crate::align::LossReport::default();
            for l in losses {
                if let BatchLoss::Contrastive(r) = l {
                    acc.add(r);
                }
            }
            BatchLoss::Contrastive(acc.scaled(1.0 / n))
        }
        BatchLoss::Baseline(_) => {
            let mut acc = crate::baseline::BaselineLoss::default();
            for l in losses {
                if let BatchLoss::Baseline(b) = l {
                    acc.bce += b.bce / n;
                    acc.mse += b.mse / n;
                    acc.total += b.total / n;
                }
            }
            BatchLoss::Baseline(acc)
        }
    }
}

/// Mean eval-mode loss over center chunks of `ids`.
pub fn evaluate_loss(
    model: &Model,
    source: &BatchSource<'_>,
    ids: &[u32],
    cfg: &TrainConfig,
) -> Result<BatchLoss> {
    let mut losses = Vec::new();
    let mut rng = rng_for(cfg.seed, "eval");
    for group in batches(ids, cfg.batch_size) {
        let chunks = source.center_chunks(group)?;
        let b = source.batch(group, &chunks)?;
        losses.push(model.loss(&b, cfg.tau, Mode::Eval, &mut rng)?.loss);
    }
    Ok(mean_loss(&losses))
}

pub fn init_model(kind: ModelKind, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<Model> {
    Model::new(
        kind,
        model_cfg.clone(),
        cfg.weights,
        &mut rng_for(cfg.seed, "init"),
    )
}

/// Trains `model` on the training split, keeping the parameters with the best
/// validation loss.
pub fn train_model(
    mut model: Model,
    corpus: &Corpus,
    split: &SplitAssignment,
    factors: Option<&CfFactors>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let source = BatchSource::new(corpus, factors, &model)?;
    let train_ids: Vec<u32> = split.train.iter().copied().collect();
    let val_ids: Vec<u32> = split.validation.iter().copied().collect();
    if train_ids.is_empty() {
        return Err(Error::Empty("training split".into()));
    }
    let mut opt = Adam::new(AdamConfig {
        lr: cfg.learning_rate,
        ..Default::default()
    });
    let mut dropout_rng = rng_for(cfg.seed, "dropout");
    let mut history = LossHistory::default();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut stale = 0;

    for epoch in 0..cfg.max_epochs {
        let mut order = train_ids.clone();
        shuffle(
            &mut order,
            &mut rng_indexed(cfg.seed, "shuffle", epoch as u64),
        );
        let mut losses = Vec::new();
        for group in batches(&order, cfg.batch_size) {
            let chunks = source.random_chunks(group, cfg.seed, epoch)?;
            let b = source.batch(group, &chunks)?;
            let (fwd, grad) = model.loss_grad(&b, cfg.tau, Mode::Train, &mut dropout_rng)?;
            if !fwd.loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("non-finite training loss {:?}", fwd.loss.components()),
                });
            }
            if grad
                .params()
                .iter()
                .any(|p| p.data.iter().any(|v| !v.is_finite()))
            {
                return Err(Error::Divergence {
                    epoch,
                    detail: "non-finite gradient".into(),
                });
            }
            opt.step(&mut model, &grad);
            model.commit_stats(&fwd);
            losses.push(fwd.loss);
        }
        let train_loss = mean_loss(&losses);
        log::info!("epoch {epoch} train L_tot {:.6}", train_loss.total());
        history.records.push(LossRecord {
            epoch,
            phase: Phase::Train,
            loss: train_loss,
        });

        if val_ids.is_empty() {
            best = Some((train_loss.total(), epoch, model.clone()));
            continue;
        }
        let val = evaluate_loss(&model, &source, &val_ids, cfg)?;
        if !val.is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: "non-finite validation loss".into(),
            });
        }
        log::info!("epoch {epoch} validation L_tot {:.6}", val.total());
        history.records.push(LossRecord {
            epoch,
            phase: Phase::Validation,
            loss: val,
        });
        if best.as_ref().is_none_or(|b| val.total() < b.0) {
            best = Some((val.total(), epoch, model.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                log::info!("early stop after epoch {epoch}");
                break;
            }
        }
    }
    let (_, best_epoch, model) =
        best.ok_or_else(|| Error::InvalidArgument("max_epochs must be positive".into()))?;
    Ok(TrainOutcome {
        model,
        best_epoch,
        history,
    })
}

/// Builds and trains a model of `kind`.
pub fn train(
    kind: ModelKind,
    model_cfg: &ModelConfig,
    corpus: &Corpus,
    split: &SplitAssignment,
    factors: Option<&CfFactors>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let model = init_model(kind, model_cfg, cfg)?;
    train_model(model, corpus, split, factors, cfg)
}

fn shuffle(ids: &mut [u32], rng: &mut Rng) {
    use rand::seq::SliceRandom;
    ids.shuffle(rng);
}
