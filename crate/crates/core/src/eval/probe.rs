//! Small MLP probes trained on frozen embeddings.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::extract::TrackEmbeddings;
use super::metrics::{majority_vote, mean_std, roc_auc};
use crate::baseline::bce_with_logits;
use crate::corpus::{iterative_stratification, TagCategory};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, BatchNorm, Linear, Mode, Module, Sequential, SequentialLayer};
use crate::rng::{rng_indexed, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub genre_hidden: usize,
    pub tag_hidden: (usize, usize),
    pub dropout: f64,
    pub repeats: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    /// Train/validation/test ratios for the per-category tagging splits.
    pub tag_split: (f64, f64, f64),
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            genre_hidden: 256,
            tag_hidden: (128, 64),
            dropout: 0.5,
            repeats: 10,
            epochs: 60,
            batch_size: 32,
            learning_rate: 1e-3,
            patience: 10,
            tag_split: (0.6, 0.2, 0.2),
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.genre_hidden == 0 || self.tag_hidden.0 == 0 || self.tag_hidden.1 == 0 {
            return Err(Error::InvalidArgument(
                "probe widths must be positive".into(),
            ));
        }
        if self.repeats == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "repeats and batch size must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub per_repeat: Vec<f64>,
}

impl Summary {
    pub fn from_values(values: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&values);
        Summary {
            mean,
            std,
            per_repeat: values,
        }
    }
}

pub fn genre_probe(d_in: usize, hidden: usize, classes: usize, rng: &mut Rng) -> Sequential {
    Sequential::new(vec![
        (
            "fc1",
            SequentialLayer::Linear(Linear::new(rng, d_in, hidden)),
        ),
        ("relu", SequentialLayer::Relu),
        (
            "out",
            SequentialLayer::Linear(Linear::new(rng, hidden, classes)),
        ),
    ])
}

pub fn tag_probe(
    d_in: usize,
    hidden: (usize, usize),
    dropout: f64,
    tags: usize,
    rng: &mut Rng,
) -> Sequential {
    Sequential::new(vec![
        (
            "fc1",
            SequentialLayer::Linear(Linear::new(rng, d_in, hidden.0)),
        ),
        ("bn1", SequentialLayer::BatchNorm(BatchNorm::new(hidden.0))),
        ("relu1", SequentialLayer::Relu),
        (
            "fc2",
            SequentialLayer::Linear(Linear::new(rng, hidden.0, hidden.1)),
        ),
        ("bn2", SequentialLayer::BatchNorm(BatchNorm::new(hidden.1))),
        ("relu2", SequentialLayer::Relu),
        ("dropout", SequentialLayer::Dropout(dropout)),
        (
            "out",
            SequentialLayer::Linear(Linear::new(rng, hidden.1, tags)),
        ),
    ])
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let n = logits.nrows() as f64;
    let mut grad = Array2::zeros(logits.dim());
    let mut loss = 0.0;
    for (i, row) in logits.rows().into_iter().enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        loss += max + z.ln() - row[labels[i]];
        for (k, v) in row.iter().enumerate() {
            grad[[i, k]] = (v - max).exp() / z / n;
        }
        grad[[i, labels[i]]] -= 1.0 / n;
    }
    (loss / n, grad)
}

/// One epoch of minibatch Adam on `loss_fn(logits, rows) -> (loss, dlogits)`.
fn run_epoch(
    net: &mut Sequential,
    opt: &mut Adam,
    x: &Array2<f64>,
    batch_size: usize,
    rng: &mut Rng,
    loss_fn: &dyn Fn(&Array2<f64>, &[usize]) -> Result<(f64, Array2<f64>)>,
) -> Result<()> {
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    order.shuffle(rng);
    for rows in order.chunks(batch_size) {
        // a batch of one cannot be batch-normalized
        if rows.len() < 2 && x.nrows() >= 2 {
            continue;
        }
        let xb = x.select(Axis(0), rows);
        let (logits, cache) = net.forward(xb, Mode::Train, rng);
        let (_, d) = loss_fn(&logits, rows)?;
        let mut grad = net.zeros_like();
        net.backward(&cache, d, &mut grad)?;
        opt.step(net, &grad);
        net.commit_stats(&cache);
    }
    Ok(())
}

fn argmax_rows(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |b, (i, &v)| if v > b.1 { (i, v) } else { b },
                )
                .0
        })
        .collect()
}

/// Trains the genre probe on per-window embeddings with track labels and
/// reports majority-vote track accuracy on the test tracks, over repeats.
pub fn eval_genre_classification(
    train: &TrackEmbeddings,
    train_labels: &[usize],
    test: &TrackEmbeddings,
    test_labels: &[usize],
    cfg: &ProbeConfig,
) -> Result<Summary> {
    cfg.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::Empty("genre probe split".into()));
    }
    if train_labels.len() != train.len() || test_labels.len() != test.len() {
        return Err(Error::InvalidArgument(
            "one label per track required".into(),
        ));
    }
    let classes = train_labels
        .iter()
        .chain(test_labels)
        .max()
        .expect("nonempty")
        + 1;
    for l in test_labels {
        if !train_labels.contains(l) {
            log::warn!("genre class {l} appears in test but not in train");
        }
    }
    let x = ndarray::concatenate(
        Axis(0),
        &train.windows.iter().map(|w| w.view()).collect::<Vec<_>>(),
    )
    .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let y: Vec<usize> = train
        .windows
        .iter()
        .zip(train_labels)
        .flat_map(|(w, &l)| std::iter::repeat_n(l, w.nrows()))
        .collect();

    let mut acc = Vec::with_capacity(cfg.repeats);
    for r in 0..cfg.repeats {
        let mut rng = rng_indexed(cfg.seed, "genre-probe", r as u64);
        let mut net = genre_probe(train.dim(), cfg.genre_hidden, classes, &mut rng);
        let mut opt = Adam::new(AdamConfig {
            lr: cfg.learning_rate,
            ..Default::default()
        });
        let loss = |logits: &Array2<f64>, rows: &[usize]| {
            let labels: Vec<usize> = rows.iter().map(|&i| y[i]).collect();
            Ok(softmax_cross_entropy(logits, &labels))
        };
        for _ in 0..cfg.epochs {
            run_epoch(&mut net, &mut opt, &x, cfg.batch_size, &mut rng, &loss)?;
        }
        let mut correct = 0usize;
        for (w, &label) in test.windows.iter().zip(test_labels) {
            let votes = argmax_rows(&net.infer(w.clone()));
            correct += usize::from(majority_vote(&votes)? == label);
        }
        acc.push(correct as f64 / test.len() as f64);
    }
    Ok(Summary::from_values(acc))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggingResult {
    pub category: String,
    pub auc: Summary,
    /// Tags left out of the macro average for lack of test positives or negatives.
    pub excluded_tags: Vec<u32>,
    /// Validation BCE of the returned probe and at the last trained epoch, per repeat.
    pub val_bce: Vec<(f64, f64)>,
}

fn bce_eval(net: &Sequential, x: &Array2<f64>, y: &Array2<f64>) -> Result<f64> {
    Ok(bce_with_logits(&net.infer(x.clone()), y)?.0)
}

/// Trains a sigmoid probe with early stopping on validation BCE and returns
/// the best network with its validation BCE and the last epoch's.
pub fn train_tag_probe(
    x_train: &Array2<f64>,
    y_train: &Array2<f64>,
    x_val: &Array2<f64>,
    y_val: &Array2<f64>,
    cfg: &ProbeConfig,
    rng: &mut Rng,
) -> Result<(Sequential, f64, f64)> {
    let mut net = tag_probe(
        x_train.ncols(),
        cfg.tag_hidden,
        cfg.dropout,
        y_train.ncols(),
        rng,
    );
    let mut opt = Adam::new(AdamConfig {
        lr: cfg.learning_rate,
        ..Default::default()
    });
    let loss = |logits: &Array2<f64>, rows: &[usize]| {
        bce_with_logits(logits, &y_train.select(Axis(0), rows))
    };
    let mut best = (f64::INFINITY, net.clone());
    let mut last = f64::INFINITY;
    let mut stale = 0;
    for _ in 0..cfg.epochs {
        run_epoch(&mut net, &mut opt, x_train, cfg.batch_size, rng, &loss)?;
        last = bce_eval(&net, x_val, y_val)?;
        if last < best.0 {
            best = (last, net.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok((best.1, best.0, last))
}

/// Per-category multi-label tagging with its own stratified split.
pub fn eval_autotagging(
    emb: &TrackEmbeddings,
    track_tags: &[Vec<u32>],
    categories: &[TagCategory],
    cfg: &ProbeConfig,
) -> Result<Vec<TaggingResult>> {
    cfg.validate()?;
    if track_tags.len() != emb.len() {
        return Err(Error::InvalidArgument(
            "one tag list per track required".into(),
        ));
    }
    let mut results = Vec::with_capacity(categories.len());
    for (c, cat) in categories.iter().enumerate() {
        if cat.genre_ids.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "category {} has fewer than two tags",
                cat.name
            )));
        }
        let rows: Vec<usize> = (0..emb.len())
            .filter(|&i| track_tags[i].iter().any(|t| cat.genre_ids.contains(t)))
            .collect();
        let labels: Vec<Vec<u32>> = rows
            .iter()
            .map(|&i| {
                track_tags[i]
                    .iter()
                    .copied()
                    .filter(|t| cat.genre_ids.contains(t))
                    .collect()
            })
            .collect();
        let (a, b, t) = cfg.tag_split;
        let assignment = iterative_stratification(
            &labels,
            &[a, b, t],
            crate::rng::derive_indexed(cfg.seed, "tag-split", c as u64),
        )?;
        let part =
            |s: usize| -> Vec<usize> { (0..rows.len()).filter(|&i| assignment[i] == s).collect() };
        let (tr, va, te) = (part(0), part(1), part(2));
        if tr.is_empty() || va.is_empty() || te.is_empty() {
            return Err(Error::Empty(format!("split of category {}", cat.name)));
        }
        let matrix = |idx: &[usize]| {
            let x = emb
                .mean
                .select(Axis(0), &idx.iter().map(|&i| rows[i]).collect::<Vec<_>>());
            let y = Array2::from_shape_fn((idx.len(), cat.genre_ids.len()), |(r, k)| {
                f64::from(u8::from(labels[idx[r]].contains(&cat.genre_ids[k])))
            });
            (x, y)
        };
        let (x_tr, y_tr) = matrix(&tr);
        let (x_va, y_va) = matrix(&va);
        let (x_te, y_te) = matrix(&te);

        let mut excluded = Vec::new();
        let usable: Vec<usize> = (0..cat.genre_ids.len())
            .filter(|&k| {
                let pos = y_te.column(k).iter().filter(|&&v| v > 0.5).count();
                let ok = pos > 0 && pos < y_te.nrows();
                if !ok {
                    excluded.push(cat.genre_ids[k]);
                }
                ok
            })
            .collect();
        if usable.is_empty() {
            return Err(Error::Empty(format!(
                "scorable tags in category {}",
                cat.name
            )));
        }
        let mut aucs = Vec::with_capacity(cfg.repeats);
        let mut val_bce = Vec::with_capacity(cfg.repeats);
        for r in 0..cfg.repeats {
            let mut rng = rng_indexed(
                crate::rng::derive_indexed(cfg.seed, "tag-probe", c as u64),
                "repeat",
                r as u64,
            );
            let (net, best, last) = train_tag_probe(&x_tr, &y_tr, &x_va, &y_va, cfg, &mut rng)?;
            val_bce.push((best, last));
            let scores = net.infer(x_te.clone());
            let mut total = 0.0;
            for &k in &usable {
                let s: Vec<f64> = scores.column(k).to_vec();
                let l: Vec<bool> = y_te.column(k).iter().map(|&v| v > 0.5).collect();
                total += roc_auc(&s, &l)?;
            }
            aucs.push(total / usable.len() as f64);
        }
        results.push(TaggingResult {
            category: cat.name.clone(),
            auc: Summary::from_values(aucs),
            excluded_tags: excluded,
            val_bce,
        });
    }
    Ok(results)
}
