//! The five subcommands. Each writes its artifacts under the output
//! directory together with the resolved configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use musalign::cf::{mean_playlist_auc, CfFactors, WarpTrainer};
use musalign::corpus::{
    build_playlist_matrix, load_corpus, stratified_split, write_corpus, Corpus, SplitAssignment,
    TrackRecord,
};
use musalign::eval::{
    eval_playlist_continuation, extract_embeddings, genre_task, random_embeddings, tagging_task,
    Report, TrackEmbeddings,
};
use musalign::model::{Model, ModelConfig};
use musalign::nn::checkpoint::Checkpoint;
use musalign::nn::AudioEncoder;
use musalign::train::train;

use crate::config::{RunConfig, Task};

pub const CONFIG_ECHO: &str = "config.txt";
pub const FACTORS: &str = "factors.bin";
pub const WARP_LOG: &str = "warp_log.txt";
pub const CHECKPOINT: &str = "model.ckpt";
pub const LOSS_HISTORY: &str = "loss_history.txt";
pub const EMBEDDINGS: &str = "embeddings.txt";
pub const REPORT: &str = "report.txt";
pub const REPORT_JSON: &str = "report.jsonl";

fn prepare_out(cfg: &RunConfig) -> Result<PathBuf> {
    let out = cfg.require_out()?.to_path_buf();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write(&out.join(CONFIG_ECHO), cfg.to_text())?;
    Ok(out)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn corpus(cfg: &RunConfig) -> Result<Corpus> {
    let dir = cfg.require_corpus()?;
    load_corpus(dir).with_context(|| format!("loading corpus {}", dir.display()))
}

fn split(corpus: &Corpus, ratios: (f64, f64, f64), seed: u64) -> Result<SplitAssignment> {
    Ok(stratified_split(corpus, ratios, seed)?)
}

pub fn synth(cfg: &RunConfig) -> Result<String> {
    let corpus = cfg.synth.generate()?;
    let out = prepare_out(cfg)?;
    write_corpus(&corpus, &out)?;
    Ok(format!(
        "wrote {} tracks and {} playlists to {}\n",
        corpus.len(),
        corpus.playlists().len(),
        out.display()
    ))
}

pub fn train_cf(cfg: &RunConfig) -> Result<String> {
    let corpus = corpus(cfg)?;
    let out = prepare_out(cfg)?;
    let matrix = build_playlist_matrix(&corpus);
    let mut trainer = WarpTrainer::new(&matrix, cfg.warp.clone())?;
    let mut log = String::from("epoch\tmean_positive_score\n");
    for epoch in 0..cfg.warp.max_epochs {
        trainer.epoch();
        let score = trainer
            .report()
            .mean_positive_score
            .last()
            .copied()
            .unwrap_or(f64::NAN);
        let _ = writeln!(log, "{epoch}\t{score:.6}");
    }
    let (factors, report) = trainer.finish();
    let auc = mean_playlist_auc(&factors, &matrix).unwrap_or(f64::NAN);
    let _ = writeln!(
        log,
        "steps {} updates {} skipped {}",
        report.steps, report.updates, report.skipped
    );
    let _ = writeln!(log, "mean playlist AUC {auc:.6}");
    factors.save(&out.join(FACTORS))?;
    write(&out.join(WARP_LOG), &log)?;
    Ok(log)
}

/// Fits the encoder widths that are fixed by the data rather than chosen.
pub fn model_config_for(
    cfg: &RunConfig,
    corpus: &Corpus,
    factors: Option<&CfFactors>,
) -> ModelConfig {
    let mut m = cfg.model.clone();
    m.genre.input_dim = corpus.embedding_table().dim();
    m.genre_vocab = corpus.genre_vocab_size() as usize;
    if let Some(f) = factors {
        m.cf.input_dim = f.rank();
    }
    m
}

pub fn train_cmd(cfg: &RunConfig) -> Result<String> {
    let corpus = corpus(cfg)?;
    let split = split(&corpus, cfg.split, cfg.seed)?;
    // only kinds with a CF modality read the factors file
    let factors = if cfg.kind.needs_factors() {
        let Some(path) = &cfg.factors else {
            bail!("model kind {} needs --factors", cfg.kind);
        };
        Some(CfFactors::load(path).with_context(|| format!("loading factors {}", path.display()))?)
    } else {
        None
    };
    let out = prepare_out(cfg)?;
    let model_cfg = model_config_for(cfg, &corpus, factors.as_ref());
    let outcome = train(
        cfg.kind,
        &model_cfg,
        &corpus,
        &split,
        factors.as_ref(),
        &cfg.train,
    )?;

    let mut ck = outcome.model.to_checkpoint();
    ck.config.insert("seed".into(), cfg.seed.to_string());
    ck.config.insert(
        "split".into(),
        format!("{},{},{}", cfg.split.0, cfg.split.1, cfg.split.2),
    );
    ck.save(&out.join(CHECKPOINT))?;
    let table = outcome.history.to_table();
    write(&out.join(LOSS_HISTORY), &table)?;
    Ok(format!("{table}best epoch {}\n", outcome.best_epoch))
}

fn load_checkpoint(cfg: &RunConfig) -> Result<Checkpoint> {
    let Some(path) = &cfg.checkpoint else {
        bail!("--checkpoint is required");
    };
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

/// Explicitly configured encoder widths must agree with the checkpoint.
fn check_dims(cfg: &RunConfig, encoder: &AudioEncoder) -> Result<()> {
    let a = &encoder.cfg;
    let pairs = [
        ("model.dim", cfg.model.dim() == a.dim),
        ("model.channels", cfg.model.audio.channels == a.channels),
        ("model.ffb_hidden", cfg.model.audio.hidden == a.hidden),
    ];
    for (key, same) in pairs {
        if cfg.explicit.contains(key) && !same {
            bail!("{key} in the configuration does not match the checkpoint");
        }
    }
    Ok(())
}

fn all_tracks(corpus: &Corpus) -> Vec<&TrackRecord> {
    corpus.tracks().iter().collect()
}

pub fn extract(cfg: &RunConfig) -> Result<String> {
    let ck = load_checkpoint(cfg)?;
    let encoder = Model::audio_from_checkpoint(&ck)?;
    check_dims(cfg, &encoder)?;
    let corpus = corpus(cfg)?;
    let out = prepare_out(cfg)?;
    let emb = extract_embeddings(&encoder, &all_tracks(&corpus))?;
    emb.save(&out.join(EMBEDDINGS))?;
    Ok(format!(
        "wrote {} embeddings of width {}\n",
        emb.len(),
        emb.dim()
    ))
}

fn split_from_checkpoint(ck: &Checkpoint) -> Result<Option<(u64, (f64, f64, f64))>> {
    let (Some(seed), Some(ratios)) = (ck.config.get("seed"), ck.config.get("split")) else {
        return Ok(None);
    };
    let r: Vec<f64> = ratios
        .split(',')
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .context("split ratios in checkpoint")?;
    let [a, b, c] = r[..] else {
        bail!("split ratios in checkpoint must have three entries");
    };
    Ok(Some((
        seed.parse().context("seed in checkpoint")?,
        (a, b, c),
    )))
}

pub fn eval(cfg: &RunConfig) -> Result<Report> {
    let corpus = corpus(cfg)?;
    let (name, emb, split_seed, ratios): (String, TrackEmbeddings, u64, (f64, f64, f64)) =
        if cfg.eval_random {
            let emb = random_embeddings(&all_tracks(&corpus), cfg.model.dim(), cfg.seed);
            ("random".into(), emb, cfg.seed, cfg.split)
        } else {
            let ck = load_checkpoint(cfg)?;
            let encoder = Model::audio_from_checkpoint(&ck)?;
            check_dims(cfg, &encoder)?;
            // evaluate on the split the encoder was trained with
            let (seed, ratios) = split_from_checkpoint(&ck)?.unwrap_or((cfg.seed, cfg.split));
            let kind = ck.config_value("kind")?.to_string();
            (
                kind,
                extract_embeddings(&encoder, &all_tracks(&corpus))?,
                seed,
                ratios,
            )
        };
    let split = split(&corpus, ratios, split_seed)?;
    let out = prepare_out(cfg)?;

    let mut report = Report::default();
    for task in &cfg.tasks {
        match task {
            Task::Genre => {
                let s = genre_task(&corpus, &split, &emb, &cfg.probe)?;
                report.push(&name, "genre", "accuracy", s.mean, Some(s.std));
            }
            Task::Tagging => {
                for r in tagging_task(&corpus, &emb, &cfg.probe)? {
                    if !r.excluded_tags.is_empty() {
                        log::warn!(
                            "category {}: tags {:?} lack test positives",
                            r.category,
                            r.excluded_tags
                        );
                    }
                    report.push(
                        &name,
                        "tagging",
                        &format!("ROC-AUC/{}", r.category),
                        r.auc.mean,
                        Some(r.auc.std),
                    );
                }
            }
            Task::Playlist => {
                let s = eval_playlist_continuation(&corpus, &split, &emb, cfg.eval_k)?;
                report.push(
                    &name,
                    "playlist",
                    &format!("nDCG@{}", cfg.eval_k),
                    s.ndcg,
                    None,
                );
                report.push(
                    &name,
                    "playlist",
                    &format!("MAP@{}", cfg.eval_k),
                    s.map,
                    None,
                );
            }
        }
    }
    write(&out.join(REPORT), report.to_table())?;
    write(&out.join(REPORT_JSON), report.to_json_lines())?;
    Ok(report)
}
