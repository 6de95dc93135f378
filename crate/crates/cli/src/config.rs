//! Flat `key = value` run configuration. Values come from defaults, then an
//! optional config file, then command-line flags, in that order.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use musalign::align::LossWeights;
use musalign::cf::{Projection, WarpConfig};
use musalign::corpus::SynthConfig;
use musalign::eval::{ProbeConfig, CONTINUATION_K};
use musalign::model::{ModelConfig, ModelKind};
use musalign::nn::audio::default_pools;
use musalign::rng::derive_seed;
use musalign::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Task {
    Genre,
    Tagging,
    Playlist,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Genre => "genre",
            Task::Tagging => "tagging",
            Task::Playlist => "playlist",
        }
    }
}

impl FromStr for Task {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "genre" => Ok(Task::Genre),
            "tagging" => Ok(Task::Tagging),
            "playlist" => Ok(Task::Playlist),
            _ => bail!("unknown task {s:?} (expected genre, tagging or playlist)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub factors: Option<PathBuf>,
    pub kind: ModelKind,
    pub seed: u64,
    pub tasks: Vec<Task>,
    pub synth: SynthConfig,
    pub split: (f64, f64, f64),
    pub warp: WarpConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    pub eval_k: usize,
    /// Evaluate seeded random embeddings instead of a checkpoint.
    pub eval_random: bool,
    /// Keys given explicitly by a file or flag.
    pub explicit: BTreeSet<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: None,
            out: None,
            checkpoint: None,
            factors: None,
            kind: ModelKind::ContrCfG,
            seed: 0,
            tasks: vec![Task::Genre, Task::Tagging, Task::Playlist],
            synth: SynthConfig {
                n_tracks: 512,
                n_clusters: 8,
                n_playlists: 128,
                noise_level: 0.3,
                ..SynthConfig::default()
            },
            split: (0.8, 0.1, 0.1),
            warp: WarpConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            probe: ProbeConfig::default(),
            eval_k: CONTINUATION_K,
            eval_random: false,
            explicit: BTreeSet::new(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("invalid value {value:?} for {key}: {e}"))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn path_text(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    /// Sets one key. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "corpus" => self.corpus = opt_path(v),
            "out" => self.out = opt_path(v),
            "checkpoint" => self.checkpoint = opt_path(v),
            "factors" => self.factors = opt_path(v),
            "model" => self.kind = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "task" => {
                let mut tasks: Vec<Task> = parse_list(key, v)?;
                tasks.sort();
                tasks.dedup();
                self.tasks = tasks;
            }

            "synth.tracks" => self.synth.n_tracks = parse(key, v)?,
            "synth.clusters" => self.synth.n_clusters = parse(key, v)?,
            "synth.playlists" => self.synth.n_playlists = parse(key, v)?,
            "synth.noise" => self.synth.noise_level = parse(key, v)?,
            "synth.min_frames" => self.synth.min_frames = parse(key, v)?,
            "synth.max_frames" => self.synth.max_frames = parse(key, v)?,

            "split.train" => self.split.0 = parse(key, v)?,
            "split.validation" => self.split.1 = parse(key, v)?,
            "split.test" => self.split.2 = parse(key, v)?,

            "warp.rank" => self.warp.rank = parse(key, v)?,
            "warp.learning_rate" => self.warp.learning_rate = parse(key, v)?,
            "warp.epochs" => self.warp.max_epochs = parse(key, v)?,
            "warp.trials" => self.warp.max_negative_trials = parse(key, v)?,
            "warp.margin" => self.warp.margin = parse(key, v)?,
            "warp.projection" => {
                self.warp.projection = match v {
                    "nonnegative" => Projection::Nonnegative,
                    "unconstrained" => Projection::Unconstrained,
                    _ => bail!(
                        "invalid value {v:?} for {key} (expected nonnegative or unconstrained)"
                    ),
                }
            }

            "model.dim" => self.model.set_dim(parse(key, v)?),
            "model.channels" => {
                let mut c: Vec<usize> = parse_list(key, v)?;
                if c.len() == 1 {
                    c = vec![c[0]; self.model.audio.blocks()];
                }
                self.model.audio.pools = default_pools(c.len());
                self.model.audio.channels = c;
            }
            "model.ffb_hidden" => self.model.audio.hidden = parse(key, v)?,
            "model.cf_hidden" => self.model.cf.hidden = parse(key, v)?,
            "model.heads" => self.model.genre.heads = parse(key, v)?,
            "model.dropout" => self.model.set_dropout(parse(key, v)?),

            "train.tau" => self.train.tau = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.learning_rate" => self.train.learning_rate = parse(key, v)?,
            "train.epochs" => self.train.max_epochs = parse(key, v)?,
            "train.patience" => self.train.patience = parse(key, v)?,
            "train.lambda_a2g" => self.train.weights.a2g = parse(key, v)?,
            "train.lambda_a2p" => self.train.weights.a2p = parse(key, v)?,
            "train.lambda_g2p" => self.train.weights.g2p = parse(key, v)?,

            "probe.repeats" => self.probe.repeats = parse(key, v)?,
            "probe.epochs" => self.probe.epochs = parse(key, v)?,
            "probe.batch_size" => self.probe.batch_size = parse(key, v)?,
            "probe.learning_rate" => self.probe.learning_rate = parse(key, v)?,
            "probe.patience" => self.probe.patience = parse(key, v)?,
            "probe.genre_hidden" => self.probe.genre_hidden = parse(key, v)?,
            "probe.tag_hidden" => {
                let h: Vec<usize> = parse_list(key, v)?;
                let [a, b] = h[..] else {
                    bail!("{key} takes two widths, got {v:?}");
                };
                self.probe.tag_hidden = (a, b);
            }
            "probe.dropout" => self.probe.dropout = parse(key, v)?,

            "eval.k" => self.eval_k = parse(key, v)?,
            "eval.random" => self.eval_random = parse(key, v)?,
            _ => bail!("unknown config key {key:?}"),
        }
        self.explicit.insert(key.to_string());
        Ok(())
    }

    /// Applies every `key = value` line of a config file. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{origin}:{}: expected key = value", n + 1))?;
            self.set(k.trim(), v)
                .with_context(|| format!("{origin}:{}", n + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Every key with its resolved value, in a stable order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let w: &LossWeights = &self.train.weights;
        vec![
            ("corpus", path_text(&self.corpus)),
            ("out", path_text(&self.out)),
            ("checkpoint", path_text(&self.checkpoint)),
            ("factors", path_text(&self.factors)),
            ("model", self.kind.name().to_string()),
            ("seed", self.seed.to_string()),
            (
                "task",
                self.tasks
                    .iter()
                    .map(|t| t.name())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("synth.tracks", self.synth.n_tracks.to_string()),
            ("synth.clusters", self.synth.n_clusters.to_string()),
            ("synth.playlists", self.synth.n_playlists.to_string()),
            ("synth.noise", self.synth.noise_level.to_string()),
            ("synth.min_frames", self.synth.min_frames.to_string()),
            ("synth.max_frames", self.synth.max_frames.to_string()),
            ("split.train", self.split.0.to_string()),
            ("split.validation", self.split.1.to_string()),
            ("split.test", self.split.2.to_string()),
            ("warp.rank", self.warp.rank.to_string()),
            ("warp.learning_rate", self.warp.learning_rate.to_string()),
            ("warp.epochs", self.warp.max_epochs.to_string()),
            ("warp.trials", self.warp.max_negative_trials.to_string()),
            ("warp.margin", self.warp.margin.to_string()),
            (
                "warp.projection",
                match self.warp.projection {
                    Projection::Nonnegative => "nonnegative",
                    Projection::Unconstrained => "unconstrained",
                }
                .to_string(),
            ),
            ("model.dim", self.model.dim().to_string()),
            ("model.channels", join(&self.model.audio.channels)),
            ("model.ffb_hidden", self.model.audio.hidden.to_string()),
            ("model.cf_hidden", self.model.cf.hidden.to_string()),
            ("model.heads", self.model.genre.heads.to_string()),
            ("model.dropout", self.model.audio.dropout.to_string()),
            ("train.tau", self.train.tau.to_string()),
            ("train.batch_size", self.train.batch_size.to_string()),
            ("train.learning_rate", self.train.learning_rate.to_string()),
            ("train.epochs", self.train.max_epochs.to_string()),
            ("train.patience", self.train.patience.to_string()),
            ("train.lambda_a2g", w.a2g.to_string()),
            ("train.lambda_a2p", w.a2p.to_string()),
            ("train.lambda_g2p", w.g2p.to_string()),
            ("probe.repeats", self.probe.repeats.to_string()),
            ("probe.epochs", self.probe.epochs.to_string()),
            ("probe.batch_size", self.probe.batch_size.to_string()),
            ("probe.learning_rate", self.probe.learning_rate.to_string()),
            ("probe.patience", self.probe.patience.to_string()),
            ("probe.genre_hidden", self.probe.genre_hidden.to_string()),
            (
                "probe.tag_hidden",
                format!("{},{}", self.probe.tag_hidden.0, self.probe.tag_hidden.1),
            ),
            ("probe.dropout", self.probe.dropout.to_string()),
            ("eval.k", self.eval_k.to_string()),
            ("eval.random", self.eval_random.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Pushes the global seed into every component config. WARP draws from a
    /// derived seed; the other components derive their own streams by name.
    pub fn resolve_seeds(&mut self) {
        self.synth.seed = self.seed;
        self.warp.seed = derive_seed(self.seed, "warp");
        self.train.seed = self.seed;
        self.probe.seed = self.seed;
    }

    pub fn require_corpus(&self) -> Result<&Path> {
        self.corpus
            .as_deref()
            .ok_or_else(|| anyhow!("--corpus is required"))
    }

    pub fn require_out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| anyhow!("--out is required"))
    }
}
