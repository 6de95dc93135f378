use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use musalign_cli::commands;
use musalign_cli::config::RunConfig;

/// Cross-modal contrastive music embeddings: synthetic corpora, CF factors,
/// encoder training, embedding extraction and downstream evaluation.
#[derive(Parser)]
#[command(name = "musalign", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus into --out.
    Synth(Common),
    /// Factorize the playlist matrix of --corpus with WARP.
    TrainCf(Common),
    /// Train an encoder of kind --model.
    Train(Common),
    /// Write track embeddings of --corpus from --checkpoint.
    Extract(Common),
    /// Run downstream tasks on --checkpoint (or random embeddings).
    Eval(Common),
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// contr-cf-g | contr-g | contr-cf | bline-g | bline-cf | bline-cf-g
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated subset of genre, tagging, playlist.
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    factors: Option<PathBuf>,
    /// Any config key, as `key=value`; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| anyhow::anyhow!("--set expects key=value, got {kv:?}"))?;
            cfg.set(k.trim(), v)?;
        }
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let flags = [
            ("corpus", path(&self.corpus)),
            ("out", path(&self.out)),
            ("model", self.model.clone()),
            ("seed", self.seed.map(|s| s.to_string())),
            ("task", self.task.clone()),
            ("checkpoint", path(&self.checkpoint)),
            ("factors", path(&self.factors)),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        cfg.resolve_seeds();
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    let (common, run): (&Common, fn(&RunConfig) -> Result<String>) = match &cli.command {
        Command::Synth(c) => (c, commands::synth),
        Command::TrainCf(c) => (c, commands::train_cf),
        Command::Train(c) => (c, commands::train_cmd),
        Command::Extract(c) => (c, commands::extract),
        Command::Eval(c) => (c, |cfg| Ok(commands::eval(cfg)?.to_table())),
    };
    let cfg = common.resolve()?;
    print!("{}", cfg.to_text());
    println!();
    print!("{}", run(&cfg)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
