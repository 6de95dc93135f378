#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// Small enough that a full pipeline runs in seconds.
pub const TINY: &str = "\
synth.tracks = 48
synth.clusters = 4
synth.playlists = 12
synth.noise = 0.2
warp.rank = 4
warp.epochs = 3
model.dim = 8
model.channels = 2
model.ffb_hidden = 8
model.cf_hidden = 8
model.heads = 2
train.batch_size = 16
train.learning_rate = 0.001
train.epochs = 2
probe.repeats = 2
probe.epochs = 5
probe.genre_hidden = 16
probe.tag_hidden = 8,4
";

pub fn musalign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_musalign"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

pub fn ok(args: &[&str]) -> String {
    let out = musalign(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 output")
}

pub fn write_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.conf");
    std::fs::write(&p, TINY).unwrap();
    p
}

/// Relative path to file contents for every file under `dir`.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

pub struct Pipeline {
    pub root: PathBuf,
}

impl Pipeline {
    fn path(&self, name: &str) -> String {
        self.root.join(name).display().to_string()
    }

    /// Runs every subcommand once under `root` with a fixed seed.
    pub fn run(root: &Path, config: &Path, seed: &str) -> Pipeline {
        let p = Pipeline {
            root: root.to_path_buf(),
        };
        let cfg = config.display().to_string();
        let (corpus, cf, run) = (p.path("corpus"), p.path("cf"), p.path("run"));
        ok(&["synth", "--config", &cfg, "--seed", seed, "--out", &corpus]);
        ok(&[
            "train-cf", "--config", &cfg, "--seed", seed, "--corpus", &corpus, "--out", &cf,
        ]);
        let factors = format!("{cf}/factors.bin");
        ok(&[
            "train",
            "--config",
            &cfg,
            "--seed",
            seed,
            "--corpus",
            &corpus,
            "--factors",
            &factors,
            "--out",
            &run,
        ]);
        let ckpt = format!("{run}/model.ckpt");
        ok(&[
            "extract",
            "--config",
            &cfg,
            "--seed",
            seed,
            "--corpus",
            &corpus,
            "--checkpoint",
            &ckpt,
            "--out",
            &p.path("extract"),
        ]);
        ok(&[
            "eval",
            "--config",
            &cfg,
            "--seed",
            seed,
            "--corpus",
            &corpus,
            "--checkpoint",
            &ckpt,
            "--out",
            &p.path("eval"),
        ]);
        ok(&[
            "eval",
            "--config",
            &cfg,
            "--seed",
            seed,
            "--corpus",
            &corpus,
            "--set",
            "eval.random=true",
            "--out",
            &p.path("eval-random"),
        ]);
        p
    }
}
