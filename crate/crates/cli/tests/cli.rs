mod common;

use common::{musalign, ok, snapshot, write_config, Pipeline};

#[test]
fn pipeline_outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let a = Pipeline::run(&dir.path().join("a"), &cfg, "11");
    let b = Pipeline::run(&dir.path().join("b"), &cfg, "11");
    let (sa, sb) = (snapshot(&a.root), snapshot(&b.root));
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (k, v) in &sa {
        // the config echo records the differing output paths
        if k.ends_with("config.txt") {
            continue;
        }
        assert!(v == &sb[k], "{} differs", k.display());
    }
    for name in [
        "run/model.ckpt",
        "run/loss_history.txt",
        "cf/factors.bin",
        "extract/embeddings.txt",
        "eval/report.jsonl",
    ] {
        assert!(
            sa.contains_key(std::path::Path::new(name)),
            "{name} missing"
        );
    }
}

#[test]
fn report_has_one_row_per_task_metric() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let p = Pipeline::run(dir.path(), &cfg, "2");
    let rows = |name: &str| {
        std::fs::read_to_string(p.root.join(name).join("report.jsonl"))
            .unwrap()
            .lines()
            .count()
    };
    // genre accuracy, one AUC per tag category, nDCG and MAP
    let manifest = std::fs::read_to_string(p.root.join("corpus/manifest.json")).unwrap();
    let categories = manifest.matches("\"name\"").count();
    assert_eq!(rows("eval"), 1 + categories + 2);

    let corpus = p.root.join("corpus").display().to_string();
    let out = p.root.join("only-playlist").display().to_string();
    let cfg = cfg.display().to_string();
    let ck = p.root.join("run/model.ckpt").display().to_string();
    let table = ok(&[
        "eval",
        "--config",
        &cfg,
        "--corpus",
        &corpus,
        "--checkpoint",
        &ck,
        "--task",
        "playlist",
        "--out",
        &out,
    ]);
    assert_eq!(rows("only-playlist"), 2);
    assert!(table.contains("nDCG@100") && table.contains("MAP@100"));
}

#[test]
fn stdout_starts_with_the_resolved_config_and_flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("corpus");
    let stdout = ok(&[
        "synth",
        "--config",
        &cfg.display().to_string(),
        "--seed",
        "5",
        "--set",
        "synth.tracks=40",
        "--out",
        &out.display().to_string(),
    ]);
    assert!(stdout.starts_with("corpus = \nout = "));
    assert!(stdout.contains("seed = 5\n") && stdout.contains("synth.tracks = 40\n"));
    let echo = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(stdout.starts_with(&echo));
}

#[test]
fn usage_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let cfg = cfg.display().to_string();
    let corpus = dir.path().join("corpus").display().to_string();
    ok(&["synth", "--config", &cfg, "--out", &corpus]);
    let out = dir.path().join("x").display().to_string();

    let cases: Vec<Vec<&str>> = vec![
        vec![
            "eval", "--config", &cfg, "--corpus", &corpus, "--task", "lyrics", "--out", &out,
        ],
        vec![
            "synth",
            "--config",
            &cfg,
            "--set",
            "synth.clusters=0",
            "--out",
            &out,
        ],
        vec!["synth", "--set", "no.such.key=1", "--out", &out],
        vec![
            "train-cf",
            "--config",
            &cfg,
            "--corpus",
            "/nonexistent/corpus",
            "--out",
            &out,
        ],
        vec![
            "train", "--config", &cfg, "--corpus", &corpus, "--model", "bline-cf", "--out", &out,
        ],
        vec![
            "train", "--config", &cfg, "--corpus", &corpus, "--model", "contr-x", "--out", &out,
        ],
        vec!["eval", "--config", &cfg, "--corpus", &corpus, "--out", &out],
        vec!["frobnicate"],
    ];
    for args in cases {
        let res = musalign(&args);
        assert!(!res.status.success(), "{args:?} should fail");
        assert!(!res.stderr.is_empty());
    }
}

#[test]
fn genre_only_model_never_reads_factors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path()).display().to_string();
    let corpus = dir.path().join("corpus").display().to_string();
    ok(&["synth", "--config", &cfg, "--out", &corpus]);
    let out = dir.path().join("run").display().to_string();
    ok(&[
        "train",
        "--config",
        &cfg,
        "--corpus",
        &corpus,
        "--model",
        "contr-g",
        "--factors",
        "/nonexistent/factors.bin",
        "--out",
        &out,
    ]);
}

#[test]
fn checkpoint_dimension_mismatch_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path());
    let cfg = cfg_path.display().to_string();
    let corpus = dir.path().join("corpus").display().to_string();
    ok(&["synth", "--config", &cfg, "--out", &corpus]);
    let run = dir.path().join("run").display().to_string();
    ok(&[
        "train", "--config", &cfg, "--corpus", &corpus, "--model", "bline-g", "--out", &run,
    ]);
    let ck = format!("{run}/model.ckpt");
    let out = dir.path().join("ev").display().to_string();
    let res = musalign(&[
        "eval",
        "--config",
        &cfg,
        "--corpus",
        &corpus,
        "--checkpoint",
        &ck,
        "--set",
        "model.dim=16",
        "--out",
        &out,
    ]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("model.dim"));
}
