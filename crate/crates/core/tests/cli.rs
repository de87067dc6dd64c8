use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set", "synth.train_pairs=192",
    "--set", "synth.val_pairs=64",
    "--set", "synth.test_pairs=64",
    "--set", "train.epochs=2",
    "--set", "train.warmup_epochs=1",
    "--set", "train.batch_size=64",
];

fn duosent(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_duosent"))
        .args(args)
        .args(SMALL)
        .env("RUST_LOG", "info")
        .env_remove("DUOSENT_SEED")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = duosent(args);
    assert!(out.status.success(), "{args:?}\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&["make-synthetic", "--out", &p(d, "c")]);
    for f in ["train.l1", "train.l2", "train.labels", "val.l1", "test.l2", "test.labels"] {
        assert!(d.join("c").join(f).exists(), "{f}");
    }
    let out = ok(&["build-vocab", &p(d, "c/train.l1"), &p(d, "c/train.l2"), "--out", &p(d, "vocab.txt")]);
    assert!(out.starts_with("vocab_size="));

    ok(&[
        "filter", "--src", &p(d, "c/train.l1"), "--tgt", &p(d, "c/train.l2"),
        "--out-src", &p(d, "f.l1"), "--out-tgt", &p(d, "f.l2"), "--vocab", &p(d, "vocab.txt"),
        "--set", "filter.src_charset=latin", "--set", "filter.tgt_charset=cyrillic",
    ]);
    let kept = std::fs::read_to_string(d.join("f.l1")).unwrap().lines().count();
    assert_eq!(kept, 192);

    let out = ok(&[
        "train", "--src", &p(d, "f.l1"), "--tgt", &p(d, "f.l2"), "--vocab", &p(d, "vocab.txt"), "--out", &p(d, "run"),
    ]);
    assert!(out.contains("steps=6"), "{out}");
    let metrics = std::fs::read_to_string(d.join("run/metrics.tsv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some("step\tlr\tgen\talign\tsim\ttotal"));
    assert_eq!(lines.count(), 6);
    assert!(d.join("run/config.txt").exists());
    assert!(d.join("run/model.duos.opt").exists());

    for side in ["l1", "l2"] {
        ok(&[
            "encode", "--checkpoint", &p(d, "run/model.duos"), "--vocab", &p(d, "vocab.txt"),
            "--input", &p(d, &format!("c/test.{side}")), "--out", &p(d, &format!("{side}.demb")),
        ]);
    }
    let out = ok(&["retrieve", "--queries", &p(d, "l1.demb"), "--targets", &p(d, "l2.demb"), "--report", &p(d, "r.tsv")]);
    let score: f64 = out.trim().strip_prefix("p_at_1=").unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&score));
    let report = std::fs::read_to_string(d.join("r.tsv")).unwrap();
    assert!(report.starts_with("query_id\tgold_id\ttop1_id\tscore\tcorrect\n"));
    assert_eq!(report.lines().count(), 65);
    let correct = report.lines().skip(1).filter(|l| l.ends_with("\t1")).count();
    assert_eq!(format!("{:.6}", correct as f64 / 64.0), format!("{score:.6}"));

    let out = ok(&[
        "transfer", "--checkpoint", &p(d, "run/model.duos"), "--vocab", &p(d, "vocab.txt"),
        "--train", &p(d, "c/train.l1"), "--train-labels", &p(d, "c/train.labels"),
        "--val", &p(d, "c/val.l1"), "--val-labels", &p(d, "c/val.labels"),
        "--test", &p(d, "c/test.l2"), "--test-labels", &p(d, "c/test.labels"),
    ]);
    assert!(out.contains("transfer_accuracy="), "{out}");
}

#[test]
fn count_params_matches_preset() {
    assert!(ok(&["count-params", "--set", "model.preset=paper"]).starts_with("params=30133760"));
}

#[test]
fn config_is_echoed() {
    let out = duosent(&["count-params", "--set", "train.seed=17"]);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("train.seed=17"), "{err}");
    assert!(err.contains("model.d_model="), "{err}");
}

#[test]
fn config_file_and_env_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "# comment\ntrain.seed = 3\nmodel.preset = paper\n").unwrap();
    let run = |env: Option<&str>, extra: &[&str]| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_duosent"));
        c.args(["count-params", "--config", cfg.to_str().unwrap()]).args(extra).env("RUST_LOG", "info");
        match env {
            Some(v) => c.env("DUOSENT_SEED", v),
            None => c.env_remove("DUOSENT_SEED"),
        };
        let out = c.output().unwrap();
        assert!(out.status.success());
        String::from_utf8_lossy(&out.stderr).into_owned()
    };
    assert!(run(None, &[]).contains("train.seed=3"));
    assert!(run(Some("8"), &[]).contains("train.seed=8"));
    assert!(run(Some("8"), &["--set", "train.seed=9"]).contains("train.seed=9"));
}

#[test]
fn unknown_key_fails_with_exit_one() {
    let out = duosent(&["count-params", "--set", "train.sede=1"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("train.seed"), "valid keys should be listed: {err}");
}

#[test]
fn missing_input_fails_with_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = duosent(&["build-vocab", "/nonexistent/corpus.txt", "--out", &p(tmp.path(), "v.txt")]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn divergence_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&["make-synthetic", "--out", &p(d, "c")]);
    ok(&["build-vocab", &p(d, "c/train.l1"), &p(d, "c/train.l2"), "--out", &p(d, "vocab.txt")]);
    let out = duosent(&[
        "train", "--src", &p(d, "c/train.l1"), "--tgt", &p(d, "c/train.l2"), "--vocab", &p(d, "vocab.txt"),
        "--out", &p(d, "run"), "--set", "train.lr=1e30", "--set", "train.warmup_epochs=0",
        "--set", "train.epochs=20",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&["make-synthetic", "--out", &p(d, "c")]);
    ok(&["build-vocab", &p(d, "c/train.l1"), &p(d, "c/train.l2"), "--out", &p(d, "vocab.txt")]);
    let (src, tgt, vocab) = (p(d, "c/train.l1"), p(d, "c/train.l2"), p(d, "vocab.txt"));
    let train = |out: &str, epochs: &str, resume: bool| {
        let (out, epochs) = (p(d, out), format!("train.epochs={epochs}"));
        let mut args = vec!["train", "--src", &src, "--tgt", &tgt, "--vocab", &vocab, "--out", &out, "--set", &epochs];
        if resume {
            args.push("--resume");
        }
        ok(&args);
    };
    train("full", "3", false);
    train("part", "1", false);
    train("part", "3", true);
    let read = |f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read("full/metrics.tsv"), read("part/metrics.tsv"));
    assert_eq!(read("full/model.duos"), read("part/model.duos"));
    assert_eq!(read("full/model.duos.opt"), read("part/model.duos.opt"));
}
