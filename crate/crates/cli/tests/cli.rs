use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = r#"
schema = 1
seed = 3

[data]
source = "synthetic"
n = 120
test_n = 40
d = 4
num_clusters = 4
num_classes = 2
cluster_separation = 5.0

[noise]
kind = "symmetric"
ratio = 0.3

[model]
hidden = [8]

[train]
epochs = 6
steps_per_epoch = 3
learning_rate = 1e-3
sample_count = 2
"#;

fn crust(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_crust"));
    cmd.args(args).env_remove("CRUST_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(config: &Path, out: &Path, extra: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut args = vec!["run", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    crust(&args, envs)
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn verify_passes_and_catches_fault() {
    let ok = crust(&["verify"], &[]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stdout));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("[PASS] gradient"));
    let bad = crust(&["verify", "--inject-fault", "gradient-scale"], &[]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("[FAIL] gradient"));
}

#[test]
fn run_writes_metrics_summary_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", &format!("{SMALL}\n[output]\ncheckpoint_every = 3\n"));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run(&cfg, &a, &[], &[]).status.code(), Some(0));
    assert_eq!(run(&cfg, &b, &[], &[("CRUST_THREADS", "1")]).status.code(), Some(0));

    let metrics = fs::read_to_string(a.join("crust/metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 6);
    for line in metrics.lines() {
        let m: Value = serde_json::from_str(line).unwrap();
        let acc = m["test_accuracy"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
    for f in ["crust/metrics.jsonl", "crust/summary.json", "crust/model.txt", "data/train.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    assert!(a.join("crust/checkpoints/epoch_0003.txt").is_file());
    assert!(a.join("crust/checkpoints/epoch_0006.txt").is_file());

    let s = read_json(&a.join("crust/summary.json"));
    assert_eq!(s["mode"], "crust");
    assert_eq!(s["epochs"], 6);
    assert_eq!(s["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(s["dataset_hash"].as_str().unwrap().len(), 64);
    assert!((s["noise_fraction"].as_f64().unwrap() - 0.3).abs() < 1e-12);

    let c = tmp.path().join("c");
    assert_eq!(run(&cfg, &c, &["--seed", "4"], &[]).status.code(), Some(0));
    let t = read_json(&c.join("crust/summary.json"));
    assert_ne!(s["dataset_hash"], t["dataset_hash"]);
    assert_ne!(s["config_hash"], t["config_hash"]);
}

#[test]
fn ablation_grid_gives_four_summaries() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL.replace(
        "sample_count = 2",
        "sample_count = 2\nmodes = [\"coreset_observed_labels\", \"coreset_observed_labels_mixup\", \"coreset_no_mixup\", \"crust\"]",
    );
    let cfg = write_config(tmp.path(), "grid.toml", &text);
    let out = tmp.path().join("grid");
    let o = run(&cfg, &out, &[], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let mut hashes = Vec::new();
    for mode in ["coreset_observed_labels", "coreset_observed_labels_mixup", "coreset_no_mixup", "crust"] {
        let s = read_json(&out.join(mode).join("summary.json"));
        assert_eq!(s["mode"], mode);
        hashes.push(s["dataset_hash"].clone());
    }
    assert!(hashes.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cases = [
        ("unknown.toml", format!("{SMALL}surprise = true\n"), "surprise"),
        ("frac.toml", SMALL.replace("sample_count = 2", "coreset_fraction = 1.5"), "coreset_fraction"),
        ("mode.toml", SMALL.replace("sample_count = 2", "modes = [\"fast\"]"), "fast"),
        (
            "missing.toml",
            "schema = 1\n[data]\nsource = \"file\"\ntrain = \"nope.txt\"\ntest = \"nope.txt\"\n".to_string(),
            "not found",
        ),
    ];
    for (name, text, needle) in cases {
        let cfg = write_config(tmp.path(), name, &text);
        let o = run(&cfg, &out, &[], &[]);
        assert_eq!(o.status.code(), Some(2), "{name}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(needle), "{name}: {err}");
    }
    let o = run(&tmp.path().join("absent.toml"), &out, &[], &[]);
    assert_eq!(o.status.code(), Some(2));
    let cfg = write_config(tmp.path(), "ok.toml", SMALL);
    assert_eq!(run(&cfg, &out, &[], &[("CRUST_THREADS", "many")]).status.code(), Some(2));
}

#[test]
fn divergence_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL
        .replace("learning_rate = 1e-3", "learning_rate = 1.0")
        .replace("epochs = 6", "epochs = 40");
    let cfg = write_config(tmp.path(), "hot.toml", &text);
    let out = tmp.path().join("out");
    let o = run(&cfg, &out, &[], &[]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("diverged"));
    assert!(out.join("crust/metrics.jsonl").is_file());
}

#[test]
fn file_datasets_and_spectrum() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!("{SMALL}\n[output]\ncheckpoint_every = 6\nspectrum_every = 2\n");
    let cfg = write_config(tmp.path(), "small.toml", &text);
    let first = tmp.path().join("first");
    assert_eq!(run(&cfg, &first, &[], &[]).status.code(), Some(0));
    assert_eq!(fs::read_to_string(first.join("crust/spectrum.jsonl")).unwrap().lines().count(), 3);

    // Feed the written datasets back in through a file-backed manifest.
    let file_cfg = write_config(
        tmp.path(),
        "files.toml",
        "schema = 1\nseed = 3\n[data]\nsource = \"file\"\ntrain = \"first/data/train.txt\"\ntest = \"first/data/test.txt\"\n[model]\nhidden = [8]\n[train]\nepochs = 6\nsteps_per_epoch = 3\nlearning_rate = 1e-3\nsample_count = 2\n",
    );
    let second = tmp.path().join("second");
    assert_eq!(run(&file_cfg, &second, &[], &[]).status.code(), Some(0));
    assert_eq!(
        fs::read(first.join("crust/metrics.jsonl")).unwrap(),
        fs::read(second.join("crust/metrics.jsonl")).unwrap()
    );

    let ckpt = first.join("crust/checkpoints/epoch_0006.txt");
    let data = first.join("data/train.txt");
    let args = |k: &str| {
        crust(
            &["spectrum", "--checkpoint", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap(), "--K", k],
            &[],
        )
    };
    let o = args("4");
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["cutoff"], 4);
    assert_eq!(r["n"], 120);
    assert_eq!(r["sandwich"]["holds"].as_array().unwrap().len(), r["sigma_weighted"].as_array().unwrap().len());
    assert_eq!(args("0").status.code(), Some(2));
    assert_eq!(args("121").status.code(), Some(2));
    let missing = crust(
        &["spectrum", "--checkpoint", ckpt.to_str().unwrap(), "--data", "/nonexistent", "--K", "2"],
        &[],
    );
    assert_eq!(missing.status.code(), Some(2));
}
