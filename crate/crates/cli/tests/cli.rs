use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

const TINY: &str = r#"
[run]
seed = 3
output_dir = "out"

[synth]
preset = "planted"
n_patients_per_class = 4
tiles_per_patient = 2
size = 64

[dataset]
train_fraction = 0.5

[forest]
n_trees = 20

[explain]
n_repeats = 1
grid_size = 5

[stats]
n_boot = 50
"#;

struct Workdir {
    _tmp: tempfile::TempDir,
    dir: PathBuf,
}

impl Workdir {
    fn new(config: &str) -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().to_path_buf();
        std::fs::write(dir.join("run.toml"), config).unwrap();
        Self { _tmp: tmp, dir }
    }

    fn set_config(&self, config: &str) {
        std::fs::write(self.dir.join("run.toml"), config).unwrap();
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_histoforest"))
            .args(args)
            .arg("--config")
            .arg(self.dir.join("run.toml"))
            .env_remove("HISTOFOREST_LOG")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }

    fn out(&self) -> PathBuf {
        self.dir.join("out")
    }
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn train_before_extract_names_the_feature_matrix() {
    let w = Workdir::new(TINY);
    w.ok(&["synth"]);
    let out = w.run(&["train"]);
    assert_eq!(out.status.code(), Some(3));
    let err = stderr(&out);
    assert_eq!(err.trim().lines().count(), 1, "{err}");
    assert!(
        err.starts_with("error kind=missing_prerequisite artifact=\"feature matrix\" stage=extract"),
        "{err}"
    );
}

#[test]
fn nothing_before_synth_names_the_manifest() {
    let w = Workdir::new(TINY);
    let out = w.run(&["extract"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("artifact=\"tile manifest\" stage=synth"), "{}", stderr(&out));
}

#[test]
fn changed_configuration_refuses_stale_artifacts() {
    let w = Workdir::new(TINY);
    w.ok(&["synth"]);
    w.ok(&["extract"]);
    w.ok(&["train"]);

    // A different forest makes the stored model stale for evaluation.
    w.set_config(&TINY.replace("n_trees = 20", "n_trees = 21"));
    let out = w.run(&["evaluate"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("kind=stale_artifact"), "{}", stderr(&out));

    // A different pretreatment makes the feature matrix stale for training.
    w.set_config(&format!("{TINY}\n[pretreat]\nwhite_threshold = 215\n"));
    let out = w.run(&["train"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(
        stderr(&out).contains("kind=stale_artifact artifact=\"feature matrix\" stage=extract"),
        "{}",
        stderr(&out)
    );

    // A different seed invalidates everything downstream of extraction too.
    w.set_config(TINY);
    let out = w.run(&["train", "--seed", "4"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn bad_configuration_names_the_field() {
    let w = Workdir::new(&TINY.replace("train_fraction = 0.5", "train_fraction = 1.5"));
    let out = w.run(&["synth"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("field=\"dataset.train_fraction\""), "{}", stderr(&out));

    let w = Workdir::new(&TINY.replace("n_trees = 20", "n_tress = 20"));
    let out = w.run(&["synth"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("n_tress"), "{}", stderr(&out));

    let w = Workdir::new(&format!("{TINY}\n[segment.hough]\nthreshold = 3\n"));
    let out = w.run(&["synth"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));

    let w = Workdir::new(TINY);
    let out = w.run(&["synth", "--threads", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

fn sha256(p: &Path) -> String {
    Sha256::digest(std::fs::read(p).unwrap()).iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn full_run_reports_every_output() {
    let w = Workdir::new(TINY);
    for stage in ["synth", "extract", "train", "evaluate", "explain", "screen"] {
        w.ok(&[stage]);
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(w.out().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["tool"], "histoforest");
    assert_eq!(report["seed"], 3);
    let outputs = report["outputs"].as_array().unwrap();
    assert!(outputs.len() > 15, "{} outputs", outputs.len());
    for o in outputs {
        let rel = o["path"].as_str().unwrap();
        let p = if Path::new(rel).is_absolute() { PathBuf::from(rel) } else { w.out().join(rel) };
        let meta = std::fs::metadata(&p).unwrap_or_else(|_| panic!("{} missing", p.display()));
        assert!(meta.len() > 0, "{} is empty", p.display());
        assert_eq!(o["bytes"].as_u64().unwrap(), meta.len());
        assert_eq!(o["sha256"].as_str().unwrap(), sha256(&p), "{rel}");
    }
    for stage in ["synth", "extract", "train", "evaluate", "explain", "screen"] {
        assert!(report["stages"][stage]["digest"].as_str().is_some(), "{stage}");
    }
    for dir in ["features", "model", "eval", "explain"] {
        assert!(w.out().join(dir).is_dir(), "{dir}");
    }

    // Every table starts with a provenance line naming its stage.
    let matrix = std::fs::read_to_string(w.out().join("features/matrix.csv")).unwrap();
    let first = matrix.lines().next().unwrap();
    assert!(first.starts_with("# histoforest ") && first.contains("stage=extract digest="), "{first}");
    let importance = std::fs::read_to_string(w.out().join("explain/importance.csv")).unwrap();
    assert!(importance.lines().next().unwrap().contains("stage=explain"));
    assert!(importance.lines().nth(1).unwrap().starts_with("feature,permutation_importance"));
}

#[test]
fn reruns_are_byte_identical() {
    let a = Workdir::new(TINY);
    let b = Workdir::new(TINY);
    for stage in ["synth", "extract", "train", "evaluate"] {
        a.ok(&[stage, "--threads", "1"]);
        b.ok(&[stage, "--threads", "2"]);
    }
    for rel in [
        "features/matrix.csv",
        "features/qc.csv",
        "model/forest.json",
        "model/split.csv",
        "eval/tile_scores.csv",
        "eval/patient_scores.csv",
        "eval/summary.csv",
        "eval/roc.svg",
    ] {
        assert_eq!(sha256(&a.out().join(rel)), sha256(&b.out().join(rel)), "{rel}");
    }
}

#[test]
fn log_level_comes_from_the_environment() {
    let w = Workdir::new(TINY);
    let out = Command::new(env!("CARGO_BIN_EXE_histoforest"))
        .args(["synth", "--config"])
        .arg(w.dir.join("run.toml"))
        .env("HISTOFOREST_LOG", "info")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(stderr(&out).contains("INFO"), "{}", stderr(&out));
}
