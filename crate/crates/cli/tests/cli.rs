use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
n_base = 2
n_few_shot = 1
volumes_per_base = 10
volumes_per_few_shot = 10
volume_size = 16
input_size = 16
conv_filters = [4, 8]
embedding_dim = 8
pca_components = 4
step_budget = 20
batch_size = 16
few_shot_limit = 45
"#;

fn fewshot(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fewshot"))
        .current_dir(dir)
        .arg("--config")
        .arg(dir.join("tiny.toml"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    ok(&fewshot(dir.path(), &["gen-data", "--out", "data"]));
    dir
}

fn first_test_volume(dir: &Path) -> String {
    let manifest = std::fs::read_to_string(dir.join("data/manifest.tsv")).unwrap();
    let line = manifest.lines().find(|l| l.contains("\ttest")).unwrap();
    let file = line.split('\t').find(|f| f.ends_with(".mvol")).unwrap();
    dir.join("data").join(file).to_string_lossy().into_owned()
}

#[test]
fn triplet_workflow_end_to_end() {
    let dir = setup();
    let d = dir.path();
    let train = ok(&fewshot(d, &["train", "--model", "triplet", "--data", "data", "--out", "t.memb", "--seed", "1"]));
    assert!(train.contains("trained 20 steps"));
    ok(&fewshot(d, &["fit-head", "--checkpoint", "t.memb", "--data", "data", "--out", "t.mhed", "--seed", "1"]));
    let vol = first_test_volume(d);
    let cls = ok(&fewshot(d, &["classify", "--checkpoint", "t.memb", "--head", "t.mhed", &vol]));
    assert_eq!(cls.lines().count(), 1);
    assert!(cls.contains("distribution"));
    let demo = ok(&fewshot(d, &["uncertainty-demo", "--checkpoint", "t.memb", "--head", "t.mhed", "--volume", &vol]));
    for name in ["binary_mask", "constant_zero", "uniform_noise"] {
        assert!(demo.contains(name), "{demo}");
    }
    ok(&fewshot(d, &[
        "export-embeddings", "--checkpoint", "t.memb", "--head", "t.mhed", "--data", "data", "--out", "z.tsv",
    ]));
    let tsv = std::fs::read_to_string(d.join("z.tsv")).unwrap();
    assert!(tsv.starts_with("volume_id\taxis\tindex\tlabel\tz0\tz1\tz2\tz3\n"));
    assert!(tsv.lines().skip(1).all(|l| l.split('\t').count() == 8));
}

#[test]
fn baseline_checkpoint_classifies_without_head() {
    let dir = setup();
    let d = dir.path();
    ok(&fewshot(d, &["train", "--model", "baseline", "--data", "data", "--out", "b.memb", "--seed", "2"]));
    let vol = first_test_volume(d);
    let cls = ok(&fewshot(d, &["classify", "--checkpoint", "b.memb", &vol]));
    assert!(cls.contains("\tclass"));
}

#[test]
fn experiment_writes_reports() {
    let dir = setup();
    let d = dir.path();
    let text = ok(&fewshot(d, &[
        "experiment", "--exp", "exp4", "--noise", "gaussian", "--limit", "30", "--seed", "1", "--data", "data", "--out",
        "run", "--steps", "10",
    ]));
    assert!(text.contains("exp4-gaussian-limit30"));
    assert_eq!(std::fs::read_to_string(d.join("run/report.txt")).unwrap(), text);
    assert_eq!(std::fs::read_to_string(d.join("run/report.jsonl")).unwrap().lines().count(), 2);
}

#[test]
fn errors_map_to_exit_codes() {
    let dir = setup();
    let d = dir.path();
    // configuration errors
    let bad = fewshot(d, &["experiment", "--exp", "exp1", "--noise", "gaussian", "--seed", "1", "--data", "data", "--out", "x"]);
    assert_eq!(bad.status.code(), Some(2));
    std::fs::write(d.join("bad.toml"), "no_such_key = 1\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_fewshot"))
        .args(["--config", d.join("bad.toml").to_str().unwrap(), "gen-data", "--out", "y"])
        .current_dir(d)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    // corrupted artifacts
    std::fs::write(d.join("junk.memb"), b"MEMBjunk").unwrap();
    let vol = first_test_volume(d);
    let out = fewshot(d, &["classify", "--checkpoint", "junk.memb", &vol]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
