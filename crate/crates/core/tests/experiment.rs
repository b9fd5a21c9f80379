use fewshot::data::{generate_synthetic_dataset, DatasetManifest, NoiseKind, MANIFEST_FILE};
use fewshot::harness::*;
use fewshot::Error;

fn tiny_config() -> HarnessConfig {
    HarnessConfig {
        n_base: 2,
        n_few_shot: 1,
        volumes_per_base: 10,
        volumes_per_few_shot: 10,
        volume_size: 16,
        input_size: 16,
        conv_filters: vec![4, 8],
        embedding_dim: 8,
        pca_components: 4,
        step_budget: 30,
        batch_size: 16,
        few_shot_limit: 45,
        ..HarnessConfig::default()
    }
}

fn corpus(cfg: &HarnessConfig, dir: &std::path::Path) -> Corpus {
    generate_synthetic_dataset(&cfg.synth(), dir).unwrap();
    Corpus::load(DatasetManifest::read(dir.join(MANIFEST_FILE)).unwrap()).unwrap()
}

#[test]
fn spec_validation() {
    let cfg = HarnessConfig::default();
    let ok = |id, noise, limit| ExperimentSpec::new(id, ModelChoice::Both, noise, limit, 1, &cfg);
    assert_eq!(ok(ExperimentId::Exp2, NoiseKind::None, None).unwrap().few_shot_limit, Some(150));
    assert!(ok(ExperimentId::Exp3, NoiseKind::Gaussian, None).unwrap().noise_in_train);
    assert!(!ok(ExperimentId::Exp4, NoiseKind::SaltPepper, Some(150)).unwrap().noise_in_train);
    for bad in [
        ok(ExperimentId::Exp1, NoiseKind::Gaussian, None),
        ok(ExperimentId::Exp1, NoiseKind::None, Some(10)),
        ok(ExperimentId::Exp3, NoiseKind::None, None),
        ok(ExperimentId::Exp2, NoiseKind::None, Some(0)),
    ] {
        assert!(matches!(bad, Err(Error::Config(_))));
    }
    assert_eq!(
        ok(ExperimentId::Exp3, NoiseKind::Gaussian, Some(150)).unwrap().label(),
        "exp3-gaussian-limit150"
    );
    assert!("exp9".parse::<ExperimentId>().is_err());
}

#[test]
fn untrained_models_score_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    let corpus = corpus(&cfg, dir.path());
    cfg.step_budget = 0;
    let spec = ExperimentSpec::new(ExperimentId::Exp1, ModelChoice::Both, NoiseKind::None, None, 1, &cfg).unwrap();
    let out = run_experiment(&spec, &corpus, &cfg, Some(&dir.path().join("run"))).unwrap();
    assert_eq!(out.reports.len(), 2);
    for r in &out.reports {
        assert!(r.metrics.balanced_accuracy <= 0.8, "{}: {}", r.model, r.metrics.balanced_accuracy);
    }
    for f in ["report.txt", "report.jsonl", "triplet.memb", "triplet.mhed", "baseline.memb"] {
        assert!(dir.path().join("run").join(f).exists(), "{f}");
    }
}

#[test]
fn repeated_runs_write_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let corpus = corpus(&cfg, dir.path());
    let spec =
        ExperimentSpec::new(ExperimentId::Exp3, ModelChoice::Both, NoiseKind::SaltPepper, Some(45), 3, &cfg).unwrap();
    let a = run_experiment(&spec, &corpus, &cfg, Some(&dir.path().join("a"))).unwrap();
    let b = run_experiment(&spec, &corpus, &cfg, Some(&dir.path().join("b"))).unwrap();
    for f in ["report.txt", "report.jsonl", "triplet.memb", "triplet.mhed", "baseline.memb"] {
        let x = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let y = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
    assert_eq!(a.jsonl, b.jsonl);
}

#[test]
fn few_shot_limit_leaves_base_classes_alone() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let corpus = corpus(&cfg, dir.path());
    let full = training_set(&corpus, &cfg, None, 1).unwrap();
    let limited = training_set(&corpus, &cfg, Some(20), 1).unwrap();
    let (f, l) = (full.counts(), limited.counts());
    assert_eq!(f[..2], l[..2]);
    assert_eq!(l[2], 20);
}

#[test]
fn uncertainty_demo_reports_every_input() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let corpus = corpus(&cfg, dir.path());
    let spec = ExperimentSpec::new(ExperimentId::Exp1, ModelChoice::Triplet, NoiseKind::None, None, 2, &cfg).unwrap();
    let out = run_experiment(&spec, &corpus, &cfg, None).unwrap();
    let pipeline = out.triplet.unwrap();
    let rows = run_uncertainty_demo(&pipeline, &corpus.test[0].0, &cfg.sampling(), 2).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].in_distribution_source);
    let tau = pipeline.head().unwrap().gate.tau;
    assert!(rows.iter().all(|r| r.tau == tau));
    assert!(render_uncertainty(&rows).contains("binary_mask"));
}
