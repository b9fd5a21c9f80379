//! The four experimental regimes: full data, few-shot limit, noisy training
//! with noisy test, and clean training with noisy test.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};

use crate::baseline::{train_baseline, BaselineModel};
use crate::data::{
    corrupt, restrict_few_shot, DatasetManifest, Image, NoiseKind, NoiseSpec, SliceSample, Split, Volume,
};
use crate::error::{Error, Result};
use crate::head::{gate_sample, EmbeddingHead, GateVerdict, HeadFitReport, TripletPipeline};
use crate::nn::{save_checkpoint, save_checkpoint_with_head};
use crate::rng::Rng;
use crate::train::{train_triplet, TrainingSet};

use super::config::HarnessConfig;
use super::metrics::{compute_metrics, render_jsonl, render_text, MetricsReport};

/// Split keys of the experiment seed, one per consumer.
const TRAIN_SLICES: u64 = 1;
const TEST_SLICES: u64 = 2;
const HEAD_FIT: u64 = 3;
const VAL_SLICES: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    Exp1,
    Exp2,
    Exp3,
    Exp4,
}

impl FromStr for ExperimentId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp1" => Ok(ExperimentId::Exp1),
            "exp2" => Ok(ExperimentId::Exp2),
            "exp3" => Ok(ExperimentId::Exp3),
            "exp4" => Ok(ExperimentId::Exp4),
            _ => Err(Error::Config(format!("unknown experiment `{s}` (exp1..exp4)"))),
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ExperimentId::Exp1 => "exp1",
            ExperimentId::Exp2 => "exp2",
            ExperimentId::Exp3 => "exp3",
            ExperimentId::Exp4 => "exp4",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    Triplet,
    Baseline,
    Both,
}

impl ModelChoice {
    pub fn triplet(self) -> bool {
        self != ModelChoice::Baseline
    }

    pub fn baseline(self) -> bool {
        self != ModelChoice::Triplet
    }
}

impl FromStr for ModelChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "triplet" => Ok(ModelChoice::Triplet),
            "baseline" => Ok(ModelChoice::Baseline),
            "both" => Ok(ModelChoice::Both),
            _ => Err(Error::Config(format!("unknown model `{s}` (triplet|baseline|both)"))),
        }
    }
}

pub fn parse_noise_kind(s: &str) -> Result<NoiseKind> {
    match s {
        "none" => Ok(NoiseKind::None),
        "gaussian" => Ok(NoiseKind::Gaussian),
        "salt_pepper" => Ok(NoiseKind::SaltPepper),
        _ => Err(Error::Config(format!("unknown noise `{s}` (none|gaussian|salt_pepper)"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub id: ExperimentId,
    pub model: ModelChoice,
    pub few_shot_limit: Option<usize>,
    pub noise: NoiseSpec,
    pub noise_in_train: bool,
    pub seed: u64,
    pub step_budget: usize,
}

impl ExperimentSpec {
    /// The regime `id` with its fixed noise placement. `exp2` always uses a
    /// few-shot limit (`limit` or the configured one); `exp3`/`exp4` need a
    /// noise kind and take the limit only when given.
    pub fn new(
        id: ExperimentId,
        model: ModelChoice,
        noise: NoiseKind,
        limit: Option<usize>,
        seed: u64,
        cfg: &HarnessConfig,
    ) -> Result<Self> {
        let (few_shot_limit, noise_in_train) = match id {
            ExperimentId::Exp1 | ExperimentId::Exp2 if noise != NoiseKind::None => {
                return Err(Error::Config(format!("{id} does not take a noise kind")));
            }
            ExperimentId::Exp1 if limit.is_some() => {
                return Err(Error::Config("exp1 uses all training data; use exp2 for a limit".into()));
            }
            ExperimentId::Exp1 => (None, false),
            ExperimentId::Exp2 => (Some(limit.unwrap_or(cfg.few_shot_limit)), false),
            ExperimentId::Exp3 | ExperimentId::Exp4 if noise == NoiseKind::None => {
                return Err(Error::Config(format!("{id} requires --noise gaussian|salt_pepper")));
            }
            ExperimentId::Exp3 => (limit, true),
            ExperimentId::Exp4 => (limit, false),
        };
        if few_shot_limit == Some(0) {
            return Err(Error::Config("few-shot limit must be >= 1".into()));
        }
        Ok(ExperimentSpec {
            id,
            model,
            few_shot_limit,
            noise: cfg.noise(noise),
            noise_in_train,
            seed,
            step_budget: cfg.step_budget,
        })
    }

    /// e.g. `exp2-limit150`, `exp3-gaussian-limit150`.
    pub fn label(&self) -> String {
        let mut s = self.id.to_string();
        match self.noise.kind {
            NoiseKind::None => {}
            NoiseKind::Gaussian => s.push_str("-gaussian"),
            NoiseKind::SaltPepper => s.push_str("-salt_pepper"),
        }
        if let Some(l) = self.few_shot_limit {
            s.push_str(&format!("-limit{l}"));
        }
        s
    }

    fn test_noise(&self) -> Option<&NoiseSpec> {
        self.noise.is_active().then_some(&self.noise)
    }
}

/// Everything an experiment produced, kept in memory for further use.
pub struct ExperimentOutcome {
    pub spec: ExperimentSpec,
    pub reports: Vec<MetricsReport>,
    pub triplet: Option<TripletPipeline>,
    pub triplet_losses: Vec<f64>,
    pub head_fit: Option<HeadFitReport>,
    pub baseline: Option<BaselineModel>,
    pub baseline_losses: Vec<f64>,
    /// Text table and JSONL, exactly as written to disk.
    pub text: String,
    pub jsonl: String,
}

/// Loaded corpus split into train / validation / test volumes.
pub struct Corpus {
    pub manifest: DatasetManifest,
    pub train: Vec<(Volume, usize)>,
    pub val: Vec<(Volume, usize)>,
    pub test: Vec<(Volume, usize)>,
}

impl Corpus {
    pub fn load(manifest: DatasetManifest) -> Result<Self> {
        let mut corpus = Corpus {
            manifest,
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        };
        for e in &corpus.manifest.entries {
            let label = corpus
                .manifest
                .class_index(&e.label)
                .ok_or_else(|| Error::Config(format!("unknown label `{}`", e.label)))?;
            let v = corpus.manifest.load_volume(e)?;
            match e.split {
                Split::Train => corpus.train.push((v, label)),
                Split::Val => corpus.val.push((v, label)),
                Split::Test => corpus.test.push((v, label)),
            }
        }
        if corpus.test.is_empty() {
            return Err(Error::Config("dataset has no test volumes".into()));
        }
        Ok(corpus)
    }
}

/// Slices of every volume, each volume drawn from its own child stream.
pub fn sample_volumes(
    volumes: &[(Volume, usize)],
    cfg: &HarnessConfig,
    rng: &Rng,
) -> Result<Vec<Vec<SliceSample>>> {
    let sampling = cfg.sampling();
    let size = (cfg.input_size, cfg.input_size);
    volumes
        .iter()
        .enumerate()
        .map(|(i, (v, label))| sampling.sample(v, *label, size, &mut rng.split(i as u64)))
        .collect()
}

fn log_class_counts(what: &str, set: &TrainingSet, manifest: &DatasetManifest) {
    let parts: Vec<String> = manifest
        .classes
        .iter()
        .zip(set.counts())
        .map(|(c, n)| format!("{}={n}", c.name))
        .collect();
    info!("{what}: {}", parts.join(" "));
}

/// Builds the (possibly restricted) training set and checks that the
/// restriction left every base class untouched.
pub fn training_set(corpus: &Corpus, cfg: &HarnessConfig, limit: Option<usize>, seed: u64) -> Result<TrainingSet> {
    let all: Vec<SliceSample> = sample_volumes(&corpus.train, cfg, &Rng::new(seed).split(TRAIN_SLICES))?
        .into_iter()
        .flatten()
        .collect();
    let n_classes = corpus.manifest.num_classes();
    let full = TrainingSet::new(all, n_classes)?;
    let Some(limit) = limit else {
        log_class_counts("training slices", &full, &corpus.manifest);
        return Ok(full);
    };
    let kept = restrict_few_shot(&full.slices, &corpus.manifest, limit)?;
    let restricted = TrainingSet::new(kept, n_classes)?;
    for (c, info) in corpus.manifest.classes.iter().enumerate() {
        if info.group == crate::data::ClassGroup::Base {
            assert_eq!(
                full.by_class[c].len(),
                restricted.by_class[c].len(),
                "few-shot restriction altered base class {}",
                info.name
            );
        }
    }
    log_class_counts("training slices after few-shot limit", &restricted, &corpus.manifest);
    Ok(restricted)
}

fn clean_images(set: &TrainingSet) -> Vec<&Image> {
    set.slices.iter().map(|s| &s.image).collect()
}

fn corrupted(slices: &[SliceSample], noise: Option<&NoiseSpec>, rng: &mut Rng) -> Vec<Image> {
    slices
        .iter()
        .map(|s| match noise {
            Some(spec) => corrupt(&s.image, spec, rng),
            None => s.image.clone(),
        })
        .collect()
}

/// Runs one regime end to end. Writes `report.txt`, `report.jsonl` and the
/// fitted artifacts into `out_dir` when given.
pub fn run_experiment(spec: &ExperimentSpec, corpus: &Corpus, cfg: &HarnessConfig, out_dir: Option<&Path>) -> Result<ExperimentOutcome> {
    let mut cfg = cfg.clone();
    cfg.step_budget = spec.step_budget;
    cfg.validate()?;
    let manifest = &corpus.manifest;
    let classes = manifest.class_names();
    let groups = manifest.groups();
    let label = spec.label();
    info!("{label}: seed {}, {} steps, model {:?}", spec.seed, spec.step_budget, spec.model);

    let set = training_set(corpus, &cfg, spec.few_shot_limit, spec.seed)?;
    let train_noise = if spec.noise_in_train {
        spec.noise
    } else {
        NoiseSpec {
            kind: NoiseKind::None,
            ..spec.noise
        }
    };
    let train_cfg = cfg.train(train_noise);
    let net_cfg = cfg.network();
    let snapshot = serde_json::json!({ "spec": spec, "config": cfg });

    // test slices are drawn once and shared by both models
    let test_slices = sample_volumes(&corpus.test, &cfg, &Rng::new(spec.seed).split(TEST_SLICES))?;
    let mut noise_rng = Rng::new(spec.seed).split(TEST_SLICES).split(u64::MAX);
    let test_images: Vec<Vec<Image>> = test_slices
        .iter()
        .map(|s| corrupted(s, spec.test_noise(), &mut noise_rng))
        .collect();
    let y_true: Vec<usize> = corpus.test.iter().map(|(_, l)| *l).collect();

    let mut reports = Vec::new();
    let mut outcome = ExperimentOutcome {
        spec: spec.clone(),
        reports: Vec::new(),
        triplet: None,
        triplet_losses: Vec::new(),
        head_fit: None,
        baseline: None,
        baseline_losses: Vec::new(),
        text: String::new(),
        jsonl: String::new(),
    };

    if spec.model.triplet() {
        let trained = train_triplet(&set, &net_cfg, &train_cfg, &cfg.triplet(), spec.seed)?;
        let network = trained.model;
        let embeddings = network.embed(&clean_images(&set))?;
        let labels: Vec<usize> = set.slices.iter().map(|s| s.label).collect();
        let (head, fit) = EmbeddingHead::fit(
            &embeddings,
            &labels,
            &classes,
            &cfg.head(),
            &mut Rng::new(spec.seed).split(HEAD_FIT),
        )?;
        let pipeline = TripletPipeline::new(network, Some(head));
        let y_pred = test_images
            .iter()
            .map(|imgs| pipeline.classify_images(imgs).map(|p| p.label))
            .collect::<Result<Vec<_>>>()?;
        let metrics = compute_metrics(&y_true, &y_pred, &classes, &groups)?;

        let head = pipeline.head()?;
        let mut diagnostics = vec![
            ("final_loss".to_string(), trained.losses.last().copied().unwrap_or(f64::NAN)),
            ("gate_tau".to_string(), head.gate.tau),
            ("gmm_iterations".to_string(), fit.gmm_trace.len() as f64),
            ("gmm_reinitializations".to_string(), fit.reinitializations as f64),
        ];
        if !corpus.val.is_empty() {
            diagnostics.push(("val_ood_fraction".to_string(), val_ood_fraction(&pipeline, corpus, &cfg, spec.seed)?));
        }
        diagnostics.retain(|(_, v)| v.is_finite());
        diagnostics.sort_by(|a, b| a.0.cmp(&b.0));
        reports.push(MetricsReport {
            experiment: label.clone(),
            model: "triplet".into(),
            seed: spec.seed,
            metrics,
            diagnostics,
            config: snapshot.clone(),
        });
        if let Some(dir) = out_dir {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            save_checkpoint(&pipeline.network, &trained.optimizer, dir.join("triplet.memb"))?;
            crate::head::save_head(head, dir.join("triplet.mhed"))?;
        }
        outcome.triplet = Some(pipeline);
        outcome.triplet_losses = trained.losses;
        outcome.head_fit = Some(fit);
    }

    if spec.model.baseline() {
        let trained = train_baseline(&set, &net_cfg, &train_cfg, spec.seed)?;
        let model = trained.model;
        let y_pred = test_images
            .iter()
            .map(|imgs| model.classify_images(imgs).map(|p| p.label))
            .collect::<Result<Vec<_>>>()?;
        let metrics = compute_metrics(&y_true, &y_pred, &classes, &groups)?;
        let mut diagnostics = Vec::new();
        if let Some(&l) = trained.losses.last() {
            diagnostics.push(("final_loss".to_string(), l));
        }
        reports.push(MetricsReport {
            experiment: label.clone(),
            model: "baseline".into(),
            seed: spec.seed,
            metrics,
            diagnostics,
            config: snapshot,
        });
        if let Some(dir) = out_dir {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            save_checkpoint_with_head(&model.network, &trained.optimizer, &model.head()?.tensors(), dir.join("baseline.memb"))?;
        }
        outcome.baseline = Some(model);
        outcome.baseline_losses = trained.losses;
    }

    for r in &reports {
        let recomputed = r.metrics.balanced_accuracy_from_confusion();
        if (recomputed - r.metrics.balanced_accuracy).abs() > 1e-12 {
            return Err(Error::Numerical(format!(
                "balanced accuracy {} disagrees with confusion matrix ({recomputed})",
                r.metrics.balanced_accuracy
            )));
        }
    }
    outcome.text = render_text(&reports);
    outcome.jsonl = render_jsonl(&reports)?;
    if let Some(dir) = out_dir {
        fs::write(dir.join("report.txt"), &outcome.text).map_err(|e| Error::io(dir, e))?;
        fs::write(dir.join("report.jsonl"), &outcome.jsonl).map_err(|e| Error::io(dir, e))?;
    }
    outcome.reports = reports;
    Ok(outcome)
}

/// Fraction of clean validation slices the gate flags as out of distribution.
pub fn val_ood_fraction(pipeline: &TripletPipeline, corpus: &Corpus, cfg: &HarnessConfig, seed: u64) -> Result<f64> {
    let head = pipeline.head()?;
    let slices: Vec<SliceSample> = sample_volumes(&corpus.val, cfg, &Rng::new(seed).split(VAL_SLICES))?
        .into_iter()
        .flatten()
        .collect();
    if slices.is_empty() {
        return Ok(0.0);
    }
    let preds = head.predict(&pipeline.network.embed(&slices)?)?;
    let flagged = preds
        .iter()
        .filter(|p| gate_sample(&head.gate, p.loglik) == GateVerdict::OutOfDistribution)
        .count();
    Ok(flagged as f64 / preds.len() as f64)
}
