use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::{corrupt, NoiseSpec, SliceSampling, Volume};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{AsImage, EmbeddingNetwork};
use crate::rng::Rng;
use crate::stats::percentile;
use crate::vote::majority_vote;

use super::gmm::{gmm_fit, gmm_loglik, gmm_posterior, GmmModel, GmmOptions};
use super::pca::{pca_fit, pca_project, PcaProjector};

/// Cluster index → class index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub cluster_to_class: Vec<usize>,
}

impl LabelMap {
    pub fn class_of(&self, cluster: usize) -> usize {
        self.cluster_to_class[cluster]
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Maps each cluster to the plurality class of the training points whose
/// largest posterior falls on it. Ties go to the smaller class index; an
/// empty cluster takes the overall majority class and yields a warning.
pub fn map_clusters(g: &GmmModel, z: &Matrix, labels: &[usize], n_classes: usize) -> Result<(LabelMap, Vec<String>)> {
    if z.rows() != labels.len() || z.rows() == 0 {
        return Err(Error::contract("map_clusters: need one label per (non-empty) row"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::contract(format!("map_clusters: label {bad} out of range")));
    }
    let k = g.components();
    let mut counts = vec![vec![0usize; n_classes]; k];
    let mut overall = vec![0usize; n_classes];
    for (i, &y) in labels.iter().enumerate() {
        let cluster = argmax(&gmm_posterior(g, z.row(i)));
        counts[cluster][y] += 1;
        overall[y] += 1;
    }
    let plurality = |c: &[usize]| {
        let mut best = 0;
        for (i, &v) in c.iter().enumerate() {
            if v > c[best] {
                best = i;
            }
        }
        best
    };
    let majority = plurality(&overall);
    let mut warnings = Vec::new();
    let cluster_to_class = counts
        .iter()
        .enumerate()
        .map(|(j, c)| {
            if c.iter().all(|&v| v == 0) {
                let msg = format!("cluster {j} received no training samples; mapped to majority class {majority}");
                warn!("{msg}");
                warnings.push(msg);
                majority
            } else {
                plurality(c)
            }
        })
        .collect();
    Ok((LabelMap { cluster_to_class }, warnings))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyGate {
    pub tau: f64,
    pub percentile: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateVerdict {
    InDistribution,
    OutOfDistribution,
}

impl GateVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            GateVerdict::InDistribution => "in_distribution",
            GateVerdict::OutOfDistribution => "out_of_distribution",
        }
    }
}

pub const MIN_GATE_SAMPLES: usize = 100;

/// `tau` is the `percentile`-th percentile (linear interpolation) of the
/// training log-likelihoods.
pub fn fit_gate(g: &GmmModel, z: &Matrix, percentile_q: f64) -> Result<UncertaintyGate> {
    if z.rows() < MIN_GATE_SAMPLES {
        return Err(Error::contract(format!(
            "gate: need at least {MIN_GATE_SAMPLES} training samples, got {}",
            z.rows()
        )));
    }
    if !(0.0..=100.0).contains(&percentile_q) {
        return Err(Error::Config(format!("gate percentile must be in [0,100], got {percentile_q}")));
    }
    let lls: Vec<f64> = z.iter_rows().map(|r| gmm_loglik(g, r)).collect();
    gate_from_logliks(&lls, percentile_q)
}

pub fn gate_from_logliks(lls: &[f64], percentile_q: f64) -> Result<UncertaintyGate> {
    let tau = percentile(lls, percentile_q);
    if !tau.is_finite() {
        return Err(Error::Numerical(format!("gate threshold is not finite ({tau})")));
    }
    Ok(UncertaintyGate {
        tau,
        percentile: percentile_q,
    })
}

/// Out of distribution iff `loglik < tau`.
pub fn gate_sample(gate: &UncertaintyGate, loglik: f64) -> GateVerdict {
    if loglik < gate.tau || loglik.is_nan() {
        GateVerdict::OutOfDistribution
    } else {
        GateVerdict::InDistribution
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadOptions {
    pub pca_components: usize,
    pub gmm: GmmOptions,
    pub gate_percentile: f64,
}

impl Default for HeadOptions {
    fn default() -> Self {
        HeadOptions {
            pca_components: 8,
            gmm: GmmOptions::default(),
            gate_percentile: 1.0,
        }
    }
}

/// Fitted PCA + mixture + label map + gate.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingHead {
    pub projector: PcaProjector,
    pub gmm: GmmModel,
    pub label_map: LabelMap,
    pub gate: UncertaintyGate,
    pub class_names: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct HeadFitReport {
    pub gmm_trace: Vec<f64>,
    pub converged: bool,
    pub reinitializations: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlicePrediction {
    pub label: usize,
    /// Posterior mass per class (summed over the clusters mapped to it).
    pub class_scores: Vec<f64>,
    pub loglik: f64,
}

impl EmbeddingHead {
    /// Fits the head on training embeddings with one mixture component per class.
    pub fn fit(
        embeddings: &Matrix,
        labels: &[usize],
        class_names: &[String],
        opts: &HeadOptions,
        rng: &mut Rng,
    ) -> Result<(Self, HeadFitReport)> {
        let n_classes = class_names.len();
        let projector = pca_fit(embeddings, opts.pca_components)?;
        let z = pca_project(&projector, embeddings)?;
        let fit = gmm_fit(&z, n_classes, rng, &opts.gmm)?;
        let (label_map, warnings) = map_clusters(&fit.model, &z, labels, n_classes)?;
        let gate = fit_gate(&fit.model, &z, opts.gate_percentile)?;
        Ok((
            EmbeddingHead {
                projector,
                gmm: fit.model,
                label_map,
                gate,
                class_names: class_names.to_vec(),
            },
            HeadFitReport {
                gmm_trace: fit.trace,
                converged: fit.converged,
                reinitializations: fit.reinitializations,
                warnings,
            },
        ))
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn project(&self, embeddings: &Matrix) -> Result<Matrix> {
        pca_project(&self.projector, embeddings)
    }

    pub fn predict_projected(&self, z: &[f64]) -> SlicePrediction {
        let post = gmm_posterior(&self.gmm, z);
        let mut class_scores = vec![0.0; self.num_classes()];
        for (j, p) in post.iter().enumerate() {
            class_scores[self.label_map.class_of(j)] += p;
        }
        SlicePrediction {
            label: self.label_map.class_of(argmax(&post)),
            class_scores,
            loglik: gmm_loglik(&self.gmm, z),
        }
    }

    pub fn predict(&self, embeddings: &Matrix) -> Result<Vec<SlicePrediction>> {
        let z = self.project(embeddings)?;
        Ok(z.iter_rows().map(|r| self.predict_projected(r)).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumePrediction {
    pub label: usize,
    pub slice_labels: Vec<usize>,
    pub mean_loglik: f64,
    pub verdict: GateVerdict,
}

/// Votes over slice predictions of one volume.
pub fn aggregate_volume(head: &EmbeddingHead, slices: &[SlicePrediction]) -> VolumePrediction {
    let labels: Vec<usize> = slices.iter().map(|s| s.label).collect();
    let scores: Vec<Vec<f64>> = slices.iter().map(|s| s.class_scores.clone()).collect();
    let mean_loglik = slices.iter().map(|s| s.loglik).sum::<f64>() / slices.len() as f64;
    VolumePrediction {
        label: majority_vote(&labels, &scores),
        slice_labels: labels,
        mean_loglik,
        verdict: gate_sample(&head.gate, mean_loglik),
    }
}

/// Embedding network plus (once fitted) its classification head.
#[derive(Debug, Clone)]
pub struct TripletPipeline {
    pub network: EmbeddingNetwork,
    pub head: Option<EmbeddingHead>,
}

impl TripletPipeline {
    pub fn new(network: EmbeddingNetwork, head: Option<EmbeddingHead>) -> Self {
        TripletPipeline { network, head }
    }

    pub fn head(&self) -> Result<&EmbeddingHead> {
        self.head
            .as_ref()
            .ok_or_else(|| Error::State("pipeline has no fitted head".into()))
    }

    pub fn classify_images<T: AsImage + Sync>(&self, images: &[T]) -> Result<VolumePrediction> {
        let head = self.head()?;
        if images.is_empty() {
            return Err(Error::contract("classify: no slices"));
        }
        let e = self.network.embed(images)?;
        Ok(aggregate_volume(head, &head.predict(&e)?))
    }

    /// Samples slices from `v`, optionally corrupts every one of them, and
    /// classifies the volume by majority vote.
    pub fn classify_volume(
        &self,
        v: &Volume,
        sampling: &SliceSampling,
        noise: Option<&NoiseSpec>,
        rng: &mut Rng,
    ) -> Result<VolumePrediction> {
        self.head()?;
        let size = self.network.config().input_size;
        let mut slices = sampling.sample(v, 0, size, rng)?;
        if let Some(spec) = noise {
            for s in &mut slices {
                s.image = corrupt(&s.image, spec, rng);
            }
        }
        self.classify_images(&slices)
    }
}
