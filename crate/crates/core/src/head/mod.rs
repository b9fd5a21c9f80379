//! Classification in embedding space: PCA, a Gaussian mixture fitted by EM,
//! cluster labelling, per-volume voting and the log-likelihood gate.

mod classifier;
mod gmm;
mod io;
mod pca;

pub use classifier::{
    aggregate_volume, fit_gate, gate_from_logliks, gate_sample, map_clusters, EmbeddingHead, GateVerdict,
    HeadFitReport, HeadOptions, LabelMap, SlicePrediction, TripletPipeline, UncertaintyGate, VolumePrediction,
    MIN_GATE_SAMPLES,
};
pub use gmm::{gmm_fit, gmm_loglik, gmm_posterior, GmmFit, GmmModel, GmmOptions, MONOTONICITY_SLACK};
pub use io::{
    decode_head, encode_head, load_head, save_head, write_projected_embeddings, ProjectedRow, HEAD_MAGIC,
    HEAD_VERSION,
};
pub use pca::{pca_fit, pca_project, pca_reconstruct, PcaProjector};
