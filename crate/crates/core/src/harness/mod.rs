//! Metrics, run configuration, the experimental regimes and the gate demonstration.

mod config;
mod experiment;
mod metrics;
mod uncertainty;

pub use config::HarnessConfig;
pub use experiment::{
    parse_noise_kind, run_experiment, sample_volumes, training_set, val_ood_fraction, Corpus, ExperimentId,
    ExperimentOutcome, ExperimentSpec, ModelChoice,
};
pub use metrics::{compute_metrics, render_jsonl, render_text, ClassMetrics, GroupMetrics, Metrics, MetricsReport};
pub use uncertainty::{out_of_sample_volumes, render_uncertainty, run_uncertainty_demo, UncertaintyRow};
