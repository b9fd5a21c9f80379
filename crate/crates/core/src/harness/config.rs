//! Flat key-value run configuration, read from TOML.
//!
//! Every key is optional; missing keys take the desk-scale defaults below.
//! Unknown keys are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{NoiseKind, NoiseSpec, SliceSampling, SynthConfig};
use crate::error::{Error, Result};
use crate::head::{GmmOptions, HeadOptions};
use crate::nn::NetworkConfig;
use crate::train::{OptimizerSettings, TrainConfig};
use crate::triplet::TripletConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    // corpus
    pub n_base: usize,
    pub n_few_shot: usize,
    pub volumes_per_base: usize,
    pub volumes_per_few_shot: usize,
    pub volume_size: usize,
    pub corpus_seed: u64,
    pub acquisition_noise: f64,
    pub class_contrast: f64,

    // slices
    pub slices_per_axis: usize,
    pub sigma_frac: f64,

    // network
    pub input_size: usize,
    pub conv_filters: Vec<usize>,
    pub embedding_dim: usize,

    // training
    pub step_budget: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub decay_rate: f64,
    pub decay_steps: f64,
    pub l2_weight: f64,
    pub l1_weight: f64,
    pub augment_flips: bool,
    pub margin: f64,
    pub lambda: f64,

    // head
    pub pca_components: usize,
    pub gmm_tol: f64,
    pub gmm_max_iter: usize,
    pub gmm_reg_eps: f64,
    pub gmm_restarts: usize,
    pub gate_percentile: f64,

    // experiments
    pub few_shot_limit: usize,
    pub noise_sigma: f64,
    pub noise_density: f64,
    pub noise_apply_prob: f64,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        let opt = OptimizerSettings::default();
        let triplet = TripletConfig::default();
        let gmm = GmmOptions::default();
        let noise = NoiseSpec::default();
        let sampling = SliceSampling::default();
        HarnessConfig {
            n_base: synth.n_base,
            n_few_shot: synth.n_few_shot,
            volumes_per_base: synth.volumes_per_base,
            volumes_per_few_shot: synth.volumes_per_few_shot,
            volume_size: synth.dims[0],
            corpus_seed: synth.seed,
            acquisition_noise: synth.noise_std,
            class_contrast: synth.class_contrast,
            slices_per_axis: sampling.n_per_axis,
            sigma_frac: sampling.sigma_frac,
            input_size: 32,
            conv_filters: vec![16, 32, 64],
            embedding_dim: 32,
            step_budget: 3000,
            batch_size: triplet.batch_size,
            base_lr: opt.base_lr,
            momentum: opt.momentum,
            decay_rate: opt.decay_rate,
            decay_steps: opt.decay_steps,
            l2_weight: opt.l2_weight,
            l1_weight: opt.l1_weight,
            augment_flips: true,
            margin: triplet.margin,
            lambda: triplet.lambda,
            pca_components: 8,
            gmm_tol: gmm.tol,
            gmm_max_iter: gmm.max_iter,
            gmm_reg_eps: gmm.reg_eps,
            gmm_restarts: gmm.restarts,
            gate_percentile: 1.0,
            few_shot_limit: 150,
            noise_sigma: noise.sigma,
            noise_density: noise.density,
            noise_apply_prob: noise.apply_prob,
        }
    }
}

impl HarnessConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: HarnessConfig = toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.synth().validate()?;
        self.network().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.triplet().validate()?;
        self.noise(NoiseKind::Gaussian).validate()?;
        if self.slices_per_axis == 0 || !(self.sigma_frac > 0.0) {
            return Err(Error::Config("slices_per_axis must be >= 1 and sigma_frac > 0".into()));
        }
        if self.pca_components == 0 || self.pca_components > self.embedding_dim {
            return Err(Error::Config(format!(
                "pca_components must be in 1..={}, got {}",
                self.embedding_dim, self.pca_components
            )));
        }
        if self.few_shot_limit == 0 {
            return Err(Error::Config("few_shot_limit must be >= 1".into()));
        }
        if !(self.base_lr > 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.decay_steps > 0.0) {
            return Err(Error::Config("invalid optimizer settings".into()));
        }
        Ok(())
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            n_base: self.n_base,
            n_few_shot: self.n_few_shot,
            volumes_per_base: self.volumes_per_base,
            volumes_per_few_shot: self.volumes_per_few_shot,
            dims: [self.volume_size; 3],
            seed: self.corpus_seed,
            noise_std: self.acquisition_noise,
            class_contrast: self.class_contrast,
        }
    }

    pub fn sampling(&self) -> SliceSampling {
        SliceSampling {
            n_per_axis: self.slices_per_axis,
            sigma_frac: self.sigma_frac,
        }
    }

    pub fn network(&self) -> NetworkConfig {
        NetworkConfig {
            input_size: (self.input_size, self.input_size),
            conv_filters: self.conv_filters.clone(),
            embedding_dim: self.embedding_dim,
        }
    }

    pub fn triplet(&self) -> TripletConfig {
        TripletConfig {
            margin: self.margin,
            lambda: self.lambda,
            batch_size: self.batch_size,
        }
    }

    /// Training settings; `noise` is used only when its kind is active.
    pub fn train(&self, noise: NoiseSpec) -> TrainConfig {
        TrainConfig {
            step_budget: self.step_budget,
            batch_size: self.batch_size,
            optimizer: OptimizerSettings {
                base_lr: self.base_lr,
                momentum: self.momentum,
                decay_rate: self.decay_rate,
                decay_steps: self.decay_steps,
                l2_weight: self.l2_weight,
                l1_weight: self.l1_weight,
            },
            augment_flips: self.augment_flips,
            noise,
        }
    }

    pub fn head(&self) -> HeadOptions {
        HeadOptions {
            pca_components: self.pca_components,
            gmm: GmmOptions {
                tol: self.gmm_tol,
                max_iter: self.gmm_max_iter,
                reg_eps: self.gmm_reg_eps,
                restarts: self.gmm_restarts,
            },
            gate_percentile: self.gate_percentile,
        }
    }

    pub fn noise(&self, kind: NoiseKind) -> NoiseSpec {
        NoiseSpec {
            kind,
            sigma: self.noise_sigma,
            density: self.noise_density,
            apply_prob: self.noise_apply_prob,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_desk_scale() {
        let c = HarnessConfig::default();
        assert_eq!((c.n_base, c.n_few_shot, c.volumes_per_base, c.volumes_per_few_shot), (4, 3, 60, 30));
        assert_eq!((c.volume_size, c.embedding_dim, c.pca_components, c.step_budget), (32, 32, 8, 3000));
        assert_eq!(c.sampling().slices_per_volume(), 15);
        c.validate().unwrap();
    }

    #[test]
    fn toml_roundtrip_and_overrides() {
        let c = HarnessConfig::default();
        assert_eq!(HarnessConfig::from_toml(&c.to_toml()).unwrap(), c);
        let partial = HarnessConfig::from_toml("step_budget = 10\nconv_filters = [4, 8]\n").unwrap();
        assert_eq!(partial.step_budget, 10);
        assert_eq!(partial.conv_filters, vec![4, 8]);
        assert_eq!(partial.margin, 2.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(HarnessConfig::from_toml("no_such_key = 1"), Err(Error::Config(_))));
        assert!(matches!(HarnessConfig::from_toml("margin = -1.0"), Err(Error::Config(_))));
        assert!(matches!(HarnessConfig::from_toml("pca_components = 64"), Err(Error::Config(_))));
        assert!(matches!(HarnessConfig::from_toml("step_budget = \"x\""), Err(Error::Config(_))));
    }
}
