//! Mini-batch training loops for the triplet embedder.
//!
//! Every step draws its batch, flips and noise from `Rng::new(seed).split(step)`,
//! so a run resumed from a checkpoint (which stores the step counter)
//! continues exactly as an uninterrupted run would.

use serde::{Deserialize, Serialize};

use crate::data::{augment_flips, corrupt, Image, NoiseSpec, SliceSample};
use crate::error::{Error, Result};
use crate::nn::{AsImage, EmbeddingNetwork, NetworkConfig, OptimizerState, Regularization, Tensor};
use crate::rng::Rng;
use crate::triplet::{triplet_loss, TripletConfig, TripletLoss};

/// Split key reserved for parameter initialization.
pub const INIT_STREAM: u64 = u64::MAX - 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    pub base_lr: f64,
    pub momentum: f64,
    pub decay_rate: f64,
    pub decay_steps: f64,
    pub l2_weight: f64,
    pub l1_weight: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            base_lr: 1e-3,
            momentum: 0.9,
            decay_rate: 0.9,
            decay_steps: 1000.0,
            l2_weight: 1e-5,
            l1_weight: 1e-6,
        }
    }
}

impl OptimizerSettings {
    pub fn state_for(&self, params: &[Tensor]) -> OptimizerState {
        OptimizerState {
            base_lr: self.base_lr,
            momentum: self.momentum,
            decay_rate: self.decay_rate,
            decay_steps: self.decay_steps,
            l2_weight: self.l2_weight,
            l1_weight: self.l1_weight,
            ..OptimizerState::for_params(params)
        }
    }
}

/// Settings shared by the triplet and softmax runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub step_budget: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerSettings,
    pub augment_flips: bool,
    /// Applied to each batch slice with probability `apply_prob` when active.
    pub noise: NoiseSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            step_budget: 3000,
            batch_size: 64,
            optimizer: OptimizerSettings::default(),
            augment_flips: true,
            noise: NoiseSpec::default(),
        }
    }
}

/// Training slices indexed by class.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub slices: Vec<SliceSample>,
    pub by_class: Vec<Vec<usize>>,
}

impl TrainingSet {
    /// Fails if any of the `n_classes` classes has no slice.
    pub fn new(slices: Vec<SliceSample>, n_classes: usize) -> Result<Self> {
        let mut by_class = vec![Vec::new(); n_classes];
        for (i, s) in slices.iter().enumerate() {
            by_class
                .get_mut(s.label)
                .ok_or_else(|| Error::contract(format!("slice label {} out of range", s.label)))?
                .push(i);
        }
        if let Some(c) = by_class.iter().position(Vec::is_empty) {
            return Err(Error::Config(format!("class {c} has no training slices")));
        }
        Ok(TrainingSet { slices, by_class })
    }

    pub fn num_classes(&self) -> usize {
        self.by_class.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.by_class.iter().map(Vec::len).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchSampling {
    /// Cycles through the classes from a random offset, one slice drawn
    /// uniformly within the class per position.
    Stratified,
    /// Slices drawn uniformly from the whole set.
    Uniform,
}

pub fn draw_batch(set: &TrainingSet, size: usize, mode: BatchSampling, rng: &mut Rng) -> Vec<usize> {
    match mode {
        BatchSampling::Uniform => (0..size).map(|_| rng.below(set.slices.len())).collect(),
        BatchSampling::Stratified => {
            let c = set.num_classes();
            let offset = rng.below(c);
            (0..size)
                .map(|i| {
                    let members = &set.by_class[(offset + i) % c];
                    members[rng.below(members.len())]
                })
                .collect()
        }
    }
}

/// Images and labels of a batch after optional flips and training noise.
pub fn batch_images(set: &TrainingSet, idx: &[usize], cfg: &TrainConfig, rng: &mut Rng) -> (Vec<Image>, Vec<usize>) {
    idx.iter()
        .map(|&i| {
            let s = &set.slices[i];
            let mut img = if cfg.augment_flips {
                augment_flips(&s.image, rng)
            } else {
                s.image.clone()
            };
            if cfg.noise.is_active() && rng.bernoulli(cfg.noise.apply_prob) {
                img = corrupt(&img, &cfg.noise, rng);
            }
            (img, s.label)
        })
        .unzip()
}

pub fn step_rng(seed: u64, step: u64) -> Rng {
    Rng::new(seed).split(step)
}

pub fn init_network(config: &NetworkConfig, seed: u64) -> Result<EmbeddingNetwork> {
    EmbeddingNetwork::new(config.clone(), &mut Rng::new(seed).split(INIT_STREAM))
}

pub(crate) fn check_batch(cfg: &TrainConfig) -> Result<()> {
    if cfg.batch_size < 4 {
        return Err(Error::Config(format!("batch size must be >= 4, got {}", cfg.batch_size)));
    }
    cfg.noise.validate()
}

/// Triplet loss of a batch and the parameter gradients it induces.
pub fn triplet_gradients<T: AsImage + Sync>(
    net: &EmbeddingNetwork,
    images: &[T],
    labels: &[usize],
    triplet: &TripletConfig,
    reg: Regularization,
) -> Result<(TripletLoss, Vec<Tensor>)> {
    let (e, cache) = net.forward(images)?;
    let out = triplet_loss(&e, labels, triplet)?;
    let grads = net.backward(&cache, &out.grad, reg)?;
    Ok((out, grads))
}

/// Runs `steps` triplet updates on stratified batches, returning the loss per step.
pub fn triplet_steps(
    net: &mut EmbeddingNetwork,
    opt: &mut OptimizerState,
    set: &TrainingSet,
    cfg: &TrainConfig,
    triplet: &TripletConfig,
    seed: u64,
    steps: usize,
) -> Result<Vec<f64>> {
    check_batch(cfg)?;
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut rng = step_rng(seed, opt.step);
        let idx = draw_batch(set, cfg.batch_size, BatchSampling::Stratified, &mut rng);
        let (images, labels) = batch_images(set, &idx, cfg, &mut rng);
        let (out, grads) = triplet_gradients(net, &images, &labels, triplet, opt.regularization())?;
        opt.step(net.params_mut(), &grads)?;
        losses.push(out.loss);
    }
    Ok(losses)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    pub model: M,
    pub optimizer: OptimizerState,
    pub losses: Vec<f64>,
}

/// Fresh network from `seed`, trained for the full step budget.
pub fn train_triplet(
    set: &TrainingSet,
    net_cfg: &NetworkConfig,
    cfg: &TrainConfig,
    triplet: &TripletConfig,
    seed: u64,
) -> Result<TrainOutcome<EmbeddingNetwork>> {
    triplet.validate()?;
    let mut net = init_network(net_cfg, seed)?;
    let mut opt = cfg.optimizer.state_for(net.params());
    let losses = triplet_steps(&mut net, &mut opt, set, cfg, triplet, seed, cfg.step_budget)?;
    Ok(TrainOutcome {
        model: net,
        optimizer: opt,
        losses,
    })
}
