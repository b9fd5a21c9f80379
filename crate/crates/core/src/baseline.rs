//! Softmax classifier on the embedding backbone, trained with cross-entropy.

use crate::data::{corrupt, NoiseSpec, SliceSampling, Volume};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{AsImage, EmbeddingNetwork, NetworkConfig, OptimizerState, Regularization, Tensor};
use crate::rng::Rng;
use crate::train::{batch_images, check_batch, draw_batch, init_network, step_rng, BatchSampling, TrainConfig, TrainOutcome, TrainingSet};
use crate::vote::majority_vote;

/// Split key for the head initialization, distinct from the backbone's.
const HEAD_STREAM: u64 = u64::MAX - 2;

/// Dense layer `logits = e·W + b` with `W` of shape D×C.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxHead {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl SoftmaxHead {
    /// Weights ~ N(0, 2/D), zero bias.
    pub fn new(dim: usize, classes: usize, rng: &mut Rng) -> Self {
        let mut weight = Tensor::zeros("head.weight", &[dim, classes]);
        let std = (2.0 / dim as f64).sqrt();
        weight.data.iter_mut().for_each(|v| *v = std * rng.gaussian());
        SoftmaxHead {
            weight,
            bias: Tensor::zeros("head.bias", &[classes]),
        }
    }

    pub fn from_tensors(mut tensors: Vec<Tensor>, dim: usize) -> Result<Self> {
        if tensors.len() != 2 {
            return Err(Error::Checkpoint(format!("expected 2 head tensors, found {}", tensors.len())));
        }
        let bias = tensors.pop().unwrap();
        let weight = tensors.pop().unwrap();
        let classes = bias.shape.first().copied().unwrap_or(0);
        if weight.name != "head.weight"
            || bias.name != "head.bias"
            || weight.shape != [dim, classes]
            || bias.shape.len() != 1
            || classes < 2
        {
            return Err(Error::Checkpoint("malformed softmax head tensors".into()));
        }
        Ok(SoftmaxHead { weight, bias })
    }

    pub fn classes(&self) -> usize {
        self.bias.len()
    }

    pub fn dim(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        vec![self.weight.clone(), self.bias.clone()]
    }

    pub fn logits(&self, e: &Matrix) -> Result<Matrix> {
        if e.cols() != self.dim() {
            return Err(Error::contract(format!("head expects {} features, got {}", self.dim(), e.cols())));
        }
        let w = Matrix::from_vec(self.dim(), self.classes(), self.weight.data.clone())?;
        let mut out = e.matmul(&w)?;
        for r in 0..out.rows() {
            for (v, b) in out.row_mut(r).iter_mut().zip(&self.bias.data) {
                *v += b;
            }
        }
        Ok(out)
    }
}

/// Row-wise softmax computed with the max subtracted.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean negative log-softmax of the targets and its gradient `(softmax − onehot)/B`.
pub fn cross_entropy_loss(logits: &Matrix, targets: &[usize]) -> Result<(f64, Matrix)> {
    let (b, c) = (logits.rows(), logits.cols());
    if targets.len() != b || b == 0 {
        return Err(Error::contract(format!("{} targets for {b} logit rows", targets.len())));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= c) {
        return Err(Error::contract(format!("target {t} out of range for {c} classes")));
    }
    let mut loss = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let row = logits.row(r);
        let top = (0..c).fold(0, |b, i| if row[i] > row[b] { i } else { b });
        let rest: f64 = (0..c).filter(|&i| i != top).map(|i| (row[i] - row[top]).exp()).sum();
        loss += row[top] - row[t] + rest.ln_1p();
    }
    let mut grad = softmax_rows(logits);
    for (r, &t) in targets.iter().enumerate() {
        grad[(r, t)] -= 1.0;
    }
    let scale = 1.0 / b as f64;
    grad.data_mut().iter_mut().for_each(|g| *g *= scale);
    Ok((loss * scale, grad))
}

/// Backbone plus softmax head; the head is absent until training.
#[derive(Debug, Clone)]
pub struct BaselineModel {
    pub network: EmbeddingNetwork,
    pub head: Option<SoftmaxHead>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselinePrediction {
    pub label: usize,
    pub slice_labels: Vec<usize>,
}

impl BaselineModel {
    pub fn head(&self) -> Result<&SoftmaxHead> {
        self.head
            .as_ref()
            .ok_or_else(|| Error::State("baseline model has not been trained".into()))
    }

    pub fn probabilities<T: AsImage + Sync>(&self, images: &[T]) -> Result<Matrix> {
        let head = self.head()?;
        Ok(softmax_rows(&head.logits(&self.network.embed(images)?)?))
    }

    pub fn classify_images<T: AsImage + Sync>(&self, images: &[T]) -> Result<BaselinePrediction> {
        if images.is_empty() {
            return Err(Error::contract("classify: no slices"));
        }
        let probs = self.probabilities(images)?;
        let scores: Vec<Vec<f64>> = probs.iter_rows().map(<[f64]>::to_vec).collect();
        let labels: Vec<usize> = scores
            .iter()
            .map(|row| {
                let mut best = 0;
                for (i, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect();
        Ok(BaselinePrediction {
            label: majority_vote(&labels, &scores),
            slice_labels: labels,
        })
    }

    /// Samples slices from `v`, optionally corrupts all of them, and votes.
    pub fn classify_volume(
        &self,
        v: &Volume,
        sampling: &SliceSampling,
        noise: Option<&NoiseSpec>,
        rng: &mut Rng,
    ) -> Result<BaselinePrediction> {
        self.head()?;
        let mut slices = sampling.sample(v, 0, self.network.config().input_size, rng)?;
        if let Some(spec) = noise {
            for s in &mut slices {
                s.image = corrupt(&s.image, spec, rng);
            }
        }
        self.classify_images(&slices)
    }
}

/// Cross-entropy of a batch and its gradients: backbone tensors followed by
/// `head.weight` and `head.bias`, regularization included.
pub fn baseline_gradients<T: AsImage + Sync>(
    net: &EmbeddingNetwork,
    head: &SoftmaxHead,
    images: &[T],
    labels: &[usize],
    reg: Regularization,
) -> Result<(f64, Vec<Tensor>)> {
    let (e, cache) = net.forward(images)?;
    let (loss, grad_logits) = cross_entropy_loss(&head.logits(&e)?, labels)?;
    let w = Matrix::from_vec(head.dim(), head.classes(), head.weight.data.clone())?;
    let grad_e = grad_logits.matmul(&w.transpose())?;
    let mut head_grads = vec![
        Tensor {
            name: head.weight.name.clone(),
            shape: head.weight.shape.clone(),
            data: e.transpose().matmul(&grad_logits)?.into_data(),
        },
        Tensor {
            name: head.bias.name.clone(),
            shape: head.bias.shape.clone(),
            data: (0..head.classes())
                .map(|c| grad_logits.iter_rows().map(|r| r[c]).sum())
                .collect(),
        },
    ];
    reg.add_gradient(&[head.weight.clone(), head.bias.clone()], &mut head_grads);
    let mut grads = net.backward(&cache, &grad_e, reg)?;
    grads.extend(head_grads);
    Ok((loss, grads))
}

/// Runs `steps` cross-entropy updates on uniformly drawn batches.
pub fn baseline_steps(
    net: &mut EmbeddingNetwork,
    head: &mut SoftmaxHead,
    opt: &mut OptimizerState,
    set: &TrainingSet,
    cfg: &TrainConfig,
    seed: u64,
    steps: usize,
) -> Result<Vec<f64>> {
    check_batch(cfg)?;
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut rng = step_rng(seed, opt.step);
        let idx = draw_batch(set, cfg.batch_size, BatchSampling::Uniform, &mut rng);
        let (images, labels) = batch_images(set, &idx, cfg, &mut rng);
        let (loss, grads) = baseline_gradients(net, head, &images, &labels, opt.regularization())?;
        let params = net
            .params_mut()
            .iter_mut()
            .chain([&mut head.weight, &mut head.bias]);
        opt.step(params, &grads)?;
        losses.push(loss);
    }
    Ok(losses)
}

/// Same backbone initialization, optimizer and budget as [`crate::train::train_triplet`];
/// only the head, the loss and the (uniform) batch sampling differ.
pub fn train_baseline(
    set: &TrainingSet,
    net_cfg: &NetworkConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome<BaselineModel>> {
    let mut net = init_network(net_cfg, seed)?;
    let mut head = SoftmaxHead::new(net_cfg.embedding_dim, set.num_classes(), &mut Rng::new(seed).split(HEAD_STREAM));
    let mut all = net.params().to_vec();
    all.extend(head.tensors());
    let mut opt = cfg.optimizer.state_for(&all);
    let losses = baseline_steps(&mut net, &mut head, &mut opt, set, cfg, seed, cfg.step_budget)?;
    Ok(TrainOutcome {
        model: BaselineModel {
            network: net,
            head: Some(head),
        },
        optimizer: opt,
        losses,
    })
}
