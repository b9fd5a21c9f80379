//! Convolutional embedding network with exact backpropagation.
//!
//! Architecture: `n` blocks of [3×3 same-padded convolution, stride 1 → ReLU
//! → 2×2 max-pool], then global average pooling and a dense layer to the
//! embedding. Single-channel input.

use serde::{Deserialize, Serialize};

use crate::data::{Image, SliceSample};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::Matrix;
use crate::rng::Rng;

use super::tensor::{gemm, Tensor};

pub const KERNEL: usize = 3;
pub const STRIDE: usize = 1;
pub const POOL: usize = 2;
const TAPS: usize = KERNEL * KERNEL;

/// Samples per gradient-accumulation chunk. Chunk sums are added in chunk
/// order, so gradients do not depend on how chunks are scheduled.
const CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// (height, width)
    pub input_size: (usize, usize),
    /// Filters per convolution block.
    pub conv_filters: Vec<usize>,
    pub embedding_dim: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_size: (32, 32),
            conv_filters: vec![16, 32, 64],
            embedding_dim: 64,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim < 2 {
            return Err(Error::Config("embedding_dim must be >= 2".into()));
        }
        if self.conv_filters.is_empty() || self.conv_filters.contains(&0) {
            return Err(Error::Config("need at least one conv block with >= 1 filter".into()));
        }
        let reduction = POOL.pow(self.conv_filters.len() as u32);
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % reduction != 0 || w % reduction != 0 {
            return Err(Error::Config(format!(
                "input {h}x{w} is not divisible by the cumulative pooling factor {reduction}"
            )));
        }
        Ok(())
    }

    fn last_channels(&self) -> usize {
        *self.conv_filters.last().unwrap()
    }
}

pub trait AsImage {
    fn image(&self) -> &Image;
}

impl AsImage for Image {
    fn image(&self) -> &Image {
        self
    }
}

impl AsImage for SliceSample {
    fn image(&self) -> &Image {
        &self.image
    }
}

impl<T: AsImage> AsImage for &T {
    fn image(&self) -> &Image {
        (*self).image()
    }
}

#[derive(Debug, Clone)]
pub struct EmbeddingNetwork {
    config: NetworkConfig,
    params: Vec<Tensor>,
    /// Bumped on every parameter update; ties caches to parameters.
    version: u64,
    exec: Exec,
}

struct BlockCache {
    input: Vec<f64>,
    /// Post-ReLU convolution output, [cout, h·w].
    act: Vec<f64>,
    /// For every pooled output, the flat index into `act` it came from.
    argmax: Vec<usize>,
    h: usize,
    w: usize,
}

struct SampleCache {
    blocks: Vec<BlockCache>,
    features: Vec<f64>,
}

/// Activations of one forward pass, consumed by [`EmbeddingNetwork::backward`].
pub struct ForwardCache {
    version: u64,
    samples: Vec<SampleCache>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.samples.len()
    }
}

/// L2 and L1 weight penalties, applied to `*.weight` tensors only.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Regularization {
    pub l2: f64,
    pub l1: f64,
}

impl Regularization {
    pub const NONE: Regularization = Regularization { l2: 0.0, l1: 0.0 };

    pub fn penalty(&self, params: &[Tensor]) -> f64 {
        params
            .iter()
            .filter(|t| t.is_weight())
            .flat_map(|t| &t.data)
            .map(|&v| self.l2 * v * v + self.l1 * v.abs())
            .sum()
    }

    /// Adds `2·l2·θ + l1·sign(θ)` with `sign(0) = 0`.
    pub fn add_gradient(&self, params: &[Tensor], grads: &mut [Tensor]) {
        if self.l2 == 0.0 && self.l1 == 0.0 {
            return;
        }
        for (p, g) in params.iter().zip(grads) {
            if !p.is_weight() {
                continue;
            }
            for (gv, &v) in g.data.iter_mut().zip(&p.data) {
                let sign = if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                *gv += 2.0 * self.l2 * v + self.l1 * sign;
            }
        }
    }
}

fn im2col(x: &[f64], cin: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut col = vec![0.0; cin * TAPS * hw];
    for c in 0..cin {
        let plane = &x[c * hw..(c + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut col[((c * TAPS) + ky * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let dst = &mut row[y * w..(y + 1) * w];
                    match kx {
                        0 => dst[1..].copy_from_slice(&src[..w - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
    col
}

fn col2im(col: &[f64], cin: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut x = vec![0.0; cin * hw];
    for c in 0..cin {
        let plane = &mut x[c * hw..(c + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &col[((c * TAPS) + ky * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let src = &row[y * w..(y + 1) * w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, s)| *d += s),
                    }
                }
            }
        }
    }
    x
}

impl EmbeddingNetwork {
    /// He-style initialization: weights ~ N(0, 2/fan_in), biases zero.
    pub fn new(config: NetworkConfig, rng: &mut Rng) -> Result<Self> {
        let mut net = EmbeddingNetwork::zeros(config)?;
        for t in net.params.iter_mut().filter(|t| t.is_weight()) {
            let fan_in: usize = t.shape[1..].iter().product();
            let std = (2.0 / fan_in as f64).sqrt();
            t.data.iter_mut().for_each(|v| *v = std * rng.gaussian());
        }
        Ok(net)
    }

    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut params = Vec::new();
        let mut cin = 1;
        for (i, &f) in config.conv_filters.iter().enumerate() {
            params.push(Tensor::zeros(format!("conv{i}.weight"), &[f, cin, KERNEL, KERNEL]));
            params.push(Tensor::zeros(format!("conv{i}.bias"), &[f]));
            cin = f;
        }
        params.push(Tensor::zeros("embed.weight", &[config.embedding_dim, cin]));
        params.push(Tensor::zeros("embed.bias", &[config.embedding_dim]));
        Ok(EmbeddingNetwork {
            config,
            params,
            version: 0,
            exec: Exec::default(),
        })
    }

    /// Rebuilds a network from stored tensors, checking every shape.
    pub fn from_params(config: NetworkConfig, params: Vec<Tensor>) -> Result<Self> {
        let template = EmbeddingNetwork::zeros(config)?;
        if params.len() != template.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} backbone tensors, found {}",
                template.params.len(),
                params.len()
            )));
        }
        for (want, got) in template.params.iter().zip(&params) {
            if want.name != got.name || want.shape != got.shape || got.data.len() != want.data.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` {:?} does not match expected `{}` {:?}",
                    got.name, got.shape, want.name, want.shape
                )));
            }
        }
        Ok(EmbeddingNetwork {
            params,
            ..template
        })
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn set_exec(&mut self, exec: Exec) {
        self.exec = exec;
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    /// Mutable parameter access; invalidates outstanding caches.
    pub fn params_mut(&mut self) -> &mut [Tensor] {
        self.version += 1;
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim
    }

    fn check_input(&self, img: &Image) -> Result<()> {
        let (h, w) = self.config.input_size;
        if img.height != h || img.width != w {
            return Err(Error::contract(format!(
                "input image is {}x{}, network expects {h}x{w}",
                img.height, img.width
            )));
        }
        Ok(())
    }

    fn forward_one(&self, img: &Image, keep: bool) -> (Vec<f64>, Option<SampleCache>) {
        let (mut h, mut w) = self.config.input_size;
        let mut x = img.data.clone();
        let mut cin = 1;
        let mut blocks = Vec::new();
        for (b, &cout) in self.config.conv_filters.iter().enumerate() {
            let weight = &self.params[2 * b].data;
            let bias = &self.params[2 * b + 1].data;
            let hw = h * w;
            let col = im2col(&x, cin, h, w);
            let mut act = vec![0.0; cout * hw];
            gemm(cout, cin * TAPS, hw, 1.0, weight, false, &col, false, 0.0, &mut act);
            for (c, plane) in act.chunks_mut(hw).enumerate() {
                for v in plane {
                    *v = (*v + bias[c]).max(0.0);
                }
            }
            let (ph, pw) = (h / POOL, w / POOL);
            let mut pooled = vec![0.0; cout * ph * pw];
            let mut argmax = vec![0usize; cout * ph * pw];
            for c in 0..cout {
                for py in 0..ph {
                    for px in 0..pw {
                        let mut best = usize::MAX;
                        let mut best_v = f64::NEG_INFINITY;
                        for dy in 0..POOL {
                            for dx in 0..POOL {
                                let idx = c * hw + (py * POOL + dy) * w + px * POOL + dx;
                                if act[idx] > best_v {
                                    best_v = act[idx];
                                    best = idx;
                                }
                            }
                        }
                        let o = (c * ph + py) * pw + px;
                        pooled[o] = best_v;
                        argmax[o] = best;
                    }
                }
            }
            if keep {
                blocks.push(BlockCache {
                    input: std::mem::take(&mut x),
                    act,
                    argmax,
                    h,
                    w,
                });
            }
            x = pooled;
            h = ph;
            w = pw;
            cin = cout;
        }
        let hw = h * w;
        let features: Vec<f64> = x.chunks(hw).map(|p| p.iter().sum::<f64>() / hw as f64).collect();
        let dense = &self.params[self.params.len() - 2].data;
        let dense_b = &self.params[self.params.len() - 1].data;
        let emb: Vec<f64> = dense
            .chunks(cin)
            .zip(dense_b)
            .map(|(row, b)| crate::linalg::dot(row, &features) + b)
            .collect();
        let cache = keep.then_some(SampleCache { blocks, features });
        (emb, cache)
    }

    /// Embeds a batch, keeping the activations needed for [`backward`](Self::backward).
    pub fn forward<T: AsImage + Sync>(&self, batch: &[T]) -> Result<(Matrix, ForwardCache)> {
        for item in batch {
            self.check_input(item.image())?;
        }
        let outs = self.exec.map(batch, |_, item| self.forward_one(item.image(), true));
        let d = self.config.embedding_dim;
        let mut emb = Matrix::zeros(batch.len(), d);
        let mut samples = Vec::with_capacity(batch.len());
        for (i, (e, cache)) in outs.into_iter().enumerate() {
            emb.row_mut(i).copy_from_slice(&e);
            samples.push(cache.expect("cache requested"));
        }
        Ok((
            emb,
            ForwardCache {
                version: self.version,
                samples,
            },
        ))
    }

    /// Inference-only embedding, no activations retained.
    pub fn embed<T: AsImage + Sync>(&self, batch: &[T]) -> Result<Matrix> {
        for item in batch {
            self.check_input(item.image())?;
        }
        let outs = self.exec.map(batch, |_, item| self.forward_one(item.image(), false).0);
        let mut emb = Matrix::zeros(batch.len(), self.config.embedding_dim);
        for (i, e) in outs.into_iter().enumerate() {
            emb.row_mut(i).copy_from_slice(&e);
        }
        Ok(emb)
    }

    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.params.iter().map(Tensor::zeros_like).collect()
    }

    fn backward_one(&self, cache: &SampleCache, de: &[f64], grads: &mut [Tensor]) {
        let np = self.params.len();
        let cin_last = self.config.last_channels();
        {
            let (gw, rest) = grads[np - 2..].split_at_mut(1);
            for (d, &g) in de.iter().enumerate() {
                for (c, &f) in cache.features.iter().enumerate() {
                    gw[0].data[d * cin_last + c] += g * f;
                }
                rest[0].data[d] += g;
            }
        }
        let dense = &self.params[np - 2].data;
        let mut df = vec![0.0; cin_last];
        for (d, &g) in de.iter().enumerate() {
            for (c, v) in df.iter_mut().enumerate() {
                *v += dense[d * cin_last + c] * g;
            }
        }

        let last = cache.blocks.last().expect("at least one block");
        let pooled_hw = (last.h / POOL) * (last.w / POOL);
        let mut dx: Vec<f64> = df
            .iter()
            .flat_map(|&g| std::iter::repeat_n(g / pooled_hw as f64, pooled_hw))
            .collect();

        for b in (0..cache.blocks.len()).rev() {
            let blk = &cache.blocks[b];
            let cout = self.config.conv_filters[b];
            let cin = if b == 0 { 1 } else { self.config.conv_filters[b - 1] };
            let hw = blk.h * blk.w;
            let mut dact = vec![0.0; cout * hw];
            for (o, &src) in blk.argmax.iter().enumerate() {
                dact[src] += dx[o];
            }
            for (g, &a) in dact.iter_mut().zip(&blk.act) {
                if a <= 0.0 {
                    *g = 0.0;
                }
            }
            let col = im2col(&blk.input, cin, blk.h, blk.w);
            {
                let (gw, gb) = grads[2 * b..2 * b + 2].split_at_mut(1);
                for (c, plane) in dact.chunks(hw).enumerate() {
                    gb[0].data[c] += plane.iter().sum::<f64>();
                }
                gemm(cout, hw, cin * TAPS, 1.0, &dact, false, &col, true, 1.0, &mut gw[0].data);
            }
            if b > 0 {
                let mut dcol = vec![0.0; cin * TAPS * hw];
                let weight = &self.params[2 * b].data;
                gemm(cin * TAPS, cout, hw, 1.0, weight, true, &dact, false, 0.0, &mut dcol);
                dx = col2im(&dcol, cin, blk.h, blk.w);
            }
        }
    }

    /// Parameter gradients of `Σ grad_embeddings ⊙ embeddings`, plus the
    /// regularization gradient.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_embeddings: &Matrix,
        reg: Regularization,
    ) -> Result<Vec<Tensor>> {
        if cache.version != self.version {
            return Err(Error::contract("stale forward cache: parameters changed since forward"));
        }
        if grad_embeddings.rows() != cache.samples.len() || grad_embeddings.cols() != self.config.embedding_dim {
            return Err(Error::contract(format!(
                "grad_embeddings is {}x{}, expected {}x{}",
                grad_embeddings.rows(),
                grad_embeddings.cols(),
                cache.samples.len(),
                self.config.embedding_dim
            )));
        }
        let n_chunks = cache.samples.len().div_ceil(CHUNK);
        let partial = self.exec.map_range(n_chunks, |chunk| {
            let mut g = self.zero_grads();
            let end = ((chunk + 1) * CHUNK).min(cache.samples.len());
            for i in chunk * CHUNK..end {
                let de = grad_embeddings.row(i);
                if de.iter().all(|&v| v == 0.0) {
                    continue;
                }
                self.backward_one(&cache.samples[i], de, &mut g);
            }
            g
        });
        let mut grads = self.zero_grads();
        for g in &partial {
            for (acc, t) in grads.iter_mut().zip(g) {
                acc.add_assign(t);
            }
        }
        reg.add_gradient(&self.params, &mut grads);
        Ok(grads)
    }
}
