//! MEMB checkpoint files.
//!
//! Body layout after the common header: network config (`u32` height,
//! width, block count, filters per block, embedding dim), optimizer scalars
//! (`f64` base lr, momentum, decay rate, decay steps, `u64` step, `f64` L2
//! and L1 weights), then three tensor sections each prefixed by a `u32`
//! count: backbone parameters, head parameters (empty for a pure embedder)
//! and optimizer velocities in parameter order.

use std::fs;
use std::path::Path;

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};

use super::network::{EmbeddingNetwork, NetworkConfig};
use super::optim::OptimizerState;
use super::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MEMB";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub network: EmbeddingNetwork,
    pub optimizer: OptimizerState,
    /// Extra parameters stacked on the backbone (the softmax head).
    pub head: Vec<Tensor>,
}

pub fn encode_checkpoint(net: &EmbeddingNetwork, opt: &OptimizerState, head: &[Tensor]) -> Vec<u8> {
    let mut w = Writer::new(CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
    let cfg = net.config();
    w.usize(cfg.input_size.0);
    w.usize(cfg.input_size.1);
    w.usize(cfg.conv_filters.len());
    for &f in &cfg.conv_filters {
        w.usize(f);
    }
    w.usize(cfg.embedding_dim);

    w.f64(opt.base_lr);
    w.f64(opt.momentum);
    w.f64(opt.decay_rate);
    w.f64(opt.decay_steps);
    w.u64(opt.step);
    w.f64(opt.l2_weight);
    w.f64(opt.l1_weight);

    for section in [net.params(), head, &opt.velocity] {
        w.usize(section.len());
        for t in section {
            w.tensor(t);
        }
    }
    w.finish()
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::open(bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, "checkpoint")?;
    let h = r.usize()?;
    let w = r.usize()?;
    let blocks = r.usize()?;
    if blocks > 64 {
        return Err(Error::Checkpoint(format!("implausible block count {blocks}")));
    }
    let conv_filters = (0..blocks).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let embedding_dim = r.usize()?;
    let config = NetworkConfig {
        input_size: (h, w),
        conv_filters,
        embedding_dim,
    };
    config
        .validate()
        .map_err(|e| Error::Checkpoint(format!("stored network config is invalid: {e}")))?;

    let base_lr = r.f64()?;
    let momentum = r.f64()?;
    let decay_rate = r.f64()?;
    let decay_steps = r.f64()?;
    let step = r.u64()?;
    let l2_weight = r.f64()?;
    let l1_weight = r.f64()?;

    let mut sections = Vec::with_capacity(3);
    for _ in 0..3 {
        let n = r.usize()?;
        if n > 4096 {
            return Err(Error::Checkpoint(format!("implausible tensor count {n}")));
        }
        sections.push((0..n).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?);
    }
    r.finish()?;
    let velocity = sections.pop().unwrap();
    let head = sections.pop().unwrap();
    let params = sections.pop().unwrap();

    let network = EmbeddingNetwork::from_params(config, params)?;
    let expected: Vec<(&str, &[usize])> = network
        .params()
        .iter()
        .chain(&head)
        .map(|t| (t.name.as_str(), t.shape.as_slice()))
        .collect();
    let found: Vec<(&str, &[usize])> = velocity.iter().map(|t| (t.name.as_str(), t.shape.as_slice())).collect();
    if expected != found {
        return Err(Error::Checkpoint("velocity tensors do not mirror the parameters".into()));
    }
    Ok(Checkpoint {
        network,
        optimizer: OptimizerState {
            velocity,
            base_lr,
            momentum,
            decay_rate,
            decay_steps,
            step,
            l2_weight,
            l1_weight,
        },
        head,
    })
}

pub fn save_checkpoint(net: &EmbeddingNetwork, opt: &OptimizerState, path: impl AsRef<Path>) -> Result<()> {
    save_checkpoint_with_head(net, opt, &[], path)
}

pub fn save_checkpoint_with_head(
    net: &EmbeddingNetwork,
    opt: &OptimizerState,
    head: &[Tensor],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(net, opt, head)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
