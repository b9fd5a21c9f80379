//! MHED head files and the projected-embeddings export.
//!
//! Head body: `u32` class count and names, `u32` D and k, PCA mean (D),
//! components (D×k row-major) and explained variance (k), `u32` K, mixture
//! weights, means (K×k), covariances (K×k×k) and `reg_eps`, the label map
//! (K × `u32`), then the gate `tau` and percentile.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::classifier::{EmbeddingHead, LabelMap, UncertaintyGate};
use super::gmm::GmmModel;
use super::pca::PcaProjector;

pub const HEAD_MAGIC: &[u8; 4] = b"MHED";
pub const HEAD_VERSION: u32 = 1;

pub fn encode_head(head: &EmbeddingHead) -> Vec<u8> {
    let mut w = Writer::new(HEAD_MAGIC, HEAD_VERSION);
    w.usize(head.class_names.len());
    for name in &head.class_names {
        w.str(name);
    }
    let p = &head.projector;
    w.usize(p.input_dim());
    w.usize(p.output_dim());
    w.f64s(&p.mean);
    w.f64s(p.components.data());
    w.f64s(&p.explained_variance);

    let g = &head.gmm;
    w.usize(g.components());
    w.f64s(&g.weights);
    for m in &g.means {
        w.f64s(m);
    }
    for c in &g.covariances {
        w.f64s(c.data());
    }
    w.f64(g.reg_eps);
    for &c in &head.label_map.cluster_to_class {
        w.usize(c);
    }
    w.f64(head.gate.tau);
    w.f64(head.gate.percentile);
    w.finish()
}

fn bounded(n: usize, max: usize, what: &str) -> Result<usize> {
    if n > max {
        return Err(Error::Checkpoint(format!("head file: implausible {what} {n}")));
    }
    Ok(n)
}

pub fn decode_head(bytes: &[u8]) -> Result<EmbeddingHead> {
    let mut r = Reader::open(bytes, HEAD_MAGIC, HEAD_VERSION, "head file")?;
    let n_classes = bounded(r.usize()?, 1 << 16, "class count")?;
    let class_names = (0..n_classes).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    let d = bounded(r.usize()?, 1 << 16, "embedding dim")?;
    let k = bounded(r.usize()?, d, "component count")?;
    let mean = r.f64s(d)?;
    let components = Matrix::from_vec(d, k, r.f64s(d * k)?)?;
    let explained_variance = r.f64s(k)?;

    let n_comp = bounded(r.usize()?, 1 << 16, "mixture size")?;
    let weights = r.f64s(n_comp)?;
    let means = (0..n_comp).map(|_| r.f64s(k)).collect::<Result<Vec<_>>>()?;
    let covariances = (0..n_comp)
        .map(|_| Matrix::from_vec(k, k, r.f64s(k * k)?))
        .collect::<Result<Vec<_>>>()?;
    let reg_eps = r.f64()?;
    let cluster_to_class = (0..n_comp).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    if cluster_to_class.iter().any(|&c| c >= n_classes) {
        return Err(Error::Checkpoint("head file: label map refers to an unknown class".into()));
    }
    let tau = r.f64()?;
    let percentile = r.f64()?;
    r.finish()?;

    let gmm = GmmModel::new(weights, means, covariances, reg_eps)
        .map_err(|e| Error::Checkpoint(format!("head file: invalid mixture: {e}")))?;
    Ok(EmbeddingHead {
        projector: PcaProjector {
            mean,
            components,
            explained_variance,
        },
        gmm,
        label_map: LabelMap { cluster_to_class },
        gate: UncertaintyGate { tau, percentile },
        class_names,
    })
}

pub fn save_head(head: &EmbeddingHead, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_head(head)).map_err(|e| Error::io(path, e))
}

pub fn load_head(path: impl AsRef<Path>) -> Result<EmbeddingHead> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_head(&bytes)
}

/// One projected slice embedding for external plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedRow {
    pub volume_id: String,
    pub axis: u8,
    pub index: usize,
    pub label: String,
    pub z: Vec<f64>,
}

/// Tab-separated, header `volume_id axis index label z0 … z{k-1}`.
pub fn write_projected_embeddings(out: &mut impl Write, rows: &[ProjectedRow]) -> std::io::Result<()> {
    let k = rows.first().map_or(0, |r| r.z.len());
    write!(out, "volume_id\taxis\tindex\tlabel")?;
    for j in 0..k {
        write!(out, "\tz{j}")?;
    }
    writeln!(out)?;
    for r in rows {
        write!(out, "{}\t{}\t{}\t{}", r.volume_id, r.axis, r.index, r.label)?;
        for v in &r.z {
            write!(out, "\t{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
