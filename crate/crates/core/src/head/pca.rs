use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sym_eig, Matrix};

/// Top-`k` principal axes of a set of row vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaProjector {
    pub mean: Vec<f64>,
    /// D×k, orthonormal columns.
    pub components: Matrix,
    /// Eigenvalues of the (1/N) covariance matching each column, descending.
    pub explained_variance: Vec<f64>,
}

impl PcaProjector {
    pub fn input_dim(&self) -> usize {
        self.components.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.components.cols()
    }
}

pub fn pca_fit(e: &Matrix, k: usize) -> Result<PcaProjector> {
    let (n, d) = (e.rows(), e.cols());
    if k == 0 || k > d {
        return Err(Error::contract(format!("pca: need 1 <= k <= D, got k={k}, D={d}")));
    }
    if k >= n {
        return Err(Error::contract(format!("pca: need k < N, got k={k}, N={n}")));
    }
    if !e.is_finite() {
        return Err(Error::Numerical("pca: non-finite input".into()));
    }
    let mean = e.column_means();
    let eig = sym_eig(&e.covariance(&mean))?;
    let mut components = Matrix::zeros(d, k);
    for i in 0..d {
        for j in 0..k {
            components[(i, j)] = eig.vectors[(i, j)];
        }
    }
    Ok(PcaProjector {
        mean,
        components,
        explained_variance: eig.values[..k].to_vec(),
    })
}

/// `Z = (E − mean)·components`
pub fn pca_project(p: &PcaProjector, e: &Matrix) -> Result<Matrix> {
    if e.cols() != p.input_dim() {
        return Err(Error::contract(format!(
            "pca: projector expects {} columns, got {}",
            p.input_dim(),
            e.cols()
        )));
    }
    let mut centered = e.clone();
    for r in 0..centered.rows() {
        for (v, m) in centered.row_mut(r).iter_mut().zip(&p.mean) {
            *v -= m;
        }
    }
    centered.matmul(&p.components)
}

/// `Z·componentsᵀ + mean`, the inverse of [`pca_project`] on the retained subspace.
pub fn pca_reconstruct(p: &PcaProjector, z: &Matrix) -> Result<Matrix> {
    let mut out = z.matmul(&p.components.transpose())?;
    for r in 0..out.rows() {
        for (v, m) in out.row_mut(r).iter_mut().zip(&p.mean) {
            *v += m;
        }
    }
    Ok(out)
}
