//! L1 distances, online batch-hard mining and the penalized triplet loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TripletConfig {
    pub margin: f64,
    /// Weight of the L2 norm penalty on the three embeddings of a triplet.
    pub lambda: f64,
    pub batch_size: usize,
}

impl Default for TripletConfig {
    fn default() -> Self {
        TripletConfig {
            margin: 2.0,
            lambda: 0.05,
            batch_size: 64,
        }
    }
}

impl TripletConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!("triplet margin must be positive, got {}", self.margin)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("triplet lambda must be non-negative, got {}", self.lambda)));
        }
        if self.batch_size < 4 {
            return Err(Error::Config(format!("batch size must be at least 4, got {}", self.batch_size)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MinedTriplet {
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiningResult {
    /// One entry per anchor; `None` when the anchor has no positive or no negative.
    pub triplets: Vec<Option<MinedTriplet>>,
    pub valid: usize,
    /// Anchors with a positive hinge. Filled in by [`triplet_loss`]; zero after mining alone.
    pub active: usize,
}

/// `D[i][j] = Σ_k |E[i][k] − E[j][k]|`
pub fn pairwise_l1(e: &Matrix) -> Matrix {
    let n = e.rows();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v: f64 = e.row(i).iter().zip(e.row(j)).map(|(a, b)| (a - b).abs()).sum();
            d.data_mut()[i * n + j] = v;
            d.data_mut()[j * n + i] = v;
        }
    }
    d
}

/// Hardest positive (farthest same-label sample) and hardest negative
/// (closest other-label sample) per anchor. Ties go to the smallest index.
pub fn mine_batch_hard(d: &Matrix, labels: &[usize]) -> MiningResult {
    let n = labels.len();
    assert_eq!(d.rows(), n, "distance matrix does not match label count");
    let mut triplets = Vec::with_capacity(n);
    for i in 0..n {
        let row = d.row(i);
        let mut pos: Option<usize> = None;
        let mut neg: Option<usize> = None;
        for j in 0..n {
            if j == i {
                continue;
            }
            if labels[j] == labels[i] {
                if pos.map_or(true, |p| row[j] > row[p]) {
                    pos = Some(j);
                }
            } else if neg.map_or(true, |q| row[j] < row[q]) {
                neg = Some(j);
            }
        }
        triplets.push(match (pos, neg) {
            (Some(positive), Some(negative)) => Some(MinedTriplet { positive, negative }),
            _ => None,
        });
    }
    let valid = triplets.iter().flatten().count();
    MiningResult {
        triplets,
        valid,
        active: 0,
    }
}

#[derive(Debug, Clone)]
pub struct TripletLoss {
    pub loss: f64,
    pub grad: Matrix,
    pub mining: MiningResult,
}

/// Mean over valid anchors of
/// `max(d(a,p) − d(a,n) + m, 0) + λ(‖e_a‖₂ + ‖e_p‖₂ + ‖e_n‖₂)`
/// together with its subgradient with respect to `e`.
pub fn triplet_loss(e: &Matrix, labels: &[usize], cfg: &TripletConfig) -> Result<TripletLoss> {
    if labels.len() != e.rows() {
        return Err(Error::contract(format!(
            "{} labels for {} embeddings",
            labels.len(),
            e.rows()
        )));
    }
    if !e.is_finite() {
        return Err(Error::Numerical("non-finite embeddings in triplet loss".into()));
    }
    let d = pairwise_l1(e);
    let mut mining = mine_batch_hard(&d, labels);
    let mut grad = Matrix::zeros(e.rows(), e.cols());
    if mining.valid == 0 {
        return Ok(TripletLoss { loss: 0.0, grad, mining });
    }
    let scale = 1.0 / mining.valid as f64;
    let norms: Vec<f64> = e.iter_rows().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let dim = e.cols();
    let mut total = 0.0;
    let mut active = 0;
    for (a, t) in mining.triplets.iter().enumerate() {
        let Some(t) = t else { continue };
        let (p, n) = (t.positive, t.negative);
        let hinge = d[(a, p)] - d[(a, n)] + cfg.margin;
        total += hinge.max(0.0) + cfg.lambda * (norms[a] + norms[p] + norms[n]);
        if hinge > 0.0 {
            active += 1;
            for k in 0..dim {
                let gp = sign(e[(a, k)] - e[(p, k)]) * scale;
                let gn = sign(e[(a, k)] - e[(n, k)]) * scale;
                let g = grad.data_mut();
                g[a * dim + k] += gp - gn;
                g[p * dim + k] -= gp;
                g[n * dim + k] += gn;
            }
        }
        if cfg.lambda > 0.0 {
            for &x in &[a, p, n] {
                if norms[x] > 0.0 {
                    let c = cfg.lambda * scale / norms[x];
                    for k in 0..dim {
                        grad.data_mut()[x * dim + k] += c * e[(x, k)];
                    }
                }
            }
        }
    }
    mining.active = active;
    Ok(TripletLoss {
        loss: total * scale,
        grad,
        mining,
    })
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
