//! Independent numerical oracles shared by the integration tests.
#![allow(dead_code)]

use fewshot::linalg::Matrix;
use fewshot::Rng;

pub fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_vec(rows, cols, rng.gaussian_vec(rows * cols)).unwrap()
}

/// Reduces a symmetric matrix to tridiagonal form with Householder
/// reflections, returning (diagonal, off-diagonal).
fn tridiagonalize(a: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = a.rows();
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
    for k in 0..n.saturating_sub(2) {
        let alpha_sq: f64 = ((k + 1)..n).map(|i| m[i][k] * m[i][k]).sum();
        if alpha_sq == 0.0 {
            continue;
        }
        let alpha = if m[k + 1][k] > 0.0 { -alpha_sq.sqrt() } else { alpha_sq.sqrt() };
        let mut v = vec![0.0; n];
        v[k + 1] = m[k + 1][k] - alpha;
        for i in (k + 2)..n {
            v[i] = m[i][k];
        }
        let vnorm_sq: f64 = v.iter().map(|x| x * x).sum();
        if vnorm_sq == 0.0 {
            continue;
        }
        // m ← H m H with H = I − 2 v vᵀ / (vᵀv)
        let p: Vec<f64> = (0..n).map(|i| (0..n).map(|j| m[i][j] * v[j]).sum::<f64>() * 2.0 / vnorm_sq).collect();
        let kappa: f64 = (0..n).map(|i| v[i] * p[i]).sum::<f64>() / vnorm_sq;
        let q: Vec<f64> = (0..n).map(|i| p[i] - kappa * v[i]).collect();
        for i in 0..n {
            for j in 0..n {
                m[i][j] -= v[i] * q[j] + q[i] * v[j];
            }
        }
    }
    let diag = (0..n).map(|i| m[i][i]).collect();
    let off = (1..n).map(|i| m[i][i - 1]).collect();
    (diag, off)
}

/// Number of eigenvalues of the tridiagonal matrix strictly below `x`.
fn sturm_count(diag: &[f64], off: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = 1.0;
    for i in 0..diag.len() {
        let b2 = if i == 0 { 0.0 } else { off[i - 1] * off[i - 1] };
        q = diag[i] - x - if i == 0 { 0.0 } else { b2 / q };
        if q == 0.0 {
            q = -1e-300;
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// All eigenvalues of a symmetric matrix, descending, by Householder
/// tridiagonalization and Sturm-sequence bisection.
pub fn eigenvalues_oracle(a: &Matrix) -> Vec<f64> {
    let n = a.rows();
    let (diag, off) = tridiagonalize(a);
    let radius = (0..n)
        .map(|i| {
            diag[i].abs()
                + if i > 0 { off[i - 1].abs() } else { 0.0 }
                + if i + 1 < n { off[i].abs() } else { 0.0 }
        })
        .fold(0.0, f64::max)
        + 1.0;
    let mut values: Vec<f64> = (0..n)
        .map(|k| {
            // k-th smallest eigenvalue
            let (mut lo, mut hi) = (-radius, radius);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if sturm_count(&diag, &off, mid) > k {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            0.5 * (lo + hi)
        })
        .collect();
    values.reverse();
    values
}

/// Determinant and inverse by Gauss-Jordan elimination with partial pivoting.
pub fn det_and_inverse(a: &Matrix) -> (f64, Vec<Vec<f64>>) {
    let n = a.rows();
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
    let mut inv: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
        if p != c {
            m.swap(p, c);
            inv.swap(p, c);
            det = -det;
        }
        let pivot = m[c][c];
        det *= pivot;
        for j in 0..n {
            m[c][j] /= pivot;
            inv[c][j] /= pivot;
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                for j in 0..n {
                    m[r][j] -= f * m[c][j];
                    inv[r][j] -= f * inv[c][j];
                }
            }
        }
    }
    (det, inv)
}

/// Multivariate normal density evaluated directly (no logs).
pub fn gaussian_density(z: &[f64], mean: &[f64], cov: &Matrix) -> f64 {
    let k = z.len();
    let (det, inv) = det_and_inverse(cov);
    let d: Vec<f64> = z.iter().zip(mean).map(|(a, b)| a - b).collect();
    let mut quad = 0.0;
    for i in 0..k {
        for j in 0..k {
            quad += d[i] * inv[i][j] * d[j];
        }
    }
    (-0.5 * quad).exp() / ((2.0 * std::f64::consts::PI).powi(k as i32) * det).sqrt()
}

/// Central finite-difference relative error, floored at 1e-3 in the denominator.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

use fewshot::baseline::{baseline_gradients, cross_entropy_loss, SoftmaxHead};
use fewshot::data::Image;
use fewshot::nn::{EmbeddingNetwork, NetworkConfig, Regularization, Tensor};
use fewshot::train::triplet_gradients;
use fewshot::triplet::{triplet_loss, MinedTriplet, TripletConfig};

pub fn random_images(n: usize, h: usize, w: usize, rng: &mut Rng) -> Vec<Image> {
    (0..n)
        .map(|_| Image::new(h, w, (0..h * w).map(|_| rng.uniform()).collect()))
        .collect()
}

/// Small random network configuration for gradient checks.
pub fn small_config(rng: &mut Rng) -> NetworkConfig {
    let blocks = 1 + rng.below(2);
    let side = 4 << blocks;
    NetworkConfig {
        input_size: (side, side),
        conv_filters: (0..blocks).map(|_| 2 + rng.below(3)).collect(),
        embedding_dim: 3 + rng.below(3),
    }
}

/// Perturbs every parameter in turn and returns the largest relative error
/// between `analytic` and the central difference of `loss`.
fn max_fd_error(
    params: &mut [Tensor],
    analytic: &[Tensor],
    h: f64,
    mut loss: impl FnMut(&[Tensor]) -> f64,
) -> f64 {
    let mut worst = 0.0f64;
    for t in 0..params.len() {
        for i in 0..params[t].data.len() {
            let orig = params[t].data[i];
            params[t].data[i] = orig + h;
            let plus = loss(params);
            params[t].data[i] = orig - h;
            let minus = loss(params);
            params[t].data[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error(analytic[t].data[i], numeric));
        }
    }
    worst
}

/// Triplet loss through the backbone: analytic vs central differences.
pub fn triplet_backbone_fd_error(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let cfg = small_config(&mut rng);
    let net = EmbeddingNetwork::new(cfg.clone(), &mut rng).unwrap();
    let (h, w) = cfg.input_size;
    let images = random_images(9, h, w, &mut rng);
    let labels: Vec<usize> = (0..9).map(|i| i % 3).collect();
    let tcfg = TripletConfig {
        margin: 2.0,
        lambda: 0.05,
        batch_size: 9,
    };
    let (_, grads) = triplet_gradients(&net, &images, &labels, &tcfg, Regularization::NONE).unwrap();
    let mut params = net.params().to_vec();
    max_fd_error(&mut params, &grads, 1e-5, |p| {
        let probe = EmbeddingNetwork::from_params(cfg.clone(), p.to_vec()).unwrap();
        triplet_loss(&probe.embed(&images).unwrap(), &labels, &tcfg).unwrap().loss
    })
}

/// Cross-entropy through head and backbone: analytic vs central differences.
pub fn baseline_fd_error(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let cfg = small_config(&mut rng);
    let net = EmbeddingNetwork::new(cfg.clone(), &mut rng).unwrap();
    let head = SoftmaxHead::new(cfg.embedding_dim, 3, &mut rng);
    let (h, w) = cfg.input_size;
    let images = random_images(6, h, w, &mut rng);
    let labels: Vec<usize> = (0..6).map(|i| i % 3).collect();
    let (_, grads) = baseline_gradients(&net, &head, &images, &labels, Regularization::NONE).unwrap();
    let n_backbone = net.params().len();
    let mut params = net.params().to_vec();
    params.extend(head.tensors());
    max_fd_error(&mut params, &grads, 1e-5, |p| {
        let probe = EmbeddingNetwork::from_params(cfg.clone(), p[..n_backbone].to_vec()).unwrap();
        let hd = SoftmaxHead::from_tensors(p[n_backbone..].to_vec(), cfg.embedding_dim).unwrap();
        let logits = hd.logits(&probe.embed(&images).unwrap()).unwrap();
        cross_entropy_loss(&logits, &labels).unwrap().0
    })
}

pub fn naive_l1(e: &Matrix) -> Vec<Vec<f64>> {
    let n = e.rows();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..e.cols() {
                out[i][j] += (e[(i, k)] - e[(j, k)]).abs();
            }
        }
    }
    out
}

/// Enumerates every (anchor, positive, negative) triple and keeps, per
/// anchor, the lexicographically best one: largest d(a,p), then smallest p,
/// then smallest d(a,n), then smallest n.
pub fn exhaustive_mining(d: &[Vec<f64>], labels: &[usize]) -> Vec<Option<MinedTriplet>> {
    let n = labels.len();
    (0..n)
        .map(|a| {
            let mut best: Option<(usize, usize)> = None;
            for p in 0..n {
                for q in 0..n {
                    if p == a || labels[p] != labels[a] || labels[q] == labels[a] {
                        continue;
                    }
                    let better = match best {
                        None => true,
                        Some((bp, bq)) => {
                            (d[a][p] > d[a][bp]) || (d[a][p] == d[a][bp] && p < bp)
                                || (p == bp && (d[a][q] < d[a][bq] || (d[a][q] == d[a][bq] && q < bq)))
                        }
                    };
                    if better {
                        best = Some((p, q));
                    }
                }
            }
            best.map(|(positive, negative)| MinedTriplet { positive, negative })
        })
        .collect()
}
