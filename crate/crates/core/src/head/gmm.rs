use std::f64::consts::PI;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::rng::Rng;

pub const MONOTONICITY_SLACK: f64 = 1e-8;
const COLLAPSE_WEIGHT: f64 = 1e-8;
const MAX_REINITS: usize = 3;
const MAX_REG_RETRIES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub reg_eps: f64,
    /// Independent seedings; the fit with the highest final log-likelihood wins.
    pub restarts: usize,
}

impl Default for GmmOptions {
    fn default() -> Self {
        GmmOptions {
            tol: 1e-6,
            max_iter: 200,
            reg_eps: 1e-6,
            restarts: 10,
        }
    }
}

/// Full-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Matrix>,
    pub reg_eps: f64,
    factors: Vec<Cholesky>,
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Mean per-sample log-likelihood at the start of every iteration plus the final value.
    pub trace: Vec<f64>,
    pub converged: bool,
    pub reinitializations: usize,
}

impl GmmFit {
    pub fn final_loglik(&self) -> f64 {
        *self.trace.last().expect("a fit records at least one log-likelihood")
    }
}

impl GmmModel {
    /// Builds a model, factoring each covariance. Fails if one is not positive definite.
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covariances: Vec<Matrix>, reg_eps: f64) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || covariances.len() != k {
            return Err(Error::contract("gmm: weights, means and covariances disagree in count"));
        }
        let dim = means[0].len();
        if means.iter().any(|m| m.len() != dim) || covariances.iter().any(|c| c.rows() != dim || c.cols() != dim) {
            return Err(Error::contract("gmm: inconsistent component dimensions"));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|&w| !(w > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::contract("gmm: weights must be positive and sum to 1"));
        }
        let factors = covariances.iter().map(Cholesky::factor).collect::<Result<Vec<_>>>()?;
        Ok(GmmModel {
            weights,
            means,
            covariances,
            reg_eps,
            factors,
        })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// `log w_j + log N(z; μ_j, Σ_j)` for every component.
    pub fn component_log_densities(&self, z: &[f64]) -> Vec<f64> {
        let k = self.dim() as f64;
        let mut diff = vec![0.0; z.len()];
        (0..self.components())
            .map(|j| {
                for ((d, a), b) in diff.iter_mut().zip(z).zip(&self.means[j]) {
                    *d = a - b;
                }
                let f = &self.factors[j];
                self.weights[j].ln() - 0.5 * (k * (2.0 * PI).ln() + f.log_det() + f.mahalanobis_sq(&diff))
            })
            .collect()
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Component responsibilities for one point, computed in log space.
pub fn gmm_posterior(g: &GmmModel, z: &[f64]) -> Vec<f64> {
    let logs = g.component_log_densities(z);
    let total = log_sum_exp(&logs);
    let mut post: Vec<f64> = logs.iter().map(|l| (l - total).exp()).collect();
    let s: f64 = post.iter().sum();
    for p in &mut post {
        *p /= s;
    }
    post
}

/// `log Σ_j w_j N(z; μ_j, Σ_j)`
pub fn gmm_loglik(g: &GmmModel, z: &[f64]) -> f64 {
    log_sum_exp(&g.component_log_densities(z))
}

/// Factors `cov + reg·I`, multiplying `reg` by ten on each definiteness failure.
fn regularized(mut cov: Matrix, reg_eps: f64) -> Result<(Matrix, Cholesky)> {
    let mut eps = reg_eps;
    cov.add_diagonal(eps);
    for attempt in 0..=MAX_REG_RETRIES {
        match Cholesky::factor(&cov) {
            Ok(f) => return Ok((cov, f)),
            Err(e @ Error::NotPositiveDefinite { .. }) if attempt == MAX_REG_RETRIES => return Err(e),
            Err(Error::NotPositiveDefinite { .. }) => {
                cov.add_diagonal(eps * 9.0);
                eps *= 10.0;
            }
            Err(e) => return Err(e),
        }
    }
    unreachable!()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: the first mean uniformly, each next one with
/// probability proportional to the squared distance to the nearest chosen mean.
fn kmeans_pp(z: &Matrix, k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let n = z.rows();
    let mut means = vec![z.row(rng.below(n)).to_vec()];
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(z.row(i), &means[0])).collect();
    while means.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, d) in nearest.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.below(n)
        };
        let m = z.row(pick).to_vec();
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(z.row(i), &m));
        }
        means.push(m);
    }
    means
}

/// Per-sample log-likelihoods and normalized responsibilities (N×K).
fn e_step(g: &GmmModel, z: &Matrix) -> (Vec<f64>, Matrix) {
    let k = g.components();
    let mut resp = Matrix::zeros(z.rows(), k);
    let mut lls = Vec::with_capacity(z.rows());
    for i in 0..z.rows() {
        let logs = g.component_log_densities(z.row(i));
        let total = log_sum_exp(&logs);
        lls.push(total);
        for (r, l) in resp.row_mut(i).iter_mut().zip(&logs) {
            *r = (l - total).exp();
        }
    }
    (lls, resp)
}

fn m_step_component(z: &Matrix, resp: &Matrix, j: usize, reg_eps: f64) -> Result<(f64, Vec<f64>, Matrix, Cholesky)> {
    let (n, dim) = (z.rows(), z.cols());
    let nj: f64 = (0..n).map(|i| resp[(i, j)]).sum();
    let mut mean = vec![0.0; dim];
    for i in 0..n {
        let r = resp[(i, j)];
        for (m, v) in mean.iter_mut().zip(z.row(i)) {
            *m += r * v;
        }
    }
    for m in &mut mean {
        *m /= nj;
    }
    let mut cov = Matrix::zeros(dim, dim);
    let mut diff = vec![0.0; dim];
    for i in 0..n {
        let r = resp[(i, j)];
        if r == 0.0 {
            continue;
        }
        for ((d, v), m) in diff.iter_mut().zip(z.row(i)).zip(&mean) {
            *d = v - m;
        }
        for a in 0..dim {
            for b in 0..=a {
                cov[(a, b)] += r * diff[a] * diff[b];
            }
        }
    }
    for a in 0..dim {
        for b in 0..=a {
            let v = cov[(a, b)] / nj;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    let (cov, factor) = regularized(cov, reg_eps)?;
    Ok((nj / n as f64, mean, cov, factor))
}

/// Fits a `k`-component mixture by expectation maximization, run from
/// `opts.restarts` seedings drawn in turn from `rng`. The fit with the highest
/// final mean log-likelihood is kept (the earliest on ties). A restart that
/// ends in unrecoverable component collapse is skipped; the call fails only if
/// every restart does.
pub fn gmm_fit(z: &Matrix, k: usize, rng: &mut Rng, opts: &GmmOptions) -> Result<GmmFit> {
    if opts.restarts == 0 {
        return Err(Error::Config("gmm: restarts must be >= 1".into()));
    }
    let mut best: Option<GmmFit> = None;
    for r in 0..opts.restarts {
        let Some(fit) = gmm_fit_once(z, k, rng, opts)? else {
            warn!("gmm: restart {r} abandoned after {MAX_REINITS} re-initializations");
            continue;
        };
        let ll = fit.final_loglik();
        if best.as_ref().map_or(true, |b| ll > b.final_loglik()) {
            best = Some(fit);
        }
    }
    best.ok_or_else(|| {
        Error::Numerical(format!(
            "gmm: a component collapsed after {MAX_REINITS} re-initializations in every restart"
        ))
    })
}

/// One EM run.
///
/// Means are seeded by k-means++, covariances start at the global covariance
/// and `reg_eps` is added to every covariance diagonal in each M-step. A
/// component whose weight falls below 1e-8 is re-seeded at the sample with
/// the largest Mahalanobis distance to its nearest surviving component; after
/// three re-seeds the run is abandoned and `None` returned. The mean
/// log-likelihood must not decrease by more than 1e-8 between iterations
/// (re-seeding iterations excepted).
fn gmm_fit_once(z: &Matrix, k: usize, rng: &mut Rng, opts: &GmmOptions) -> Result<Option<GmmFit>> {
    let (n, dim) = (z.rows(), z.cols());
    if k == 0 || n < 5 * k {
        return Err(Error::contract(format!("gmm: need N >= 5K, got N={n}, K={k}")));
    }
    if dim == 0 || !z.is_finite() {
        return Err(Error::Numerical("gmm: empty or non-finite data".into()));
    }
    let global_mean = z.column_means();
    let (global_cov, global_factor) = regularized(z.covariance(&global_mean), opts.reg_eps)?;
    let mut model = GmmModel {
        weights: vec![1.0 / k as f64; k],
        means: kmeans_pp(z, k, rng),
        covariances: vec![global_cov.clone(); k],
        reg_eps: opts.reg_eps,
        factors: vec![global_factor.clone(); k],
    };

    let mut trace = Vec::new();
    let mut reinitializations = 0;
    let mut skip_check = false;
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let (lls, resp) = e_step(&model, z);
        let ll = lls.iter().sum::<f64>() / n as f64;
        if let Some(&prev) = trace.last() {
            if !skip_check && ll < prev - MONOTONICITY_SLACK {
                return Err(Error::Numerical(format!(
                    "gmm: log-likelihood decreased from {prev} to {ll}"
                )));
            }
            trace.push(ll);
            if !skip_check && (ll - prev).abs() <= opts.tol * prev.abs().max(1e-12) {
                converged = true;
                break;
            }
        } else {
            trace.push(ll);
        }
        skip_check = false;

        for j in 0..k {
            let (w, mean, cov, factor) = m_step_component(z, &resp, j, opts.reg_eps)?;
            model.weights[j] = w;
            model.means[j] = mean;
            model.covariances[j] = cov;
            model.factors[j] = factor;
        }
        while let Some(j) = model.weights.iter().position(|&w| !(w >= COLLAPSE_WEIGHT)) {
            if reinitializations == MAX_REINITS {
                return Ok(None);
            }
            reinitializations += 1;
            warn!("gmm: component {j} collapsed (weight {}), re-seeding", model.weights[j]);
            let far = farthest_sample(&model, z, j);
            model.means[j] = z.row(far).to_vec();
            model.covariances[j] = global_cov.clone();
            model.factors[j] = global_factor.clone();
            model.weights[j] = 1.0 / k as f64;
            let s: f64 = model.weights.iter().sum();
            for w in &mut model.weights {
                *w /= s;
            }
            skip_check = true;
        }
    }
    if !converged {
        let (lls, _) = e_step(&model, z);
        let ll = lls.iter().sum::<f64>() / n as f64;
        if let Some(&prev) = trace.last() {
            if !skip_check && ll < prev - MONOTONICITY_SLACK {
                return Err(Error::Numerical(format!(
                    "gmm: log-likelihood decreased from {prev} to {ll}"
                )));
            }
        }
        trace.push(ll);
    }
    Ok(Some(GmmFit {
        model,
        trace,
        converged,
        reinitializations,
    }))
}

fn farthest_sample(model: &GmmModel, z: &Matrix, collapsed: usize) -> usize {
    let mut diff = vec![0.0; z.cols()];
    let mut best = (0, f64::NEG_INFINITY);
    for i in 0..z.rows() {
        let mut nearest = f64::INFINITY;
        for j in (0..model.components()).filter(|&j| j != collapsed) {
            for ((d, a), b) in diff.iter_mut().zip(z.row(i)).zip(&model.means[j]) {
                *d = a - b;
            }
            nearest = nearest.min(model.factors[j].mahalanobis_sq(&diff));
        }
        if nearest > best.1 {
            best = (i, nearest);
        }
    }
    best.0
}
