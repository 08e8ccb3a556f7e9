//! Post-hoc identification of the best strategies after a global rejection.
//!
//! Critical constants come from parametric resampling of the estimated
//! strategy means, `G ~ MN(0, cov(mu_hat))`. A strategy is kept when it is
//! not significantly worse than any other strategy.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::SmartDesign;
use crate::error::{Error, Result};
use crate::estimation::StrategyEstimates;
use crate::rng::{chunks, domain, substream};

pub const DEFAULT_RESAMPLES: usize = 10_000;
pub const MIN_RESAMPLES: usize = 1000;

/// Whether larger or smaller outcomes are better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Maximize,
    Minimize,
}

impl Direction {
    /// `a` is better than `b`.
    fn better(self, a: f64, b: f64) -> bool {
        match self {
            Direction::Maximize => a > b,
            Direction::Minimize => a < b,
        }
    }

    /// Sign that turns "smaller is better" arithmetic into this direction.
    fn sign(self) -> f64 {
        match self {
            Direction::Maximize => -1.0,
            Direction::Minimize => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    PairwiseBest,
    VsControl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub selected: Vec<String>,
    pub selected_indices: Vec<usize>,
    /// One constant per candidate strategy for pairwise selection, a single
    /// constant for comparison with control.
    pub constants: Vec<f64>,
    pub direction: Direction,
    pub method: SelectionMethod,
    pub resamples: usize,
    pub seed: u64,
}

fn pair_sd(cov: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    (cov[(i, i)] + cov[(j, j)] - 2.0 * cov[(i, j)]).max(0.0).sqrt()
}

fn pair_sds(cov: &DMatrix<f64>, labels: &[String]) -> Result<DMatrix<f64>> {
    let k = cov.nrows();
    let mut sd = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            let s = pair_sd(cov, i, j);
            if !(s > 0.0) {
                return Err(Error::DegenerateComparison { first: labels[i].clone(), second: labels[j].clone() });
            }
            sd[(i, j)] = s;
        }
    }
    Ok(sd)
}

/// Symmetric square root factor `A` with `A A^T = cov`; negative rounding
/// noise in the spectrum is clipped to zero.
fn covariance_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = ((cov + cov.transpose()) * 0.5).symmetric_eigen();
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root)
}

/// Draw `resamples` centred vectors and map each to one statistic per
/// column via `stat`; returns the statistics column-major by draw.
fn resample<F>(cov: &DMatrix<f64>, resamples: usize, seed: u64, width: usize, stat: F) -> Vec<f64>
where
    F: Fn(&DVector<f64>, &mut [f64]) + Sync,
{
    let a = covariance_factor(cov);
    let k = cov.nrows();
    let parts: Vec<Vec<f64>> = chunks(resamples)
        .into_par_iter()
        .enumerate()
        .map(|(c, (_, len))| {
            let mut rng = substream(seed, domain::RESAMPLE + c as u64);
            let mut z = DVector::zeros(k);
            let mut g = DVector::zeros(k);
            let mut out = vec![0.0; len * width];
            for row in out.chunks_mut(width) {
                for v in z.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                g.gemv(1.0, &a, &z, 0.0);
                stat(&g, row);
            }
            out
        })
        .collect();
    parts.concat()
}

fn upper_quantile(mut v: Vec<f64>, alpha: f64) -> f64 {
    v.sort_unstable_by(f64::total_cmp);
    let idx = ((1.0 - alpha) * v.len() as f64).ceil() as usize;
    v[idx.clamp(1, v.len()) - 1]
}

fn check_resampling(alpha: f64, resamples: usize) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if resamples < MIN_RESAMPLES {
        return Err(Error::InvalidArgument(format!("at least {MIN_RESAMPLES} resamples are required")));
    }
    Ok(())
}

/// `c_i`, the `(1 - alpha)` quantile of `max_{j != i} (G_j - G_i) / s_ij`
/// with `s_ij = sd(mu_hat_i - mu_hat_j)`. `G` is symmetric about zero, so
/// the constants do not depend on the optimisation direction.
pub fn critical_constants_from(
    cov: &DMatrix<f64>,
    labels: &[String],
    alpha: f64,
    resamples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_resampling(alpha, resamples)?;
    let k = cov.nrows();
    if labels.len() != k || !cov.is_square() {
        return Err(Error::DimensionMismatch("labels and covariance disagree".into()));
    }
    if k == 1 {
        return Ok(vec![0.0]);
    }
    let sd = pair_sds(cov, labels)?;
    let stats = resample(cov, resamples, seed, k, |g, out| {
        for i in 0..k {
            out[i] = (0..k)
                .filter(|&j| j != i)
                .map(|j| (g[j] - g[i]) / sd[(i, j)])
                .fold(f64::NEG_INFINITY, f64::max);
        }
    });
    Ok((0..k)
        .map(|i| upper_quantile(stats.iter().skip(i).step_by(k).copied().collect(), alpha))
        .collect())
}

fn embedded_block(estimates: &StrategyEstimates, design: &SmartDesign) -> (DVector<f64>, DMatrix<f64>, Vec<String>) {
    let e = design.n_embedded();
    let labels = design.strategy_labels()[..e].to_vec();
    (
        estimates.mu_hat.rows(0, e).into_owned(),
        estimates.sigma_hat.view((0, 0), (e, e)).into_owned(),
        labels,
    )
}

/// Constants for the embedded strategies of `design` (any control arm is
/// left out).
pub fn critical_constants(
    estimates: &StrategyEstimates,
    design: &SmartDesign,
    alpha: f64,
    resamples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let (_, cov, labels) = embedded_block(estimates, design);
    critical_constants_from(&cov, &labels, alpha, resamples, seed)
}

/// Indices `i` with, for every `j != i`, `mu_i <= mu_j + c_i s_ij` when
/// minimising (mirrored when maximising).
pub fn select_best_from(
    mu: &DVector<f64>,
    cov: &DMatrix<f64>,
    constants: &[f64],
    direction: Direction,
) -> Vec<usize> {
    let k = mu.len();
    let s = direction.sign();
    (0..k)
        .filter(|&i| {
            (0..k)
                .filter(|&j| j != i)
                .all(|j| s * mu[i] <= s * mu[j] + constants[i] * pair_sd(cov, i, j))
        })
        .collect()
}

/// Pairwise best-set selection over the embedded strategies.
pub fn select_best(
    estimates: &StrategyEstimates,
    design: &SmartDesign,
    constants: &[f64],
    direction: Direction,
    resamples: usize,
    seed: u64,
) -> Result<SelectionResult> {
    let (mu, cov, labels) = embedded_block(estimates, design);
    if constants.len() != mu.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} constants for {} strategies",
            constants.len(),
            mu.len()
        )));
    }
    let idx = select_best_from(&mu, &cov, constants, direction);
    Ok(SelectionResult {
        selected: idx.iter().map(|&i| labels[i].clone()).collect(),
        selected_indices: idx,
        constants: constants.to_vec(),
        direction,
        method: SelectionMethod::PairwiseBest,
        resamples,
        seed,
    })
}

/// Index of the empirically best embedded strategy.
pub fn empirical_best(mu: &DVector<f64>, direction: Direction) -> usize {
    (1..mu.len()).fold(0, |best, i| if direction.better(mu[i], mu[best]) { i } else { best })
}

/// Flag strategies whose standardized advantage over the control arm
/// exceeds one resampling-calibrated constant for the maximum over all
/// strategies.
pub fn compare_to_control(
    estimates: &StrategyEstimates,
    design: &SmartDesign,
    alpha: f64,
    resamples: usize,
    seed: u64,
    direction: Direction,
) -> Result<SelectionResult> {
    check_resampling(alpha, resamples)?;
    let c_idx = design.control_index().ok_or(Error::NoControlArm)?;
    let labels = design.strategy_labels();
    let cov = &estimates.sigma_hat;
    let mu = &estimates.mu_hat;
    let e = design.n_embedded();
    let mut sd = Vec::with_capacity(e);
    for i in 0..e {
        let s = pair_sd(cov, i, c_idx);
        if !(s > 0.0) {
            return Err(Error::DegenerateComparison { first: labels[i].clone(), second: labels[c_idx].clone() });
        }
        sd.push(s);
    }
    // advantage of strategy i over control, positive when i is better
    let sign = -direction.sign();
    let stats = resample(cov, resamples, seed, 1, |g, out| {
        out[0] = (0..e).map(|i| sign * (g[i] - g[c_idx]) / sd[i]).fold(f64::NEG_INFINITY, f64::max);
    });
    let c = upper_quantile(stats, alpha);
    let idx: Vec<usize> = (0..e).filter(|&i| sign * (mu[i] - mu[c_idx]) / sd[i] >= c).collect();
    Ok(SelectionResult {
        selected: idx.iter().map(|&i| labels[i].clone()).collect(),
        selected_indices: idx,
        constants: vec![c],
        direction,
        method: SelectionMethod::VsControl,
        resamples,
        seed,
    })
}
