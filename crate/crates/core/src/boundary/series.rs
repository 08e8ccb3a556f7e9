use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use super::{bisect_constant, BoundaryFamily, BoundaryMethod, BoundaryPlan, MonitoringSchedule};
use crate::error::{Error, Result};
use crate::wald::{chi_square_sf, chi_square_upper_quantile};

pub const DEFAULT_SERIES_TERMS: usize = 1000;

/// Largest relative size of the last retained term before the truncated
/// series is rejected.
pub const SERIES_TOLERANCE: f64 = 1e-8;

/// Denominator of the coefficient recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesNormalization {
    /// `a_{n+1} = (1 / (2n + 2)) * sum_w a_{n-w} s_{w+1}`; the coefficients
    /// of `prod_mu (1 - lambda_mu^2 z)^{-1/2}`.
    Standard,
    /// The same recursion with `2n + 1`; kept for comparison only, it does
    /// not produce a distribution function.
    AsPrinted,
}

/// Coefficients `a_n` for the canonical correlations `lambda`.
fn coefficients(lambda_sq: &[f64], terms: usize, norm: SeriesNormalization) -> Vec<f64> {
    // s_k = sum_mu lambda_mu^(2k)
    let mut s = vec![0.0; terms + 1];
    for &l2 in lambda_sq {
        let mut p = 1.0;
        for sk in s.iter_mut().skip(1) {
            p *= l2;
            *sk += p;
        }
    }
    let mut a = Vec::with_capacity(terms);
    a.push(1.0);
    for n in 0..terms.saturating_sub(1) {
        let acc: f64 = (0..=n).map(|w| a[n - w] * s[w + 1]).sum();
        let den = match norm {
            SeriesNormalization::Standard => 2.0 * n as f64 + 2.0,
            SeriesNormalization::AsPrinted => 2.0 * n as f64 + 1.0,
        };
        a.push(acc / den);
    }
    a
}

/// `G^{(n)}_{a+n}(x)` for `n = 0..terms`: the regularized Gamma(a) CDF for
/// `n = 0`, then `Gamma(n)/Gamma(a+n) x^a e^{-x} L^{(a)}_{n-1}(x)`.
fn g_terms(half_nu: f64, x: f64, terms: usize) -> Vec<f64> {
    let mut g = Vec::with_capacity(terms);
    g.push(gamma_lr(half_nu, x));
    if terms == 1 {
        return g;
    }
    let base = half_nu * x.ln() - x;
    let (mut l_prev, mut l) = (0.0, 1.0);
    for n in 1..terms {
        let k = (n - 1) as f64;
        if n >= 2 {
            let next = ((2.0 * k - 1.0 + half_nu - x) * l - (k - 1.0 + half_nu) * l_prev) / k;
            l_prev = l;
            l = next;
        }
        let nf = n as f64;
        g.push((ln_gamma(nf) - ln_gamma(half_nu + nf) + base).exp() * l);
    }
    g
}

/// Precomputed coefficients for repeated CDF evaluation at one correlation.
#[derive(Debug, Clone)]
pub(crate) struct BivariateSeries {
    half_nu: f64,
    a: Vec<f64>,
}

impl BivariateSeries {
    pub(crate) fn new(lambda12: &DMatrix<f64>, nu: usize, terms: usize, norm: SeriesNormalization) -> Result<Self> {
        if terms == 0 || nu == 0 {
            return Err(Error::InvalidArgument("series needs nu >= 1 and at least one term".into()));
        }
        if !lambda12.is_square() {
            return Err(Error::DimensionMismatch("cross-look block must be square".into()));
        }
        let prod = lambda12 * lambda12.transpose();
        let lambda_sq: Vec<f64> = prod.symmetric_eigen().eigenvalues.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        if lambda_sq.iter().any(|&v| v >= 1.0) {
            return Err(Error::InvalidArgument("canonical correlation of 1 has no series expansion".into()));
        }
        Ok(Self { half_nu: nu as f64 / 2.0, a: coefficients(&lambda_sq, terms, norm) })
    }

    pub(crate) fn cdf(&self, x1: f64, x2: f64) -> Result<f64> {
        if x1 <= 0.0 || x2 <= 0.0 {
            return Ok(0.0);
        }
        let terms = self.a.len();
        let g1 = g_terms(self.half_nu, x1 / 2.0, terms);
        let g2 = g_terms(self.half_nu, x2 / 2.0, terms);
        let mut sum = 0.0;
        let mut last = 0.0;
        for n in 0..terms {
            last = self.a[n] * g1[n] * g2[n];
            sum += last;
        }
        let last_relative = if sum != 0.0 { (last / sum).abs() } else { last.abs() };
        if terms > 1 && !(last_relative <= SERIES_TOLERANCE) {
            return Err(Error::SeriesNotConverged { terms, last_relative });
        }
        Ok(sum)
    }
}

/// Truncated series for `P(T_1 <= x1, T_2 <= x2)` where `T_i` are chi-square
/// with `nu` degrees of freedom built from Gaussian blocks whose
/// cross-covariance is `lambda12`.
pub fn bivariate_chisq_cdf(
    x1: f64,
    x2: f64,
    lambda12: &DMatrix<f64>,
    nu: usize,
    terms: usize,
    normalization: SeriesNormalization,
) -> Result<f64> {
    BivariateSeries::new(lambda12, nu, terms, normalization)?.cdf(x1, x2)
}

pub(crate) fn solve_series(
    schedule: &MonitoringSchedule,
    family: BoundaryFamily,
    terms: usize,
    normalization: SeriesNormalization,
) -> Result<BoundaryPlan> {
    if schedule.looks() != 2 {
        return Err(Error::SeriesUnsupported { looks: schedule.looks() });
    }
    let t = schedule.info_proportions();
    let nu = schedule.df();
    let rho = (t[0] / t[1]).sqrt();
    let series = BivariateSeries::new(&(DMatrix::identity(nu, nu) * rho), nu, terms, normalization)?;
    let w = family.weights(schedule);
    let failure = std::cell::Cell::new(None);
    let exceed = |c: f64| match series.cdf(c * w[0], c * w[1]) {
        Ok(f) => 1.0 - f,
        Err(e) => {
            failure.set(Some(e));
            0.0
        }
    };
    let start = chi_square_upper_quantile(nu, schedule.alpha())?;
    let c = bisect_constant(schedule.alpha(), start, exceed)?;
    if let Some(e) = failure.take() {
        return Err(e);
    }
    let critical_values: Vec<f64> = w.iter().map(|w| c * w).collect();
    let total = 1.0 - series.cdf(critical_values[0], critical_values[1])?;
    let first = chi_square_sf(nu as f64, critical_values[0]);
    Ok(BoundaryPlan {
        schedule: schedule.clone(),
        family,
        critical_values,
        method: BoundaryMethod::Series,
        mc_replicates: 0,
        seed: 0,
        series_terms: Some(terms),
        crossing_probabilities: vec![first, total - first],
    })
}
