//! Contrasts, generalized-inverse Wald statistics and chi-square power.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::design::{asymptotic_covariance, CovarianceInputs, SmartDesign};
use crate::error::{Error, Result};
use crate::estimation::StrategyEstimates;

/// Relative eigenvalue cut-off used by [`pseudo_inverse`] and
/// [`matrix_rank`] unless the caller supplies another.
pub const DEFAULT_EIGEN_TOL: f64 = 1e-10;

const SYMMETRY_TOL: f64 = 1e-8;

/// Linear hypothesis `C mu = 0`; every row is a contrast and the rows are
/// linearly independent.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastMatrix(DMatrix<f64>);

impl ContrastMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 || m.ncols() < 2 {
            return Err(Error::InvalidArgument("contrast matrix is empty".into()));
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        for (i, row) in m.row_iter().enumerate() {
            if row.sum().abs() > 1e-12 * scale * m.ncols() as f64 {
                return Err(Error::InvalidArgument(format!("contrast row {i} does not sum to 0")));
            }
        }
        if matrix_rank(&m, DEFAULT_EIGEN_TOL) != m.nrows() {
            return Err(Error::InvalidArgument("contrast matrix is not of full row rank".into()));
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn n_strategies(&self) -> usize {
        self.0.ncols()
    }
}

/// `[1 | -I]`: every strategy compared with the first.
pub fn default_contrast(n_strategies: usize) -> Result<ContrastMatrix> {
    if n_strategies < 2 {
        return Err(Error::InvalidArgument(format!(
            "a contrast needs at least 2 strategies, got {n_strategies}"
        )));
    }
    let r = n_strategies - 1;
    let m = DMatrix::from_fn(r, n_strategies, |i, j| match j {
        0 => 1.0,
        _ if j == i + 1 => -1.0,
        _ => 0.0,
    });
    Ok(ContrastMatrix(m))
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let scale = m.amax();
    if scale == 0.0 {
        return Ok(());
    }
    let asymmetry = (m - m.transpose()).amax() / scale;
    if asymmetry > SYMMETRY_TOL {
        return Err(Error::NonSymmetric { asymmetry });
    }
    Ok(())
}

/// Rebuild `sum_i v_i v_i^T / lambda_i` over the kept eigenpairs.
fn spectral_inverse(m: &DMatrix<f64>, keep: impl Fn(usize, f64, f64) -> bool) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let max = eig.eigenvalues.max();
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    if !(max > 0.0) {
        return out;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    for (pos, &i) in order.iter().enumerate() {
        let lambda = eig.eigenvalues[i];
        if lambda <= 0.0 || !keep(pos, lambda, max) {
            continue;
        }
        let v = eig.eigenvectors.column(i);
        out += (v * v.transpose()) / lambda;
    }
    out
}

/// Moore-Penrose inverse of a symmetric PSD matrix by spectral
/// decomposition; eigenvalues below `tol * max_eigenvalue` are treated as 0.
pub fn pseudo_inverse(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    check_symmetric(m)?;
    if tol < 0.0 {
        return Err(Error::InvalidArgument("tolerance must be non-negative".into()));
    }
    Ok(spectral_inverse(m, |_, lambda, max| lambda >= tol * max))
}

/// Generalized inverse that keeps only the `rank` largest eigenpairs.
pub fn pseudo_inverse_of_rank(m: &DMatrix<f64>, rank: usize) -> Result<DMatrix<f64>> {
    check_symmetric(m)?;
    Ok(spectral_inverse(m, |pos, _, _| pos < rank))
}

/// Number of singular values at least `tol` times the largest.
pub fn matrix_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    if !(max > 0.0) {
        return 0;
    }
    sv.iter().filter(|&&s| s >= tol * max).count()
}

/// How the rank of the g-inverse in a Wald statistic is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankPolicy {
    /// Keep eigenvalues of `C cov C^T` above `tol * max`; with an estimated
    /// covariance this is usually full rank.
    Tolerance(f64),
    /// Keep the `df` largest eigenvalues, `df` being the null rank fixed by
    /// the design (see [`null_degrees_of_freedom`]).
    Design(usize),
}

/// Which covariance rank the statistic's degrees of freedom came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankBasis {
    EstimatedCovariance,
    DesignNull,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaldResult {
    pub statistic: f64,
    pub df: usize,
    pub rank_basis: RankBasis,
    pub pseudo_inverse_tolerance: f64,
}

/// `T = (C mu)^T [C cov C^T]^g (C mu)` where `cov` is the covariance of the
/// estimates themselves (already divided by `n`).
pub fn wald_from_parts(
    mu: &DVector<f64>,
    cov: &DMatrix<f64>,
    contrast: &ContrastMatrix,
    policy: RankPolicy,
) -> Result<WaldResult> {
    let c = contrast.matrix();
    if mu.len() != c.ncols() || cov.nrows() != c.ncols() || cov.ncols() != c.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "contrast has {} columns, estimates have {} means and a {}x{} covariance",
            c.ncols(),
            mu.len(),
            cov.nrows(),
            cov.ncols()
        )));
    }
    let middle = c * cov * c.transpose();
    let (ginv, df, basis, tol) = match policy {
        RankPolicy::Tolerance(tol) => (
            pseudo_inverse(&middle, tol)?,
            matrix_rank(&middle, tol),
            RankBasis::EstimatedCovariance,
            tol,
        ),
        RankPolicy::Design(df) => {
            if df == 0 || df > c.nrows() {
                return Err(Error::InvalidArgument(format!(
                    "degrees of freedom {df} outside 1..={}",
                    c.nrows()
                )));
            }
            (pseudo_inverse_of_rank(&middle, df)?, df, RankBasis::DesignNull, 0.0)
        }
    };
    let x = c * mu;
    let statistic = (x.transpose() * ginv * &x)[(0, 0)].max(0.0);
    Ok(WaldResult {
        statistic,
        df,
        rank_basis: basis,
        pseudo_inverse_tolerance: tol,
    })
}

pub fn wald_statistic(
    estimates: &StrategyEstimates,
    contrast: &ContrastMatrix,
    policy: RankPolicy,
) -> Result<WaldResult> {
    wald_from_parts(&estimates.mu_hat, &estimates.sigma_hat, contrast, policy)
}

/// Rank of `C Sigma_0 C^T` for the design's null covariance. The rank is
/// structural, so Sigma_0 is evaluated at a reference null (response rates
/// 1/2, equal means, unit variances).
pub fn null_degrees_of_freedom(design: &SmartDesign, contrast: &ContrastMatrix) -> usize {
    let (j, k, l) = (design.n_initial(), design.n_responder(), design.n_nonresponder());
    let pi = vec![0.5; j];
    let zeros_k = vec![vec![0.0; k]; j];
    let zeros_l = vec![vec![0.0; l]; j];
    let ones_k = vec![vec![1.0; k]; j];
    let ones_l = vec![vec![1.0; l]; j];
    let sigma0 = asymptotic_covariance(
        design,
        &CovarianceInputs {
            pi: &pi,
            mu_ab: &zeros_k,
            mu_ac: &zeros_l,
            var_ab: &ones_k,
            var_ac: &ones_l,
            control_var: Some(1.0),
        },
    );
    let c = contrast.matrix();
    matrix_rank(&(c * sigma0 * c.transpose()), DEFAULT_EIGEN_TOL)
}

/// `delta = n theta^T [C Sigma_a C^T]^g theta` with `sigma_a` n-scaled.
pub fn noncentrality(
    theta: &DVector<f64>,
    sigma_a: &DMatrix<f64>,
    contrast: &ContrastMatrix,
    n: usize,
) -> Result<f64> {
    Ok(n as f64 * unit_noncentrality(theta, sigma_a, contrast)?)
}

/// Noncentrality per subject, `theta^T [C Sigma_a C^T]^g theta`.
pub fn unit_noncentrality(
    theta: &DVector<f64>,
    sigma_a: &DMatrix<f64>,
    contrast: &ContrastMatrix,
) -> Result<f64> {
    let c = contrast.matrix();
    if theta.len() != c.nrows() || sigma_a.nrows() != c.ncols() || sigma_a.ncols() != c.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "theta has {} entries for a {}x{} contrast with a {}x{} covariance",
            theta.len(),
            c.nrows(),
            c.ncols(),
            sigma_a.nrows(),
            sigma_a.ncols()
        )));
    }
    let ginv = pseudo_inverse(&(c * sigma_a * c.transpose()), DEFAULT_EIGEN_TOL)?;
    Ok((theta.transpose() * ginv * theta)[(0, 0)].max(0.0))
}

/// Upper tail `P(chi2_df > x)`.
pub fn chi_square_sf(df: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_ur(df / 2.0, x / 2.0)
}

/// Critical value `x` with `P(chi2_df > x) = alpha`.
pub fn chi_square_upper_quantile(df: usize, alpha: f64) -> Result<f64> {
    if df == 0 || !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need df >= 1 and alpha in (0, 1), got df = {df}, alpha = {alpha}"
        )));
    }
    let dist = ChiSquared::new(df as f64).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(dist.inverse_cdf(1.0 - alpha))
}

/// `P(chi2_df(delta) > critical)` as a Poisson(delta/2) mixture of central
/// tails, stopped once the remaining Poisson mass is below 1e-12.
pub fn noncentral_chisq_power(delta: f64, df: usize, critical: f64) -> f64 {
    if critical <= 0.0 {
        return 1.0;
    }
    let df = df as f64;
    if delta <= 0.0 {
        return chi_square_sf(df, critical);
    }
    let lambda = delta / 2.0;
    let max_terms = (lambda + 40.0 * lambda.sqrt() + 200.0) as usize;
    let mut mass = 0.0;
    let mut power = 0.0;
    for k in 0..=max_terms {
        let kf = k as f64;
        let w = (-lambda + kf * lambda.ln() - ln_gamma(kf + 1.0)).exp();
        mass += w;
        power += w * chi_square_sf(df + 2.0 * kf, critical);
        if kf > lambda && 1.0 - mass < 1e-12 {
            break;
        }
    }
    power.clamp(0.0, 1.0)
}
