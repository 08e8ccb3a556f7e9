//! Group-sequential efficacy boundaries for the Wald statistic sequence.
//!
//! Under the null the vector `(T(t_1), ..., T(t_M))` is the sequence of
//! squared norms of `nu`-dimensional Gaussian blocks whose look-to-look
//! correlation is `sqrt(t_i / t_j)`. Boundaries are found either by seeded
//! Monte Carlo from that law or, for two looks, from a series expansion of
//! the bivariate chi-square CDF.

mod mc;
mod power;
mod series;

pub use mc::{closure_probability, sample_joint_statistics, ClosureProbability, JointStatistics};
pub use power::{required_sample_size, sequential_power, EffectSize, SampleSizeSearch, SequentialPower};
pub use series::{bivariate_chisq_cdf, SeriesNormalization, DEFAULT_SERIES_TERMS, SERIES_TOLERANCE};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wald::chi_square_upper_quantile;

/// Monte Carlo replicates used when the caller does not choose.
pub const DEFAULT_MC_REPLICATES: usize = 100_000;

const MAX_BISECTION: usize = 200;

/// Planned analyses as information proportions `t_1 < ... < t_M = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleSpec")]
pub struct MonitoringSchedule {
    info_proportions: Vec<f64>,
    df: usize,
    alpha: f64,
}

#[derive(Deserialize)]
struct ScheduleSpec {
    info_proportions: Vec<f64>,
    df: usize,
    alpha: f64,
}

impl TryFrom<ScheduleSpec> for MonitoringSchedule {
    type Error = Error;
    fn try_from(s: ScheduleSpec) -> Result<Self> {
        Self::new(s.info_proportions, s.df, s.alpha)
    }
}

impl MonitoringSchedule {
    pub fn new(info_proportions: Vec<f64>, df: usize, alpha: f64) -> Result<Self> {
        let t = &info_proportions;
        if t.is_empty() {
            return Err(Error::InvalidSchedule("at least one look is required".into()));
        }
        if t.iter().any(|&x| !(x > 0.0 && x <= 1.0)) {
            return Err(Error::InvalidSchedule("information proportions must lie in (0, 1]".into()));
        }
        if t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidSchedule(
                "information proportions must be strictly increasing".into(),
            ));
        }
        if t[t.len() - 1] != 1.0 {
            return Err(Error::InvalidSchedule("the last information proportion must be 1".into()));
        }
        if df == 0 {
            return Err(Error::InvalidSchedule("degrees of freedom must be at least 1".into()));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidSchedule(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        Ok(Self { info_proportions, df, alpha })
    }

    /// A single final analysis.
    pub fn single_look(df: usize, alpha: f64) -> Result<Self> {
        Self::new(vec![1.0], df, alpha)
    }

    pub fn looks(&self) -> usize {
        self.info_proportions.len()
    }

    pub fn info_proportions(&self) -> &[f64] {
        &self.info_proportions
    }

    pub fn df(&self) -> usize {
        self.df
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::new(self.info_proportions.clone(), self.df, alpha)
    }

    pub fn with_df(&self, df: usize) -> Result<Self> {
        Self::new(self.info_proportions.clone(), df, self.alpha)
    }

    /// Sample size at each look, `round(t_m * n_max)`; the last look is
    /// always `n_max`.
    pub fn look_sizes(&self, n_max: usize) -> Vec<usize> {
        let m = self.looks();
        self.info_proportions
            .iter()
            .enumerate()
            .map(|(i, &t)| if i + 1 == m { n_max } else { (t * n_max as f64).round() as usize })
            .collect()
    }
}

/// `Lambda_ij = sqrt(t_i / t_j)` for `i <= j`.
pub fn look_correlation(schedule: &MonitoringSchedule) -> DMatrix<f64> {
    let t = schedule.info_proportions();
    let m = t.len();
    DMatrix::from_fn(m, m, |i, j| {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        (t[a] / t[b]).sqrt()
    })
}

/// Shape of the critical values on the chi-square scale, `b_m = c * w_m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryFamily {
    /// `w_m = 1`.
    Pocock,
    /// `w_m = 1 / sqrt(t_m)`.
    #[serde(rename = "obf")]
    OBrienFleming,
    /// `w_m = sqrt(M - m + 1)`; depends on look order only.
    #[serde(rename = "obf_look_index")]
    OBrienFlemingLookIndex,
}

impl BoundaryFamily {
    pub fn weights(self, schedule: &MonitoringSchedule) -> Vec<f64> {
        let t = schedule.info_proportions();
        let m = t.len();
        match self {
            BoundaryFamily::Pocock => vec![1.0; m],
            BoundaryFamily::OBrienFleming => t.iter().map(|x| 1.0 / x.sqrt()).collect(),
            BoundaryFamily::OBrienFlemingLookIndex => {
                (0..m).map(|i| ((m - i) as f64).sqrt()).collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMethod {
    MonteCarlo,
    Series,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPlan {
    pub schedule: MonitoringSchedule,
    pub family: BoundaryFamily,
    pub critical_values: Vec<f64>,
    pub method: BoundaryMethod,
    pub mc_replicates: usize,
    pub seed: u64,
    pub series_terms: Option<usize>,
    /// Null probability of crossing at each look under the returned values,
    /// evaluated with the same method that produced them.
    pub crossing_probabilities: Vec<f64>,
}

impl BoundaryPlan {
    /// A plan from user-supplied critical values (no calibration).
    pub fn fixed(schedule: MonitoringSchedule, family: BoundaryFamily, critical_values: Vec<f64>) -> Result<Self> {
        if critical_values.len() != schedule.looks() {
            return Err(Error::InvalidArgument(format!(
                "{} critical values for {} looks",
                critical_values.len(),
                schedule.looks()
            )));
        }
        if critical_values.iter().any(|b| b.is_nan() || *b < 0.0) {
            return Err(Error::InvalidArgument("critical values must be non-negative".into()));
        }
        Ok(Self {
            schedule,
            family,
            critical_values,
            method: BoundaryMethod::MonteCarlo,
            mc_replicates: 0,
            seed: 0,
            series_terms: None,
            crossing_probabilities: Vec::new(),
        })
    }

    pub fn closure_total(&self) -> f64 {
        self.crossing_probabilities.iter().sum()
    }
}

/// Smallest `c` on a bisection grid with `exceed(c) <= alpha`, where
/// `exceed` is non-increasing in `c`.
pub(crate) fn bisect_constant(alpha: f64, mut hi: f64, exceed: impl Fn(f64) -> f64) -> Result<f64> {
    let mut lo = 0.0;
    let mut grow = 0;
    while exceed(hi) > alpha {
        lo = hi;
        hi *= 2.0;
        grow += 1;
        if grow > 60 {
            return Err(Error::NoConvergence { iterations: grow });
        }
    }
    for _ in 0..MAX_BISECTION {
        if hi - lo <= 1e-10 * hi.max(1.0) {
            return Ok(hi);
        }
        let mid = 0.5 * (lo + hi);
        if exceed(mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NoConvergence { iterations: MAX_BISECTION })
}

/// Calibrate critical values of the given shape so that the null crossing
/// probability equals `alpha`. A single look always returns the central
/// chi-square quantile.
pub fn solve_boundaries(
    schedule: &MonitoringSchedule,
    family: BoundaryFamily,
    method: BoundaryMethod,
    replicates: usize,
    seed: u64,
) -> Result<BoundaryPlan> {
    if schedule.looks() == 1 {
        let b = chi_square_upper_quantile(schedule.df(), schedule.alpha())?;
        return Ok(BoundaryPlan {
            schedule: schedule.clone(),
            family,
            critical_values: vec![b],
            method,
            mc_replicates: 0,
            seed,
            series_terms: None,
            crossing_probabilities: vec![schedule.alpha()],
        });
    }
    match method {
        BoundaryMethod::MonteCarlo => {
            let sample = sample_joint_statistics(schedule, replicates, seed)?;
            sample.solve(schedule, family, seed)
        }
        BoundaryMethod::Series => series::solve_series(schedule, family, DEFAULT_SERIES_TERMS, SeriesNormalization::Standard),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_validation() {
        assert!(MonitoringSchedule::new(vec![0.5, 1.0], 5, 0.05).is_ok());
        assert!(MonitoringSchedule::new(vec![], 5, 0.05).is_err());
        assert!(MonitoringSchedule::new(vec![0.5, 0.9], 5, 0.05).is_err());
        assert!(MonitoringSchedule::new(vec![0.6, 0.5, 1.0], 5, 0.05).is_err());
        assert!(MonitoringSchedule::new(vec![0.0, 1.0], 5, 0.05).is_err());
        assert!(MonitoringSchedule::new(vec![1.0], 0, 0.05).is_err());
        assert!(MonitoringSchedule::new(vec![1.0], 5, 1.0).is_err());
        let s: std::result::Result<MonitoringSchedule, _> =
            serde_json::from_str(r#"{"info_proportions":[0.7,0.5,1.0],"df":5,"alpha":0.05}"#);
        assert!(s.is_err());
    }

    #[test]
    fn correlation_matrix_three_looks() {
        let s = MonitoringSchedule::new(vec![1.0 / 3.0, 2.0 / 3.0, 1.0], 5, 0.05).unwrap();
        let l = look_correlation(&s);
        assert_eq!(l[(0, 0)], 1.0);
        assert!((l[(0, 1)] - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((l[(0, 2)] - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((l[(1, 2)] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(l, l.transpose());
        let one = look_correlation(&MonitoringSchedule::single_look(5, 0.05).unwrap());
        assert_eq!(one.as_slice(), &[1.0]);
    }

    #[test]
    fn family_weights() {
        let s = MonitoringSchedule::new(vec![0.25, 1.0], 5, 0.05).unwrap();
        assert_eq!(BoundaryFamily::Pocock.weights(&s), vec![1.0, 1.0]);
        assert_eq!(BoundaryFamily::OBrienFleming.weights(&s), vec![2.0, 1.0]);
        let s3 = MonitoringSchedule::new(vec![1.0 / 3.0, 2.0 / 3.0, 1.0], 5, 0.05).unwrap();
        let w = BoundaryFamily::OBrienFlemingLookIndex.weights(&s3);
        assert!((w[0] - 3f64.sqrt()).abs() < 1e-15 && (w[1] - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(w[2], 1.0);
    }

    #[test]
    fn look_sizes_round_and_end_at_max() {
        let s = MonitoringSchedule::new(vec![0.7, 1.0], 5, 0.05).unwrap();
        assert_eq!(s.look_sizes(65), vec![46, 65]);
        assert_eq!(s.look_sizes(252), vec![176, 252]);
    }

    #[test]
    fn single_look_is_chi_square_quantile() {
        let s = MonitoringSchedule::single_look(5, 0.05).unwrap();
        for fam in [BoundaryFamily::Pocock, BoundaryFamily::OBrienFleming] {
            let p = solve_boundaries(&s, fam, BoundaryMethod::MonteCarlo, 1000, 1).unwrap();
            assert!((p.critical_values[0] - 11.070_497_693_516_35).abs() < 1e-8);
        }
    }

    #[test]
    fn bisection_finds_step() {
        let c = bisect_constant(0.05, 1.0, |c| if c < 7.25 { 0.1 } else { 0.0 }).unwrap();
        assert!((c - 7.25).abs() < 1e-8);
    }
}
