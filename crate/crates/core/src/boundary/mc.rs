use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{bisect_constant, look_correlation, BoundaryFamily, BoundaryMethod, BoundaryPlan, MonitoringSchedule};
use crate::error::{Error, Result};
use crate::rng::{domain, substream, CHUNK_SIZE};

/// Lower Cholesky factor of the look correlation, row-major.
pub(crate) fn correlation_factor(schedule: &MonitoringSchedule) -> Result<Vec<f64>> {
    let m = schedule.looks();
    let chol = look_correlation(schedule)
        .cholesky()
        .ok_or_else(|| Error::InvalidSchedule("look correlation is not positive definite".into()))?;
    let l: DMatrix<f64> = chol.l();
    Ok((0..m * m).map(|i| l[(i / m, i % m)]).collect())
}

/// One `M`-vector with correlation `L L^T`, written to `out`.
#[inline]
pub(crate) fn correlated_normal<R: Rng>(factor: &[f64], rng: &mut R, z: &mut [f64], out: &mut [f64]) {
    let m = z.len();
    for v in z.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    for i in 0..m {
        let row = &factor[i * m..i * m + i + 1];
        out[i] = row.iter().zip(&z[..=i]).map(|(a, b)| a * b).sum();
    }
}

/// Replicates of `(T(t_1), ..., T(t_M))` under the null, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct JointStatistics {
    looks: usize,
    values: Vec<f64>,
}

/// Monte Carlo estimate of the null first-crossing probability per look.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosureProbability {
    pub per_look: Vec<f64>,
    pub total: f64,
}

/// Draw `replicates` null statistic vectors. Each of the `nu` coordinates is
/// an independent `M`-variate Gaussian with correlation `Lambda`; `T(t_m)`
/// is the sum of squares across coordinates.
pub fn sample_joint_statistics(
    schedule: &MonitoringSchedule,
    replicates: usize,
    seed: u64,
) -> Result<JointStatistics> {
    if replicates == 0 {
        return Err(Error::InvalidArgument("at least one replicate is required".into()));
    }
    let m = schedule.looks();
    let nu = schedule.df();
    let factor = correlation_factor(schedule)?;
    let mut values = vec![0.0; replicates * m];
    values
        .par_chunks_mut(CHUNK_SIZE * m)
        .enumerate()
        .for_each(|(chunk, out)| {
            let mut rng = substream(seed, domain::JOINT_NULL + chunk as u64);
            let mut z = vec![0.0; m];
            let mut x = vec![0.0; m];
            for row in out.chunks_mut(m) {
                for _ in 0..nu {
                    correlated_normal(&factor, &mut rng, &mut z, &mut x);
                    for (t, v) in row.iter_mut().zip(&x) {
                        *t += v * v;
                    }
                }
            }
        });
    Ok(JointStatistics { looks: m, values })
}

impl JointStatistics {
    pub fn looks(&self) -> usize {
        self.looks
    }

    pub fn replicates(&self) -> usize {
        self.values.len() / self.looks
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.looks..(i + 1) * self.looks]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.looks)
    }

    pub fn look(&self, m: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().skip(m).step_by(self.looks).copied()
    }

    /// Fraction of replicates with every `T(t_m) <= x_m`.
    pub fn joint_cdf(&self, x: &[f64]) -> f64 {
        let hits = self
            .rows()
            .filter(|r| r.iter().zip(x).all(|(t, b)| t <= b))
            .count();
        hits as f64 / self.replicates() as f64
    }

    /// Probability of first crossing at each look, a crossing being
    /// `T(t_m) > b_m`.
    pub fn first_crossing(&self, boundaries: &[f64]) -> Result<ClosureProbability> {
        if boundaries.len() != self.looks {
            return Err(Error::DimensionMismatch(format!(
                "{} boundaries for {} looks",
                boundaries.len(),
                self.looks
            )));
        }
        let mut counts = vec![0usize; self.looks];
        for r in self.rows() {
            if let Some(m) = r.iter().zip(boundaries).position(|(t, b)| t > b) {
                counts[m] += 1;
            }
        }
        let n = self.replicates() as f64;
        let per_look: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
        let total = counts.iter().sum::<usize>() as f64 / n;
        Ok(ClosureProbability { per_look, total })
    }

    /// Bisection for the family constant over this cached sample.
    pub fn solve(&self, schedule: &MonitoringSchedule, family: BoundaryFamily, seed: u64) -> Result<BoundaryPlan> {
        if schedule.looks() != self.looks {
            return Err(Error::DimensionMismatch("schedule and sample disagree on looks".into()));
        }
        let w = family.weights(schedule);
        let mut ratio: Vec<f64> = self
            .rows()
            .map(|r| r.iter().zip(&w).map(|(t, w)| t / w).fold(0.0, f64::max))
            .collect();
        ratio.sort_unstable_by(f64::total_cmp);
        let n = ratio.len() as f64;
        let exceed = |c: f64| (ratio.len() - ratio.partition_point(|&r| r <= c)) as f64 / n;
        let start = ratio.last().copied().unwrap_or(1.0).max(1.0);
        let c = bisect_constant(schedule.alpha(), start, exceed)?;
        let critical_values: Vec<f64> = w.iter().map(|w| c * w).collect();
        let closure = self.first_crossing(&critical_values)?;
        Ok(BoundaryPlan {
            schedule: schedule.clone(),
            family,
            critical_values,
            method: BoundaryMethod::MonteCarlo,
            mc_replicates: self.replicates(),
            seed,
            series_terms: None,
            crossing_probabilities: closure.per_look,
        })
    }
}

/// Null first-crossing probabilities of the given boundaries on a fresh
/// seeded sample.
pub fn closure_probability(
    boundaries: &[f64],
    schedule: &MonitoringSchedule,
    replicates: usize,
    seed: u64,
) -> Result<ClosureProbability> {
    sample_joint_statistics(schedule, replicates, seed)?.first_crossing(boundaries)
}
