use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mc::{correlation_factor, correlated_normal};
use super::{BoundaryPlan, MonitoringSchedule};
use crate::error::{Error, Result};
use crate::rng::{domain, substream, CHUNK_SIZE};
use crate::wald::{noncentral_chisq_power, unit_noncentrality, ContrastMatrix};

/// Per-subject noncentrality `theta^T [C Sigma_a C^T]^g theta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectSize {
    pub unit_noncentrality: f64,
}

impl EffectSize {
    pub fn from_contrast(theta: &DVector<f64>, sigma_a: &DMatrix<f64>, contrast: &ContrastMatrix) -> Result<Self> {
        Ok(Self { unit_noncentrality: unit_noncentrality(theta, sigma_a, contrast)? })
    }

    pub fn null() -> Self {
        Self { unit_noncentrality: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequentialPower {
    /// Probability of first crossing at each look.
    pub per_look: Vec<f64>,
    pub total: f64,
    /// `delta_m = t_m * n_max * unit_noncentrality`.
    pub noncentrality: Vec<f64>,
}

/// Stacked Gaussian blocks `Z ~ MN(0, Lambda (x) I_nu)`, laid out
/// replicate, coordinate, look.
struct PowerDraws {
    looks: usize,
    nu: usize,
    z: Vec<f64>,
}

impl PowerDraws {
    fn new(schedule: &MonitoringSchedule, replicates: usize, seed: u64) -> Result<Self> {
        if replicates == 0 {
            return Err(Error::InvalidArgument("at least one replicate is required".into()));
        }
        let (m, nu) = (schedule.looks(), schedule.df());
        let factor = correlation_factor(schedule)?;
        let mut z = vec![0.0; replicates * m * nu];
        z.par_chunks_mut(CHUNK_SIZE * m * nu).enumerate().for_each(|(chunk, out)| {
            let mut rng = substream(seed, domain::SEQUENTIAL_POWER + chunk as u64);
            let mut buf = vec![0.0; m];
            for block in out.chunks_mut(m) {
                correlated_normal(&factor, &mut rng, &mut buf, block);
            }
        });
        Ok(Self { looks: m, nu, z })
    }

    /// First-crossing probabilities with look-`m` mean `means[m] * direction`.
    fn crossing(&self, means: &[f64], direction: &[f64], boundaries: &[f64]) -> (Vec<f64>, f64) {
        let (m, nu) = (self.looks, self.nu);
        let mut counts = vec![0usize; m];
        let mut t = vec![0.0; m];
        for rep in self.z.chunks(m * nu) {
            t.iter_mut().for_each(|v| *v = 0.0);
            for (k, block) in rep.chunks(m).enumerate() {
                for look in 0..m {
                    let x = block[look] + means[look] * direction[k];
                    t[look] += x * x;
                }
            }
            if let Some(first) = t.iter().zip(boundaries).position(|(t, b)| t > b) {
                counts[first] += 1;
            }
        }
        let n = (self.z.len() / (m * nu)) as f64;
        let per_look: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
        let total = counts.iter().sum::<usize>() as f64 / n;
        (per_look, total)
    }

    fn power(&self, schedule: &MonitoringSchedule, boundaries: &[f64], effect: &EffectSize, n_max: usize, direction: &[f64]) -> SequentialPower {
        let delta: Vec<f64> = schedule
            .info_proportions()
            .iter()
            .map(|t| t * n_max as f64 * effect.unit_noncentrality)
            .collect();
        let means: Vec<f64> = delta.iter().map(|d| d.sqrt()).collect();
        let (per_look, total) = self.crossing(&means, direction, boundaries);
        SequentialPower { per_look, total, noncentrality: delta }
    }
}

fn unit_direction(nu: usize) -> Vec<f64> {
    let mut e = vec![0.0; nu];
    e[0] = 1.0;
    e
}

fn check_boundaries(schedule: &MonitoringSchedule, boundaries: &[f64]) -> Result<()> {
    if boundaries.len() != schedule.looks() {
        return Err(Error::DimensionMismatch(format!(
            "{} boundaries for {} looks",
            boundaries.len(),
            schedule.looks()
        )));
    }
    Ok(())
}

/// Monte Carlo power of the monitored Wald test at maximum sample size
/// `n_max`, using the asymptotic joint law with noncentral blocks.
pub fn sequential_power(
    schedule: &MonitoringSchedule,
    boundaries: &[f64],
    effect: &EffectSize,
    n_max: usize,
    replicates: usize,
    seed: u64,
) -> Result<SequentialPower> {
    check_boundaries(schedule, boundaries)?;
    let draws = PowerDraws::new(schedule, replicates, seed)?;
    Ok(draws.power(schedule, boundaries, effect, n_max, &unit_direction(schedule.df())))
}

/// Controls for [`required_sample_size`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSizeSearch {
    /// Candidate sizes are multiples of this (the number of initial arms).
    pub step: usize,
    pub cap: usize,
    pub replicates: usize,
    pub seed: u64,
}

/// Smallest multiple of `search.step` whose power reaches `target_power`.
/// A single-look plan uses the noncentral chi-square law directly; otherwise
/// every candidate is evaluated on one shared set of Gaussian draws.
pub fn required_sample_size(
    plan: &BoundaryPlan,
    effect: &EffectSize,
    target_power: f64,
    search: &SampleSizeSearch,
) -> Result<usize> {
    if !(target_power > 0.0 && target_power < 1.0) {
        return Err(Error::InvalidArgument(format!("target power must lie in (0, 1), got {target_power}")));
    }
    if search.step == 0 {
        return Err(Error::InvalidArgument("sample size step must be positive".into()));
    }
    let schedule = &plan.schedule;
    check_boundaries(schedule, &plan.critical_values)?;
    let df = schedule.df();
    let power: Box<dyn Fn(usize) -> f64> = if schedule.looks() == 1 {
        let b = plan.critical_values[0];
        let u = effect.unit_noncentrality;
        Box::new(move |n| noncentral_chisq_power(n as f64 * u, df, b))
    } else {
        let draws = PowerDraws::new(schedule, search.replicates, search.seed)?;
        let e = unit_direction(df);
        let b = plan.critical_values.clone();
        let s = schedule.clone();
        let eff = *effect;
        Box::new(move |n| draws.power(&s, &b, &eff, n, &e).total)
    };
    let step = search.step;
    let mut lo = 0usize;
    let mut hi = step;
    while power(hi) < target_power {
        lo = hi;
        hi *= 2;
        if hi > search.cap {
            hi = search.cap / step * step;
            if hi <= lo || power(hi) < target_power {
                return Err(Error::NotAchievable { cap: search.cap });
            }
        }
    }
    while hi - lo > step {
        let mid = (lo + hi) / 2 / step * step;
        let mid = if mid <= lo { lo + step } else { mid };
        if power(mid) >= target_power {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    while hi > step && power(hi - step) >= target_power {
        hi -= step;
    }
    Ok(hi)
}
