//! Trial data generation, interim monitoring of one trial, and operating
//! characteristics over many simulated trials.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::BoundaryPlan;
use crate::design::{true_strategy_means, InitialAssignment, PatientRecord, ScenarioSpec, SmartDesign};
use crate::error::{Error, Result};
use crate::estimation::{estimate, inflate_small_sample, StrategyEstimates};
use crate::rng::{derive_seed, domain, substream};
use crate::selection::{critical_constants, select_best_from, Direction, DEFAULT_RESAMPLES};
use crate::wald::{default_contrast, null_degrees_of_freedom, wald_statistic, ContrastMatrix, RankPolicy, WaldResult};

fn categorical(probs: impl Iterator<Item = f64>, u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Generate `n` patients in enrollment order from `rng`.
pub fn simulate_with<R: Rng>(scenario: &ScenarioSpec, n: usize, rng: &mut R) -> Vec<PatientRecord> {
    let d = &scenario.design;
    let s = &scenario.params;
    let control_p = d.control().map(|c| c.probability);
    (0..n)
        .map(|i| {
            let arm = categorical(d.initial_probs().iter().copied().chain(control_p), rng.random());
            let z: f64 = StandardNormal.sample(rng);
            let id = (i + 1).to_string();
            if arm == d.n_initial() {
                let c = s.control.as_ref().expect("validated scenario has control outcome");
                return PatientRecord {
                    id,
                    initial: InitialAssignment::Control,
                    response: None,
                    second_arm: None,
                    outcome: c.mean + c.sd * z,
                };
            }
            let responded = rng.random::<f64>() < s.pi[arm];
            let (second_arm, mean, sd) = if responded {
                if d.rerandomizes_responders() {
                    let k = categorical(d.p().iter().copied(), rng.random());
                    (Some(k), s.mu_ab[arm][k], s.sigma_ab[arm][k])
                } else {
                    (None, s.mu_ab[arm][0], s.sigma_ab[arm][0])
                }
            } else {
                let l = categorical(d.q().iter().copied(), rng.random());
                (Some(l), s.mu_ac[arm][l], s.sigma_ac[arm][l])
            };
            PatientRecord {
                id,
                initial: InitialAssignment::Arm(arm),
                response: Some(responded),
                second_arm,
                outcome: mean + sd * z,
            }
        })
        .collect()
}

/// One simulated trial of `n` patients, reproducible from `seed`.
pub fn simulate_trial(scenario: &ScenarioSpec, n: usize, seed: u64) -> Vec<PatientRecord> {
    simulate_with(scenario, n, &mut substream(seed, domain::TRIAL))
}

/// Settings for post-hoc selection inside simulated trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestSelectSettings {
    pub direction: Direction,
    pub alpha: f64,
    pub resamples: usize,
}

impl BestSelectSettings {
    pub fn new(direction: Direction) -> Self {
        Self { direction, alpha: 0.05, resamples: DEFAULT_RESAMPLES }
    }
}

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub scenario: ScenarioSpec,
    pub plan: BoundaryPlan,
    pub n_max: usize,
    pub replicates: usize,
    pub seed: u64,
    pub inflate: bool,
    pub best_select: Option<BestSelectSettings>,
    pub contrast: ContrastMatrix,
    pub rank_policy: RankPolicy,
}

/// Rank policy that truncates the g-inverse at the design's null rank.
pub fn design_rank_policy(design: &SmartDesign, contrast: &ContrastMatrix) -> RankPolicy {
    RankPolicy::Design(null_degrees_of_freedom(design, contrast))
}

impl SimulationConfig {
    /// Defaults: all-versus-first contrast, design-rank g-inverse,
    /// small-sample inflation on, no post-hoc selection.
    pub fn new(scenario: ScenarioSpec, plan: BoundaryPlan, n_max: usize, replicates: usize, seed: u64) -> Result<Self> {
        let contrast = default_contrast(scenario.design.n_strategies())?;
        let rank_policy = design_rank_policy(&scenario.design, &contrast);
        let c = Self {
            scenario,
            plan,
            n_max,
            replicates,
            seed,
            inflate: true,
            best_select: None,
            contrast,
            rank_policy,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.scenario.design;
        if self.replicates == 0 {
            return Err(Error::InvalidArgument("at least one replicate is required".into()));
        }
        if self.n_max < d.n_strategies() {
            return Err(Error::InvalidArgument(format!(
                "n_max {} is below the strategy count {}",
                self.n_max,
                d.n_strategies()
            )));
        }
        if self.contrast.n_strategies() != d.n_strategies() {
            return Err(Error::DimensionMismatch("contrast does not match the design".into()));
        }
        if self.plan.critical_values.len() != self.plan.schedule.looks() {
            return Err(Error::InvalidArgument("plan has the wrong number of critical values".into()));
        }
        let first = self.plan.schedule.look_sizes(self.n_max)[0];
        if self.inflate && first <= d.parameter_count() {
            return Err(Error::NonPositiveDf { n: first, p: d.parameter_count() });
        }
        if let Some(b) = &self.best_select {
            if !(b.alpha > 0.0 && b.alpha < 1.0) {
                return Err(Error::InvalidArgument("best-select alpha must lie in (0, 1)".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LookDecision {
    Continue,
    Reject,
    DoNotReject,
    /// The statistic could not be computed (a strategy without data or an
    /// arm with fewer than two patients); monitoring continues.
    Skipped,
}

impl std::fmt::Display for LookDecision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LookDecision::Continue => "Continue",
            LookDecision::Reject => "Stop/Reject",
            LookDecision::DoNotReject => "Do not reject",
            LookDecision::Skipped => "Skipped",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookOutcome {
    /// 1-based look number.
    pub look: usize,
    pub n: usize,
    pub statistic: Option<f64>,
    pub df: Option<usize>,
    pub boundary: f64,
    pub decision: LookDecision,
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone)]
pub struct MonitoredTrial {
    pub looks: Vec<LookOutcome>,
    pub rejected: bool,
    pub stopping_n: usize,
    /// Estimates at the look where the trial stopped with a rejection.
    pub stopping_estimates: Option<StrategyEstimates>,
    pub skipped_looks: usize,
}

impl MonitoredTrial {
    /// 1-based index of the last look carried out.
    pub fn stopping_look(&self) -> usize {
        self.looks.len()
    }
}

/// Estimates and Wald statistic on a prefix of the data.
pub fn look_statistic(
    records: &[PatientRecord],
    design: &SmartDesign,
    contrast: &ContrastMatrix,
    policy: RankPolicy,
    inflate: bool,
) -> Result<(StrategyEstimates, WaldResult)> {
    let mut est = estimate(records, design)?;
    if inflate {
        est = inflate_small_sample(&est, design.parameter_count())?;
    }
    let w = wald_statistic(&est, contrast, policy)?;
    Ok((est, w))
}

/// Apply the monitoring plan to `records` in enrollment order. A look
/// rejects when `T(t_m) > b_m`.
pub fn run_monitored_trial(records: &[PatientRecord], config: &SimulationConfig) -> Result<MonitoredTrial> {
    if records.len() < config.n_max {
        return Err(Error::InvalidArgument(format!(
            "{} records for n_max = {}",
            records.len(),
            config.n_max
        )));
    }
    let schedule = &config.plan.schedule;
    let sizes = schedule.look_sizes(config.n_max);
    let m = sizes.len();
    let mut looks = Vec::with_capacity(m);
    let mut skipped = 0;
    for (i, (&n, &b)) in sizes.iter().zip(&config.plan.critical_values).enumerate() {
        let last = i + 1 == m;
        let res = look_statistic(
            &records[..n],
            &config.scenario.design,
            &config.contrast,
            config.rank_policy,
            config.inflate,
        );
        let (est, w) = match res {
            Ok(v) => v,
            Err(e @ (Error::EmptyStrategyCell { .. } | Error::DegenerateVariance { .. })) => {
                skipped += 1;
                looks.push(LookOutcome {
                    look: i + 1,
                    n,
                    statistic: None,
                    df: None,
                    boundary: b,
                    decision: if last { LookDecision::DoNotReject } else { LookDecision::Skipped },
                    diagnostic: Some(e.to_string()),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let reject = w.statistic > b;
        let decision = match (reject, last) {
            (true, _) => LookDecision::Reject,
            (false, true) => LookDecision::DoNotReject,
            (false, false) => LookDecision::Continue,
        };
        looks.push(LookOutcome {
            look: i + 1,
            n,
            statistic: Some(w.statistic),
            df: Some(w.df),
            boundary: b,
            decision,
            diagnostic: None,
        });
        if reject {
            return Ok(MonitoredTrial { looks, rejected: true, stopping_n: n, stopping_estimates: Some(est), skipped_looks: skipped });
        }
    }
    Ok(MonitoredTrial { looks, rejected: false, stopping_n: config.n_max, stopping_estimates: None, skipped_looks: skipped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingCharacteristics {
    pub replicates: usize,
    pub reject_at_look: Vec<f64>,
    pub overall_rejection: f64,
    pub expected_n: f64,
    /// `P(reject and true best set within the selected set)`.
    pub best_select_prob: Option<f64>,
    /// The same event conditional on rejection; absent without rejections.
    pub best_select_conditional: Option<f64>,
    pub true_best: Option<Vec<String>>,
    pub replicates_with_empty_cells: usize,
}

/// Embedded strategies whose true mean is optimal, ties included.
pub fn true_best_set(scenario: &ScenarioSpec, direction: Direction) -> Vec<usize> {
    let e = scenario.design.n_embedded();
    let mu = true_strategy_means(scenario);
    let best = (0..e)
        .map(|i| mu[i])
        .fold(None, |acc: Option<f64>, v| match (acc, direction) {
            (None, _) => Some(v),
            (Some(a), Direction::Maximize) => Some(a.max(v)),
            (Some(a), Direction::Minimize) => Some(a.min(v)),
        })
        .unwrap_or(0.0);
    let tol = 1e-9 * best.abs().max(1.0);
    (0..e).filter(|&i| (mu[i] - best).abs() <= tol).collect()
}

struct ReplicateSummary {
    stopped_at: Option<usize>,
    n: usize,
    best_hit: bool,
    had_skip: bool,
}

fn run_replicate(config: &SimulationConfig, best: &[usize], r: usize) -> Result<ReplicateSummary> {
    let mut rng = substream(config.seed, domain::TRIAL + r as u64);
    let records = simulate_with(&config.scenario, config.n_max, &mut rng);
    let trial = run_monitored_trial(&records, config)?;
    let mut best_hit = false;
    if let (Some(settings), Some(est)) = (&config.best_select, &trial.stopping_estimates) {
        let d = &config.scenario.design;
        let e = d.n_embedded();
        let constants = critical_constants(est, d, settings.alpha, settings.resamples, derive_seed(config.seed, r as u64))?;
        let mu = est.mu_hat.rows(0, e).into_owned();
        let cov = est.sigma_hat.view((0, 0), (e, e)).into_owned();
        let selected = select_best_from(&mu, &cov, &constants, settings.direction);
        best_hit = best.iter().all(|b| selected.contains(b));
    }
    Ok(ReplicateSummary {
        stopped_at: trial.rejected.then(|| trial.stopping_look() - 1),
        n: trial.stopping_n,
        best_hit,
        had_skip: trial.skipped_looks > 0,
    })
}

/// Simulate `config.replicates` independent monitored trials.
pub fn operating_characteristics(config: &SimulationConfig) -> Result<OperatingCharacteristics> {
    config.validate()?;
    let best = config
        .best_select
        .map(|s| true_best_set(&config.scenario, s.direction))
        .unwrap_or_default();
    let runs: Vec<ReplicateSummary> = (0..config.replicates)
        .into_par_iter()
        .map(|r| run_replicate(config, &best, r))
        .collect::<Result<_>>()?;
    let m = config.plan.schedule.looks();
    let reps = config.replicates as f64;
    let mut stops = vec![0usize; m];
    let mut n_sum = 0usize;
    let mut hits = 0usize;
    let mut skips = 0usize;
    for s in &runs {
        if let Some(l) = s.stopped_at {
            stops[l] += 1;
        }
        n_sum += s.n;
        hits += s.best_hit as usize;
        skips += s.had_skip as usize;
    }
    let rejections: usize = stops.iter().sum();
    let labels = config.scenario.design.strategy_labels();
    Ok(OperatingCharacteristics {
        replicates: config.replicates,
        reject_at_look: stops.iter().map(|&c| c as f64 / reps).collect(),
        overall_rejection: rejections as f64 / reps,
        expected_n: n_sum as f64 / reps,
        best_select_prob: config.best_select.map(|_| hits as f64 / reps),
        best_select_conditional: config
            .best_select
            .filter(|_| rejections > 0)
            .map(|_| hits as f64 / rejections as f64),
        true_best: config.best_select.map(|_| best.iter().map(|&i| labels[i].clone()).collect()),
        replicates_with_empty_cells: skips,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::{BoundaryFamily, MonitoringSchedule};
    use crate::design::reference;
    use crate::estimation::ipwn_means;

    fn plan(b: [f64; 2]) -> BoundaryPlan {
        let s = MonitoringSchedule::new(vec![0.5, 1.0], 5, 0.05).unwrap();
        BoundaryPlan::fixed(s, BoundaryFamily::Pocock, b.to_vec()).unwrap()
    }

    #[test]
    fn all_responders_have_no_nonresponder_arm() {
        let s = reference::alternative_scenario([1.0, 1.0], 0.5).unwrap();
        let r = simulate_trial(&s, 2000, 1);
        assert!(r.iter().all(|x| x.response == Some(true)));
    }

    #[test]
    fn large_trial_recovers_parameters() {
        let s = reference::alternative_scenario([0.5, 0.5], 0.5).unwrap();
        let r = simulate_trial(&s, 100_000, 2);
        let a1: Vec<_> = r.iter().filter(|x| x.initial == InitialAssignment::Arm(0)).collect();
        let rate = a1.iter().filter(|x| x.response == Some(true)).count() as f64 / a1.len() as f64;
        assert!((rate - 0.5).abs() < 0.005, "{rate}");
        let mu = ipwn_means(&r, &s.design).unwrap();
        assert!((mu[0] - 17.5).abs() < 0.15, "{}", mu[0]);
        r.iter().for_each(|x| s.design.validate_record(x).unwrap());
    }

    #[test]
    fn same_seed_same_trial() {
        let s = reference::null_scenario([0.3, 0.6], 0.7).unwrap();
        let a = simulate_trial(&s, 50, 4);
        assert_eq!(a, simulate_trial(&s, 50, 4));
        assert_ne!(a, simulate_trial(&s, 50, 5));
    }

    #[test]
    fn infinite_boundaries_never_stop() {
        let s = reference::alternative_scenario([0.5, 0.5], 0.5).unwrap();
        let cfg = SimulationConfig::new(s.clone(), plan([f64::INFINITY; 2]), 200, 1, 0).unwrap();
        let t = run_monitored_trial(&simulate_trial(&s, 200, 3), &cfg).unwrap();
        assert!(!t.rejected);
        assert_eq!(t.looks.len(), 2);
        assert_eq!(t.looks[0].decision, LookDecision::Continue);
        assert_eq!(t.looks[1].decision, LookDecision::DoNotReject);
        assert_eq!(t.stopping_n, 200);
        let oc = operating_characteristics(&SimulationConfig { replicates: 20, ..cfg }).unwrap();
        assert_eq!(oc.overall_rejection, 0.0);
        assert_eq!(oc.expected_n, 200.0);
    }

    #[test]
    fn zero_boundary_stops_at_first_look() {
        let s = reference::alternative_scenario([0.5, 0.5], 0.5).unwrap();
        let cfg = SimulationConfig::new(s.clone(), plan([0.0, 0.0]), 200, 1, 0).unwrap();
        let t = run_monitored_trial(&simulate_trial(&s, 200, 3), &cfg).unwrap();
        assert!(t.rejected);
        assert_eq!(t.stopping_look(), 1);
        assert_eq!(t.stopping_n, 100);
        assert!(t.stopping_estimates.is_some());
    }

    #[test]
    fn empty_interim_cell_continues() {
        let s = reference::alternative_scenario([0.5, 0.5], 0.5).unwrap();
        let mut r = simulate_trial(&s, 200, 8);
        // strip both second-stage paths of A1B2C2 from the first half only
        for x in r[..100].iter_mut() {
            if x.initial == InitialAssignment::Arm(0) && x.second_arm == Some(1) {
                x.second_arm = Some(0);
            }
        }
        let cfg = SimulationConfig::new(s, plan([12.5, 12.5]), 200, 1, 0).unwrap();
        let t = run_monitored_trial(&r, &cfg).unwrap();
        assert_eq!(t.looks[0].decision, LookDecision::Skipped);
        assert!(t.looks[0].diagnostic.as_deref().unwrap().contains("A1B2C2"));
        assert_eq!(t.skipped_looks, 1);
        assert!(t.looks[1].statistic.is_some());
    }

    #[test]
    fn config_validation() {
        let s = reference::null_scenario([0.5, 0.5], 0.5).unwrap();
        assert!(SimulationConfig::new(s.clone(), plan([12.5; 2]), 7, 1, 0).is_err());
        assert!(SimulationConfig::new(s.clone(), plan([12.5; 2]), 40, 1, 0).is_err());
        assert!(SimulationConfig::new(s, plan([12.5; 2]), 100, 0, 0).is_err());
    }

    #[test]
    fn true_best_sets() {
        let alt = reference::alternative_scenario([0.5, 0.5], 0.5).unwrap();
        assert_eq!(true_best_set(&alt, Direction::Maximize), vec![2, 6]);
        let null = reference::null_scenario([0.5, 0.5], 0.5).unwrap();
        assert_eq!(true_best_set(&null, Direction::Minimize).len(), 8);
    }

    #[test]
    fn characteristics_independent_of_pool_size() {
        let s = reference::alternative_scenario([0.5, 0.5], 0.5).unwrap();
        let mut cfg = SimulationConfig::new(s, plan([12.48, 12.48]), 160, 24, 11).unwrap();
        cfg.best_select = Some(BestSelectSettings { resamples: 1000, ..BestSelectSettings::new(Direction::Maximize) });
        let run = |t| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .unwrap()
                .install(|| operating_characteristics(&cfg).unwrap())
        };
        let a = run(1);
        let b = run(3);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert!((a.reject_at_look.iter().sum::<f64>() - a.overall_rejection).abs() < 1e-15);
        assert!(a.expected_n >= 80.0 && a.expected_n <= 160.0);
    }

    #[test]
    fn larger_effects_do_not_lower_power() {
        let s = reference::alternative_scenario([0.5, 0.5], 0.5).unwrap();
        let big = s.scale_effects(reference::NULL_MEAN, 1.5).unwrap();
        let run = |sc: ScenarioSpec| {
            let cfg = SimulationConfig::new(sc, plan([12.48, 12.48]), 120, 300, 3).unwrap();
            operating_characteristics(&cfg).unwrap().overall_rejection
        };
        assert!(run(big) >= run(s));
    }
}
