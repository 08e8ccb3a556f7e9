//! Inverse-probability-weight-normalized (IPWN) strategy means and their
//! covariance.
//!
//! Randomization probabilities are the known design values. The empirical
//! arm sizes `n_j` enter only through the robust covariance denominators.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::design::{
    asymptotic_covariance, CovarianceInputs, ControlOutcome, InitialAssignment, PatientRecord,
    ScenarioParams, SmartDesign,
};
use crate::error::{Error, Result};

/// Strategy-mean estimates with `sigma_hat = cov(mu_hat)`, i.e. already
/// divided by `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyEstimates {
    pub mu_hat: DVector<f64>,
    pub sigma_hat: DMatrix<f64>,
    pub n_total: usize,
    pub n_per_initial_arm: Vec<usize>,
    pub n_control: Option<usize>,
    pub inflated: bool,
}

impl StrategyEstimates {
    pub fn variances(&self) -> Vec<f64> {
        self.sigma_hat.diagonal().iter().copied().collect()
    }
}

/// Per-arm cell totals; the IPW weight is constant within a cell, so both
/// the estimator and its variance reduce to cell sums.
struct CellSums {
    resp_sum: Vec<Vec<f64>>,
    resp_n: Vec<Vec<usize>>,
    nonresp_sum: Vec<Vec<f64>>,
    nonresp_n: Vec<Vec<usize>>,
    arm_n: Vec<usize>,
    control: Vec<f64>,
}

impl CellSums {
    fn collect(records: &[PatientRecord], design: &SmartDesign) -> Result<Self> {
        let (j, k, l) = (design.n_initial(), design.n_responder(), design.n_nonresponder());
        let mut c = CellSums {
            resp_sum: vec![vec![0.0; k]; j],
            resp_n: vec![vec![0; k]; j],
            nonresp_sum: vec![vec![0.0; l]; j],
            nonresp_n: vec![vec![0; l]; j],
            arm_n: vec![0; j],
            control: Vec::new(),
        };
        for r in records {
            design.validate_record(r)?;
            match (r.initial, r.response) {
                (InitialAssignment::Control, _) => c.control.push(r.outcome),
                (InitialAssignment::Arm(a), Some(true)) => {
                    let b = r.second_arm.unwrap_or(0);
                    c.arm_n[a] += 1;
                    c.resp_sum[a][b] += r.outcome;
                    c.resp_n[a][b] += 1;
                }
                (InitialAssignment::Arm(a), _) => {
                    let b = r.second_arm.unwrap_or(0);
                    c.arm_n[a] += 1;
                    c.nonresp_sum[a][b] += r.outcome;
                    c.nonresp_n[a][b] += 1;
                }
            }
        }
        Ok(c)
    }
}

fn empty_cell(design: &SmartDesign, s: usize) -> Error {
    Error::EmptyStrategyCell {
        strategy: design.strategies()[s].label.clone(),
    }
}

/// IPWN estimates of every strategy mean; the control arm (if any) gets its
/// sample mean.
pub fn ipwn_means(records: &[PatientRecord], design: &SmartDesign) -> Result<DVector<f64>> {
    let cells = CellSums::collect(records, design)?;
    means_from_cells(&cells, design)
}

fn means_from_cells(c: &CellSums, design: &SmartDesign) -> Result<DVector<f64>> {
    let mut mu = DVector::zeros(design.n_strategies());
    let (p, q) = (design.p(), design.q());
    for j in 0..design.n_initial() {
        for k in 0..design.n_responder() {
            for l in 0..design.n_nonresponder() {
                let s = design.strategy_index(j, k, l);
                let num = c.resp_sum[j][k] / p[k] + c.nonresp_sum[j][l] / q[l];
                let den = c.resp_n[j][k] as f64 / p[k] + c.nonresp_n[j][l] as f64 / q[l];
                if den == 0.0 {
                    return Err(empty_cell(design, s));
                }
                mu[s] = num / den;
            }
        }
    }
    if let Some(idx) = design.control_index() {
        if c.control.is_empty() {
            return Err(empty_cell(design, idx));
        }
        mu[idx] = c.control.iter().sum::<f64>() / c.control.len() as f64;
    }
    Ok(mu)
}

/// Robust sandwich covariance of the IPWN means: diagonal scaled by
/// `1 / (n_j (n_j - 1))`, shared-path covariances by `1 / n_j^2`, and exact
/// zeros across initial arms and between strategies that share no
/// second-stage arm.
pub fn robust_covariance(
    records: &[PatientRecord],
    design: &SmartDesign,
    mu_hat: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let n = design.n_strategies();
    if mu_hat.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "mu_hat has {} entries, design has {n} strategies",
            mu_hat.len()
        )));
    }
    let (kk, ll) = (design.n_responder(), design.n_nonresponder());
    let mut acc = DMatrix::<f64>::zeros(n, n);
    let mut arm_n = vec![0usize; design.n_initial()];
    let mut control = Vec::new();
    // (strategy, weighted residual) pairs touched by one record
    let mut touched: Vec<(usize, f64)> = Vec::with_capacity(kk.max(ll));
    for r in records {
        design.validate_record(r)?;
        touched.clear();
        match (r.initial, r.response) {
            (InitialAssignment::Control, _) => {
                control.push(r.outcome);
                continue;
            }
            (InitialAssignment::Arm(j), Some(true)) => {
                arm_n[j] += 1;
                let k = r.second_arm.unwrap_or(0);
                let w = 1.0 / design.p()[k];
                for l in 0..ll {
                    let s = design.strategy_index(j, k, l);
                    touched.push((s, w * (r.outcome - mu_hat[s])));
                }
            }
            (InitialAssignment::Arm(j), _) => {
                arm_n[j] += 1;
                let l = r.second_arm.unwrap_or(0);
                let w = 1.0 / design.q()[l];
                for k in 0..kk {
                    let s = design.strategy_index(j, k, l);
                    touched.push((s, w * (r.outcome - mu_hat[s])));
                }
            }
        }
        for &(s, es) in &touched {
            for &(t, et) in &touched {
                acc[(s, t)] += es * et;
            }
        }
    }
    for (j, &nj) in arm_n.iter().enumerate() {
        if nj < 2 {
            return Err(Error::DegenerateVariance {
                arm: design.initial_arms()[j].clone(),
                count: nj,
            });
        }
    }
    let mut sigma = DMatrix::zeros(n, n);
    for s in 0..design.n_embedded() {
        let js = design.strategies()[s].initial().unwrap_or(0);
        let nj = arm_n[js] as f64;
        for t in 0..design.n_embedded() {
            if acc[(s, t)] == 0.0 {
                continue;
            }
            sigma[(s, t)] = if s == t {
                acc[(s, t)] / (nj * (nj - 1.0))
            } else {
                acc[(s, t)] / (nj * nj)
            };
        }
    }
    if let (Some(idx), Some(c)) = (design.control_index(), design.control()) {
        let nc = control.len();
        if nc < 2 {
            return Err(Error::DegenerateVariance {
                arm: c.label.clone(),
                count: nc,
            });
        }
        let mean = control.iter().sum::<f64>() / nc as f64;
        let var = control.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (nc as f64 - 1.0);
        sigma[(idx, idx)] = var / nc as f64;
    }
    Ok(sigma)
}

/// IPWN means plus robust covariance in one pass over the design checks.
pub fn estimate(records: &[PatientRecord], design: &SmartDesign) -> Result<StrategyEstimates> {
    let cells = CellSums::collect(records, design)?;
    let mu_hat = means_from_cells(&cells, design)?;
    let sigma_hat = robust_covariance(records, design, &mu_hat)?;
    Ok(StrategyEstimates {
        mu_hat,
        sigma_hat,
        n_total: records.len(),
        n_per_initial_arm: cells.arm_n,
        n_control: design.control().map(|_| cells.control.len()),
        inflated: false,
    })
}

/// Covariance from the closed form with plug-in components.
#[derive(Debug, Clone, PartialEq)]
pub struct PluginCovariance {
    /// n-scaled covariance; divide by `n` for `cov(mu_hat)`.
    pub sigma: DMatrix<f64>,
    /// Initial arms whose response rate sits at 0 or 1.
    pub boundary_response_rates: Vec<usize>,
}

/// Closed-form asymptotic covariance evaluated at estimated components.
/// Response rates of exactly 0 or 1 are reported, not rejected.
pub fn plugin_asymptotic_covariance(
    components: &ScenarioParams,
    design: &SmartDesign,
) -> Result<PluginCovariance> {
    let (j, k, l) = (design.n_initial(), design.n_responder(), design.n_nonresponder());
    let shape_ok = |m: &Vec<Vec<f64>>, c: usize| m.len() == j && m.iter().all(|r| r.len() == c);
    if components.pi.len() != j
        || !shape_ok(&components.mu_ab, k)
        || !shape_ok(&components.sigma_ab, k)
        || !shape_ok(&components.mu_ac, l)
        || !shape_ok(&components.sigma_ac, l)
    {
        return Err(Error::DimensionMismatch(
            "plug-in components do not match the design".into(),
        ));
    }
    let finite = components
        .pi
        .iter()
        .chain(components.mu_ab.iter().flatten())
        .chain(components.mu_ac.iter().flatten())
        .chain(components.sigma_ab.iter().flatten())
        .chain(components.sigma_ac.iter().flatten())
        .all(|v| v.is_finite());
    if !finite {
        return Err(Error::InvalidArgument("plug-in components must be finite".into()));
    }
    let boundary: Vec<usize> = components
        .pi
        .iter()
        .enumerate()
        .filter(|(_, &p)| p <= 0.0 || p >= 1.0)
        .map(|(i, _)| i)
        .collect();
    for &arm in &boundary {
        warn!(
            "estimated response rate {} on arm {} lies on the boundary",
            components.pi[arm],
            design.initial_arms()[arm]
        );
    }
    let sq = |m: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        m.iter().map(|r| r.iter().map(|v| v * v).collect()).collect()
    };
    let sigma = asymptotic_covariance(
        design,
        &CovarianceInputs {
            pi: &components.pi,
            mu_ab: &components.mu_ab,
            mu_ac: &components.mu_ac,
            var_ab: &sq(&components.sigma_ab),
            var_ac: &sq(&components.sigma_ac),
            control_var: components.control.map(|c| c.sd * c.sd),
        },
    );
    Ok(PluginCovariance {
        sigma,
        boundary_response_rates: boundary,
    })
}

/// Empirical response rates, cell means and cell SDs for the plug-in
/// covariance.
pub fn plugin_components(records: &[PatientRecord], design: &SmartDesign) -> Result<ScenarioParams> {
    let (jn, kn, ln) = (design.n_initial(), design.n_responder(), design.n_nonresponder());
    let mut resp: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); kn]; jn];
    let mut nonresp: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); ln]; jn];
    let mut control = Vec::new();
    for r in records {
        design.validate_record(r)?;
        match (r.initial, r.response) {
            (InitialAssignment::Control, _) => control.push(r.outcome),
            (InitialAssignment::Arm(j), Some(true)) => resp[j][r.second_arm.unwrap_or(0)].push(r.outcome),
            (InitialAssignment::Arm(j), _) => nonresp[j][r.second_arm.unwrap_or(0)].push(r.outcome),
        }
    }
    let moments = |ys: &[f64], cell: String| -> Result<(f64, f64)> {
        if ys.len() < 2 {
            return Err(Error::DegenerateVariance {
                arm: cell,
                count: ys.len(),
            });
        }
        let n = ys.len() as f64;
        let m = ys.iter().sum::<f64>() / n;
        let v = ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / (n - 1.0);
        Ok((m, v.sqrt()))
    };
    let mut out = ScenarioParams {
        pi: vec![0.0; jn],
        mu_ab: vec![vec![0.0; kn]; jn],
        mu_ac: vec![vec![0.0; ln]; jn],
        sigma_ab: vec![vec![0.0; kn]; jn],
        sigma_ac: vec![vec![0.0; ln]; jn],
        control: None,
    };
    for j in 0..jn {
        let nr: usize = resp[j].iter().map(Vec::len).sum();
        let nn: usize = nonresp[j].iter().map(Vec::len).sum();
        out.pi[j] = nr as f64 / (nr + nn).max(1) as f64;
        let a = &design.initial_arms()[j];
        for k in 0..kn {
            let label = format!("{a}/{}", design.responder_arms()[k]);
            (out.mu_ab[j][k], out.sigma_ab[j][k]) = moments(&resp[j][k], label)?;
        }
        for l in 0..ln {
            let label = format!("{a}/{}", design.nonresponder_arms()[l]);
            (out.mu_ac[j][l], out.sigma_ac[j][l]) = moments(&nonresp[j][l], label)?;
        }
    }
    if let Some(c) = design.control() {
        let (mean, sd) = moments(&control, c.label.clone())?;
        out.control = Some(ControlOutcome { mean, sd });
    }
    Ok(out)
}

/// Multiply the covariance by `n / (n - p)`. Applying it twice is an error.
pub fn inflate_small_sample(estimates: &StrategyEstimates, p_params: usize) -> Result<StrategyEstimates> {
    if estimates.inflated {
        return Err(Error::AlreadyInflated);
    }
    let n = estimates.n_total;
    if n <= p_params {
        return Err(Error::NonPositiveDf { n, p: p_params });
    }
    let factor = n as f64 / (n - p_params) as f64;
    Ok(StrategyEstimates {
        sigma_hat: &estimates.sigma_hat * factor,
        inflated: true,
        ..estimates.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{reference, true_covariance};
    use crate::simulate::simulate_trial;

    fn rec(id: &str, j: usize, r: bool, b: usize, y: f64) -> PatientRecord {
        PatientRecord {
            id: id.into(),
            initial: InitialAssignment::Arm(j),
            response: Some(r),
            second_arm: Some(b),
            outcome: y,
        }
    }

    /// Toy set: A1 only, so restrict to a one-initial-arm design.
    fn toy() -> (SmartDesign, Vec<PatientRecord>) {
        let mut spec: crate::design::DesignSpec =
            SmartDesign::two_by_two_by_two(0.5, 0.5).unwrap().into();
        spec.initial_arms = vec!["A1".into()];
        spec.initial_probs = vec![1.0];
        let d = SmartDesign::new(spec).unwrap();
        let r = vec![
            rec("1", 0, true, 0, 10.0),
            rec("2", 0, false, 0, 20.0),
            rec("3", 0, true, 1, 12.0),
            rec("4", 0, false, 1, 8.0),
        ];
        (d, r)
    }

    // Expected values below are hand-evaluated per record; each patient has
    // weight 1/0.5 = 2 in the strategies consistent with its path.
    #[test]
    fn toy_means_match_hand_evaluation() {
        let (d, r) = toy();
        let mu = ipwn_means(&r, &d).unwrap();
        // strategy (B1, C1): patients 1 and 2, both weight 2
        assert!((mu[0] - 15.0).abs() < 1e-12);
        // (B1, C2): patients 1 and 4
        assert!((mu[1] - 9.0).abs() < 1e-12);
        // (B2, C1): patients 3 and 2
        assert!((mu[2] - 16.0).abs() < 1e-12);
        // (B2, C2): patients 3 and 4
        assert!((mu[3] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn toy_covariance_matches_hand_evaluation() {
        let (d, r) = toy();
        let mu = ipwn_means(&r, &d).unwrap();
        let s = robust_covariance(&r, &d, &mu).unwrap();
        // residuals*weight: s0: p1 2(10-15)=-10, p2 2(20-15)=10 -> 200/(4*3)
        assert!((s[(0, 0)] - 200.0 / 12.0).abs() < 1e-12);
        // s1: p1 2(10-9)=2, p4 2(8-9)=-2 -> 8/12
        assert!((s[(1, 1)] - 8.0 / 12.0).abs() < 1e-12);
        // s2: p3 2(12-16)=-8, p2 2(20-16)=8 -> 128/12
        assert!((s[(2, 2)] - 128.0 / 12.0).abs() < 1e-12);
        // s3: p3 2(12-10)=4, p4 2(8-10)=-4 -> 32/12
        assert!((s[(3, 3)] - 32.0 / 12.0).abs() < 1e-12);
        // (s0, s1) share patient 1: (-10)(2) / 16
        assert!((s[(0, 1)] + 20.0 / 16.0).abs() < 1e-12);
        // (s0, s2) share patient 2: (10)(8) / 16
        assert!((s[(0, 2)] - 80.0 / 16.0).abs() < 1e-12);
        assert_eq!(s[(0, 3)], 0.0);
        assert_eq!(s[(1, 2)], 0.0);
    }

    #[test]
    fn constant_outcomes() {
        let s = reference::alternative_scenario([0.5, 0.5], 0.5).unwrap();
        let mut r = simulate_trial(&s, 200, 3);
        for x in &mut r {
            x.outcome = 7.3;
        }
        let e = estimate(&r, &s.design).unwrap();
        assert!(e.mu_hat.iter().all(|&m| (m - 7.3).abs() < 1e-12));
        assert!(e.sigma_hat.iter().all(|&v| v.abs() < 1e-20));
    }

    #[test]
    fn cross_arm_entries_exactly_zero() {
        let s = reference::alternative_scenario([0.5, 0.5], 0.5).unwrap();
        let r = simulate_trial(&s, 300, 9);
        let e = estimate(&r, &s.design).unwrap();
        for a in 0..4 {
            for b in 4..8 {
                assert_eq!(e.sigma_hat[(a, b)].to_bits(), 0.0f64.to_bits());
            }
        }
        // (j1l, j2l') with l != l'
        assert_eq!(e.sigma_hat[(0, 3)], 0.0);
        assert_eq!(e.sigma_hat[(1, 2)], 0.0);
        assert_eq!(e.sigma_hat, e.sigma_hat.transpose());
    }

    #[test]
    fn empty_cell_named() {
        let (d, mut r) = toy();
        r.retain(|x| !(x.response == Some(true) && x.second_arm == Some(1)));
        r.retain(|x| !(x.response == Some(false) && x.second_arm == Some(1)));
        match ipwn_means(&r, &d) {
            Err(Error::EmptyStrategyCell { strategy }) => assert_eq!(strategy, "A1B2C2"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn degenerate_variance() {
        let (d, r) = toy();
        let mu = ipwn_means(&r, &d).unwrap();
        let one = &r[..1];
        assert!(matches!(
            robust_covariance(one, &d, &mu),
            Err(Error::DegenerateVariance { count: 1, .. })
        ));
    }

    #[test]
    fn inflation() {
        let s = reference::null_scenario([0.5, 0.5], 0.5).unwrap();
        let r = simulate_trial(&s, 252, 1);
        let e = estimate(&r, &s.design).unwrap();
        let inf = inflate_small_sample(&e, 21).unwrap();
        let factor = 252.0 / 231.0;
        for (a, b) in inf.sigma_hat.iter().zip(e.sigma_hat.iter()) {
            assert!((a - b * factor).abs() <= 1e-15 * b.abs().max(1.0));
        }
        assert!(matches!(inflate_small_sample(&inf, 21), Err(Error::AlreadyInflated)));
        let small = StrategyEstimates { n_total: 21, ..e };
        assert!(matches!(
            inflate_small_sample(&small, 21),
            Err(Error::NonPositiveDf { n: 21, p: 21 })
        ));
    }

    #[test]
    fn plugin_with_all_responders_reduces() {
        let s = reference::alternative_scenario([1.0, 1.0], 0.5).unwrap();
        let pc = plugin_asymptotic_covariance(&s.params, &s.design).unwrap();
        assert_eq!(pc.boundary_response_rates, vec![0, 1]);
        // kappa * sigma_AB^2 / p = 2 * 144 / 0.5
        assert!((pc.sigma[(0, 0)] - 576.0).abs() < 1e-9);
    }

    #[test]
    fn plugin_matches_true_covariance() {
        let s = reference::alternative_scenario([0.3, 0.8], 0.7).unwrap();
        let pc = plugin_asymptotic_covariance(&s.params, &s.design).unwrap();
        let truth = true_covariance(&s);
        assert!((pc.sigma - truth).amax() < 1e-12);
    }

    #[test]
    fn plugin_components_recover_scenario() {
        let s = reference::alternative_scenario([0.5, 0.5], 0.5).unwrap();
        let r = simulate_trial(&s, 40_000, 5);
        let c = plugin_components(&r, &s.design).unwrap();
        assert!((c.pi[0] - 0.5).abs() < 0.02);
        assert!((c.mu_ab[1][1] - 22.0).abs() < 0.5);
        assert!((c.sigma_ac[0][0] - 10.0).abs() < 0.5);
    }
}
