//! Two-stage SMART designs, embedded strategies, patient records and
//! generative scenarios.
//!
//! Strategies are always ordered lexicographically by
//! `(initial, responder, nonresponder)` with a stand-alone control arm, when
//! present, appended last. Every vector and matrix indexed by strategy in
//! this crate follows that order.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PROB_TOL: f64 = 1e-9;

/// Stand-alone arm that is neither assessed for response nor re-randomized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlArm {
    pub label: String,
    /// First-stage randomization probability of the control arm.
    pub probability: f64,
}

/// Serialized form of a [`SmartDesign`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub initial_arms: Vec<String>,
    /// First-stage randomization probabilities (the inverses of kappa_j).
    pub initial_probs: Vec<f64>,
    /// Responder arms; leave empty when responders are not re-randomized.
    #[serde(default)]
    pub responder_arms: Vec<String>,
    #[serde(default)]
    pub p: Vec<f64>,
    pub nonresponder_arms: Vec<String>,
    pub q: Vec<f64>,
    #[serde(default = "default_true")]
    pub rerandomize_responders: bool,
    /// Joins arm labels into strategy labels ("" gives `A1B1C1`).
    #[serde(default)]
    pub label_separator: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<ControlArm>,
}

fn default_true() -> bool {
    true
}

/// A validated two-stage SMART design.
///
/// Designs whose responders are not re-randomized are stored with a single
/// implicit responder arm and `p = [1]`, so the estimator formulas need no
/// special case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DesignSpec", into = "DesignSpec")]
pub struct SmartDesign {
    initial_arms: Vec<String>,
    initial_probs: Vec<f64>,
    responder_arms: Vec<String>,
    p: Vec<f64>,
    nonresponder_arms: Vec<String>,
    q: Vec<f64>,
    rerandomize_responders: bool,
    label_separator: String,
    control: Option<ControlArm>,
    strategies: Vec<Strategy>,
}

/// Treatment path that defines a strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StrategyPath {
    Embedded {
        initial: usize,
        responder: usize,
        nonresponder: usize,
    },
    Control,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Strategy {
    pub path: StrategyPath,
    pub label: String,
}

impl Strategy {
    pub fn initial(&self) -> Option<usize> {
        match self.path {
            StrategyPath::Embedded { initial, .. } => Some(initial),
            StrategyPath::Control => None,
        }
    }

    pub fn is_control(&self) -> bool {
        matches!(self.path, StrategyPath::Control)
    }
}

fn check_probs(name: &str, probs: &[f64], extra: f64) -> Result<()> {
    for &v in probs {
        if !(v > 0.0 && v <= 1.0) {
            return Err(Error::InvalidDesign(format!(
                "{name} probability {v} outside (0, 1]"
            )));
        }
    }
    let total: f64 = probs.iter().sum::<f64>() + extra;
    if (total - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidDesign(format!(
            "{name} probabilities sum to {total}, expected 1"
        )));
    }
    Ok(())
}

fn check_labels(name: &str, labels: &[String]) -> Result<()> {
    for (i, a) in labels.iter().enumerate() {
        if a.trim().is_empty() {
            return Err(Error::InvalidDesign(format!("empty {name} label")));
        }
        if labels[..i].contains(a) {
            return Err(Error::InvalidDesign(format!("duplicate {name} label {a}")));
        }
    }
    Ok(())
}

impl TryFrom<DesignSpec> for SmartDesign {
    type Error = Error;

    fn try_from(spec: DesignSpec) -> Result<Self> {
        let DesignSpec {
            initial_arms,
            initial_probs,
            mut responder_arms,
            mut p,
            nonresponder_arms,
            q,
            rerandomize_responders,
            label_separator,
            control,
        } = spec;

        if initial_arms.is_empty() || nonresponder_arms.is_empty() {
            return Err(Error::InvalidDesign(
                "at least one initial and one non-responder arm required".into(),
            ));
        }
        if initial_arms.len() != initial_probs.len() {
            return Err(Error::InvalidDesign(
                "initial_arms and initial_probs differ in length".into(),
            ));
        }
        if nonresponder_arms.len() != q.len() {
            return Err(Error::InvalidDesign(
                "nonresponder_arms and q differ in length".into(),
            ));
        }
        if rerandomize_responders {
            if responder_arms.is_empty() || responder_arms.len() != p.len() {
                return Err(Error::InvalidDesign(
                    "responder_arms and p must be non-empty and of equal length".into(),
                ));
            }
            check_labels("responder", &responder_arms)?;
            check_probs("p", &p, 0.0)?;
        } else {
            if responder_arms.len() > 1 || p.len() > 1 || p.first().is_some_and(|&v| v != 1.0) {
                return Err(Error::InvalidDesign(
                    "responders that are not re-randomized take a single arm with p = 1".into(),
                ));
            }
            responder_arms = vec![responder_arms.pop().unwrap_or_default()];
            p = vec![1.0];
        }
        check_labels("initial", &initial_arms)?;
        check_labels("non-responder", &nonresponder_arms)?;
        let control_prob = control.as_ref().map_or(0.0, |c| c.probability);
        if let Some(c) = &control {
            if !(c.probability > 0.0 && c.probability < 1.0) {
                return Err(Error::InvalidDesign(format!(
                    "control probability {} outside (0, 1)",
                    c.probability
                )));
            }
            if c.label.trim().is_empty() || initial_arms.contains(&c.label) {
                return Err(Error::InvalidDesign(format!(
                    "control label {:?} is empty or clashes with an initial arm",
                    c.label
                )));
            }
        }
        check_probs("initial", &initial_probs, control_prob)?;
        check_probs("q", &q, 0.0)?;

        let mut design = SmartDesign {
            initial_arms,
            initial_probs,
            responder_arms,
            p,
            nonresponder_arms,
            q,
            rerandomize_responders,
            label_separator,
            control,
            strategies: Vec::new(),
        };
        design.strategies = design.build_strategies();
        Ok(design)
    }
}

impl From<SmartDesign> for DesignSpec {
    fn from(d: SmartDesign) -> Self {
        let (responder_arms, p) = if d.rerandomize_responders {
            (d.responder_arms, d.p)
        } else {
            (Vec::new(), Vec::new())
        };
        DesignSpec {
            initial_arms: d.initial_arms,
            initial_probs: d.initial_probs,
            responder_arms,
            p,
            nonresponder_arms: d.nonresponder_arms,
            q: d.q,
            rerandomize_responders: d.rerandomize_responders,
            label_separator: d.label_separator,
            control: d.control,
        }
    }
}

impl SmartDesign {
    pub fn new(spec: DesignSpec) -> Result<Self> {
        spec.try_into()
    }

    /// The 2x2x2 design with equal first-stage randomization, responders
    /// re-randomized to `B1` with probability `p1` and non-responders to `C1`
    /// with probability `q1`.
    pub fn two_by_two_by_two(p1: f64, q1: f64) -> Result<Self> {
        Self::new(DesignSpec {
            initial_arms: vec!["A1".into(), "A2".into()],
            initial_probs: vec![0.5, 0.5],
            responder_arms: vec!["B1".into(), "B2".into()],
            p: vec![p1, 1.0 - p1],
            nonresponder_arms: vec!["C1".into(), "C2".into()],
            q: vec![q1, 1.0 - q1],
            rerandomize_responders: true,
            label_separator: String::new(),
            control: None,
        })
    }

    fn build_strategies(&self) -> Vec<Strategy> {
        let mut out = Vec::with_capacity(self.n_strategies());
        for (j, a) in self.initial_arms.iter().enumerate() {
            for (k, b) in self.responder_arms.iter().enumerate() {
                for (l, c) in self.nonresponder_arms.iter().enumerate() {
                    let mut parts = vec![a.as_str()];
                    if self.rerandomize_responders {
                        parts.push(b.as_str());
                    }
                    parts.push(c.as_str());
                    out.push(Strategy {
                        path: StrategyPath::Embedded {
                            initial: j,
                            responder: k,
                            nonresponder: l,
                        },
                        label: parts.join(&self.label_separator),
                    });
                }
            }
        }
        if let Some(c) = &self.control {
            out.push(Strategy {
                path: StrategyPath::Control,
                label: c.label.clone(),
            });
        }
        out
    }

    pub fn n_initial(&self) -> usize {
        self.initial_arms.len()
    }

    pub fn n_responder(&self) -> usize {
        self.responder_arms.len()
    }

    pub fn n_nonresponder(&self) -> usize {
        self.nonresponder_arms.len()
    }

    /// Strategies excluding the control arm.
    pub fn n_embedded(&self) -> usize {
        self.n_initial() * self.n_responder() * self.n_nonresponder()
    }

    pub fn n_strategies(&self) -> usize {
        self.n_embedded() + usize::from(self.control.is_some())
    }

    pub fn initial_arms(&self) -> &[String] {
        &self.initial_arms
    }

    pub fn responder_arms(&self) -> &[String] {
        &self.responder_arms
    }

    pub fn nonresponder_arms(&self) -> &[String] {
        &self.nonresponder_arms
    }

    pub fn initial_probs(&self) -> &[f64] {
        &self.initial_probs
    }

    /// Inverse of the first-stage randomization probability of arm `j`.
    pub fn kappa(&self, j: usize) -> f64 {
        1.0 / self.initial_probs[j]
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn rerandomizes_responders(&self) -> bool {
        self.rerandomize_responders
    }

    pub fn control(&self) -> Option<&ControlArm> {
        self.control.as_ref()
    }

    pub fn strategies(&self) -> &[Strategy] {
        &self.strategies
    }

    /// Index of the embedded strategy `(j, k, l)`.
    pub fn strategy_index(&self, j: usize, k: usize, l: usize) -> usize {
        (j * self.n_responder() + k) * self.n_nonresponder() + l
    }

    pub fn control_index(&self) -> Option<usize> {
        self.control.as_ref().map(|_| self.n_embedded())
    }

    pub fn strategy_labels(&self) -> Vec<String> {
        self.strategies.iter().map(|s| s.label.clone()).collect()
    }

    /// Check a record against the design.
    pub fn validate_record(&self, r: &PatientRecord) -> Result<()> {
        let bad = |reason: String| Error::InvalidRecord {
            id: r.id.clone(),
            reason,
        };
        if !r.outcome.is_finite() {
            return Err(bad(format!("outcome {} is not finite", r.outcome)));
        }
        match r.initial {
            InitialAssignment::Control => {
                if self.control.is_none() {
                    return Err(bad("control-arm record but the design has no control arm".into()));
                }
                if r.response.is_some() || r.second_arm.is_some() {
                    return Err(bad("control-arm records carry no response or second arm".into()));
                }
            }
            InitialAssignment::Arm(j) => {
                if j >= self.n_initial() {
                    return Err(bad(format!("initial arm index {j} out of range")));
                }
                match (r.response, r.second_arm) {
                    (None, _) => return Err(bad("missing intermediate response".into())),
                    (Some(true), second) => {
                        if self.rerandomize_responders {
                            match second {
                                Some(k) if k < self.n_responder() => {}
                                Some(k) => {
                                    return Err(bad(format!("responder arm index {k} out of range")))
                                }
                                None => return Err(bad("responder without a second-stage arm".into())),
                            }
                        } else if second.is_some() {
                            return Err(bad(
                                "responders are not re-randomized in this design".into(),
                            ));
                        }
                    }
                    (Some(false), Some(l)) if l < self.n_nonresponder() => {}
                    (Some(false), Some(l)) => {
                        return Err(bad(format!("non-responder arm index {l} out of range")))
                    }
                    (Some(false), None) => {
                        return Err(bad("non-responder without a second-stage arm".into()))
                    }
                }
            }
        }
        Ok(())
    }

    /// Parameter count `p` for the `n / (n - p)` variance inflation: one per
    /// free randomization probability, one response rate per initial arm,
    /// and a mean and a standard deviation per stage-two cell (plus the
    /// control arm's mean and SD).
    pub fn parameter_count(&self) -> usize {
        let free_initial = self.n_initial() + usize::from(self.control.is_some()) - 1;
        let free_second = (self.n_responder() - 1) + (self.n_nonresponder() - 1);
        let cells = 2 * self.n_initial() * (self.n_responder() + self.n_nonresponder());
        let control = if self.control.is_some() { 2 } else { 0 };
        free_initial + free_second + self.n_initial() + cells + control
    }
}

/// First-stage assignment of a patient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitialAssignment {
    Arm(usize),
    Control,
}

/// One patient's observed treatment path and outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    pub initial: InitialAssignment,
    pub response: Option<bool>,
    /// Responder-arm index when `response` is true, non-responder-arm index
    /// when false; absent when the patient was not re-randomized.
    pub second_arm: Option<usize>,
    pub outcome: f64,
}

impl PatientRecord {
    /// Inverse-probability weight of this record for strategy `(j, k, l)`.
    #[inline]
    pub fn weight(&self, design: &SmartDesign, j: usize, k: usize, l: usize) -> f64 {
        match (self.initial, self.response) {
            (InitialAssignment::Arm(a), Some(true)) if a == j => {
                if self.second_arm.unwrap_or(0) == k {
                    1.0 / design.p[k]
                } else {
                    0.0
                }
            }
            (InitialAssignment::Arm(a), Some(false)) if a == j => {
                if self.second_arm == Some(l) {
                    1.0 / design.q[l]
                } else {
                    0.0
                }
            }
            _ => 0.0,
        }
    }
}

/// Outcome distribution of the control arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlOutcome {
    pub mean: f64,
    pub sd: f64,
}

/// Counterfactual parameters of a scenario, without the design.
///
/// Matrices are indexed `[initial][second-stage arm]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub pi: Vec<f64>,
    pub mu_ab: Vec<Vec<f64>>,
    pub mu_ac: Vec<Vec<f64>>,
    pub sigma_ab: Vec<Vec<f64>>,
    pub sigma_ac: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<ControlOutcome>,
}

/// Generative truth for simulation and design-time power.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioSpec {
    pub design: SmartDesign,
    #[serde(flatten)]
    pub params: ScenarioParams,
}

fn check_shape(name: &str, m: &[Vec<f64>], rows: usize, cols: usize) -> Result<()> {
    if m.len() != rows || m.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidScenario(format!(
            "{name} must be {rows}x{cols}"
        )));
    }
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidScenario(format!("{name} has non-finite entries")));
    }
    Ok(())
}

impl ScenarioSpec {
    pub fn new(design: SmartDesign, params: ScenarioParams) -> Result<Self> {
        let (j, k, l) = (design.n_initial(), design.n_responder(), design.n_nonresponder());
        if params.pi.len() != j {
            return Err(Error::InvalidScenario(format!("pi must have {j} entries")));
        }
        if params.pi.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::InvalidScenario("response rates must lie in [0, 1]".into()));
        }
        check_shape("mu_ab", &params.mu_ab, j, k)?;
        check_shape("mu_ac", &params.mu_ac, j, l)?;
        check_shape("sigma_ab", &params.sigma_ab, j, k)?;
        check_shape("sigma_ac", &params.sigma_ac, j, l)?;
        if params
            .sigma_ab
            .iter()
            .chain(&params.sigma_ac)
            .flatten()
            .any(|&s| s <= 0.0)
        {
            return Err(Error::InvalidScenario("standard deviations must be positive".into()));
        }
        match (design.control(), &params.control) {
            (Some(_), None) => {
                return Err(Error::InvalidScenario("control arm outcome missing".into()))
            }
            (None, Some(_)) => {
                return Err(Error::InvalidScenario(
                    "control outcome given but the design has no control arm".into(),
                ))
            }
            (Some(_), Some(c)) if !(c.sd > 0.0 && c.mean.is_finite()) => {
                return Err(Error::InvalidScenario("control sd must be positive".into()))
            }
            _ => {}
        }
        Ok(Self { design, params })
    }

    /// The same scenario with every effect gap `mu - reference` scaled by
    /// `factor`.
    pub fn scale_effects(&self, reference: f64, factor: f64) -> Result<Self> {
        let scale = |m: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            m.iter()
                .map(|r| r.iter().map(|v| reference + factor * (v - reference)).collect())
                .collect()
        };
        let mut params = self.params.clone();
        params.mu_ab = scale(&self.params.mu_ab);
        params.mu_ac = scale(&self.params.mu_ac);
        if let Some(c) = params.control.as_mut() {
            c.mean = reference + factor * (c.mean - reference);
        }
        Self::new(self.design.clone(), params)
    }
}

/// All embedded strategies in canonical order.
pub fn enumerate_strategies(design: &SmartDesign) -> Vec<Strategy> {
    design.strategies().to_vec()
}

/// Strategy means `pi_j * mu_{A_j B_k} + (1 - pi_j) * mu_{A_j C_l}`.
pub fn true_strategy_means(scenario: &ScenarioSpec) -> DVector<f64> {
    let d = &scenario.design;
    let s = &scenario.params;
    DVector::from_iterator(
        d.n_strategies(),
        d.strategies().iter().map(|st| match st.path {
            StrategyPath::Embedded {
                initial: j,
                responder: k,
                nonresponder: l,
            } => s.pi[j] * s.mu_ab[j][k] + (1.0 - s.pi[j]) * s.mu_ac[j][l],
            StrategyPath::Control => s.control.map_or(f64::NAN, |c| c.mean),
        }),
    )
}

/// Inputs of the closed-form asymptotic covariance.
pub(crate) struct CovarianceInputs<'a> {
    pub pi: &'a [f64],
    pub mu_ab: &'a [Vec<f64>],
    pub mu_ac: &'a [Vec<f64>],
    pub var_ab: &'a [Vec<f64>],
    pub var_ac: &'a [Vec<f64>],
    pub control_var: Option<f64>,
}

/// n-scaled asymptotic covariance of the IPWN estimator.
pub(crate) fn asymptotic_covariance(design: &SmartDesign, x: &CovarianceInputs<'_>) -> DMatrix<f64> {
    let n = design.n_strategies();
    let mut sigma = DMatrix::zeros(n, n);
    let (kk, ll) = (design.n_responder(), design.n_nonresponder());
    for j in 0..design.n_initial() {
        let kappa = design.kappa(j);
        let pi = x.pi[j];
        let gap = |k: usize, l: usize| x.mu_ab[j][k] - x.mu_ac[j][l];
        for k in 0..kk {
            for l in 0..ll {
                let s = design.strategy_index(j, k, l);
                for k2 in 0..kk {
                    for l2 in 0..ll {
                        let t = design.strategy_index(j, k2, l2);
                        let (d1, d2) = (gap(k, l), gap(k2, l2));
                        let resp = pi / design.p[k] * (x.var_ab[j][k] + (1.0 - pi).powi(2) * d1 * d2);
                        let nonresp =
                            (1.0 - pi) / design.q[l] * (x.var_ac[j][l] + pi.powi(2) * d1 * d2);
                        let v = match (k == k2, l == l2) {
                            (true, true) => resp + nonresp,
                            (true, false) => resp,
                            (false, true) => nonresp,
                            (false, false) => 0.0,
                        };
                        sigma[(s, t)] = kappa * v;
                    }
                }
            }
        }
    }
    if let (Some(c), Some(idx), Some(var)) = (design.control(), design.control_index(), x.control_var) {
        sigma[(idx, idx)] = var / c.probability;
    }
    sigma
}

/// n-scaled asymptotic covariance of the strategy-mean estimator under the
/// scenario.
pub fn true_covariance(scenario: &ScenarioSpec) -> DMatrix<f64> {
    let s = &scenario.params;
    let sq = |m: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        m.iter().map(|r| r.iter().map(|v| v * v).collect()).collect()
    };
    asymptotic_covariance(
        &scenario.design,
        &CovarianceInputs {
            pi: &s.pi,
            mu_ab: &s.mu_ab,
            mu_ac: &s.mu_ac,
            var_ab: &sq(&s.sigma_ab),
            var_ac: &sq(&s.sigma_ac),
            control_var: s.control.map(|c| c.sd * c.sd),
        },
    )
}

/// Reference scenarios of the standard 2x2x2 simulation study: all
/// counterfactual means 15 under the null; under the alternative
/// `mu_{A_j B_1} = mu_{A_j C_2} = 15`, `mu_{A_j B_2} = 22`, `mu_{A_j C_1} = 20`;
/// SDs 12 (responders) and 10 (non-responders); `q_1 = 0.5`.
pub mod reference {
    use super::*;

    pub const NULL_MEAN: f64 = 15.0;

    fn params(pi: [f64; 2], mu_ab: [f64; 2], mu_ac: [f64; 2]) -> ScenarioParams {
        ScenarioParams {
            pi: pi.to_vec(),
            mu_ab: vec![mu_ab.to_vec(); 2],
            mu_ac: vec![mu_ac.to_vec(); 2],
            sigma_ab: vec![vec![12.0; 2]; 2],
            sigma_ac: vec![vec![10.0; 2]; 2],
            control: None,
        }
    }

    pub fn null_scenario(pi: [f64; 2], p1: f64) -> Result<ScenarioSpec> {
        ScenarioSpec::new(
            SmartDesign::two_by_two_by_two(p1, 0.5)?,
            params(pi, [NULL_MEAN; 2], [NULL_MEAN; 2]),
        )
    }

    pub fn alternative_scenario(pi: [f64; 2], p1: f64) -> Result<ScenarioSpec> {
        ScenarioSpec::new(
            SmartDesign::two_by_two_by_two(p1, 0.5)?,
            params(pi, [15.0, 22.0], [20.0, 15.0]),
        )
    }
}
