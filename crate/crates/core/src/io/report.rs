//! Machine-readable (JSON) and tabular text reports.

use std::fmt::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::FORMAT_VERSION;
use crate::boundary::{BoundaryPlan, SequentialPower};
use crate::error::{Error, Result};
use crate::selection::SelectionResult;
use crate::simulate::{LookDecision, LookOutcome, OperatingCharacteristics};

/// What produced a report and from which inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
}

impl Provenance {
    pub fn new(seed: Option<u64>, config_hash: Option<String>) -> Self {
        Self {
            tool: "imsmart".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config_hash,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub format_version: u32,
    pub provenance: Provenance,
    pub plan: BoundaryPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    pub format_version: u32,
    pub provenance: Provenance,
    pub df: usize,
    pub unit_noncentrality: f64,
    pub plan: BoundaryPlan,
    pub n_max: usize,
    pub power: SequentialPower,
    pub target_power: Option<f64>,
    /// Smallest single-look sample size reaching the target.
    pub n_classical: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub format_version: u32,
    pub provenance: Provenance,
    pub n_max: usize,
    pub plan: BoundaryPlan,
    pub characteristics: OperatingCharacteristics,
    /// Monitoring trace of replicate 0, the trial written by `--emit-data`.
    pub first_replicate: Vec<LookOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub strategy: String,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookReport {
    #[serde(flatten)]
    pub outcome: LookOutcome,
    pub estimates: Vec<EstimateRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub format_version: u32,
    pub provenance: Provenance,
    pub records_used: usize,
    pub dropped_missing_outcome: usize,
    pub n_max: usize,
    pub looks: Vec<LookReport>,
    pub decision: LookDecision,
    pub selection: Option<SelectionResult>,
    pub control_comparison: Option<SelectionResult>,
}

impl BoundaryReport {
    pub fn new(plan: BoundaryPlan, provenance: Provenance) -> Self {
        Self { format_version: FORMAT_VERSION, provenance, plan }
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}

pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    Ok(serde_json::from_str(text)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = to_json(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(Error::file(path))?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    from_json(&std::fs::read_to_string(path).map_err(Error::file(path))?)
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"))
}

fn provenance_line(out: &mut String, p: &Provenance) {
    let _ = write!(out, "{} {}", p.tool, p.version);
    if let Some(s) = p.seed {
        let _ = write!(out, "  seed {s}");
    }
    if let Some(h) = &p.config_hash {
        let _ = write!(out, "  config {}", &h[..h.len().min(12)]);
    }
    out.push('\n');
}

fn plan_table(out: &mut String, plan: &BoundaryPlan) {
    let _ = writeln!(out, "{:>6} {:>10} {:>12} {:>14}", "look", "info", "boundary", "P(cross)");
    for (i, (t, b)) in plan
        .schedule
        .info_proportions()
        .iter()
        .zip(&plan.critical_values)
        .enumerate()
    {
        let p = plan.crossing_probabilities.get(i).copied();
        let _ = writeln!(out, "{:>6} {:>10.3} {:>12.4} {:>14}", i + 1, t, b, fmt_opt(p, 5));
    }
}

impl BoundaryReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let p = &self.plan;
        let _ = writeln!(
            out,
            "Efficacy boundaries: {:?} family, {:?}, df {}, alpha {}",
            p.family,
            p.method,
            p.schedule.df(),
            p.schedule.alpha()
        );
        plan_table(&mut out, p);
        let _ = writeln!(out, "total null crossing probability {:.5}", p.closure_total());
        provenance_line(&mut out, &self.provenance);
        out
    }
}

impl PowerReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Sequential power at n_max = {} (df {}, noncentrality per subject {:.6})",
            self.n_max, self.df, self.unit_noncentrality
        );
        plan_table(&mut out, &self.plan);
        for (i, p) in self.power.per_look.iter().enumerate() {
            let _ = writeln!(out, "  reject at look {}: {:.4}", i + 1, p);
        }
        let _ = writeln!(out, "  total power: {:.4}", self.power.total);
        if let Some(t) = self.target_power {
            let _ = writeln!(out, "  target power {t}: n_max = {}", self.n_max);
        }
        if let Some(n) = self.n_classical {
            let _ = writeln!(out, "  single-look sample size: {n}");
        }
        provenance_line(&mut out, &self.provenance);
        out
    }
}

impl SimulationReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let c = &self.characteristics;
        let _ = writeln!(out, "Operating characteristics over {} trials, n_max = {}", c.replicates, self.n_max);
        plan_table(&mut out, &self.plan);
        for (i, p) in c.reject_at_look.iter().enumerate() {
            let _ = writeln!(out, "  reject at look {}: {:.4}", i + 1, p);
        }
        let _ = writeln!(out, "  overall rejection: {:.4}", c.overall_rejection);
        let _ = writeln!(out, "  expected sample size: {:.1}", c.expected_n);
        if let Some(b) = c.best_select_prob {
            let _ = writeln!(out, "  best.select: {:.4} (conditional {})", b, fmt_opt(c.best_select_conditional, 4));
        }
        if c.replicates_with_empty_cells > 0 {
            let _ = writeln!(out, "  trials with a skipped look: {}", c.replicates_with_empty_cells);
        }
        provenance_line(&mut out, &self.provenance);
        out
    }
}

impl AnalysisReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Analysis of {} records (n_max {}, {} dropped for missing outcome)",
            self.records_used, self.n_max, self.dropped_missing_outcome
        );
        let _ = write!(out, "{:<16}", "Strategy");
        for l in &self.looks {
            let _ = write!(out, " {:>22}", format!("look {} (n={})", l.outcome.look, l.outcome.n));
        }
        out.push('\n');
        if let Some(first) = self.looks.first() {
            for (row, e) in first.estimates.iter().enumerate() {
                let _ = write!(out, "{:<16}", e.strategy);
                for l in &self.looks {
                    let cell = l
                        .estimates
                        .get(row)
                        .map_or_else(String::new, |x| format!("{:.2} ({:.2})", x.mean, x.variance));
                    let _ = write!(out, " {cell:>22}");
                }
                out.push('\n');
            }
        }
        let mut line = |name: &str, f: &dyn Fn(&LookReport) -> String| {
            let _ = write!(out, "{name:<16}");
            for l in &self.looks {
                let _ = write!(out, " {:>22}", f(l));
            }
            out.push('\n');
        };
        line("Statistic", &|l| fmt_opt(l.outcome.statistic, 3));
        line("df", &|l| l.outcome.df.map_or("-".into(), |d| d.to_string()));
        line("Boundary", &|l| format!("{:.2}", l.outcome.boundary));
        line("Decision", &|l| l.outcome.decision.to_string());
        for (name, sel) in [("Best set", &self.selection), ("Better than control", &self.control_comparison)] {
            if let Some(s) = sel {
                let consts: Vec<String> = s.constants.iter().map(|c| format!("{c:.3}")).collect();
                let _ = writeln!(out, "{name}: {{{}}}  constants [{}]", s.selected.join(", "), consts.join(", "));
            }
        }
        provenance_line(&mut out, &self.provenance);
        out
    }
}
