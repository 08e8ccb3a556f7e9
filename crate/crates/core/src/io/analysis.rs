//! Interim analysis of observed trial data against a monitoring plan.

use serde::{Deserialize, Serialize};

use super::config::FORMAT_VERSION;
use super::data::Ingest;
use super::report::{AnalysisReport, EstimateRow, LookReport, Provenance};
use crate::boundary::BoundaryPlan;
use crate::design::SmartDesign;
use crate::error::{Error, Result};
use crate::selection::{compare_to_control, critical_constants, select_best, Direction};
use crate::simulate::{design_rank_policy, look_statistic, LookDecision, LookOutcome};
use crate::wald::{default_contrast, RankPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostHocSettings {
    pub direction: Direction,
    pub alpha: f64,
    pub resamples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct AnalysisOptions {
    pub plan: BoundaryPlan,
    /// Analyse looks `1..=look` (1-based), stopping early on a rejection.
    pub look: usize,
    /// Planned maximum sample size; defaults to the number of records.
    pub n_max: Option<usize>,
    pub inflate: bool,
    /// Defaults to truncation at the design's null rank.
    pub rank_policy: Option<RankPolicy>,
    pub post_hoc: Option<PostHocSettings>,
}

/// Monitor the records (in file order) through the requested look and, on
/// rejection, run post-hoc selection if asked. Interim looks use the
/// enrollment-order prefix `round(t_m * n_max)`.
pub fn analyze(
    data: &Ingest,
    design: &SmartDesign,
    options: &AnalysisOptions,
    provenance: Provenance,
) -> Result<AnalysisReport> {
    let schedule = &options.plan.schedule;
    let m = schedule.looks();
    if options.look == 0 || options.look > m {
        return Err(Error::InvalidArgument(format!("look must be in 1..={m}, got {}", options.look)));
    }
    let records = &data.records;
    let n_max = options.n_max.unwrap_or(records.len());
    let sizes = schedule.look_sizes(n_max);
    let needed = sizes[options.look - 1];
    if records.len() < needed {
        return Err(Error::InvalidArgument(format!(
            "look {} needs {needed} records, the data have {}",
            options.look,
            records.len()
        )));
    }
    let contrast = default_contrast(design.n_strategies())?;
    let policy = options.rank_policy.unwrap_or_else(|| design_rank_policy(design, &contrast));
    if let RankPolicy::Design(df) = policy {
        if df != schedule.df() {
            log::warn!("boundaries were derived for df {} but the statistic has df {df}", schedule.df());
        }
    }
    let labels = design.strategy_labels();
    let mut looks = Vec::new();
    let mut decision = LookDecision::Continue;
    let mut selection = None;
    let mut control_comparison = None;
    for i in 0..options.look {
        let n = sizes[i];
        let b = options.plan.critical_values[i];
        let (est, w) = look_statistic(&records[..n], design, &contrast, policy, options.inflate)?;
        let reject = w.statistic > b;
        decision = match (reject, i + 1 == m) {
            (true, _) => LookDecision::Reject,
            (false, true) => LookDecision::DoNotReject,
            (false, false) => LookDecision::Continue,
        };
        let estimates = labels
            .iter()
            .zip(est.mu_hat.iter().zip(est.variances()))
            .map(|(s, (&mean, variance))| EstimateRow { strategy: s.clone(), mean, variance })
            .collect();
        looks.push(LookReport {
            outcome: LookOutcome {
                look: i + 1,
                n,
                statistic: Some(w.statistic),
                df: Some(w.df),
                boundary: b,
                decision,
                diagnostic: None,
            },
            estimates,
        });
        if reject {
            if let Some(ph) = &options.post_hoc {
                let c = critical_constants(&est, design, ph.alpha, ph.resamples, ph.seed)?;
                selection = Some(select_best(&est, design, &c, ph.direction, ph.resamples, ph.seed)?);
                if design.control().is_some() {
                    control_comparison =
                        Some(compare_to_control(&est, design, ph.alpha, ph.resamples, ph.seed, ph.direction)?);
                }
            }
            break;
        }
    }
    Ok(AnalysisReport {
        format_version: FORMAT_VERSION,
        provenance,
        records_used: records.len(),
        dropped_missing_outcome: data.dropped_missing_outcome,
        n_max,
        looks,
        decision,
        selection,
        control_comparison,
    })
}
