use std::path::Path;

use imsmart::boundary::{
    required_sample_size, sequential_power, solve_boundaries, BoundaryFamily, BoundaryMethod, BoundaryPlan,
    EffectSize, MonitoringSchedule, SampleSizeSearch, DEFAULT_MC_REPLICATES,
};
use imsmart::design::{true_covariance, true_strategy_means, SmartDesign};
use imsmart::error::{Error, Result};
use imsmart::io::config::MonitoringSection;
use imsmart::io::{
    analyze as run_analysis, content_hash, read_records_from_path, report, write_records, AnalysisOptions,
    BoundaryReport, PostHocSettings, PowerReport, Provenance, SimulationReport, StudyConfig, FORMAT_VERSION,
};
use imsmart::rng::{domain, substream};
use imsmart::selection::{Direction, DEFAULT_RESAMPLES};
use imsmart::simulate::{
    operating_characteristics, run_monitored_trial, simulate_with, BestSelectSettings, SimulationConfig,
};
use imsmart::wald::{default_contrast, null_degrees_of_freedom};

use crate::{AnalyzeArgs, BoundariesArgs, DirectionArg, Family, Method, PlanArgs, PowerArgs, SimulateArgs};

impl From<Family> for BoundaryFamily {
    fn from(f: Family) -> Self {
        match f {
            Family::Pocock => BoundaryFamily::Pocock,
            Family::Obf => BoundaryFamily::OBrienFleming,
            Family::ObfLookIndex => BoundaryFamily::OBrienFlemingLookIndex,
        }
    }
}

impl From<Method> for BoundaryMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::Mc => BoundaryMethod::MonteCarlo,
            Method::Series => BoundaryMethod::Series,
        }
    }
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::Maximize => Direction::Maximize,
            DirectionArg::Minimize => Direction::Minimize,
        }
    }
}

fn info_proportions(p: &PlanArgs, monitoring: Option<&MonitoringSection>) -> Result<Vec<f64>> {
    match (&p.info_props, p.looks) {
        (Some(t), Some(m)) if t.len() != m => Err(Error::InvalidArgument(format!(
            "--looks {m} but {} information proportions",
            t.len()
        ))),
        (Some(t), _) => Ok(t.clone()),
        (None, Some(0)) => Err(Error::InvalidArgument("--looks must be at least 1".into())),
        (None, Some(m)) => Ok((1..=m).map(|i| i as f64 / m as f64).collect()),
        (None, None) => monitoring
            .map(|s| s.info_proportions.clone())
            .ok_or_else(|| Error::InvalidArgument("give --info-props or --looks (or a [monitoring] section)".into())),
    }
}

/// Assemble the monitoring plan from flags, then the configuration's
/// [monitoring] section, then defaults; calibrate unless critical values
/// are supplied.
fn resolve_plan(
    p: &PlanArgs,
    monitoring: Option<&MonitoringSection>,
    df: usize,
    replicates: Option<usize>,
    seed: u64,
) -> Result<BoundaryPlan> {
    if let Some(path) = &p.plan {
        let rep: BoundaryReport = report::read_json(path)?;
        if rep.plan.schedule.df() != df {
            log::warn!("plan was derived for df {} but the statistic has df {df}", rep.plan.schedule.df());
        }
        return Ok(rep.plan);
    }
    let alpha = p.alpha.or(monitoring.map(|m| m.alpha)).unwrap_or(0.05);
    let family = p.family.map(BoundaryFamily::from).or(monitoring.map(|m| m.family)).unwrap_or(BoundaryFamily::Pocock);
    let schedule = MonitoringSchedule::new(info_proportions(p, monitoring)?, df, alpha)?;
    if let Some(b) = p.boundaries.clone().or_else(|| monitoring.and_then(|m| m.critical_values.clone())) {
        return BoundaryPlan::fixed(schedule, family, b);
    }
    let method = p.method.map(BoundaryMethod::from).or(monitoring.map(|m| m.method)).unwrap_or(BoundaryMethod::MonteCarlo);
    let reps = p
        .boundary_replicates
        .or(replicates)
        .or(monitoring.map(|m| m.replicates))
        .unwrap_or(DEFAULT_MC_REPLICATES);
    let seed = monitoring.map_or(seed, |m| m.seed);
    solve_boundaries(&schedule, family, method, reps, seed)
}

fn design_df(design: &SmartDesign, monitoring: Option<&MonitoringSection>) -> Result<usize> {
    if let Some(df) = monitoring.and_then(|m| m.df) {
        return Ok(df);
    }
    Ok(null_degrees_of_freedom(design, &default_contrast(design.n_strategies())?))
}

fn write_out<T: serde::Serialize>(out: &Option<std::path::PathBuf>, value: &T) -> Result<()> {
    if let Some(path) = out {
        report::write_json(path, value)?;
    }
    Ok(())
}

pub fn boundaries(a: BoundariesArgs) -> Result<String> {
    let plan = resolve_plan(&a.plan, None, a.df, a.replicates, a.seed)?;
    let rep = BoundaryReport::new(plan, Provenance::new(Some(a.seed), None));
    write_out(&a.out, &rep)?;
    Ok(rep.to_text())
}

pub fn power(a: PowerArgs) -> Result<String> {
    let loaded = StudyConfig::load(&a.config)?;
    let scenario = loaded.scenario()?;
    let monitoring = loaded.config.monitoring.as_ref();
    let design = &loaded.design;
    let contrast = default_contrast(design.n_strategies())?;
    let df = design_df(design, monitoring)?;
    let theta = contrast.matrix() * true_strategy_means(&scenario);
    let effect = EffectSize::from_contrast(&theta, &true_covariance(&scenario), &contrast)?;
    let plan = resolve_plan(&a.plan, monitoring, df, None, a.seed)?;
    let step = design.n_initial() + usize::from(design.control().is_some());
    let search = SampleSizeSearch { step, cap: a.cap, replicates: a.replicates, seed: a.seed };
    let (n_max, target, n_classical) = if a.find_n {
        let n = required_sample_size(&plan, &effect, a.target_power, &search)?;
        let single = solve_boundaries(
            &MonitoringSchedule::single_look(df, plan.schedule.alpha())?,
            plan.family,
            BoundaryMethod::MonteCarlo,
            0,
            a.seed,
        )?;
        let nc = required_sample_size(&single, &effect, a.target_power, &search)?;
        (n, Some(a.target_power), Some(nc))
    } else {
        let n = a
            .n
            .or(loaded.config.simulation.as_ref().map(|s| s.n_max))
            .ok_or_else(|| Error::InvalidArgument("give --n or --find-n".into()))?;
        (n, None, None)
    };
    let power = sequential_power(&plan.schedule, &plan.critical_values, &effect, n_max, a.replicates, a.seed)?;
    let rep = PowerReport {
        format_version: FORMAT_VERSION,
        provenance: Provenance::new(Some(a.seed), Some(loaded.hash.clone())),
        df,
        unit_noncentrality: effect.unit_noncentrality,
        plan,
        n_max,
        power,
        target_power: target,
        n_classical,
    };
    write_out(&a.out, &rep)?;
    Ok(rep.to_text())
}

pub fn simulate(a: SimulateArgs) -> Result<String> {
    let loaded = StudyConfig::load(&a.config)?;
    let scenario = loaded.scenario()?;
    let monitoring = loaded.config.monitoring.as_ref();
    let section = loaded.config.simulation.as_ref();
    let n_max = a
        .n_max
        .or(section.map(|s| s.n_max))
        .ok_or_else(|| Error::InvalidArgument("give --n-max or a [simulation] section".into()))?;
    let replicates = a.replicates.or(section.map(|s| s.replicates)).unwrap_or(1000);
    let seed = a.seed.or(section.map(|s| s.seed)).unwrap_or(0);
    let df = design_df(&loaded.design, monitoring)?;
    let plan = resolve_plan(&a.plan, monitoring, df, None, seed)?;
    let mut cfg = SimulationConfig::new(scenario.clone(), plan.clone(), n_max, replicates, seed)?;
    cfg.inflate = !a.no_inflate && section.is_none_or(|s| s.inflate);
    let direction = a.best_select.map(Direction::from).or(section.and_then(|s| s.best_select));
    cfg.best_select = direction.map(|d| BestSelectSettings {
        direction: d,
        alpha: section.map_or(0.05, |s| s.best_select_alpha),
        resamples: a.resamples.or(section.map(|s| s.resamples)).unwrap_or(DEFAULT_RESAMPLES),
    });
    cfg.validate()?;

    // replicate 0 of the run, for --emit-data and the monitoring trace
    let first = simulate_with(&scenario, n_max, &mut substream(seed, domain::TRIAL));
    let trace = run_monitored_trial(&first, &cfg)?;
    if let Some(path) = &a.emit_data {
        write_records(std::fs::File::create(path).map_err(Error::file(path))?, &first, &loaded.design)?;
    }
    let characteristics = operating_characteristics(&cfg)?;
    let rep = SimulationReport {
        format_version: FORMAT_VERSION,
        provenance: Provenance::new(Some(seed), Some(loaded.hash.clone())),
        n_max,
        plan,
        characteristics,
        first_replicate: trace.looks,
    };
    write_out(&a.out, &rep)?;
    Ok(rep.to_text())
}

fn file_hash(path: &Path) -> Result<String> {
    Ok(content_hash(&std::fs::read(path).map_err(Error::file(path))?))
}

pub fn analyze(a: AnalyzeArgs) -> Result<String> {
    let loaded = StudyConfig::load(&a.design)?;
    let design = &loaded.design;
    let monitoring = loaded.config.monitoring.as_ref();
    let section = loaded.config.analysis.as_ref();
    let data = read_records_from_path(&a.data, design)?;
    let df = design_df(design, monitoring)?;
    let seed = a.seed.or(section.map(|s| s.seed)).unwrap_or(0);
    let plan = resolve_plan(&a.plan, monitoring, df, None, seed)?;
    let post_hoc = if a.post_hoc || section.is_some_and(|s| s.post_hoc) {
        let direction = a
            .direction
            .map(Direction::from)
            .or(section.and_then(|s| s.direction))
            .ok_or_else(|| Error::InvalidArgument("post-hoc selection needs --direction".into()))?;
        Some(PostHocSettings {
            direction,
            alpha: section.map_or(0.05, |s| s.alpha),
            resamples: a.resamples.or(section.map(|s| s.resamples)).unwrap_or(DEFAULT_RESAMPLES),
            seed,
        })
    } else {
        None
    };
    let options = AnalysisOptions {
        look: a.look.unwrap_or(plan.schedule.looks()),
        n_max: a.n_max.or(section.and_then(|s| s.n_max)),
        inflate: !a.no_inflate && section.is_none_or(|s| s.inflate),
        rank_policy: None,
        post_hoc,
        plan,
    };
    let hash = content_hash(format!("{}{}", loaded.hash, file_hash(&a.data)?).as_bytes());
    let rep = run_analysis(&data, design, &options, Provenance::new(Some(seed), Some(hash)))?;
    write_out(&a.out, &rep)?;
    Ok(rep.to_text())
}
