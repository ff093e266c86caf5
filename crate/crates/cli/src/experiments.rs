//! The named experiments. Each returns a [`ResultTable`]; nothing here does I/O.

use anyhow::Context;
use rayon::prelude::*;
use risfuse_core::detect::observation_bound_pd_at;
use risfuse_core::fusion::MAX_LLR_SENSORS;
use risfuse_core::{
    estimate_roc_points, observation_bound_curve, FusionRule, PhaseDesign, RisMode, RocPoint, Scenario, SystemParams,
};
use serde::{Deserialize, Serialize};

use crate::config::{Experiment, ExperimentConfig};

pub const BOUND_RULE: &str = "OBSERVATION_BOUND";
pub const NO_RIS_MODE: &str = "none";

/// One output record. The first twelve fields are the CSV columns; the rest
/// only appear in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub rule: String,
    pub ris_mode: String,
    pub sweep_name: String,
    pub sweep_value: Option<f64>,
    pub pf0_target: Option<f64>,
    pub pf0_achieved: Option<f64>,
    pub pd0: Option<f64>,
    pub pd0_stderr: Option<f64>,
    pub trials_h0: Option<usize>,
    pub trials_h1: Option<usize>,
    pub seed: u64,
    pub pf0_stderr: Option<f64>,
    /// Absent when the threshold is infinite.
    pub threshold: Option<f64>,
    pub tie_probability: Option<f64>,
    pub trials_h0_heldout: Option<usize>,
    pub numerical_failures: Option<usize>,
    /// Fewer than `⌈10/target⌉` calibration trials.
    pub calibration_undersampled: Option<bool>,
    /// Reason the rule could not run at this point.
    pub skipped: Option<String>,
}

impl ResultRow {
    fn blank(experiment: Experiment, sweep_name: &str, sweep_value: Option<f64>, seed: u64) -> Self {
        Self {
            experiment: experiment.name().into(),
            rule: String::new(),
            ris_mode: String::new(),
            sweep_name: sweep_name.into(),
            sweep_value,
            pf0_target: None,
            pf0_achieved: None,
            pd0: None,
            pd0_stderr: None,
            trials_h0: None,
            trials_h1: None,
            seed,
            pf0_stderr: None,
            threshold: None,
            tie_probability: None,
            trials_h0_heldout: None,
            numerical_failures: None,
            calibration_undersampled: None,
            skipped: None,
        }
    }

    fn from_point(base: &Self, p: &RocPoint) -> Self {
        let finite = |v: f64| v.is_finite().then_some(v);
        Self {
            rule: p.rule.name().into(),
            ris_mode: p.ris_mode.name().into(),
            pf0_target: Some(p.pf0_target),
            pf0_achieved: finite(p.pf0_achieved),
            pd0: finite(p.pd0),
            pd0_stderr: finite(p.std_err_pd0),
            trials_h0: Some(p.trials_h0),
            trials_h1: Some(p.trials_h1),
            pf0_stderr: finite(p.pf0_stderr),
            threshold: finite(p.threshold),
            tie_probability: Some(p.tie_probability),
            trials_h0_heldout: Some(p.trials_h0_heldout),
            numerical_failures: Some(p.numerical_failures),
            calibration_undersampled: Some(p.calibration_undersampled),
            ..base.clone()
        }
    }
}

/// Long-term RIS design of one layout at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRecord {
    pub sweep_name: String,
    pub sweep_value: Option<f64>,
    pub layout: usize,
    pub g: f64,
    pub best_restart: usize,
    pub iterations: usize,
    pub converged: bool,
    pub phases_rad: Vec<f64>,
    /// Objective after every iteration of the winning restart.
    #[serde(skip)]
    pub trace: Vec<f64>,
}

impl DesignRecord {
    fn new(sweep_name: &str, sweep_value: Option<f64>, layout: usize, d: &PhaseDesign) -> Self {
        let best = &d.traces[d.best_restart];
        Self {
            sweep_name: sweep_name.into(),
            sweep_value,
            layout,
            g: d.g,
            best_restart: d.best_restart,
            iterations: best.iterations,
            converged: best.converged,
            phases_rad: d.theta.phases(),
            trace: best.g_values.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
    pub designs: Vec<DesignRecord>,
}

impl ResultTable {
    fn extend(&mut self, other: ResultTable) {
        self.rows.extend(other.rows);
        self.designs.extend(other.designs);
    }
}

pub fn run(config: &ExperimentConfig) -> anyhow::Result<ResultTable> {
    config.validate()?;
    match config.experiment {
        Experiment::PdVsN => run_pd_vs_n(config),
        Experiment::PdVsRician => run_pd_vs_rician(config),
        Experiment::Roc => run_roc(config),
        Experiment::OptimizeOnly => optimize_only(config),
    }
}

fn skip_reason(rule: FusionRule, params: &SystemParams) -> Option<String> {
    match rule {
        FusionRule::Zfc if params.n_antennas < params.n_sensors => {
            Some(format!("zero forcing needs N >= K (N={}, K={})", params.n_antennas, params.n_sensors))
        }
        FusionRule::Llr if params.n_sensors > MAX_LLR_SENSORS => {
            Some(format!("LLR enumeration limited to K <= {MAX_LLR_SENSORS}"))
        }
        _ => None,
    }
}

fn build_scenario(config: &ExperimentConfig, params: &SystemParams) -> anyhow::Result<Scenario> {
    let mut scenario = params.scenario(config.seed)?;
    if config.ris_modes.contains(&RisMode::LongTermDesign) {
        scenario.design_phases(&config.optimizer, config.seed)?;
    }
    Ok(scenario)
}

fn designs_of(scenario: &Scenario, sweep_name: &str, sweep_value: Option<f64>) -> Vec<DesignRecord> {
    scenario
        .layouts()
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.design.as_ref().map(|d| DesignRecord::new(sweep_name, sweep_value, i, d)))
        .collect()
}

/// Every (mode, rule, target) combination at one sweep point.
fn sweep_point(
    config: &ExperimentConfig,
    params: &SystemParams,
    sweep_name: &str,
    sweep_value: Option<f64>,
    targets: &[f64],
) -> anyhow::Result<ResultTable> {
    let scenario = build_scenario(config, params)?;
    let base = ResultRow::blank(config.experiment, sweep_name, sweep_value, config.seed);
    let runnable: Vec<FusionRule> =
        config.rules.iter().copied().filter(|r| skip_reason(*r, params).is_none()).collect();
    let counts = config.trials.counts();
    let mut rows = Vec::new();
    for &mode in &config.ris_modes {
        let points = estimate_roc_points(&scenario, mode, &runnable, targets, &counts, config.seed)
            .with_context(|| format!("{sweep_name} = {sweep_value:?}, {mode}"))?;
        for &rule in &config.rules {
            if let Some(reason) = skip_reason(rule, params) {
                rows.extend(targets.iter().map(|t| ResultRow {
                    rule: rule.name().into(),
                    ris_mode: mode.name().into(),
                    pf0_target: Some(*t),
                    skipped: Some(reason.clone()),
                    ..base.clone()
                }));
            } else {
                rows.extend(points.iter().filter(|p| p.rule == rule).map(|p| ResultRow::from_point(&base, p)));
            }
        }
    }
    Ok(ResultTable { rows, designs: designs_of(&scenario, sweep_name, sweep_value) })
}

fn bound_row(config: &ExperimentConfig, sweep_name: &str) -> anyhow::Result<ResultRow> {
    let s = &config.system;
    let curve = observation_bound_curve(s.n_sensors, s.pd, s.pf)?;
    Ok(ResultRow {
        rule: BOUND_RULE.into(),
        ris_mode: NO_RIS_MODE.into(),
        pf0_target: Some(config.target_pf0),
        pf0_achieved: Some(config.target_pf0),
        pd0: Some(observation_bound_pd_at(&curve, config.target_pf0)),
        ..ResultRow::blank(config.experiment, sweep_name, None, config.seed)
    })
}

fn sweep(
    config: &ExperimentConfig,
    sweep_name: &str,
    points: Vec<(f64, SystemParams)>,
    targets: &[f64],
) -> anyhow::Result<ResultTable> {
    let parts = points
        .par_iter()
        .map(|(value, params)| sweep_point(config, params, sweep_name, Some(*value), targets))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut table = ResultTable::default();
    for part in parts {
        table.extend(part);
    }
    Ok(table)
}

/// Detection rate versus FC array size at the target false-alarm rate.
pub fn run_pd_vs_n(config: &ExperimentConfig) -> anyhow::Result<ResultTable> {
    let points = config
        .n_values
        .iter()
        .map(|&n| (n as f64, SystemParams { n_antennas: n, ..config.system.clone() }))
        .collect();
    let mut table = sweep(config, "n_antennas", points, &[config.target_pf0])?;
    table.rows.push(bound_row(config, "n_antennas")?);
    Ok(table)
}

/// Detection rate versus the common sensor→RIS Rician factor.
pub fn run_pd_vs_rician(config: &ExperimentConfig) -> anyhow::Result<ResultTable> {
    let points = config
        .rician_db_values
        .iter()
        .map(|&db| {
            let params = SystemParams {
                n_antennas: config.rician_sweep_n_antennas,
                rician_sensor_ris_db: Some(db),
                rician_ris_fc_db: Some(config.rician_sweep_ris_fc_db),
                ..config.system.clone()
            };
            (db, params)
        })
        .collect();
    let mut table = sweep(config, "rician_sensor_ris_db", points, &[config.target_pf0])?;
    table.rows.push(bound_row(config, "rician_sensor_ris_db")?);
    Ok(table)
}

/// Detection rate over a grid of false-alarm targets at the configured N,
/// followed by the observation-bound curve (one row per count threshold ν).
pub fn run_roc(config: &ExperimentConfig) -> anyhow::Result<ResultTable> {
    let mut table = sweep_point(config, &config.system, "pf0_target", None, &config.roc_targets)?;
    let s = &config.system;
    for (nu, (pf, pd)) in observation_bound_curve(s.n_sensors, s.pd, s.pf)?.into_iter().enumerate() {
        table.rows.push(ResultRow {
            rule: BOUND_RULE.into(),
            ris_mode: NO_RIS_MODE.into(),
            pf0_achieved: Some(pf),
            pd0: Some(pd),
            ..ResultRow::blank(config.experiment, "nu", Some(nu as f64), config.seed)
        });
    }
    Ok(table)
}

/// Long-term RIS design only: one row per layout, details in the designs.
pub fn optimize_only(config: &ExperimentConfig) -> anyhow::Result<ResultTable> {
    let mut scenario = config.system.scenario(config.seed)?;
    scenario.design_phases(&config.optimizer, config.seed)?;
    let designs = designs_of(&scenario, "layout", None);
    let rows = designs
        .iter()
        .map(|d| ResultRow {
            ris_mode: RisMode::LongTermDesign.name().into(),
            ..ResultRow::blank(config.experiment, "layout", Some(d.layout as f64), config.seed)
        })
        .collect();
    Ok(ResultTable { rows, designs })
}
