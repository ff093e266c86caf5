//! Experiment configuration: one JSON document, every field optional.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use risfuse_core::{FusionRule, MmOptions, RisMode, SystemParams, TrialCounts};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Experiment {
    PdVsN,
    PdVsRician,
    Roc,
    OptimizeOnly,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Self::PdVsN => "pd_vs_n",
            Self::PdVsRician => "pd_vs_rician",
            Self::Roc => "roc",
            Self::OptimizeOnly => "optimize_only",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            _ => bail!("unknown output format '{s}'"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialSettings {
    /// H0 trials used for threshold calibration.
    pub h0: usize,
    pub h1: usize,
    /// Held-out H0 trials for the achieved false-alarm rate; defaults to `h1`.
    pub h0_heldout: Option<usize>,
    pub noise_draws_per_channel: usize,
}

impl Default for TrialSettings {
    fn default() -> Self {
        Self { h0: 200_000, h1: 50_000, h0_heldout: None, noise_draws_per_channel: 1 }
    }
}

impl TrialSettings {
    pub fn counts(&self) -> TrialCounts {
        TrialCounts {
            calibration_h0: self.h0,
            heldout_h0: self.h0_heldout.unwrap_or(self.h1),
            h1: self.h1,
            noise_draws_per_channel: self.noise_draws_per_channel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub system: SystemParams,
    pub rules: Vec<FusionRule>,
    pub ris_modes: Vec<RisMode>,
    pub target_pf0: f64,
    /// FC array sizes for `pd_vs_n`.
    pub n_values: Vec<usize>,
    /// Common sensor→RIS Rician factors (dB) for `pd_vs_rician`.
    pub rician_db_values: Vec<f64>,
    pub rician_sweep_n_antennas: usize,
    /// RIS→FC Rician factor (dB) held fixed during `pd_vs_rician`.
    pub rician_sweep_ris_fc_db: f64,
    /// False-alarm grid for `roc`.
    pub roc_targets: Vec<f64>,
    pub trials: TrialSettings,
    pub optimizer: MmOptions,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub format: OutputFormat,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::PdVsN,
            system: SystemParams::default(),
            rules: FusionRule::ALL.to_vec(),
            ris_modes: RisMode::ALL.to_vec(),
            target_pf0: 0.01,
            n_values: vec![16, 32, 64, 128],
            rician_db_values: vec![15.0, 25.0, 35.0, 45.0],
            rician_sweep_n_antennas: 128,
            rician_sweep_ris_fc_db: 20.0,
            roc_targets: vec![0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0],
            trials: TrialSettings::default(),
            optimizer: MmOptions::default(),
            seed: 1,
            output: None,
            format: OutputFormat::Csv,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let in_unit = |p: f64| p > 0.0 && p <= 1.0;
        if !in_unit(self.target_pf0) {
            bail!("target_pf0 must lie in (0, 1], got {}", self.target_pf0);
        }
        if self.rules.is_empty() || self.ris_modes.is_empty() {
            bail!("at least one rule and one RIS mode are required");
        }
        match self.experiment {
            Experiment::PdVsN if self.n_values.is_empty() => bail!("n_values is empty"),
            Experiment::PdVsRician if self.rician_db_values.is_empty() => bail!("rician_db_values is empty"),
            Experiment::Roc if self.roc_targets.is_empty() => bail!("roc_targets is empty"),
            _ => {}
        }
        if let Some(t) = self.roc_targets.iter().find(|t| !in_unit(**t)) {
            bail!("ROC target {t} outside (0, 1]");
        }
        let t = &self.trials;
        if t.h0 == 0 || t.h1 == 0 || t.h0_heldout == Some(0) || t.noise_draws_per_channel == 0 {
            bail!("trial counts must be at least 1");
        }
        if self.optimizer.restarts == 0 || self.optimizer.max_iter == 0 {
            bail!("optimizer needs at least one restart and one iteration");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_resolves_to_defaults() {
        let c: ExperimentConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.system.n_sensors, 10);
        assert_eq!(c.system.ris_position, [40.0, 20.0, 5.0]);
        assert_eq!(c.system.fc_position, [65.0, 40.0, 2.0]);
        assert_eq!(c.system.ris_rows * c.system.ris_cols, 25);
        assert_eq!((c.system.pd, c.system.pf, c.system.alpha), (0.5, 0.05, 1.0));
        assert_eq!(c.system.path_loss_mu_db, -20.0);
        assert_eq!((c.system.path_loss_exp_ris, c.system.path_loss_exp_direct), (2.0, 4.0));
        assert_eq!(c.system.noise_power_dbm, -70.0);
        assert_eq!(c.system.rician_db_range, (10.0, 20.0));
        assert_eq!(c.target_pf0, 0.01);
        assert_eq!(c.trials.counts().heldout_h0, 50_000);
        c.validate().unwrap();
    }

    #[test]
    fn partial_documents_and_typos() {
        let c: ExperimentConfig =
            serde_json::from_str(r#"{"experiment": "roc", "system": {"n_antennas": 64}, "rules": ["ZFC", "MRC"]}"#)
                .unwrap();
        assert_eq!(c.experiment, Experiment::Roc);
        assert_eq!(c.system.n_antennas, 64);
        assert_eq!(c.system.n_sensors, 10);
        assert_eq!(c.rules, vec![FusionRule::Zfc, FusionRule::Mrc]);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"n_value": [1]}"#).is_err());
    }

    #[test]
    fn validation() {
        let bad = ExperimentConfig { target_pf0: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ExperimentConfig { n_values: vec![], ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ExperimentConfig { trials: TrialSettings { h1: 0, ..Default::default() }, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
