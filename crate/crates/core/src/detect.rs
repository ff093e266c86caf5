//! Monte Carlo estimation of system-level false-alarm and detection rates.
//!
//! A run has three independent phases, each over fresh channel draws:
//! H0 trials to calibrate the threshold at the target `P_F0`, held-out H0
//! trials to measure the achieved false-alarm rate, and H1 trials for `P_D0`.
//! The threshold is pooled over channel realizations and decisions use a
//! strict `Λ > γ`. Statistics that pile up on a single value at the
//! threshold (the LLR does at high SNR) get the Neyman–Pearson randomized
//! decision: a trial tied with `γ` counts as a detection with probability
//! `q`, and rates use the expected count instead of a coin flip.
//!
//! Every channel index owns its substreams (channel, RIS phases, decisions
//! and noise), so results do not depend on the number of worker threads.
//! Standard errors treat the noise draws of one channel as a cluster; with
//! one noise draw per channel they reduce to the binomial value.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::channel::{composite_channel, draw_noise, CMatrix, CVector, ChannelModel, RisPhases};
use crate::error::{domain, Error, Result};
use crate::fusion::{
    corrected_combiner, linear_statistic, mrc_combiner, zfc_combiner, FusionRule, LlrEvaluator, SensorModel,
};
use crate::risopt::{build_design_inputs, optimize_with_restarts, MmOptions, PhaseDesign};
use crate::rng::{substream, StreamTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hypothesis {
    H0,
    H1,
}

/// How the RIS is configured during a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RisMode {
    /// Fresh uniform phases for every channel realization.
    RandomPhases,
    /// Phases designed once per layout from long-term statistics.
    LongTermDesign,
}

impl RisMode {
    pub const ALL: [RisMode; 2] = [Self::RandomPhases, Self::LongTermDesign];

    pub fn name(self) -> &'static str {
        match self {
            Self::RandomPhases => "random_phases",
            Self::LongTermDesign => "long_term_design",
        }
    }
}

impl fmt::Display for RisMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RisMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| domain(format!("unknown RIS mode '{s}'")))
    }
}

/// Local decisions `x ∈ {−1, +1}^K`, independent across sensors.
pub fn draw_decisions<R: Rng + ?Sized>(sensors: &SensorModel, hypothesis: Hypothesis, rng: &mut R) -> Vec<f64> {
    let h1 = hypothesis == Hypothesis::H1;
    (0..sensors.n_sensors())
        .map(|k| if rng.random::<f64>() < sensors.p_one(k, h1) { 1.0 } else { -1.0 })
        .collect()
}

/// True when fewer than `⌈10/target⌉` samples back a quantile estimate.
pub fn calibration_is_undersampled(samples: usize, target_pf0: f64) -> bool {
    (samples as f64) < (10.0 / target_pf0).ceil()
}

/// Empirical `(1 − target)` quantile of ascending H0 statistics.
///
/// With `m = ⌊n·target⌋` the threshold sits midway between the `(n−m)`-th and
/// `(n−m+1)`-th order statistics, so at most `m` calibration values exceed it.
/// `m = n` yields `−∞`.
pub fn calibrate_threshold(h0_sorted: &[f64], target_pf0: f64) -> Result<f64> {
    let n = h0_sorted.len();
    if n == 0 {
        return Err(domain("cannot calibrate a threshold on an empty sample"));
    }
    if !(0.0..=1.0).contains(&target_pf0) {
        return Err(domain(format!("target false-alarm rate {target_pf0} outside [0, 1]")));
    }
    debug_assert!(h0_sorted.windows(2).all(|w| w[0] <= w[1]));
    let m = ((n as f64 * target_pf0) + 1e-9).floor() as usize;
    if m >= n {
        return Ok(f64::NEG_INFINITY);
    }
    let lo = h0_sorted[n - m - 1];
    if m == 0 {
        return Ok(lo);
    }
    let hi = h0_sorted[n - m];
    Ok(if lo.is_finite() && hi.is_finite() { lo + (hi - lo) / 2.0 } else { lo })
}

/// Threshold plus the randomization applied to statistics tied with it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    /// Statistics within this distance of `threshold` count as ties.
    pub tie_tolerance: f64,
    /// Probability of deciding H1 on a tie.
    pub tie_probability: f64,
}

impl Calibration {
    /// Calibrate on ascending H0 statistics. Without ties this is
    /// [`calibrate_threshold`] with a plain `Λ > γ` decision.
    pub fn from_sorted(h0_sorted: &[f64], target_pf0: f64) -> Result<Self> {
        let threshold = calibrate_threshold(h0_sorted, target_pf0)?;
        if !threshold.is_finite() {
            return Ok(Self { threshold, tie_tolerance: 0.0, tie_probability: 0.0 });
        }
        let tie_tolerance = 1e-9 * threshold.abs().max(1.0);
        let lo = h0_sorted.partition_point(|v| *v < threshold - tie_tolerance);
        let hi = h0_sorted.partition_point(|v| *v <= threshold + tie_tolerance);
        let (ties, above) = (hi - lo, h0_sorted.len() - hi);
        let tie_probability = if ties == 0 {
            0.0
        } else {
            ((h0_sorted.len() as f64 * target_pf0 - above as f64) / ties as f64).clamp(0.0, 1.0)
        };
        Ok(Self { threshold, tie_tolerance, tie_probability })
    }

    /// Probability of deciding H1 for statistic `value`.
    pub fn decide(&self, value: f64) -> f64 {
        if self.threshold == f64::NEG_INFINITY {
            return 1.0;
        }
        let d = value - self.threshold;
        if d > self.tie_tolerance {
            1.0
        } else if d >= -self.tie_tolerance {
            self.tie_probability
        } else {
            0.0
        }
    }
}

fn binomial_tail(k: usize, p: f64, nu: usize) -> f64 {
    if nu == 0 {
        return 1.0;
    }
    let mut coeff = 1.0;
    let mut total = 0.0;
    for i in 0..=k {
        if i > 0 {
            coeff *= (k - i + 1) as f64 / i as f64;
        }
        if i >= nu {
            total += coeff * p.powi(i as i32) * (1.0 - p).powi((k - i) as i32);
        }
    }
    total
}

/// `(P_D0, P_F0)` of the counting rule "at least `nu` sensors report `+1`"
/// over an error-free channel.
pub fn observation_bound(k: usize, pd: f64, pf: f64, nu: usize) -> Result<(f64, f64)> {
    if nu > k {
        return Err(domain(format!("count threshold {nu} exceeds K = {k}")));
    }
    if !(0.0..=1.0).contains(&pd) || !(0.0..=1.0).contains(&pf) {
        return Err(domain("sensor probabilities must lie in [0, 1]"));
    }
    Ok((binomial_tail(k, pd, nu), binomial_tail(k, pf, nu)))
}

/// `(P_F0, P_D0)` of the observation bound for `ν = 0..=K`.
pub fn observation_bound_curve(k: usize, pd: f64, pf: f64) -> Result<Vec<(f64, f64)>> {
    (0..=k).map(|nu| observation_bound(k, pd, pf, nu).map(|(d, f)| (f, d))).collect()
}

/// Detection rate of the randomized observation bound at false-alarm rate
/// `pf0`: linear interpolation on the curve closed by `(0, 0)`.
pub fn observation_bound_pd_at(curve: &[(f64, f64)], pf0: f64) -> f64 {
    let mut pts: Vec<(f64, f64)> = curve.to_vec();
    pts.push((0.0, 0.0));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    if pf0 <= 0.0 {
        return 0.0;
    }
    for w in pts.windows(2) {
        let ((f0, d0), (f1, d1)) = (w[0], w[1]);
        if pf0 <= f1 {
            if f1 == f0 {
                return d1;
            }
            return d0 + (d1 - d0) * (pf0 - f0) / (f1 - f0);
        }
    }
    pts.last().map_or(1.0, |p| p.1)
}

/// Long-term state of one sensor layout.
#[derive(Debug, Clone)]
pub struct LayoutState {
    pub model: ChannelModel,
    pub design: Option<PhaseDesign>,
}

/// Everything a Monte Carlo run needs besides trial counts: the sensors and
/// one or more layouts. Channel index `c` uses layout `c mod L`.
#[derive(Debug, Clone)]
pub struct Scenario {
    sensors: SensorModel,
    layouts: Vec<LayoutState>,
}

impl Scenario {
    pub fn new(sensors: SensorModel, models: Vec<ChannelModel>) -> Result<Self> {
        let first = models.first().ok_or_else(|| domain("scenario needs at least one layout"))?;
        let dims = (first.n_antennas(), first.n_ris_elements(), first.n_sensors());
        for m in &models {
            if (m.n_antennas(), m.n_ris_elements(), m.n_sensors()) != dims {
                return Err(Error::Dimension("all layouts must share N, M and K".into()));
            }
        }
        if sensors.n_sensors() != dims.2 {
            return Err(Error::Dimension(format!("{} sensors in model, {} in layout", sensors.n_sensors(), dims.2)));
        }
        let layouts = models.into_iter().map(|model| LayoutState { model, design: None }).collect();
        Ok(Self { sensors, layouts })
    }

    /// Run the long-term phase design for every layout that lacks one.
    pub fn design_phases(&mut self, options: &MmOptions, seed: u64) -> Result<()> {
        for (i, layout) in self.layouts.iter_mut().enumerate() {
            if layout.design.is_none() {
                let inputs = build_design_inputs(&layout.model, self.sensors.alpha())?;
                layout.design = Some(optimize_with_restarts(&inputs, options, seed.wrapping_add(i as u64))?);
            }
        }
        Ok(())
    }

    pub fn sensors(&self) -> &SensorModel {
        &self.sensors
    }
    pub fn layouts(&self) -> &[LayoutState] {
        &self.layouts
    }
    pub fn n_antennas(&self) -> usize {
        self.layouts[0].model.n_antennas()
    }
    pub fn n_sensors(&self) -> usize {
        self.sensors.n_sensors()
    }
    pub fn n_ris_elements(&self) -> usize {
        self.layouts[0].model.n_ris_elements()
    }
}

/// Trial counts and seed for one Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialCounts {
    /// H0 trials used to set the threshold.
    pub calibration_h0: usize,
    /// Fresh H0 trials used to measure the achieved false-alarm rate.
    pub heldout_h0: usize,
    pub h1: usize,
    pub noise_draws_per_channel: usize,
}

/// Single-rule, single-operating-point configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub counts: TrialCounts,
    pub target_pf0: f64,
    pub master_seed: u64,
    pub rule: FusionRule,
    pub ris_mode: RisMode,
}

impl TrialConfig {
    fn validate(&self) -> Result<()> {
        validate(&self.counts, &[self.target_pf0])
    }
}

fn validate(counts: &TrialCounts, targets: &[f64]) -> Result<()> {
    if counts.calibration_h0 == 0 || counts.heldout_h0 == 0 || counts.h1 == 0 || counts.noise_draws_per_channel == 0 {
        return Err(domain("trial counts must be at least 1"));
    }
    if let Some(t) = targets.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
        return Err(domain(format!("target false-alarm rate {t} outside (0, 1]")));
    }
    Ok(())
}

/// Estimated operating point of one rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub rule: FusionRule,
    pub ris_mode: RisMode,
    pub pf0_target: f64,
    /// False-alarm rate measured on the held-out H0 trials.
    pub pf0_achieved: f64,
    pub pf0_stderr: f64,
    pub pd0: f64,
    pub std_err_pd0: f64,
    pub threshold: f64,
    /// Detection probability assigned to statistics tied with `threshold`.
    pub tie_probability: f64,
    pub trials_h0: usize,
    pub trials_h0_heldout: usize,
    pub trials_h1: usize,
    /// Channels on which the rule could not be evaluated (e.g. singular Gram
    /// matrix); their trials are excluded from every count above.
    pub numerical_failures: usize,
    pub calibration_undersampled: bool,
}

/// Statistics of every requested rule on every channel of one phase.
/// `None` marks a channel where the rule failed numerically.
struct PhaseSamples {
    per_rule: Vec<Vec<Option<Vec<f64>>>>,
}

impl PhaseSamples {
    fn failures(&self, r: usize) -> usize {
        self.per_rule[r].iter().filter(|c| c.is_none()).count()
    }

    fn trials(&self, r: usize) -> usize {
        self.per_rule[r].iter().flatten().map(Vec::len).sum()
    }

    /// Fraction of trials deciding H1 and its cluster-robust standard error.
    fn exceedance(&self, r: usize, calibration: &Calibration) -> (f64, f64) {
        let clusters: Vec<(f64, f64)> = self.per_rule[r]
            .iter()
            .flatten()
            .map(|s| (s.iter().map(|v| calibration.decide(*v)).sum::<f64>(), s.len() as f64))
            .collect();
        let total: f64 = clusters.iter().map(|c| c.1).sum();
        if total == 0.0 {
            return (f64::NAN, f64::NAN);
        }
        let p = clusters.iter().map(|c| c.0).sum::<f64>() / total;
        let n = clusters.len() as f64;
        let se = if n > 1.0 {
            let ss: f64 = clusters.iter().map(|(d, m)| (d - p * m).powi(2)).sum();
            (n / (n - 1.0) * ss).sqrt() / total
        } else {
            0.0
        };
        (p, se)
    }
}

/// Per-channel combiners for the requested rules.
enum Prepared {
    Linear(CVector),
    Llr(Box<LlrEvaluator>),
}

fn prepare(
    rule: FusionRule,
    model: &ChannelModel,
    sensors: &SensorModel,
    h_e: &CMatrix,
    h_r: &CMatrix,
    theta: &RisPhases,
) -> Result<Prepared> {
    let alpha = sensors.alpha();
    Ok(match rule {
        FusionRule::Llr => Prepared::Llr(Box::new(LlrEvaluator::new(h_e, sensors, model.fading().sigma_w2())?)),
        FusionRule::Mrc => Prepared::Linear(mrc_combiner(h_e, alpha)),
        FusionRule::Mmrc1 => Prepared::Linear(corrected_combiner(h_e, &model.gram_v(h_r, theta)?, alpha, "V(Θ)")?),
        FusionRule::Mmrc2 => Prepared::Linear(corrected_combiner(h_e, &model.v_bar(theta)?, alpha, "V̄(Θ)")?),
        FusionRule::Zfc => Prepared::Linear(zfc_combiner(h_e, alpha)?),
    })
}

#[derive(Clone, Copy)]
struct Phase {
    hypothesis: Hypothesis,
    channel_tag: StreamTag,
    noise_tag: StreamTag,
    /// Offset keeping RIS-phase substreams of different phases apart.
    phase_index: u64,
}

const CALIBRATION: Phase = Phase {
    hypothesis: Hypothesis::H0,
    channel_tag: StreamTag::ChannelCalibration,
    noise_tag: StreamTag::NoiseCalibration,
    phase_index: 0,
};
const HELD_OUT: Phase = Phase {
    hypothesis: Hypothesis::H0,
    channel_tag: StreamTag::ChannelHeldOut,
    noise_tag: StreamTag::NoiseHeldOut,
    phase_index: 1,
};
const DETECTION: Phase = Phase {
    hypothesis: Hypothesis::H1,
    channel_tag: StreamTag::ChannelDetection,
    noise_tag: StreamTag::NoiseDetection,
    phase_index: 2,
};

fn run_phase(
    scenario: &Scenario,
    mode: RisMode,
    rules: &[FusionRule],
    phase: Phase,
    trials: usize,
    noise_per_channel: usize,
    seed: u64,
) -> Result<PhaseSamples> {
    let n_channels = trials.div_ceil(noise_per_channel);
    let n_layouts = scenario.layouts.len();
    let per_channel = (0..n_channels)
        .into_par_iter()
        .map(|c| {
            let layout = &scenario.layouts[c % n_layouts];
            let model = &layout.model;
            let theta = match mode {
                RisMode::RandomPhases => RisPhases::random(
                    &mut substream(seed, StreamTag::RisPhases, &[phase.phase_index, c as u64]),
                    model.n_ris_elements(),
                ),
                RisMode::LongTermDesign => layout
                    .design
                    .as_ref()
                    .ok_or_else(|| domain("long-term design requested before Scenario::design_phases"))?
                    .theta
                    .clone(),
            };
            let real = model.draw(&mut substream(seed, phase.channel_tag, &[c as u64]));
            let h_e = composite_channel(&real, &theta)?;
            let prepared: Vec<Option<Prepared>> = rules
                .iter()
                .map(|&r| match prepare(r, model, &scenario.sensors, &h_e, &real.h_r, &theta) {
                    Ok(p) => Ok(Some(p)),
                    Err(Error::Numerical { .. }) => Ok(None),
                    Err(e) => Err(e),
                })
                .collect::<Result<_>>()?;

            let mut rng = substream(seed, phase.noise_tag, &[c as u64]);
            let sqrt_alpha: Vec<f64> = scenario.sensors.alpha().iter().map(|a| a.sqrt()).collect();
            let sigma_w2 = model.fading().sigma_w2();
            let mut stats: Vec<Vec<f64>> = vec![Vec::with_capacity(noise_per_channel); rules.len()];
            for _ in 0..noise_per_channel {
                let x = draw_decisions(&scenario.sensors, phase.hypothesis, &mut rng);
                let tx = DVector::from_iterator(
                    x.len(),
                    x.iter().zip(&sqrt_alpha).map(|(xi, a)| Complex64::new(xi * a, 0.0)),
                );
                let y = &h_e * tx + draw_noise(h_e.nrows(), sigma_w2, &mut rng)?;
                for (p, out) in prepared.iter().zip(stats.iter_mut()) {
                    match p {
                        Some(Prepared::Linear(a)) => out.push(linear_statistic(a, &y)),
                        Some(Prepared::Llr(e)) => out.push(e.evaluate(&y)),
                        None => {}
                    }
                }
            }
            Ok(prepared
                .iter()
                .zip(stats)
                .map(|(p, s)| {
                    // a NaN statistic is as unusable as a failed solve
                    p.as_ref().filter(|_| s.iter().all(|v| !v.is_nan())).map(|_| s)
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;

    let mut per_rule: Vec<Vec<Option<Vec<f64>>>> = vec![Vec::with_capacity(n_channels); rules.len()];
    for channel in per_channel {
        for (r, s) in channel.into_iter().enumerate() {
            per_rule[r].push(s);
        }
    }
    Ok(PhaseSamples { per_rule })
}

/// Estimate operating points for several rules and target false-alarm
/// rates from shared channel and noise draws.
///
/// Returns one point per (rule, target), rules outermost.
pub fn estimate_roc_points(
    scenario: &Scenario,
    mode: RisMode,
    rules: &[FusionRule],
    targets: &[f64],
    counts: &TrialCounts,
    seed: u64,
) -> Result<Vec<RocPoint>> {
    validate(counts, targets)?;
    if rules.is_empty() {
        return Ok(Vec::new());
    }
    let npc = counts.noise_draws_per_channel;
    let calib = run_phase(scenario, mode, rules, CALIBRATION, counts.calibration_h0, npc, seed)?;
    let held = run_phase(scenario, mode, rules, HELD_OUT, counts.heldout_h0, npc, seed)?;
    let det = run_phase(scenario, mode, rules, DETECTION, counts.h1, npc, seed)?;

    let mut out = Vec::with_capacity(rules.len() * targets.len());
    for (r, &rule) in rules.iter().enumerate() {
        let mut sorted: Vec<f64> = calib.per_rule[r].iter().flatten().flatten().copied().collect();
        sorted.sort_by(f64::total_cmp);
        let failures = calib.failures(r) + held.failures(r) + det.failures(r);
        for &target in targets {
            let calibration = if sorted.is_empty() {
                Calibration { threshold: f64::NAN, tie_tolerance: 0.0, tie_probability: 0.0 }
            } else {
                Calibration::from_sorted(&sorted, target)?
            };
            let (pf0, pf0_se) = held.exceedance(r, &calibration);
            let (pd0, pd0_se) = det.exceedance(r, &calibration);
            out.push(RocPoint {
                rule,
                ris_mode: mode,
                pf0_target: target,
                pf0_achieved: pf0,
                pf0_stderr: pf0_se,
                pd0,
                std_err_pd0: pd0_se,
                threshold: calibration.threshold,
                tie_probability: calibration.tie_probability,
                trials_h0: sorted.len(),
                trials_h0_heldout: held.trials(r),
                trials_h1: det.trials(r),
                numerical_failures: failures,
                calibration_undersampled: calibration_is_undersampled(sorted.len(), target),
            });
        }
    }
    Ok(out)
}

/// Single rule at a single target false-alarm rate.
pub fn estimate_roc_point(config: &TrialConfig, scenario: &Scenario) -> Result<RocPoint> {
    config.validate()?;
    let mut points = estimate_roc_points(
        scenario,
        config.ris_mode,
        &[config.rule],
        &[config.target_pf0],
        &config.counts,
        config.master_seed,
    )?;
    Ok(points.remove(0))
}
