//! Fusion statistics computed at the FC from the received vector.
//!
//! The four linear rules share the form `Λ = Re(a† y)` and differ in the
//! combiner `a`:
//!
//! | rule    | combiner                               |
//! |---------|----------------------------------------|
//! | MRC     | `H^e D_α^{1/2} 1`                      |
//! | mMRC-1  | `H^e V(Θ)^{-1} D_α^{-1/2} 1`           |
//! | mMRC-2  | `H^e V̄(Θ)^{-1} D_α^{-1/2} 1`           |
//! | ZFC     | `H^e (H^e† H^e)^{-1} D_α^{-1/2} 1`     |
//!
//! The ZFC statistic is not divided by N: on a noiseless input it equals the
//! number of `+1` decisions minus the number of `−1` decisions exactly.
//! Decisions are invariant to positive scaling, so the normalization only
//! changes thresholds.
//!
//! Matrix inverses are applied through Cholesky solves; a Gram matrix whose
//! condition number exceeds [`MAX_CONDITION`] is reported as a numerical
//! failure instead of being inverted.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::channel::{CMatrix, CVector};
use crate::error::{domain, Error, Result};

/// Largest K for which the LLR enumerates all `2^K` decision vectors.
pub const MAX_LLR_SENSORS: usize = 20;

/// Gram matrices with a larger condition number are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Local sensor performance and transmit energies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    pd: Vec<f64>,
    pf: Vec<f64>,
    alpha: Vec<f64>,
}

impl SensorModel {
    pub fn new(pd: Vec<f64>, pf: Vec<f64>, alpha: Vec<f64>) -> Result<Self> {
        let k = pd.len();
        if k == 0 || pf.len() != k || alpha.len() != k {
            return Err(Error::Dimension(format!(
                "sensor model with {} P_D, {} P_F and {} energies",
                pd.len(),
                pf.len(),
                alpha.len()
            )));
        }
        for i in 0..k {
            if !(0.0..=1.0).contains(&pd[i]) || !(0.0..=1.0).contains(&pf[i]) {
                return Err(domain(format!("sensor {i}: probabilities must lie in [0, 1]")));
            }
            if pd[i] < pf[i] {
                return Err(domain(format!("sensor {i}: P_D = {} is below P_F = {}", pd[i], pf[i])));
            }
            if !(alpha[i] > 0.0) || !alpha[i].is_finite() {
                return Err(domain(format!("sensor {i}: transmit energy must be positive")));
            }
        }
        Ok(Self { pd, pf, alpha })
    }

    /// K sensors sharing the same operating point and energy.
    pub fn identical(k: usize, pd: f64, pf: f64, alpha: f64) -> Result<Self> {
        Self::new(vec![pd; k], vec![pf; k], vec![alpha; k])
    }

    pub fn n_sensors(&self) -> usize {
        self.pd.len()
    }
    pub fn pd(&self) -> &[f64] {
        &self.pd
    }
    pub fn pf(&self) -> &[f64] {
        &self.pf
    }
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Probability that sensor `k` sends `+1` under the given hypothesis.
    pub fn p_one(&self, k: usize, h1: bool) -> f64 {
        if h1 {
            self.pd[k]
        } else {
            self.pf[k]
        }
    }

    /// `ln P(x | H_i)` under conditionally independent decisions.
    pub fn log_pmf(&self, x: &[f64], h1: bool) -> f64 {
        x.iter()
            .enumerate()
            .map(|(k, &xk)| {
                let p = self.p_one(k, h1);
                if xk > 0.0 {
                    p.ln()
                } else {
                    (1.0 - p).ln()
                }
            })
            .sum()
    }
}

/// The five fusion rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FusionRule {
    Llr,
    Mrc,
    Mmrc1,
    Mmrc2,
    Zfc,
}

impl FusionRule {
    pub const ALL: [FusionRule; 5] = [Self::Llr, Self::Mrc, Self::Mmrc1, Self::Mmrc2, Self::Zfc];

    pub fn name(self) -> &'static str {
        match self {
            Self::Llr => "LLR",
            Self::Mrc => "MRC",
            Self::Mmrc1 => "MMRC1",
            Self::Mmrc2 => "MMRC2",
            Self::Zfc => "ZFC",
        }
    }
}

impl fmt::Display for FusionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| domain(format!("unknown fusion rule '{s}'")))
    }
}

/// Everything a fusion statistic may need for one received vector.
#[derive(Debug, Clone, Copy)]
pub struct FusionInput<'a> {
    pub y: &'a CVector,
    pub h_e: &'a CMatrix,
    /// Instantaneous `V(Θ)`, needed by mMRC-1.
    pub v: Option<&'a CMatrix>,
    /// Expected `V̄(Θ)`, needed by mMRC-2.
    pub v_bar: Option<&'a CMatrix>,
    pub sigma_w2: f64,
    pub sensors: &'a SensorModel,
}

impl FusionInput<'_> {
    fn check(&self) -> Result<()> {
        let (n, k) = self.h_e.shape();
        if self.y.len() != n || self.sensors.n_sensors() != k {
            return Err(Error::Dimension(format!(
                "y has {} entries, H^e is {n}×{k}, {} sensors",
                self.y.len(),
                self.sensors.n_sensors()
            )));
        }
        for m in [self.v, self.v_bar].into_iter().flatten() {
            if m.shape() != (k, k) {
                return Err(Error::Dimension(format!("Gram matrix is {:?}, expected {k}×{k}", m.shape())));
            }
        }
        Ok(())
    }
}

fn real_vector(values: impl ExactSizeIterator<Item = f64>) -> CVector {
    let n = values.len();
    DVector::from_iterator(n, values.map(|v| Complex64::new(v, 0.0)))
}

/// `Re(a† y)`.
pub fn linear_statistic(a: &CVector, y: &CVector) -> f64 {
    a.iter().zip(y.iter()).map(|(ai, yi)| ai.re * yi.re + ai.im * yi.im).sum()
}

/// `H^e D_α^{1/2} 1`.
pub fn mrc_combiner(h_e: &CMatrix, alpha: &[f64]) -> CVector {
    h_e * real_vector(alpha.iter().map(|a| a.sqrt()))
}

/// Solve `A z = b` for Hermitian positive-definite `A`, refusing
/// ill-conditioned systems.
pub fn solve_hermitian(a: &CMatrix, b: &CVector, what: &'static str) -> Result<CVector> {
    let eig = a.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::Numerical { what, condition });
    }
    let chol = a.clone().cholesky().ok_or(Error::Numerical { what, condition })?;
    Ok(chol.solve(b))
}

/// `H^e A^{-1} D_α^{-1/2} 1` for a Hermitian positive-definite K×K matrix `A`.
pub fn corrected_combiner(h_e: &CMatrix, gram: &CMatrix, alpha: &[f64], what: &'static str) -> Result<CVector> {
    let rhs = real_vector(alpha.iter().map(|a| 1.0 / a.sqrt()));
    Ok(h_e * solve_hermitian(gram, &rhs, what)?)
}

/// `H^e (H^e† H^e)^{-1} D_α^{-1/2} 1`.
pub fn zfc_combiner(h_e: &CMatrix, alpha: &[f64]) -> Result<CVector> {
    let (n, k) = h_e.shape();
    if n < k {
        return Err(domain(format!("zero forcing needs N ≥ K (N={n}, K={k})")));
    }
    corrected_combiner(h_e, &h_e.ad_mul(h_e), alpha, "H^e†H^e")
}

/// Maximum ratio combining statistic.
pub fn mrc_statistic(input: &FusionInput) -> Result<f64> {
    input.check()?;
    Ok(linear_statistic(&mrc_combiner(input.h_e, input.sensors.alpha()), input.y))
}

/// Modified MRC corrected by the instantaneous `V(Θ)`.
pub fn mmrc1_statistic(input: &FusionInput) -> Result<f64> {
    input.check()?;
    let v = input.v.ok_or_else(|| domain("mMRC-1 needs V(Θ)"))?;
    let a = corrected_combiner(input.h_e, v, input.sensors.alpha(), "V(Θ)")?;
    Ok(linear_statistic(&a, input.y))
}

/// Modified MRC corrected by the expected `V̄(Θ)`.
pub fn mmrc2_statistic(input: &FusionInput) -> Result<f64> {
    input.check()?;
    let v = input.v_bar.ok_or_else(|| domain("mMRC-2 needs V̄(Θ)"))?;
    let a = corrected_combiner(input.h_e, v, input.sensors.alpha(), "V̄(Θ)")?;
    Ok(linear_statistic(&a, input.y))
}

/// Zero-forcing combiner statistic.
pub fn zfc_statistic(input: &FusionInput) -> Result<f64> {
    input.check()?;
    Ok(linear_statistic(&zfc_combiner(input.h_e, input.sensors.alpha())?, input.y))
}

/// Log-likelihood ratio.
///
/// Returns `+∞`/`−∞` when one hypothesis assigns zero likelihood to `y`,
/// which cannot happen for valid pmfs and finite inputs.
pub fn llr_statistic(input: &FusionInput) -> Result<f64> {
    input.check()?;
    Ok(LlrEvaluator::new(input.h_e, input.sensors, input.sigma_w2)?.evaluate(input.y))
}

/// Per-channel precomputation for the LLR.
///
/// With `s_x = H^e D_α^{1/2} x`, each exponent `−‖y − s_x‖²/σ²` is
/// `(2 Re(x^T c) − ‖s_x‖² − ‖y‖²)/σ²` where `c = D_α^{1/2} H^e† y`. The
/// `‖y‖²` term cancels in the ratio, `‖s_x‖²` is tabulated once per channel
/// and `Re(x^T c)` is assembled from two half-width tables per `y`.
///
/// Decision vectors are indexed by bit pattern: bit `k` set means `x_k = +1`.
#[derive(Debug, Clone)]
pub struct LlrEvaluator {
    scaled: CMatrix,
    quad: Vec<f64>,
    log_prior_h1: Vec<f64>,
    log_prior_h0: Vec<f64>,
    inv_sigma2: f64,
    low_bits: usize,
}

impl LlrEvaluator {
    pub fn new(h_e: &CMatrix, sensors: &SensorModel, sigma_w2: f64) -> Result<Self> {
        let k = h_e.ncols();
        if k > MAX_LLR_SENSORS {
            return Err(Error::Capability(format!(
                "LLR enumeration over 2^{k} decision vectors (limit K = {MAX_LLR_SENSORS})"
            )));
        }
        if sensors.n_sensors() != k {
            return Err(Error::Dimension(format!("{} sensors for {k} channel columns", sensors.n_sensors())));
        }
        if !(sigma_w2 > 0.0) {
            return Err(domain(format!("noise power must be positive, got {sigma_w2}")));
        }
        let mut scaled = h_e.clone();
        for (mut col, a) in scaled.column_iter_mut().zip(sensors.alpha()) {
            col *= Complex64::new(a.sqrt(), 0.0);
        }
        let gram = scaled.ad_mul(&scaled).map(|z| z.re);
        let size = 1usize << k;

        // ‖s_x‖² over all patterns by Gray-code walk from x = −1.
        let mut quad = vec![0.0; size];
        let mut gx: Vec<f64> = (0..k).map(|i| -gram.row(i).sum()).collect();
        let mut q = gram.sum();
        quad[0] = q;
        let mut code = 0usize;
        for step in 1..size {
            let bit = step.trailing_zeros() as usize;
            code ^= 1 << bit;
            let delta = if code & (1 << bit) != 0 { 2.0 } else { -2.0 };
            q += 2.0 * delta * gx[bit] + delta * delta * gram[(bit, bit)];
            for (i, g) in gx.iter_mut().enumerate() {
                *g += delta * gram[(i, bit)];
            }
            quad[code] = q;
        }

        let log_table = |h1: bool| -> Vec<f64> {
            let ln_one: Vec<f64> = (0..k).map(|i| sensors.p_one(i, h1).ln()).collect();
            let ln_minus: Vec<f64> = (0..k).map(|i| (1.0 - sensors.p_one(i, h1)).ln()).collect();
            (0..size)
                .map(|pat| (0..k).map(|i| if pat >> i & 1 == 1 { ln_one[i] } else { ln_minus[i] }).sum())
                .collect()
        };
        Ok(Self {
            scaled,
            quad,
            log_prior_h1: log_table(true),
            log_prior_h0: log_table(false),
            inv_sigma2: 1.0 / sigma_w2,
            low_bits: k / 2,
        })
    }

    pub fn evaluate(&self, y: &CVector) -> f64 {
        let k = self.scaled.ncols();
        let c: Vec<f64> = self.scaled.ad_mul(y).iter().map(|z| z.re).collect();
        let half_table = |range: std::ops::Range<usize>| -> Vec<f64> {
            let width = range.len();
            (0..1usize << width)
                .map(|pat| {
                    range
                        .clone()
                        .enumerate()
                        .map(|(j, i)| if pat >> j & 1 == 1 { c[i] } else { -c[i] })
                        .sum()
                })
                .collect()
        };
        let low = half_table(0..self.low_bits);
        let high = half_table(self.low_bits..k);
        let mask = (1usize << self.low_bits) - 1;

        let exponent: Vec<f64> = self
            .quad
            .iter()
            .enumerate()
            .map(|(pat, q)| (2.0 * (low[pat & mask] + high[pat >> self.low_bits]) - q) * self.inv_sigma2)
            .collect();
        let num = log_sum_exp(exponent.iter().zip(&self.log_prior_h1).map(|(e, p)| e + p));
        let den = log_sum_exp(exponent.iter().zip(&self.log_prior_h0).map(|(e, p)| e + p));
        match (num == f64::NEG_INFINITY, den == f64::NEG_INFINITY) {
            (true, true) => f64::NAN,
            (true, false) => f64::NEG_INFINITY,
            (false, true) => f64::INFINITY,
            (false, false) => num - den,
        }
    }
}

/// Max-shifted `ln Σ exp(v)`; `−∞` for an empty or all-`−∞` input.
pub fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}
