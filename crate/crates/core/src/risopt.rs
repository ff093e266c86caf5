//! RIS phase design from long-term statistics.
//!
//! Under dominant line-of-sight the Gram matrix collapses to
//! `V_LoS(Θ) = D_wf + u u†`, a rank-one update of a diagonal matrix. The
//! Sherman–Morrison formula turns the noise-variance proxy
//! `f(θ) = 1ᵀ D_α^{-1/2} V_LoS^{-1}(θ) D_α^{-1/2} 1` into `c0 − g(θ)` with
//!
//! ```text
//! g(θ) = |v1† θ*|² / (θᵀ Ξ θ*),   c0 = Σ_k 1/(α_k d_wf,k)
//! S1 = √d_rf · diag(a_M)* H_LoS D_wr^{1/2}
//! v1 = S1 D_wf^{-1} D_α^{-1/2} 1
//! Ξ  = I/M + S1 D_wf^{-1} S1†
//! ```
//!
//! so minimizing the proxy is maximizing `g` over unit-modulus `θ`.
//!
//! Writing `ψ = θ*`, `g = ψ†v1v1†ψ / ψ†Ξψ`. The MM step minorizes the ratio
//! through convexity of `|z|²/c` and then bounds `ψ†Ξψ` with `λ_max(Ξ)`,
//! which leaves a linear surrogate maximized elementwise:
//!
//! ```text
//! ψ ← exp(j∠[ v1v1†ψ / (ψ†Ξψ) − (ψ†v1v1†ψ)/(ψ†Ξψ)² · (Ξ − λ_max I) ψ ])
//! ```

use nalgebra::DVector;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{CMatrix, CVector, ChannelModel, RisPhases};
use crate::error::{domain, Error, Result};
use crate::rng::{substream, StreamTag};

/// Quantities the design depends on, built once per layout.
#[derive(Debug, Clone)]
pub struct LongTermDesignInputs {
    pub s1: CMatrix,
    pub v1: CVector,
    pub xi: CMatrix,
    pub lambda_max_xi: f64,
    /// `Σ_k 1/(α_k d_wf,k)`, the proxy value without any RIS contribution.
    pub c0: f64,
}

/// Objective values seen by the optimizer, starting with the initial point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmTrace {
    pub g_values: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmOptions {
    pub max_iter: usize,
    pub rel_tol: f64,
    /// Independent random initializations; the best final objective wins.
    pub restarts: usize,
}

impl Default for MmOptions {
    fn default() -> Self {
        Self { max_iter: 20_000, rel_tol: 1e-8, restarts: 10 }
    }
}

/// Result of a multi-start design.
#[derive(Debug, Clone)]
pub struct PhaseDesign {
    pub theta: RisPhases,
    pub g: f64,
    /// Restart that produced `theta`.
    pub best_restart: usize,
    /// One trace per restart.
    pub traces: Vec<MmTrace>,
}

pub fn build_design_inputs(model: &ChannelModel, alpha: &[f64]) -> Result<LongTermDesignInputs> {
    let gains = model.gains();
    let k = model.n_sensors();
    let m = model.n_ris_elements();
    if alpha.len() != k {
        return Err(Error::Dimension(format!("{} transmit energies for {k} sensors", alpha.len())));
    }
    if let Some(i) = gains.d_wf.iter().position(|d| !(*d > 0.0)) {
        return Err(domain(format!("direct-link gain of sensor {i} must be positive")));
    }
    let a_m = model.ris_steering();
    let h_los = model.los_sensor_responses();
    let amp = gains.d_rf.sqrt();
    let s1 = CMatrix::from_fn(m, k, |i, j| a_m[i].conj() * h_los[(i, j)] * (amp * gains.d_wr[j].sqrt()));
    let weights = DVector::from_iterator(
        k,
        gains.d_wf.iter().zip(alpha).map(|(d, a)| Complex64::new(1.0 / (d * a.sqrt()), 0.0)),
    );
    let v1 = &s1 * weights;
    let mut scaled = s1.clone();
    for (mut col, d) in scaled.column_iter_mut().zip(&gains.d_wf) {
        col /= Complex64::new(*d, 0.0);
    }
    let xi = CMatrix::identity(m, m) * Complex64::new(1.0 / m as f64, 0.0) + &scaled * s1.adjoint();
    let xi = (&xi + xi.adjoint()) * Complex64::new(0.5, 0.0);
    let lambda_max_xi = xi.symmetric_eigenvalues().max();
    let c0 = gains.d_wf.iter().zip(alpha).map(|(d, a)| 1.0 / (a * d)).sum();
    Ok(LongTermDesignInputs { s1, v1, xi, lambda_max_xi, c0 })
}

fn check_len(theta: &RisPhases, inputs: &LongTermDesignInputs) -> Result<()> {
    if theta.len() != inputs.v1.len() {
        return Err(Error::Dimension(format!("{} phases for {} RIS elements", theta.len(), inputs.v1.len())));
    }
    Ok(())
}

/// `g(θ) = |v1† θ*|² / (θᵀ Ξ θ*)`.
pub fn g_objective(theta: &RisPhases, inputs: &LongTermDesignInputs) -> Result<f64> {
    check_len(theta, inputs)?;
    let psi = theta.as_vector().conjugate();
    Ok(ratio_parts(&psi, inputs).0)
}

/// (g, v1†ψ, ψ†Ξψ, Ξψ)
fn ratio_parts(psi: &CVector, inputs: &LongTermDesignInputs) -> (f64, Complex64, f64, CVector) {
    let s = inputs.v1.dotc(psi);
    let xi_psi = &inputs.xi * psi;
    let c = psi.dotc(&xi_psi).re;
    (s.norm_sqr() / c, s, c, xi_psi)
}

/// One MM step. Elements whose bracket vanishes keep their phase.
pub fn mm_update(theta: &RisPhases, inputs: &LongTermDesignInputs) -> Result<RisPhases> {
    check_len(theta, inputs)?;
    let psi = theta.as_vector().conjugate();
    let (_, s, c, xi_psi) = ratio_parts(&psi, inputs);
    let lead = s / c;
    let curv = s.norm_sqr() / (c * c);
    let next = DVector::from_fn(psi.len(), |m, _| {
        let bracket = inputs.v1[m] * lead - (xi_psi[m] - psi[m] * inputs.lambda_max_xi) * curv;
        let mag = bracket.norm();
        if mag > 0.0 && mag.is_finite() {
            (bracket / mag).conj()
        } else {
            theta.as_vector()[m]
        }
    });
    RisPhases::new(next)
}

/// Iterate [`mm_update`] from `init` until the objective change drops to
/// `rel_tol·max(1, g)` or `max_iter` steps have run.
pub fn optimize_phases(
    inputs: &LongTermDesignInputs,
    init: &RisPhases,
    max_iter: usize,
    rel_tol: f64,
) -> Result<(RisPhases, MmTrace)> {
    if max_iter == 0 {
        return Err(domain("max_iter must be at least 1"));
    }
    if !(rel_tol > 0.0) {
        return Err(domain("rel_tol must be positive"));
    }
    let mut theta = init.clone();
    let mut g = g_objective(&theta, inputs)?;
    let mut best = (theta.clone(), g);
    let mut trace = MmTrace { g_values: vec![g], iterations: 0, converged: false };
    for iter in 1..=max_iter {
        let next = mm_update(&theta, inputs)?;
        let g_next = g_objective(&next, inputs)?;
        trace.g_values.push(g_next);
        trace.iterations = iter;
        if g_next > best.1 {
            best = (next.clone(), g_next);
        }
        let done = (g_next - g).abs() <= rel_tol * g.max(1.0);
        theta = next;
        g = g_next;
        if done {
            trace.converged = true;
            break;
        }
    }
    Ok((best.0, trace))
}

/// Run `options.restarts` (at least one) designs from random phases drawn
/// from the seed's optimizer substreams and keep the best.
pub fn optimize_with_restarts(inputs: &LongTermDesignInputs, options: &MmOptions, seed: u64) -> Result<PhaseDesign> {
    let m = inputs.v1.len();
    let runs = (0..options.restarts.max(1) as u64)
        .into_par_iter()
        .map(|r| {
            let init = RisPhases::random(&mut substream(seed, StreamTag::OptimizerInit, &[r]), m);
            optimize_phases(inputs, &init, options.max_iter, options.rel_tol)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best_restart = 0;
    let mut best_g = f64::NEG_INFINITY;
    for (i, (theta, _)) in runs.iter().enumerate() {
        let g = g_objective(theta, inputs)?;
        if g > best_g {
            best_g = g;
            best_restart = i;
        }
    }
    let theta = runs[best_restart].0.clone();
    let traces = runs.into_iter().map(|(_, t)| t).collect();
    Ok(PhaseDesign { theta, g: best_g, best_restart, traces })
}

/// `1ᵀ D_α^{-1/2} V_LoS^{-1}(θ) D_α^{-1/2} 1` by explicit inversion of
/// `V_LoS`. Independent of the Sherman–Morrison route used by [`g_objective`].
pub fn noise_variance_proxy(model: &ChannelModel, theta: &RisPhases, alpha: &[f64]) -> Result<f64> {
    let v = model.v_los(theta)?;
    let condition = f64::INFINITY;
    let inv = v.try_inverse().ok_or(Error::Numerical { what: "V_LoS(Θ)", condition })?;
    let w = DVector::from_iterator(alpha.len(), alpha.iter().map(|a| Complex64::new(1.0 / a.sqrt(), 0.0)));
    Ok(w.dotc(&(inv * &w)).re)
}
