//! Fading channel synthesis and the Gram-matrix approximations.
//!
//! Direct links are Rayleigh, `H^d = Ĥ^d D_wf^{1/2}`. The sensor→RIS and
//! RIS→FC links are Rician:
//!
//! ```text
//! H^r = [H_LoS B_wr + Ĥ^r (I − B_wr²)^{1/2}] D_wr^{1/2}
//! G   = √d_rf (b a_ula a_M† + √(1 − b²) Ĝ)
//! ```
//!
//! The composite channel is `H^e(Θ) = G Θ H^r + H^d`; for large N its Gram
//! matrix divided by N approaches `V(Θ) = D_wf + H^r† K(Θ) H^r` with
//! `K(Θ) = d_rf Θ* [(1 − b²) I + b² a_M a_M†] Θ`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::geometry::{db_to_linear, upa_steering, ula_steering, NetworkLayout, PathGains, SteeringAngles};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

const UNIT_MODULUS_TOL: f64 = 1e-12;
const HERMITIAN_TOL: f64 = 1e-10;

/// Amplitude fraction of the LoS component for a Rician factor in dB,
/// `√(κ/(1+κ))` with `κ = 10^(dB/10)`.
pub fn rician_amplitude(kappa_db: f64) -> f64 {
    let kappa = db_to_linear(kappa_db);
    (kappa / (1.0 + kappa)).sqrt()
}

/// Power in watts for a level in dBm.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

/// Long-term statistics: Rician amplitude fractions, noise power and path gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FadingParams {
    b_wr: Vec<f64>,
    b: f64,
    sigma_w2: f64,
    gains: PathGains,
}

impl FadingParams {
    pub fn new(b_wr: Vec<f64>, b: f64, sigma_w2: f64, gains: PathGains) -> Result<Self> {
        if b_wr.len() != gains.d_wf.len() || gains.d_wr.len() != gains.d_wf.len() {
            return Err(Error::Dimension(format!(
                "{} Rician factors for {} direct and {} RIS gains",
                b_wr.len(),
                gains.d_wf.len(),
                gains.d_wr.len()
            )));
        }
        if !b_wr.iter().chain([&b]).all(|v| (0.0..=1.0).contains(v)) {
            return Err(domain("LoS amplitude fractions must lie in [0, 1]"));
        }
        if !(sigma_w2 > 0.0) || !sigma_w2.is_finite() {
            return Err(domain(format!("noise power must be positive and finite, got {sigma_w2}")));
        }
        let gains_ok = gains
            .d_wf
            .iter()
            .chain(&gains.d_wr)
            .chain([&gains.d_rf])
            .all(|g| *g >= 0.0 && g.is_finite());
        if !gains_ok {
            return Err(domain("path gains must be non-negative and finite"));
        }
        Ok(Self { b_wr, b, sigma_w2, gains })
    }

    pub fn b_wr(&self) -> &[f64] {
        &self.b_wr
    }
    pub fn b(&self) -> f64 {
        self.b
    }
    pub fn sigma_w2(&self) -> f64 {
        self.sigma_w2
    }
    pub fn gains(&self) -> &PathGains {
        &self.gains
    }
}

/// One draw of the instantaneous channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// N×K sensor→FC.
    pub h_d: CMatrix,
    /// M×K sensor→RIS.
    pub h_r: CMatrix,
    /// N×M RIS→FC.
    pub g: CMatrix,
}

/// RIS reflection coefficients, all of unit modulus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RisPhases {
    theta: CVector,
}

impl RisPhases {
    pub fn new(theta: CVector) -> Result<Self> {
        if theta.is_empty() {
            return Err(domain("RIS phase vector is empty"));
        }
        if let Some(m) = theta.iter().position(|z| (z.norm() - 1.0).abs() > UNIT_MODULUS_TOL) {
            return Err(domain(format!("RIS element {m} has modulus {}", theta[m].norm())));
        }
        Ok(Self { theta })
    }

    pub fn from_phases(phases: &[f64]) -> Self {
        Self { theta: DVector::from_iterator(phases.len(), phases.iter().map(|&p| Complex64::from_polar(1.0, p))) }
    }

    /// All elements at phase zero.
    pub fn identity(m: usize) -> Self {
        Self { theta: DVector::from_element(m, Complex64::new(1.0, 0.0)) }
    }

    /// Phases drawn uniformly on `[0, 2π)`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, m: usize) -> Self {
        let phases: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * std::f64::consts::TAU).collect();
        Self::from_phases(&phases)
    }

    /// Multiply every element by `e^{jφ}`.
    pub fn rotated(&self, phi: f64) -> Self {
        let r = Complex64::from_polar(1.0, phi);
        Self { theta: self.theta.map(|z| z * r) }
    }

    pub fn as_vector(&self) -> &CVector {
        &self.theta
    }

    pub fn phases(&self) -> Vec<f64> {
        self.theta.iter().map(|z| z.arg()).collect()
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }
}

/// Draw from the proper complex normal `N_C(0, 1)`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

fn complex_normal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMatrix {
    // column-major fill keeps the draw order stable across versions
    let data: Vec<Complex64> = (0..rows * cols).map(|_| complex_normal(rng)).collect();
    CMatrix::from_vec(rows, cols, data)
}

/// i.i.d. `N_C(0, σ²)` noise vector of length `n`.
pub fn draw_noise<R: Rng + ?Sized>(n: usize, sigma_w2: f64, rng: &mut R) -> Result<CVector> {
    if !(sigma_w2 > 0.0) {
        return Err(domain(format!("noise power must be positive, got {sigma_w2}")));
    }
    let s = sigma_w2.sqrt();
    Ok(DVector::from_iterator(n, (0..n).map(|_| complex_normal(rng) * s)))
}

/// `H^e(Θ) = G Θ H^r + H^d`.
pub fn composite_channel(real: &ChannelRealization, theta: &RisPhases) -> Result<CMatrix> {
    let (n, k) = real.h_d.shape();
    let m = theta.len();
    if real.h_r.shape() != (m, k) || real.g.shape() != (n, m) {
        return Err(Error::Dimension(format!(
            "H^d {:?}, H^r {:?}, G {:?}, {} RIS elements",
            real.h_d.shape(),
            real.h_r.shape(),
            real.g.shape(),
            m
        )));
    }
    let mut reflected = real.h_r.clone();
    for (mut row, t) in reflected.row_iter_mut().zip(theta.as_vector().iter()) {
        row *= *t;
    }
    let mut h_e = real.h_d.clone();
    h_e.gemm(Complex64::new(1.0, 0.0), &real.g, &reflected, Complex64::new(1.0, 0.0));
    Ok(h_e)
}

fn ensure_hermitian(a: CMatrix, what: &'static str) -> Result<CMatrix> {
    let asym = (&a - a.adjoint()).norm();
    let scale = a.norm().max(f64::MIN_POSITIVE);
    if asym > HERMITIAN_TOL * scale {
        return Err(Error::Numerical { what, condition: asym / scale });
    }
    Ok((&a + a.adjoint()) * Complex64::new(0.5, 0.0))
}

fn diag_real(values: impl Iterator<Item = f64>, k: usize) -> CMatrix {
    CMatrix::from_diagonal(&DVector::from_iterator(k, values.map(|v| Complex64::new(v, 0.0))))
}

/// Layout dimensions, fading statistics and the deterministic LoS terms
/// they imply.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    n: usize,
    fading: FadingParams,
    /// `a_M`, RIS steering toward the FC.
    a_m: CVector,
    /// `a_ula(θ_FC)`, FC steering toward the RIS.
    a_fc: CVector,
    /// M×K LoS sensor→RIS responses, column k = `a_upa(θ_k, ϑ_k)`.
    h_los: CMatrix,
}

impl ChannelModel {
    pub fn new(layout: &NetworkLayout, angles: &SteeringAngles, fading: FadingParams) -> Result<Self> {
        let k = layout.n_sensors();
        if angles.sensor_at_ris.len() != k || fading.b_wr.len() != k {
            return Err(Error::Dimension(format!(
                "{k} sensors but {} angle pairs and {} Rician factors",
                angles.sensor_at_ris.len(),
                fading.b_wr.len()
            )));
        }
        let (m1, m2) = (layout.ris_rows(), layout.ris_cols());
        let (az, el) = angles.ris_departure;
        let a_m = upa_steering(az, el, m1, m2);
        let a_fc = ula_steering(angles.fc_arrival, layout.n_antennas());
        let mut h_los = CMatrix::zeros(m1 * m2, k);
        for (kk, &(az, el)) in angles.sensor_at_ris.iter().enumerate() {
            h_los.set_column(kk, &upa_steering(az, el, m1, m2));
        }
        Ok(Self { n: layout.n_antennas(), fading, a_m, a_fc, h_los })
    }

    pub fn n_antennas(&self) -> usize {
        self.n
    }
    pub fn n_ris_elements(&self) -> usize {
        self.a_m.len()
    }
    pub fn n_sensors(&self) -> usize {
        self.h_los.ncols()
    }
    pub fn fading(&self) -> &FadingParams {
        &self.fading
    }
    pub fn gains(&self) -> &PathGains {
        &self.fading.gains
    }
    pub fn ris_steering(&self) -> &CVector {
        &self.a_m
    }
    pub fn los_sensor_responses(&self) -> &CMatrix {
        &self.h_los
    }

    /// Rayleigh direct channel, N×K.
    pub fn draw_direct_channel<R: Rng + ?Sized>(&self, rng: &mut R) -> CMatrix {
        let mut h = complex_normal_matrix(rng, self.n, self.n_sensors());
        for (mut col, d) in h.column_iter_mut().zip(&self.fading.gains.d_wf) {
            col *= Complex64::new(d.sqrt(), 0.0);
        }
        h
    }

    /// Rician sensor→RIS (M×K) and RIS→FC (N×M) channels.
    pub fn draw_ris_channels<R: Rng + ?Sized>(&self, rng: &mut R) -> (CMatrix, CMatrix) {
        let (m, k) = self.h_los.shape();
        let gains = &self.fading.gains;
        let mut h_r = complex_normal_matrix(rng, m, k);
        for kk in 0..k {
            let bk = self.fading.b_wr[kk];
            let nlos = (1.0 - bk * bk).max(0.0).sqrt();
            let amp = gains.d_wr[kk].sqrt();
            let mut col = h_r.column_mut(kk);
            for (z, los) in col.iter_mut().zip(self.h_los.column(kk).iter()) {
                *z = (los * bk + *z * nlos) * amp;
            }
        }
        let b = self.fading.b;
        let nlos = (1.0 - b * b).max(0.0).sqrt();
        let amp = gains.d_rf.sqrt();
        let mut g = complex_normal_matrix(rng, self.n, m);
        for j in 0..m {
            let a_conj = self.a_m[j].conj();
            for i in 0..self.n {
                g[(i, j)] = (self.a_fc[i] * a_conj * b + g[(i, j)] * nlos) * amp;
            }
        }
        (h_r, g)
    }

    /// Direct channel first, then `H^r`, then `G`, from one stream.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> ChannelRealization {
        let h_d = self.draw_direct_channel(rng);
        let (h_r, g) = self.draw_ris_channels(rng);
        ChannelRealization { h_d, h_r, g }
    }

    fn check_theta(&self, theta: &RisPhases) -> Result<()> {
        if theta.len() != self.n_ris_elements() {
            return Err(Error::Dimension(format!(
                "{} RIS phases for {} elements",
                theta.len(),
                self.n_ris_elements()
            )));
        }
        Ok(())
    }

    /// `X† K(Θ) X` for an M×K matrix `X`.
    fn reflected_gram(&self, x: &CMatrix, theta: &RisPhases) -> CMatrix {
        let mut z = x.clone();
        for (mut row, t) in z.row_iter_mut().zip(theta.as_vector().iter()) {
            row *= *t;
        }
        let b2 = self.fading.b * self.fading.b;
        let u = z.ad_mul(&self.a_m);
        let scattered = z.ad_mul(&z) * Complex64::new(1.0 - b2, 0.0);
        let los = &u * u.adjoint() * Complex64::new(b2, 0.0);
        (scattered + los) * Complex64::new(self.fading.gains.d_rf, 0.0)
    }

    fn d_wf(&self) -> CMatrix {
        diag_real(self.fading.gains.d_wf.iter().copied(), self.n_sensors())
    }

    /// `V(Θ) = D_wf + H^r† K(Θ) H^r` for an instantaneous `H^r`.
    pub fn gram_v(&self, h_r: &CMatrix, theta: &RisPhases) -> Result<CMatrix> {
        self.check_theta(theta)?;
        if h_r.shape() != self.h_los.shape() {
            return Err(Error::Dimension(format!("H^r is {:?}, expected {:?}", h_r.shape(), self.h_los.shape())));
        }
        ensure_hermitian(self.d_wf() + self.reflected_gram(h_r, theta), "V(Θ)")
    }

    /// `V̄(Θ) = D_wf + D_wr (I − B_wr²) + (H_LoS B_wr D_wr^{1/2})† K(Θ) (H_LoS B_wr D_wr^{1/2})`.
    pub fn v_bar(&self, theta: &RisPhases) -> Result<CMatrix> {
        self.check_theta(theta)?;
        let gains = &self.fading.gains;
        let scale: Vec<f64> = self
            .fading
            .b_wr
            .iter()
            .zip(&gains.d_wr)
            .map(|(b, d)| b * d.sqrt())
            .collect();
        let los = self.scaled_los(&scale);
        let spread = self
            .fading
            .b_wr
            .iter()
            .zip(&gains.d_wr)
            .map(|(b, d)| d * (1.0 - b * b));
        let v = self.d_wf() + diag_real(spread, self.n_sensors()) + self.reflected_gram(&los, theta);
        ensure_hermitian(v, "V̄(Θ)")
    }

    /// `V_LoS(Θ) = D_wf + d_rf (H_LoS D_wr^{1/2})† Θ* a_M a_M† Θ (H_LoS D_wr^{1/2})`.
    pub fn v_los(&self, theta: &RisPhases) -> Result<CMatrix> {
        self.check_theta(theta)?;
        let scale: Vec<f64> = self.fading.gains.d_wr.iter().map(|d| d.sqrt()).collect();
        let mut z = self.scaled_los(&scale);
        for (mut row, t) in z.row_iter_mut().zip(theta.as_vector().iter()) {
            row *= *t;
        }
        let u = z.ad_mul(&self.a_m);
        let v = self.d_wf() + &u * u.adjoint() * Complex64::new(self.fading.gains.d_rf, 0.0);
        ensure_hermitian(v, "V_LoS(Θ)")
    }

    fn scaled_los(&self, column_scale: &[f64]) -> CMatrix {
        let mut los = self.h_los.clone();
        for (mut col, s) in los.column_iter_mut().zip(column_scale) {
            col *= Complex64::new(*s, 0.0);
        }
        los
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{compute_angles, compute_path_gains, PathLossModel};
    use crate::rng::{substream, StreamTag};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layout(n: usize, k: usize, rows: usize, cols: usize, seed: u64) -> NetworkLayout {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        NetworkLayout::with_random_sensors(&mut rng, k, 40.0, [40.0, 20.0, 5.0], [65.0, 40.0, 2.0], n, rows, cols)
            .unwrap()
    }

    fn model_with(
        n: usize,
        k: usize,
        rows: usize,
        cols: usize,
        b_wr: f64,
        b: f64,
        gains: Option<PathGains>,
    ) -> ChannelModel {
        let l = layout(n, k, rows, cols, 11);
        let angles = compute_angles(&l).unwrap();
        let gains = gains.unwrap_or_else(|| compute_path_gains(&l, &PathLossModel::default()).unwrap());
        let fading = FadingParams::new(vec![b_wr; k], b, 1e-10, gains).unwrap();
        ChannelModel::new(&l, &angles, fading).unwrap()
    }

    fn unit_gains(k: usize, d_wf: f64, d_wr: f64, d_rf: f64) -> PathGains {
        PathGains { d_wf: vec![d_wf; k], d_wr: vec![d_wr; k], d_rf }
    }

    fn rel_frob(a: &CMatrix, b: &CMatrix) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn rician_mapping() {
        assert_relative_eq!(rician_amplitude(0.0), 0.5f64.sqrt(), max_relative = 1e-12);
        assert_relative_eq!(rician_amplitude(10.0), (10.0f64 / 11.0).sqrt(), max_relative = 1e-12);
        assert_relative_eq!(dbm_to_watts(-70.0), 1e-10, max_relative = 1e-12);
    }

    #[test]
    fn fading_params_validation() {
        let g = unit_gains(2, 1.0, 1.0, 1.0);
        assert!(FadingParams::new(vec![0.5; 2], 0.5, 0.0, g.clone()).is_err());
        assert!(FadingParams::new(vec![1.5, 0.5], 0.5, 1.0, g.clone()).is_err());
        assert!(FadingParams::new(vec![0.5], 0.5, 1.0, g.clone()).is_err());
        assert!(FadingParams::new(vec![0.5; 2], 0.5, 1.0, g).is_ok());
    }

    #[test]
    fn ris_phases_validation() {
        assert!(RisPhases::new(DVector::from_element(3, Complex64::new(1.1, 0.0))).is_err());
        assert!(RisPhases::new(DVector::from_element(3, Complex64::from_polar(1.0, 0.4))).is_ok());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = RisPhases::random(&mut rng, 25);
        assert!(t.as_vector().iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn zero_direct_gain_gives_zero_channel() {
        let m = model_with(4, 3, 2, 2, 0.5, 0.5, Some(unit_gains(3, 0.0, 1.0, 1.0)));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(m.draw_direct_channel(&mut rng).norm(), 0.0);
    }

    #[test]
    fn direct_channel_variance() {
        for d in [1.0, 4.0] {
            let m = model_with(2, 1, 1, 1, 0.5, 0.5, Some(unit_gains(1, d, 1.0, 1.0)));
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let draws = 100_000;
            let mut acc = 0.0;
            for _ in 0..draws {
                acc += m.draw_direct_channel(&mut rng).norm_squared();
            }
            let var = acc / (2 * draws) as f64;
            assert!((var / d - 1.0).abs() < 0.02, "variance {var} for gain {d}");
        }
    }

    #[test]
    fn full_los_is_deterministic() {
        let m = model_with(6, 3, 3, 3, 1.0, 1.0, None);
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let (hr1, g1) = m.draw_ris_channels(&mut r1);
        let (hr2, g2) = m.draw_ris_channels(&mut r2);
        assert!((&hr1 - &hr2).norm() < 1e-15);
        assert!((&g1 - &g2).norm() < 1e-15);
        let gains = m.gains();
        for k in 0..3 {
            let want = m.los_sensor_responses().column(k) * Complex64::new(gains.d_wr[k].sqrt(), 0.0);
            assert!((hr1.column(k) - &want).norm() < 1e-12 * want.norm());
        }
        // rank one: every 2×2 minor vanishes
        let minor = g1[(0, 0)] * g1[(1, 1)] - g1[(0, 1)] * g1[(1, 0)];
        assert!(minor.norm() < 1e-12 * g1.norm_squared());
        let sv = g1.clone().svd(false, false).singular_values;
        assert!(sv[1] < 1e-10 * sv[0]);
    }

    #[test]
    fn scattered_ris_column_power() {
        let m = model_with(4, 2, 5, 5, 0.0, 0.5, Some(unit_gains(2, 1.0, 0.3, 1.0)));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let draws = 10_000;
        let mut acc = [0.0; 2];
        for _ in 0..draws {
            let (h_r, _) = m.draw_ris_channels(&mut rng);
            for k in 0..2 {
                acc[k] += h_r.column(k).norm_squared();
            }
        }
        for a in acc {
            let mean = a / draws as f64;
            assert!((mean / (25.0 * 0.3) - 1.0).abs() < 0.03, "column power {mean}");
        }
    }

    #[test]
    fn noise_moments() {
        assert!(draw_noise(3, 0.0, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
        let sigma2 = 2.5;
        let w = draw_noise(1_000_000, sigma2, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let n = w.len() as f64;
        let total = w.norm_squared() / n;
        let re = w.iter().map(|z| z.re * z.re).sum::<f64>() / n;
        let im = w.iter().map(|z| z.im * z.im).sum::<f64>() / n;
        assert!((total / sigma2 - 1.0).abs() < 0.01);
        assert!((re / (sigma2 / 2.0) - 1.0).abs() < 0.02);
        assert!((im / (sigma2 / 2.0) - 1.0).abs() < 0.02);
    }

    #[test]
    fn composite_without_ris_path_is_direct() {
        let m = model_with(5, 3, 2, 2, 0.5, 0.5, None);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut real = m.draw(&mut rng);
        real.g.fill(Complex64::new(0.0, 0.0));
        let t = RisPhases::random(&mut rng, 4);
        assert_eq!(composite_channel(&real, &t).unwrap(), real.h_d);
    }

    #[test]
    fn composite_scalar_case() {
        let real = ChannelRealization {
            h_d: CMatrix::zeros(1, 1),
            h_r: CMatrix::from_element(1, 1, Complex64::new(0.3, -1.2)),
            g: CMatrix::from_element(1, 1, Complex64::new(-0.7, 0.4)),
        };
        let t = RisPhases::from_phases(&[0.9]);
        let h = composite_channel(&real, &t).unwrap();
        let want = Complex64::new(-0.7, 0.4) * Complex64::from_polar(1.0, 0.9) * Complex64::new(0.3, -1.2);
        assert!((h[(0, 0)] - want).norm() < 1e-15);
    }

    #[test]
    fn composite_rejects_mismatched_shapes() {
        let real = ChannelRealization {
            h_d: CMatrix::zeros(4, 2),
            h_r: CMatrix::zeros(3, 2),
            g: CMatrix::zeros(4, 3),
        };
        assert!(composite_channel(&real, &RisPhases::identity(2)).is_err());
    }

    #[test]
    fn common_phase_keeps_frobenius_norm() {
        let m = model_with(8, 3, 3, 3, 0.7, 1.0, None);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut real = m.draw(&mut rng);
        real.h_d.fill(Complex64::new(0.0, 0.0));
        let t = RisPhases::random(&mut rng, 9);
        let a = composite_channel(&real, &t).unwrap();
        let b = composite_channel(&real, &t.rotated(1.3)).unwrap();
        assert_relative_eq!(a.norm(), b.norm(), max_relative = 1e-12);
        assert!((b - a * Complex64::from_polar(1.0, 1.3)).norm() < 1e-12 * real.g.norm() * real.h_r.norm());
    }

    #[test]
    fn gram_without_ris_is_direct_diagonal() {
        let m = model_with(4, 3, 2, 2, 0.5, 0.5, Some(unit_gains(3, 2.0, 1.0, 0.0)));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let real = m.draw(&mut rng);
        let t = RisPhases::random(&mut rng, 4);
        let d = diag_real(std::iter::repeat_n(2.0, 3), 3);
        assert!((m.gram_v(&real.h_r, &t).unwrap() - &d).norm() < 1e-15);
        assert!((m.v_los(&t).unwrap() - &d).norm() < 1e-15);
    }

    #[test]
    fn gram_scalar_expansion() {
        let m = model_with(2, 1, 1, 1, 0.4, 1.0, Some(unit_gains(1, 0.7, 1.0, 0.2)));
        let h_r = CMatrix::from_element(1, 1, Complex64::new(0.6, -0.8) * 1.5);
        let v = m.gram_v(&h_r, &RisPhases::from_phases(&[2.1])).unwrap();
        assert_relative_eq!(v[(0, 0)].re, 0.7 + 0.2 * 2.25, max_relative = 1e-12);
        assert!(v[(0, 0)].im.abs() < 1e-15);
    }

    #[test]
    fn v_bar_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = RisPhases::random(&mut rng, 9);
        // no LoS toward the RIS: only the diagonal terms survive
        let m = model_with(6, 4, 3, 3, 0.0, 0.6, None);
        let g = m.gains();
        let want = diag_real(g.d_wf.iter().zip(&g.d_wr).map(|(a, b)| a + b), 4);
        assert!((m.v_bar(&t).unwrap() - want).norm() < 1e-15);
        // full LoS on both hops: V̄ = V = V_LoS
        let m = model_with(6, 4, 3, 3, 1.0, 1.0, None);
        let (h_r, _) = m.draw_ris_channels(&mut rng);
        let v = m.gram_v(&h_r, &t).unwrap();
        let vb = m.v_bar(&t).unwrap();
        let vl = m.v_los(&t).unwrap();
        assert!((&v - &vb).camax() < 1e-10 * v.camax());
        assert!((&vb - &vl).camax() < 1e-10 * v.camax());
        // B_wr = I only: no D_wr(I − B²) term
        let m = model_with(6, 4, 3, 3, 1.0, 0.3, None);
        let vb = m.v_bar(&t).unwrap();
        let g = m.gains();
        let no_spread = m.d_wf() + m.reflected_gram(&m.scaled_los(&g.d_wr.iter().map(|d| d.sqrt()).collect::<Vec<_>>()), &t);
        assert!((vb - no_spread).norm() < 1e-20);
    }

    #[test]
    fn v_los_rank_one_and_phase_invariant() {
        let m = model_with(6, 5, 5, 5, 0.8, 0.8, None);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t = RisPhases::random(&mut rng, 25);
        let v = m.v_los(&t).unwrap();
        let update = &v - m.d_wf();
        let sv = update.clone().svd(false, false).singular_values;
        let mut s: Vec<f64> = sv.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        assert!(s[0] > 0.0 && s[1] < 1e-10 * s[0]);
        let v2 = m.v_los(&t.rotated(-2.2)).unwrap();
        assert!((v - v2).camax() < 1e-12 * update.camax());
    }

    #[test]
    fn gram_min_eigenvalue_floor() {
        let m = model_with(6, 5, 5, 5, 0.7, 0.6, None);
        let floor = m.gains().d_wf.iter().copied().fold(f64::INFINITY, f64::min);
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = RisPhases::random(&mut rng, 25);
            let (h_r, _) = m.draw_ris_channels(&mut rng);
            for v in [m.gram_v(&h_r, &t).unwrap(), m.v_bar(&t).unwrap(), m.v_los(&t).unwrap()] {
                assert!((&v - v.adjoint()).norm() == 0.0);
                let ev = v.symmetric_eigenvalues();
                assert!(ev.min() >= floor * (1.0 - 1e-6) - 1e-10 * v.norm(), "min eig {} floor {floor}", ev.min());
            }
        }
    }

    fn favorable_propagation_error(n: usize, draws: u64) -> f64 {
        let m = model_with(n, 10, 5, 5, 0.5, 0.5, None);
        let mut total = 0.0;
        for d in 0..draws {
            let mut rng = substream(99, StreamTag::ChannelDetection, &[d]);
            let t = RisPhases::random(&mut rng, 25);
            let real = m.draw(&mut rng);
            let h = composite_channel(&real, &t).unwrap();
            let gram = h.ad_mul(&h) / Complex64::new(n as f64, 0.0);
            total += rel_frob(&gram, &m.gram_v(&real.h_r, &t).unwrap());
        }
        total / draws as f64
    }

    #[test]
    fn favorable_propagation_approximation_improves_with_n() {
        let errs: Vec<f64> = [64, 128, 256, 512, 1024].iter().map(|&n| favorable_propagation_error(n, 50)).collect();
        for w in errs.windows(2) {
            assert!(w[1] < w[0], "errors {errs:?}");
        }
        assert!(errs[4] < 0.15, "errors {errs:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn composite_is_linear_in_each_channel(seed in 0u64..1000, c in -3.0f64..3.0) {
            let m = model_with(4, 3, 2, 2, 0.5, 0.5, None);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = m.draw(&mut rng);
            let b = m.draw(&mut rng);
            let t = RisPhases::random(&mut rng, 4);
            let base = composite_channel(&a, &t).unwrap();
            let scale = Complex64::new(c, 0.0);
            // H^d
            let mut sum = a.clone();
            sum.h_d = &a.h_d + &b.h_d * scale;
            let diff = composite_channel(&sum, &t).unwrap() - &base;
            prop_assert!((diff - &b.h_d * scale).norm() < 1e-12 * (1.0 + base.norm()));
            // H^r with G and H^d fixed
            let mut sum = a.clone();
            sum.h_r = &a.h_r + &b.h_r * scale;
            let mut only = a.clone();
            only.h_r = b.h_r.clone();
            only.h_d.fill(Complex64::new(0.0, 0.0));
            let diff = composite_channel(&sum, &t).unwrap() - &base;
            let want = composite_channel(&only, &t).unwrap() * scale;
            prop_assert!((diff - want).norm() < 1e-12 * (1.0 + base.norm()));
            // G
            let mut sum = a.clone();
            sum.g = &a.g + &b.g * scale;
            let mut only = a.clone();
            only.g = b.g.clone();
            only.h_d.fill(Complex64::new(0.0, 0.0));
            let diff = composite_channel(&sum, &t).unwrap() - &base;
            let want = composite_channel(&only, &t).unwrap() * scale;
            prop_assert!((diff - want).norm() < 1e-12 * (1.0 + base.norm()));
        }

        #[test]
        fn near_full_los_gram_matrices_converge(eps in 1e-9f64..1e-6, seed in 0u64..100) {
            let b = (1.0 - eps * eps).sqrt();
            let m = model_with(6, 4, 3, 3, b, b, None);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = RisPhases::random(&mut rng, 9);
            let (h_r, _) = m.draw_ris_channels(&mut rng);
            let v = m.gram_v(&h_r, &t).unwrap();
            let vb = m.v_bar(&t).unwrap();
            let vl = m.v_los(&t).unwrap();
            prop_assert!(rel_frob(&v, &vb) < 100.0 * eps);
            prop_assert!(rel_frob(&vb, &vl) < 100.0 * eps);
        }
    }
}
