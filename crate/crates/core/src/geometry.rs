//! Physical layout to long-term channel quantities.
//!
//! Frame convention: z points up, sensors lie on the ground plane. Azimuths
//! are measured in the horizontal plane from the +x axis toward +y, elevations
//! from the horizontal plane (negative below). The FC uniform linear array
//! lies along the y axis, so its element phase depends on `sin(azimuth)` of
//! the arriving direction.
//!
//! Planar RIS element `(p, q)` (0-based, row-major flattening) carries phase
//! `π·(p·sinϑ·sinθ + q·sinϑ·cosθ)` for azimuth θ and elevation ϑ. Elements are
//! spaced half a wavelength apart on both arrays.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{domain, Result};

pub type Position = [f64; 3];

/// Positions of sensors, RIS and FC together with the array sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkLayout {
    sensor_positions: Vec<Position>,
    ris_position: Position,
    fc_position: Position,
    n_fc_antennas: usize,
    ris_rows: usize,
    ris_cols: usize,
}

impl NetworkLayout {
    pub fn new(
        sensor_positions: Vec<Position>,
        ris_position: Position,
        fc_position: Position,
        n_fc_antennas: usize,
        ris_rows: usize,
        ris_cols: usize,
    ) -> Result<Self> {
        if sensor_positions.is_empty() {
            return Err(domain("layout needs at least one sensor"));
        }
        if n_fc_antennas == 0 || ris_rows == 0 || ris_cols == 0 {
            return Err(domain("array sizes must be positive"));
        }
        let all_finite = sensor_positions
            .iter()
            .chain([&ris_position, &fc_position])
            .all(|p| p.iter().all(|c| c.is_finite()));
        if !all_finite {
            return Err(domain("positions must be finite"));
        }
        for (k, s) in sensor_positions.iter().enumerate() {
            if distance(s, &ris_position) == 0.0 || distance(s, &fc_position) == 0.0 {
                return Err(domain(format!("sensor {k} coincides with the RIS or the FC")));
            }
        }
        if distance(&ris_position, &fc_position) == 0.0 {
            return Err(domain("RIS and FC coincide"));
        }
        Ok(Self {
            sensor_positions,
            ris_position,
            fc_position,
            n_fc_antennas,
            ris_rows,
            ris_cols,
        })
    }

    /// Sensors placed uniformly at random on the ground square `[0, side]²`.
    pub fn with_random_sensors<R: Rng + ?Sized>(
        rng: &mut R,
        n_sensors: usize,
        side: f64,
        ris_position: Position,
        fc_position: Position,
        n_fc_antennas: usize,
        ris_rows: usize,
        ris_cols: usize,
    ) -> Result<Self> {
        if !(side > 0.0) {
            return Err(domain("sensor field side must be positive"));
        }
        let sensors = (0..n_sensors)
            .map(|_| [rng.random::<f64>() * side, rng.random::<f64>() * side, 0.0])
            .collect();
        Self::new(sensors, ris_position, fc_position, n_fc_antennas, ris_rows, ris_cols)
    }

    /// Same layout with a different FC array size.
    pub fn with_antennas(&self, n_fc_antennas: usize) -> Result<Self> {
        if n_fc_antennas == 0 {
            return Err(domain("array sizes must be positive"));
        }
        Ok(Self { n_fc_antennas, ..self.clone() })
    }

    pub fn sensor_positions(&self) -> &[Position] {
        &self.sensor_positions
    }
    pub fn ris_position(&self) -> Position {
        self.ris_position
    }
    pub fn fc_position(&self) -> Position {
        self.fc_position
    }
    /// Number of sensors K.
    pub fn n_sensors(&self) -> usize {
        self.sensor_positions.len()
    }
    /// Number of FC antennas N.
    pub fn n_antennas(&self) -> usize {
        self.n_fc_antennas
    }
    pub fn ris_rows(&self) -> usize {
        self.ris_rows
    }
    pub fn ris_cols(&self) -> usize {
        self.ris_cols
    }
    /// Number of RIS elements M.
    pub fn n_ris_elements(&self) -> usize {
        self.ris_rows * self.ris_cols
    }
}

/// Angles needed by the line-of-sight terms, in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringAngles {
    /// (azimuth, elevation) of each sensor as seen from the RIS.
    pub sensor_at_ris: Vec<(f64, f64)>,
    /// (azimuth, elevation) of the FC as seen from the RIS.
    pub ris_departure: (f64, f64),
    /// Azimuth of the RIS as seen from the FC array.
    pub fc_arrival: f64,
}

/// Linear power gains of the three link families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathGains {
    /// Sensor to FC, one per sensor.
    pub d_wf: Vec<f64>,
    /// Sensor to RIS, one per sensor.
    pub d_wr: Vec<f64>,
    /// RIS to FC.
    pub d_rf: f64,
}

/// Log-distance path loss `μ·(d/d0)^(−ν)` with separate exponents for the
/// RIS links and the (obstructed) direct links.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossModel {
    /// Linear gain at the reference distance.
    pub mu: f64,
    /// Reference distance in meters.
    pub d0: f64,
    /// Exponent for sensor→RIS and RIS→FC links.
    pub nu_ris: f64,
    /// Exponent for sensor→FC links.
    pub nu_direct: f64,
}

impl Default for PathLossModel {
    fn default() -> Self {
        Self { mu: db_to_linear(-20.0), d0: 1.0, nu_ris: 2.0, nu_direct: 4.0 }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

fn distance(a: &Position, b: &Position) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// `μ·(d/d0)^(−ν)`.
pub fn path_loss(distance: f64, exponent: f64, mu: f64, d0: f64) -> Result<f64> {
    if !(distance > 0.0) || !(d0 > 0.0) {
        return Err(domain(format!("path loss needs positive distances (d={distance}, d0={d0})")));
    }
    if !(mu > 0.0) {
        return Err(domain(format!("path loss needs a positive reference gain (mu={mu})")));
    }
    Ok(mu * (distance / d0).powf(-exponent))
}

/// Half-wavelength ULA response: element `i` is `exp(jπ·i·sin(azimuth))`.
pub fn ula_steering(azimuth: f64, n: usize) -> DVector<Complex64> {
    let s = azimuth.sin();
    DVector::from_fn(n, |i, _| Complex64::from_polar(1.0, PI * i as f64 * s))
}

/// Half-wavelength UPA response, row-major over an `m1 × m2` grid.
pub fn upa_steering(azimuth: f64, elevation: f64, m1: usize, m2: usize) -> DVector<Complex64> {
    let u = elevation.sin() * azimuth.sin();
    let v = elevation.sin() * azimuth.cos();
    DVector::from_fn(m1 * m2, |idx, _| {
        let (p, q) = ((idx / m2) as f64, (idx % m2) as f64);
        Complex64::from_polar(1.0, PI * (p * u + q * v))
    })
}

fn direction(from: &Position, to: &Position) -> Result<(f64, f64)> {
    let d = [to[0] - from[0], to[1] - from[1], to[2] - from[2]];
    let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if !(r > 0.0) || !r.is_finite() {
        return Err(domain("coincident positions have no direction"));
    }
    let mut az = d[1].atan2(d[0]);
    if az <= -PI {
        az += 2.0 * PI;
    }
    let el = (d[2] / r).clamp(-1.0, 1.0).asin();
    Ok((az, el))
}

/// Arrival/departure angles implied by the layout.
pub fn compute_angles(layout: &NetworkLayout) -> Result<SteeringAngles> {
    let ris = layout.ris_position;
    let fc = layout.fc_position;
    let sensor_at_ris = layout
        .sensor_positions
        .iter()
        .map(|s| direction(&ris, s))
        .collect::<Result<Vec<_>>>()?;
    let ris_departure = direction(&ris, &fc)?;
    let (fc_arrival, _) = direction(&fc, &ris)?;
    Ok(SteeringAngles { sensor_at_ris, ris_departure, fc_arrival })
}

/// Path gains for every link; distances below `d0` are clamped to `d0`.
pub fn compute_path_gains(layout: &NetworkLayout, model: &PathLossModel) -> Result<PathGains> {
    let gain = |a: &Position, b: &Position, nu: f64| {
        path_loss(distance(a, b).max(model.d0), nu, model.mu, model.d0)
    };
    let ris = layout.ris_position;
    let fc = layout.fc_position;
    let d_wf = layout
        .sensor_positions
        .iter()
        .map(|s| gain(s, &fc, model.nu_direct))
        .collect::<Result<Vec<_>>>()?;
    let d_wr = layout
        .sensor_positions
        .iter()
        .map(|s| gain(s, &ris, model.nu_ris))
        .collect::<Result<Vec<_>>>()?;
    let d_rf = gain(&ris, &fc, model.nu_ris)?;
    Ok(PathGains { d_wf, d_wr, d_rf })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const RIS: Position = [40.0, 20.0, 5.0];
    const FC: Position = [65.0, 40.0, 2.0];

    fn layout(sensors: Vec<Position>) -> NetworkLayout {
        NetworkLayout::new(sensors, RIS, FC, 8, 5, 5).unwrap()
    }

    #[test]
    fn path_loss_values() {
        assert_relative_eq!(path_loss(1.0, 2.0, 0.01, 1.0).unwrap(), 0.01);
        assert_relative_eq!(path_loss(10.0, 2.0, 0.01, 1.0).unwrap(), 1e-4, max_relative = 1e-12);
        assert_relative_eq!(path_loss(10.0, 4.0, 0.01, 1.0).unwrap(), 1e-6, max_relative = 1e-12);
    }

    #[test]
    fn path_loss_rejects_bad_distances() {
        assert!(path_loss(0.0, 2.0, 0.01, 1.0).is_err());
        assert!(path_loss(-3.0, 2.0, 0.01, 1.0).is_err());
        assert!(path_loss(3.0, 2.0, 0.01, 0.0).is_err());
        assert!(path_loss(3.0, 2.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn ula_examples() {
        let a = ula_steering(0.0, 4);
        assert!(a.iter().all(|z| (z - Complex64::new(1.0, 0.0)).norm() < 1e-15));
        let b = ula_steering(PI / 2.0, 2);
        assert!((b[0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((b[1] - Complex64::new(-1.0, 0.0)).norm() < 1e-12);
        assert_relative_eq!(ula_steering(0.37, 8).norm_squared(), 8.0, max_relative = 1e-12);
    }

    #[test]
    fn upa_examples() {
        let single = upa_steering(1.1, -0.4, 1, 1);
        assert_eq!(single.len(), 1);
        assert!((single[0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        let flat = upa_steering(2.3, 0.0, 3, 3);
        assert!(flat.iter().all(|z| (z - Complex64::new(1.0, 0.0)).norm() < 1e-15));
        assert_relative_eq!(upa_steering(0.7, -1.2, 5, 5).norm_squared(), 25.0, max_relative = 1e-12);
    }

    #[test]
    fn upa_is_row_major() {
        let (az, el) = (0.3_f64, -0.8_f64);
        let a = upa_steering(az, el, 2, 3);
        let want = Complex64::from_polar(1.0, PI * (el.sin() * az.sin() + 2.0 * el.sin() * az.cos()));
        assert!((a[5] - want).norm() < 1e-12);
    }

    #[test]
    fn angles_of_simple_placements() {
        let l = layout(vec![[40.0, 20.0, 0.0], [50.0, 20.0, 5.0]]);
        let ang = compute_angles(&l).unwrap();
        assert_relative_eq!(ang.sensor_at_ris[0].1, -PI / 2.0, epsilon = 1e-12);
        assert_relative_eq!(ang.sensor_at_ris[1].1, 0.0, epsilon = 1e-12);
        assert_relative_eq!(ang.sensor_at_ris[1].0, 0.0, epsilon = 1e-12);
        assert_relative_eq!(ang.ris_departure.0, 20f64.atan2(25.0), epsilon = 1e-12);
        assert!(ang.fc_arrival.is_finite());
        let (az, el) = ang.ris_departure;
        assert!(az > -PI && az <= PI && el >= -PI / 2.0 && el <= PI / 2.0);
    }

    #[test]
    fn coincident_positions_rejected() {
        assert!(NetworkLayout::new(vec![RIS], RIS, FC, 4, 5, 5).is_err());
        assert!(NetworkLayout::new(vec![[0.0; 3]], RIS, RIS, 4, 5, 5).is_err());
        assert!(NetworkLayout::new(vec![], RIS, FC, 4, 5, 5).is_err());
        assert!(NetworkLayout::new(vec![[0.0; 3]], RIS, FC, 0, 5, 5).is_err());
        assert!(NetworkLayout::new(vec![[f64::NAN, 0.0, 0.0]], RIS, FC, 4, 5, 5).is_err());
    }

    #[test]
    fn gains_at_reference_distance_equal_mu() {
        let model = PathLossModel { mu: 0.01, d0: 1.0, nu_ris: 2.0, nu_direct: 4.0 };
        let l = NetworkLayout::new(vec![[0.0, 0.0, 0.0]], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], 4, 1, 1)
            .unwrap();
        let g = compute_path_gains(&l, &model).unwrap();
        assert_relative_eq!(g.d_wf[0], 0.01);
        assert_relative_eq!(g.d_wr[0], 0.01);
        // RIS-FC distance is √2 here
        assert_relative_eq!(g.d_rf, 0.005, max_relative = 1e-12);
    }

    #[test]
    fn gains_on_reference_layout() {
        let model = PathLossModel::default();
        let l = layout(vec![[55.0, 40.0, 2.0]]);
        let g = compute_path_gains(&l, &model).unwrap();
        assert_relative_eq!(g.d_wf[0], 1e-6, max_relative = 1e-9);
        let d = (25f64.powi(2) + 20f64.powi(2) + 9.0).sqrt();
        assert_relative_eq!(g.d_rf, 0.01 / (d * d), max_relative = 1e-9);
        assert_relative_eq!(g.d_rf, 9.671e-6, max_relative = 1e-3);
    }

    #[test]
    fn short_distances_clamp_to_reference() {
        let model = PathLossModel { mu: 0.01, d0: 1.0, nu_ris: 2.0, nu_direct: 4.0 };
        let l = NetworkLayout::new(vec![[0.5, 0.0, 0.0]], [0.0, 0.0, 0.0], [9.0, 0.0, 0.0], 4, 1, 1)
            .unwrap();
        assert_relative_eq!(compute_path_gains(&l, &model).unwrap().d_wr[0], 0.01);
    }

    proptest! {
        #[test]
        fn steering_vectors_are_unit_modulus(az in -PI..PI, el in -PI / 2.0..PI / 2.0,
                                             n in 1usize..64, m1 in 1usize..8, m2 in 1usize..8) {
            let a = ula_steering(az, n);
            prop_assert!(a.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
            prop_assert!((a.norm_squared() - n as f64).abs() < 1e-9);
            let b = upa_steering(az, el, m1, m2);
            prop_assert!(b.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
            prop_assert!((b.norm_squared() - (m1 * m2) as f64).abs() < 1e-9);
        }

        #[test]
        fn path_loss_decreases(d in 1.0f64..500.0, step in 0.01f64..50.0, nu in 0.5f64..5.0) {
            let near = path_loss(d, nu, 0.01, 1.0).unwrap();
            prop_assert!(path_loss(d + step, nu, 0.01, 1.0).unwrap() < near);
            if d > 1.0 {
                prop_assert!(path_loss(d, nu + 0.5, 0.01, 1.0).unwrap() < near);
            }
        }

        #[test]
        fn angles_are_translation_invariant(sx in 0.0f64..40.0, sy in 0.0f64..40.0,
                                            tx in -100.0f64..100.0, ty in -100.0f64..100.0,
                                            tz in -10.0f64..10.0) {
            let base = layout(vec![[sx, sy, 0.0]]);
            let shift = |p: Position| [p[0] + tx, p[1] + ty, p[2] + tz];
            let moved = NetworkLayout::new(vec![shift([sx, sy, 0.0])], shift(RIS), shift(FC), 8, 5, 5)
                .unwrap();
            let a = compute_angles(&base).unwrap();
            let b = compute_angles(&moved).unwrap();
            prop_assert!((a.sensor_at_ris[0].0 - b.sensor_at_ris[0].0).abs() < 1e-9);
            prop_assert!((a.sensor_at_ris[0].1 - b.sensor_at_ris[0].1).abs() < 1e-9);
            prop_assert!((a.ris_departure.0 - b.ris_departure.0).abs() < 1e-9);
            prop_assert!((a.fc_arrival - b.fc_arrival).abs() < 1e-9);
        }
    }
}
