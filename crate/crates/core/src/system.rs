//! Physical system parameters and their expansion into a [`Scenario`].
//!
//! Sensor positions and Rician factors are drawn from substreams keyed only
//! by the seed and the layout index, so the same layouts appear at every FC
//! array size of a sweep.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{dbm_to_watts, rician_amplitude, ChannelModel, FadingParams};
use crate::detect::Scenario;
use crate::error::{domain, Result};
use crate::fusion::SensorModel;
use crate::geometry::{compute_angles, compute_path_gains, db_to_linear, NetworkLayout, PathLossModel, Position};
use crate::rng::{substream, StreamTag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemParams {
    pub n_sensors: usize,
    /// Sensors lie on the ground square `[0, side]²`.
    pub field_side_m: f64,
    pub ris_position: Position,
    pub fc_position: Position,
    pub ris_rows: usize,
    pub ris_cols: usize,
    pub n_antennas: usize,
    pub path_loss_mu_db: f64,
    pub path_loss_d0_m: f64,
    pub path_loss_exp_ris: f64,
    pub path_loss_exp_direct: f64,
    pub noise_power_dbm: f64,
    /// Rician factors are drawn uniformly (in dB) from this interval unless
    /// overridden below.
    pub rician_db_range: (f64, f64),
    /// Common sensor→RIS Rician factor in dB.
    pub rician_sensor_ris_db: Option<f64>,
    /// RIS→FC Rician factor in dB.
    pub rician_ris_fc_db: Option<f64>,
    pub pd: f64,
    pub pf: f64,
    pub alpha: f64,
    /// Number of sensor layouts averaged over; channel draw `c` uses layout `c mod L`.
    pub n_layouts: usize,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            n_sensors: 10,
            field_side_m: 40.0,
            ris_position: [40.0, 20.0, 5.0],
            fc_position: [65.0, 40.0, 2.0],
            ris_rows: 5,
            ris_cols: 5,
            n_antennas: 128,
            path_loss_mu_db: -20.0,
            path_loss_d0_m: 1.0,
            path_loss_exp_ris: 2.0,
            path_loss_exp_direct: 4.0,
            noise_power_dbm: -70.0,
            rician_db_range: (10.0, 20.0),
            rician_sensor_ris_db: None,
            rician_ris_fc_db: None,
            pd: 0.5,
            pf: 0.05,
            alpha: 1.0,
            n_layouts: 1,
        }
    }
}

impl SystemParams {
    pub fn path_loss(&self) -> PathLossModel {
        PathLossModel {
            mu: db_to_linear(self.path_loss_mu_db),
            d0: self.path_loss_d0_m,
            nu_ris: self.path_loss_exp_ris,
            nu_direct: self.path_loss_exp_direct,
        }
    }

    pub fn sensor_model(&self) -> Result<SensorModel> {
        SensorModel::identical(self.n_sensors, self.pd, self.pf, self.alpha)
    }

    fn draw_rician_db<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (lo, hi) = self.rician_db_range;
        lo + (hi - lo) * rng.random::<f64>()
    }

    /// Layout `index` for the given seed.
    pub fn layout(&self, seed: u64, index: usize) -> Result<NetworkLayout> {
        NetworkLayout::with_random_sensors(
            &mut substream(seed, StreamTag::Layout, &[index as u64]),
            self.n_sensors,
            self.field_side_m,
            self.ris_position,
            self.fc_position,
            self.n_antennas,
            self.ris_rows,
            self.ris_cols,
        )
    }

    /// Long-term channel statistics of layout `index`.
    pub fn channel_model(&self, seed: u64, index: usize) -> Result<ChannelModel> {
        let (lo, hi) = self.rician_db_range;
        if !(lo <= hi) {
            return Err(domain(format!("empty Rician range ({lo}, {hi}) dB")));
        }
        let layout = self.layout(seed, index)?;
        let angles = compute_angles(&layout)?;
        let gains = compute_path_gains(&layout, &self.path_loss())?;
        // always consume the same draws so overrides leave the other factors unchanged
        let mut rng = substream(seed, StreamTag::RicianFactors, &[index as u64]);
        let wr_db: Vec<f64> = (0..self.n_sensors).map(|_| self.draw_rician_db(&mut rng)).collect();
        let rf_db = self.draw_rician_db(&mut rng);
        let b_wr = wr_db
            .iter()
            .map(|db| rician_amplitude(self.rician_sensor_ris_db.unwrap_or(*db)))
            .collect();
        let b = rician_amplitude(self.rician_ris_fc_db.unwrap_or(rf_db));
        let fading = FadingParams::new(b_wr, b, dbm_to_watts(self.noise_power_dbm), gains)?;
        ChannelModel::new(&layout, &angles, fading)
    }

    /// All layouts, without phase designs.
    pub fn scenario(&self, seed: u64) -> Result<Scenario> {
        if self.n_layouts == 0 {
            return Err(domain("at least one layout is required"));
        }
        let models = (0..self.n_layouts).map(|l| self.channel_model(seed, l)).collect::<Result<Vec<_>>>()?;
        Scenario::new(self.sensor_model()?, models)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layouts_do_not_depend_on_array_size() {
        let p = SystemParams::default();
        let q = SystemParams { n_antennas: 16, ..p.clone() };
        assert_eq!(p.layout(5, 0).unwrap().sensor_positions(), q.layout(5, 0).unwrap().sensor_positions());
        assert_ne!(p.layout(5, 0).unwrap().sensor_positions(), p.layout(6, 0).unwrap().sensor_positions());
        assert_eq!(p.channel_model(5, 0).unwrap().fading().b_wr(), q.channel_model(5, 0).unwrap().fading().b_wr());
    }

    #[test]
    fn rician_factors_in_range_and_overridable() {
        let p = SystemParams::default();
        let m = p.channel_model(1, 0).unwrap();
        let (lo, hi) = (rician_amplitude(10.0), rician_amplitude(20.0));
        assert!(m.fading().b_wr().iter().chain([&m.fading().b()]).all(|b| *b >= lo && *b <= hi));
        let q = SystemParams { rician_sensor_ris_db: Some(45.0), rician_ris_fc_db: Some(20.0), ..p.clone() };
        let m = q.channel_model(1, 0).unwrap();
        assert!(m.fading().b_wr().iter().all(|b| *b == rician_amplitude(45.0)));
        assert_eq!(m.fading().b(), rician_amplitude(20.0));
    }

    #[test]
    fn defaults_resolve_to_reference_setup() {
        let p = SystemParams::default();
        assert_eq!(p.n_sensors, 10);
        assert_eq!(p.ris_rows * p.ris_cols, 25);
        assert_eq!(dbm_to_watts(p.noise_power_dbm), 1e-10);
        assert_eq!(p.path_loss(), PathLossModel::default());
        let s = p.scenario(0).unwrap();
        assert_eq!((s.n_antennas(), s.n_ris_elements(), s.n_sensors()), (128, 25, 10));
    }
}
