//! Decision fusion over a RIS-assisted massive-MIMO multiple-access channel.
//!
//! * [`geometry`]: layout, path loss and steering vectors.
//! * [`channel`]: Rayleigh/Rician channel draws and the Gram-matrix forms
//!   `V(Θ)`, `V̄(Θ)`, `V_LoS(Θ)`.
//! * [`fusion`]: LLR, MRC, the two modified MRC rules and the zero-forcing
//!   combiner.
//! * [`risopt`]: RIS phase design from long-term statistics by
//!   majorization-minimization.
//! * [`detect`]: Monte Carlo estimation of false-alarm/detection rates and the
//!   observation bound.
//! * [`system`]: default system parameters expanded into scenarios.

pub mod channel;
pub mod detect;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod risopt;
pub mod rng;
pub mod system;

pub use channel::{
    composite_channel, draw_noise, CMatrix, CVector, ChannelModel, ChannelRealization, FadingParams, RisPhases,
};
pub use detect::{
    estimate_roc_point, estimate_roc_points, observation_bound, observation_bound_curve, Calibration, Hypothesis, RisMode,
    RocPoint, Scenario, TrialConfig, TrialCounts,
};
pub use error::{Error, Result};
pub use fusion::{FusionInput, FusionRule, SensorModel};
pub use geometry::{NetworkLayout, PathGains, PathLossModel, SteeringAngles};
pub use risopt::{LongTermDesignInputs, MmOptions, MmTrace, PhaseDesign};
pub use system::SystemParams;
