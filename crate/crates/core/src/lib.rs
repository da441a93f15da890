//! Core pipeline for vision-guided autonomous landing of a micro aerial
//! vehicle: bounding-box geometry, a constant-velocity Kalman filter over the
//! landing-site state, PID-based landing control with a phase state machine,
//! and a deterministic closed-loop simulator with a synthetic detector.
//!
//! The crate is `no_std`-compatible (requires `alloc`); all float math is
//! routed through `libm` so results do not depend on the host's libm. IO,
//! file formats, and the external-detector bridge live in the companion
//! `mavland` crate.
//!
//! Data flows one way per tick of the 20 Hz camera clock:
//!
//! ```text
//! detected corners -> site state -> filter estimate -> control command -> vehicle
//! ```

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod controller;
pub mod episode;
pub mod estimator;
pub mod geometry;
pub mod simulator;

pub use controller::{
    ControlCommand, ControllerConfig, LandingConfig, LandingController, LandingPhase, PidGains,
    TrackInput,
};
pub use episode::{DetectorBackend, EpisodeResult, ScenarioConfig, SyntheticDetector};
pub use estimator::{FilterConfig, FilterEstimate, Measurement, TrackStatus};
pub use geometry::{BoundingBox, ImageFrameSpec, ImagePoint, SiteState};
pub use simulator::{CameraModel, DetectorNoise, PadSpec, VehicleParams, VehiclePose};

/// Finite and strictly positive; what every config validator wants.
pub(crate) fn positive(value: f64) -> bool {
    value.is_finite() && value > 0.0
}
