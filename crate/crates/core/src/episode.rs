//! End-to-end episode loop: project -> detect -> transform -> filter ->
//! control -> integrate, stepped at the camera rate until touchdown, abort,
//! or the time budget runs out.
//!
//! Episodes are single-threaded and deterministic: the only randomness is
//! the detector noise RNG seeded from the scenario, so an identical
//! [`ScenarioConfig`] reproduces a bit-identical [`EpisodeResult`].

use alloc::collections::VecDeque;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use core::fmt;

use libm::sqrt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::controller::{
    ControllerConfig, ControllerError, LandingController, LandingPhase, TrackInput,
};
use crate::estimator::{EstimatorError, FilterConfig, FilterEstimate, Measurement, TrackStatus};
use crate::geometry::{bbox_to_state, BoundingBox};
use crate::simulator::{
    detect, project_pad, vehicle_step, CameraModel, DetectorNoise, GroundView, PadSpec,
    VehicleParams, VehiclePose,
};

/// Initial vehicle placement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StartPose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

impl Default for StartPose {
    fn default() -> Self {
        Self {
            x: 1.0,
            y: 1.0,
            z: 10.0,
            yaw: 0.0,
        }
    }
}

/// Everything one episode needs. Field groups mirror the scenario file
/// sections of the companion CLI crate.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub pad: PadSpec,
    pub start: StartPose,
    pub camera: CameraModel,
    pub noise: DetectorNoise,
    pub filter: FilterConfig,
    pub controller: ControllerConfig,
    pub vehicle: VehicleParams,
    /// Ticks of delay between image capture and detection delivery.
    pub detector_latency_frames: u32,
    /// Wall budget of the episode (simulated seconds).
    pub max_time: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            pad: PadSpec {
                cx: 0.0,
                cy: 0.0,
                length: 1.0,
                breadth: 1.0,
                yaw: 0.0,
            },
            start: StartPose::default(),
            camera: CameraModel::default(),
            noise: DetectorNoise::default(),
            filter: FilterConfig::default(),
            controller: ControllerConfig::default(),
            vehicle: VehicleParams::default(),
            detector_latency_frames: 0,
            max_time: 120.0,
        }
    }
}

/// A scenario field failed validation; the message names the field.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioError {
    pub message: String,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid scenario: {}", self.message)
    }
}

impl core::error::Error for ScenarioError {}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let err = |m: &str| ScenarioError {
            message: m.to_string(),
        };
        self.pad.validate().map_err(err)?;
        self.camera.validate().map_err(err)?;
        self.noise.validate().map_err(err)?;
        self.filter.validate().map_err(err)?;
        self.controller.validate().map_err(err)?;
        self.vehicle.validate().map_err(err)?;
        if !crate::positive(self.start.z) {
            return Err(err("start_pose.z must be > 0"));
        }
        if !crate::positive(self.max_time) {
            return Err(err("max_time must be > 0"));
        }
        Ok(())
    }
}

/// Detection source failure (e.g. an external detector hung up).
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorFault {
    pub message: String,
}

impl fmt::Display for DetectorFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "detector fault: {}", self.message)
    }
}

impl core::error::Error for DetectorFault {}

/// Source of bounding-box detections, one `observe` call per camera tick.
/// Implemented by the bundled synthetic detector and by the external
/// detector bridge in the companion crate.
pub trait DetectorBackend {
    fn observe(
        &mut self,
        frame_id: u64,
        t: f64,
        pose: &VehiclePose,
    ) -> Result<Option<BoundingBox>, DetectorFault>;
}

/// The synthetic detector: true pinhole projection of the pad degraded by
/// the configured noise model. Owns its seeded RNG; the draw order per
/// frame is fixed so the same seed always produces the same detections.
pub struct SyntheticDetector {
    pad: PadSpec,
    camera: CameraModel,
    noise: DetectorNoise,
    rng: ChaCha8Rng,
}

impl SyntheticDetector {
    pub fn new(pad: PadSpec, camera: CameraModel, noise: DetectorNoise) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(noise.seed);
        Self {
            pad,
            camera,
            noise,
            rng,
        }
    }

    pub fn from_scenario(scenario: &ScenarioConfig) -> Self {
        Self::new(scenario.pad, scenario.camera, scenario.noise)
    }
}

impl DetectorBackend for SyntheticDetector {
    fn observe(
        &mut self,
        frame_id: u64,
        _t: f64,
        pose: &VehiclePose,
    ) -> Result<Option<BoundingBox>, DetectorFault> {
        if pose.z <= 0.0 {
            // Grounded camera; nothing to detect.
            return Ok(None);
        }
        let view = GroundView::new(pose, &self.camera).map_err(|e| DetectorFault {
            message: e.to_string(),
        })?;
        let truth = project_pad(pose, &self.pad, &self.camera, frame_id).map_err(|e| {
            DetectorFault {
                message: e.to_string(),
            }
        })?;
        Ok(detect(
            truth.as_ref(),
            &self.noise,
            &view,
            &self.camera.frame,
            &mut self.rng,
        ))
    }
}

/// One recorded trajectory row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    pub phase: LandingPhase,
    pub vx_cmd: f64,
    pub vy_cmd: f64,
    pub yaw_rate_cmd: f64,
    pub z_setpoint: Option<f64>,
}

/// A phase-machine transition at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseChange {
    pub t: f64,
    pub phase: LandingPhase,
}

/// Outcome and full history of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    /// Touchdown reached within the time budget and without faults.
    pub success: bool,
    pub final_phase: LandingPhase,
    /// Horizontal distance from the pad center at termination (m).
    pub final_error_m: f64,
    /// Episode start to touchdown (s); NaN when not landed.
    pub landing_time_s: f64,
    /// Initial altitude over landing time (m/s); NaN when not landed.
    pub mean_descent_speed_mps: f64,
    pub phase_trace: Vec<PhaseChange>,
    /// Altitude at which the final landing sequence engaged.
    pub final_land_entry_z: Option<f64>,
    pub final_land_entries: u32,
    pub trajectory: Vec<TrajectorySample>,
    /// Set when the detection source failed and the episode was aborted.
    pub detector_fault: Option<String>,
}

/// Unrecoverable episode failure: bad configuration or an internal
/// estimator/controller bug. Detector faults are not errors; they abort the
/// episode and are reported in [`EpisodeResult::detector_fault`].
#[derive(Debug, Clone, PartialEq)]
pub enum EpisodeError {
    InvalidScenario(ScenarioError),
    Estimator(EstimatorError),
    Controller(ControllerError),
}

impl fmt::Display for EpisodeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidScenario(e) => write!(f, "{e}"),
            Self::Estimator(e) => write!(f, "estimator failure: {e}"),
            Self::Controller(e) => write!(f, "controller failure: {e}"),
        }
    }
}

impl core::error::Error for EpisodeError {}

impl From<ScenarioError> for EpisodeError {
    fn from(e: ScenarioError) -> Self {
        Self::InvalidScenario(e)
    }
}

/// Runs one episode with the built-in synthetic detector.
pub fn run_episode(scenario: &ScenarioConfig) -> Result<EpisodeResult, EpisodeError> {
    let mut backend = SyntheticDetector::from_scenario(scenario);
    run_episode_with(scenario, &mut backend)
}

/// Runs one episode against an arbitrary detection source.
pub fn run_episode_with(
    scenario: &ScenarioConfig,
    backend: &mut dyn DetectorBackend,
) -> Result<EpisodeResult, EpisodeError> {
    scenario.validate()?;
    let frame = scenario.camera.frame;
    let dt = frame.dt();
    let latency = scenario.detector_latency_frames as usize;

    let mut pose = VehiclePose {
        x: scenario.start.x,
        y: scenario.start.y,
        z: scenario.start.z,
        yaw: scenario.start.yaw,
        ..VehiclePose::default()
    };
    let mut controller = LandingController::new(scenario.controller.clone(), frame);
    let mut tracker: Option<FilterEstimate> = None;
    let mut delay_line: VecDeque<Option<BoundingBox>> = VecDeque::new();

    let mut trajectory = Vec::new();
    let mut phase_trace = Vec::new();
    phase_trace.push(PhaseChange {
        t: 0.0,
        phase: controller.phase(),
    });
    let mut final_land_entry_z = None;
    let mut detector_fault: Option<String> = None;
    let mut landing_time = f64::NAN;

    let max_ticks = libm::ceil(scenario.max_time / dt) as u64;
    for tick in 0..=max_ticks {
        let t = tick as f64 * dt;

        let raw = match backend.observe(tick, t, &pose) {
            Ok(d) => d,
            Err(fault) => {
                detector_fault = Some(fault.message);
                controller.abort().map_err(EpisodeError::Controller)?;
                phase_trace.push(PhaseChange {
                    t,
                    phase: controller.phase(),
                });
                break;
            }
        };
        delay_line.push_back(raw);
        let delivered = if delay_line.len() > latency {
            delay_line.pop_front().unwrap()
        } else {
            None
        };

        let measurement = delivered.and_then(|b| {
            let site = bbox_to_state(&b);
            if site.is_degenerate() {
                None
            } else {
                Some(Measurement {
                    site,
                    visible_fraction: b.visible_fraction,
                })
            }
        });

        let status = if let Some(est) = tracker.take() {
            est.step(measurement.as_ref(), dt, &scenario.filter)
                .map_err(EpisodeError::Estimator)?
        } else if let Some(m) = &measurement {
            match FilterEstimate::init(m.site, &scenario.filter) {
                Ok(mut est) => {
                    est.timestamp = t;
                    TrackStatus::Tracking(est)
                }
                Err(_) => TrackStatus::Lost,
            }
        } else {
            TrackStatus::Lost
        };
        if let TrackStatus::Tracking(est) = status {
            tracker = Some(est);
        }
        let track_input = match &tracker {
            Some(est) => TrackInput::Estimate(est),
            None => TrackInput::Lost,
        };

        let phase_before = controller.phase();
        let cmd = controller
            .control_step(track_input, &pose, dt)
            .map_err(EpisodeError::Controller)?;
        if controller.phase() != phase_before {
            phase_trace.push(PhaseChange {
                t,
                phase: controller.phase(),
            });
            if controller.phase() == LandingPhase::FinalLand {
                final_land_entry_z = Some(pose.z);
            }
        }

        trajectory.push(TrajectorySample {
            t,
            x: pose.x,
            y: pose.y,
            z: pose.z,
            yaw: pose.yaw,
            phase: controller.phase(),
            vx_cmd: cmd.vx,
            vy_cmd: cmd.vy,
            yaw_rate_cmd: cmd.yaw_rate,
            z_setpoint: cmd.z_setpoint,
        });

        match controller.phase() {
            LandingPhase::Landed => {
                landing_time = t;
                break;
            }
            LandingPhase::Aborted => break,
            _ => {}
        }
        pose = vehicle_step(&pose, &cmd, dt, &scenario.vehicle);
    }

    let final_phase = controller.phase();
    let success = final_phase == LandingPhase::Landed && detector_fault.is_none();
    let dx = pose.x - scenario.pad.cx;
    let dy = pose.y - scenario.pad.cy;
    Ok(EpisodeResult {
        success,
        final_phase,
        final_error_m: sqrt(dx * dx + dy * dy),
        landing_time_s: landing_time,
        mean_descent_speed_mps: if success {
            scenario.start.z / landing_time
        } else {
            f64::NAN
        },
        phase_trace,
        final_land_entry_z,
        final_land_entries: controller.final_land_entries(),
        trajectory,
        detector_fault,
    })
}
