//! Landing state controller: PID loops on the image-space errors, the
//! |W - H| altitude-stepping law, and the landing phase machine.
//!
//! Sign conventions, fixed by the simulator's camera mounting (image `u`
//! axis along body `x`, image `v` axis along body `y`): a positive `u`
//! error (site right of frame center) commands positive body-`x` velocity,
//! a positive `v` error commands positive body-`y` velocity, and a positive
//! site angle commands positive yaw rate. All three loops drive their error
//! toward zero through the camera geometry.

use core::fmt;

use crate::estimator::FilterEstimate;
use crate::geometry::ImageFrameSpec;
use crate::simulator::VehiclePose;

/// Simulated touchdown: at or below this altitude the vehicle has landed.
pub const TOUCHDOWN_ALTITUDE: f64 = 0.01;

/// Once the filtered box covers this fraction of a frame dimension, the
/// |W - H| size difference reflects the frame aspect ratio instead of the
/// view, so the descent gate stops consulting it.
const SIZE_SATURATION_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub enum ControllerError {
    NonPositiveDt,
    /// Attempted phase change outside the legal transition table; an
    /// internal bug, never a recoverable runtime condition.
    IllegalTransition {
        from: LandingPhase,
        to: LandingPhase,
    },
    /// `descend_step` called at or below the landing threshold.
    BelowLandingThreshold,
    /// Align/descend command requested without a track estimate.
    MissingEstimate,
}

impl fmt::Display for ControllerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NonPositiveDt => write!(f, "time step must be positive"),
            Self::IllegalTransition { from, to } => {
                write!(f, "illegal phase transition {from} -> {to}")
            }
            Self::BelowLandingThreshold => {
                write!(f, "descend step requested at or below the landing threshold")
            }
            Self::MissingEstimate => write!(f, "no estimate available for closed-loop phase"),
        }
    }
}

impl core::error::Error for ControllerError {}

/// PID gains and limits for one loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Symmetric saturation on the command output.
    pub output_limit: f64,
    /// Anti-windup clamp on the accumulated integral.
    pub integral_limit: f64,
    /// First-order filter time constant on the derivative term (s);
    /// zero means unfiltered.
    pub derivative_filter_tau: f64,
}

impl PidGains {
    pub fn validate(&self) -> Result<(), &'static str> {
        if self.kp < 0.0 || self.ki < 0.0 || self.kd < 0.0 {
            return Err("pid gains must be >= 0");
        }
        if !crate::positive(self.output_limit) || !crate::positive(self.integral_limit) {
            return Err("pid limits must be > 0");
        }
        if self.derivative_filter_tau < 0.0 {
            return Err("pid derivative_filter_tau must be >= 0");
        }
        Ok(())
    }
}

/// Internal state of one PID loop.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PidState {
    pub integral: f64,
    pub derivative: f64,
    pub last_error: Option<f64>,
}

/// One discrete PID step. Rectangular (backward Euler) integration; the
/// derivative is taken on the error and passed through a first-order filter.
/// The integral is clamped to `integral_limit` and frozen while the output
/// is saturated in the direction of the error.
pub fn pid_step(gains: &PidGains, error: f64, dt: f64, state: &PidState) -> (f64, PidState) {
    debug_assert!(dt > 0.0);
    let raw_derivative = match state.last_error {
        Some(prev) => (error - prev) / dt,
        None => 0.0,
    };
    let alpha = dt / (gains.derivative_filter_tau + dt);
    let derivative = state.derivative + alpha * (raw_derivative - state.derivative);

    let integral_candidate =
        (state.integral + error * dt).clamp(-gains.integral_limit, gains.integral_limit);
    let unclamped = gains.kp * error + gains.ki * integral_candidate + gains.kd * derivative;
    let command = unclamped.clamp(-gains.output_limit, gains.output_limit);
    let saturated_into_error = (unclamped > gains.output_limit && error > 0.0)
        || (unclamped < -gains.output_limit && error < 0.0);
    let integral = if saturated_into_error {
        state.integral
    } else {
        integral_candidate
    };
    (
        command,
        PidState {
            integral,
            derivative,
            last_error: Some(error),
        },
    )
}

/// Discrete command mode attached to every control output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandMode {
    Align,
    DescendStep,
    FinalLand,
    Abort,
}

/// Motion command for the vehicle: planar velocity in the body frame, yaw
/// rate, and an optional altitude setpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlCommand {
    pub vx: f64,
    pub vy: f64,
    pub yaw_rate: f64,
    pub z_setpoint: Option<f64>,
    pub mode: CommandMode,
}

impl ControlCommand {
    fn hold(mode: CommandMode) -> Self {
        Self {
            vx: 0.0,
            vy: 0.0,
            yaw_rate: 0.0,
            z_setpoint: None,
            mode,
        }
    }
}

/// Landing-sequence parameters. `z_land_threshold` defaults to the 0.3 m
/// final-landing threshold; the rest are tuning values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandingConfig {
    /// Proportionality constant K of the altitude-error law (m/px).
    pub k_alt: f64,
    /// Descent step Z_f (m).
    pub z_step: f64,
    /// Altitude below which the final landing sequence may start (m).
    pub z_land_threshold: f64,
    /// Largest altitude error Z_e that still permits a descent step (m).
    pub ze_descend_max: f64,
    /// Centroid error permitting descent (px, per axis).
    pub align_tolerance_px: f64,
    /// Site-angle error permitting the final landing sequence (rad).
    pub theta_tolerance: f64,
    /// Constant descent rate of the final landing sequence (m/s).
    pub final_descent_rate: f64,
    /// Time allowed in SEARCH before the episode aborts (s).
    pub search_timeout: f64,
    /// Expected width/height ratio of the site; Z_e uses |w - aspect * h| so
    /// rectangular pads can zero the law when viewed squarely.
    pub expected_aspect: f64,
}

impl Default for LandingConfig {
    fn default() -> Self {
        Self {
            k_alt: 0.01,
            z_step: 0.5,
            z_land_threshold: 0.3,
            ze_descend_max: 0.25,
            align_tolerance_px: 30.0,
            theta_tolerance: 0.15,
            final_descent_rate: 0.25,
            search_timeout: 10.0,
            expected_aspect: 1.0,
        }
    }
}

impl LandingConfig {
    pub fn validate(&self) -> Result<(), &'static str> {
        let fields = [
            self.k_alt,
            self.z_step,
            self.z_land_threshold,
            self.ze_descend_max,
            self.align_tolerance_px,
            self.theta_tolerance,
            self.final_descent_rate,
            self.search_timeout,
            self.expected_aspect,
        ];
        if fields.iter().any(|v| !crate::positive(*v)) {
            return Err("landing config fields must be positive and finite");
        }
        Ok(())
    }
}

/// Landing phases. Legal transitions:
/// SEARCH -> ALIGN, ALIGN <-> DESCEND, {ALIGN, DESCEND} -> FINAL_LAND,
/// FINAL_LAND -> LANDED, {ALIGN, DESCEND} -> SEARCH (track lost), and any
/// non-terminal phase -> ABORTED. FINAL_LAND is entered at most once and
/// completes blind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LandingPhase {
    Search,
    Align,
    Descend,
    FinalLand,
    Landed,
    Aborted,
}

impl LandingPhase {
    pub fn can_transition(from: LandingPhase, to: LandingPhase) -> bool {
        use LandingPhase::*;
        matches!(
            (from, to),
            (Search, Align)
                | (Align, Descend)
                | (Descend, Align)
                | (Align, FinalLand)
                | (Descend, FinalLand)
                | (FinalLand, Landed)
                | (Align, Search)
                | (Descend, Search)
                | (Search, Aborted)
                | (Align, Aborted)
                | (Descend, Aborted)
                | (FinalLand, Aborted)
        )
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, LandingPhase::Landed | LandingPhase::Aborted)
    }

    pub fn name(&self) -> &'static str {
        match self {
            LandingPhase::Search => "search",
            LandingPhase::Align => "align",
            LandingPhase::Descend => "descend",
            LandingPhase::FinalLand => "final_land",
            LandingPhase::Landed => "landed",
            LandingPhase::Aborted => "aborted",
        }
    }
}

impl fmt::Display for LandingPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Tracking input to one control step.
#[derive(Debug, Clone, Copy)]
pub enum TrackInput<'a> {
    Estimate(&'a FilterEstimate),
    Lost,
}

/// Gains plus landing parameters for one controller instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    pub planar_gains: PidGains,
    pub yaw_gains: PidGains,
    pub landing: LandingConfig,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            planar_gains: PidGains {
                kp: 0.004,
                ki: 0.0,
                kd: 0.002,
                output_limit: 1.0,
                integral_limit: 200.0,
                derivative_filter_tau: 0.1,
            },
            yaw_gains: PidGains {
                kp: 1.5,
                ki: 0.0,
                kd: 0.0,
                output_limit: 1.0,
                integral_limit: 10.0,
                derivative_filter_tau: 0.1,
            },
            landing: LandingConfig::default(),
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), &'static str> {
        self.planar_gains.validate()?;
        self.yaw_gains.validate()?;
        self.landing.validate()
    }
}

/// Image-space control errors: centroid offset from the frame centroid, and
/// the site angle, which is directly the yaw error.
pub fn planar_errors(est: &FilterEstimate, frame: &ImageFrameSpec) -> (f64, f64, f64) {
    let (cx, cy) = frame.centroid();
    (est.state[0] - cx, est.state[1] - cy, est.state[2])
}

/// Altitude error `Z_e = K * |w - aspect * h|`. With the default aspect of 1
/// this is exactly the absolute width/height difference scaled by `k_alt`.
pub fn altitude_error(w: f64, h: f64, cfg: &LandingConfig) -> f64 {
    cfg.k_alt * (w - cfg.expected_aspect * h).abs()
}

/// Next altitude setpoint for one descent step: `z - z_step`, floored at the
/// landing threshold. Calling at or below the threshold is an error; the
/// caller must have handed over to the final landing sequence.
pub fn descend_step(z_current: f64, cfg: &LandingConfig) -> Result<f64, ControllerError> {
    if z_current <= cfg.z_land_threshold {
        return Err(ControllerError::BelowLandingThreshold);
    }
    Ok((z_current - cfg.z_step).max(cfg.z_land_threshold))
}

/// The landing state controller. A value advanced by [`control_step`]
/// with a single logical owner per episode.
///
/// [`control_step`]: LandingController::control_step
#[derive(Debug, Clone)]
pub struct LandingController {
    config: ControllerConfig,
    frame: ImageFrameSpec,
    pid_x: PidState,
    pid_y: PidState,
    pid_yaw: PidState,
    phase: LandingPhase,
    phase_entered_t: f64,
    t: f64,
    final_land_entries: u32,
}

impl LandingController {
    pub fn new(config: ControllerConfig, frame: ImageFrameSpec) -> Self {
        Self {
            config,
            frame,
            pid_x: PidState::default(),
            pid_y: PidState::default(),
            pid_yaw: PidState::default(),
            phase: LandingPhase::Search,
            phase_entered_t: 0.0,
            t: 0.0,
            final_land_entries: 0,
        }
    }

    pub fn phase(&self) -> LandingPhase {
        self.phase
    }

    /// Controller clock when the current phase was entered (s).
    pub fn phase_entered(&self) -> f64 {
        self.phase_entered_t
    }

    pub fn final_land_entries(&self) -> u32 {
        self.final_land_entries
    }

    /// Forces the episode into ABORTED (e.g. when the detection source
    /// fails). No-op when already terminal.
    pub fn abort(&mut self) -> Result<(), ControllerError> {
        if self.phase.is_terminal() {
            return Ok(());
        }
        self.transition(LandingPhase::Aborted)
    }

    fn transition(&mut self, to: LandingPhase) -> Result<(), ControllerError> {
        if !LandingPhase::can_transition(self.phase, to) {
            return Err(ControllerError::IllegalTransition {
                from: self.phase,
                to,
            });
        }
        if to == LandingPhase::FinalLand {
            self.final_land_entries += 1;
        }
        if to == LandingPhase::Search {
            // Stale loop state must not leak into the next acquisition.
            self.pid_x = PidState::default();
            self.pid_y = PidState::default();
            self.pid_yaw = PidState::default();
        }
        self.phase = to;
        self.phase_entered_t = self.t;
        Ok(())
    }

    fn planar_aligned(&self, est: &FilterEstimate) -> bool {
        let (ex, ey, _) = planar_errors(est, &self.frame);
        let tol = self.config.landing.align_tolerance_px;
        ex.abs() < tol && ey.abs() < tol
    }

    /// Descent permission: the centroid is within tolerance and the size
    /// difference says the pad is viewed squarely. Once the box saturates
    /// the frame, |w - h| carries no view information and is ignored.
    fn descend_permitted(&self, est: &FilterEstimate, pose: &VehiclePose) -> bool {
        let landing = &self.config.landing;
        let size_saturated = est.state[3] >= SIZE_SATURATION_FRACTION * self.frame.width
            || est.state[4] >= SIZE_SATURATION_FRACTION * self.frame.height;
        let ze_ok = size_saturated
            || altitude_error(est.state[3], est.state[4], landing) < landing.ze_descend_max;
        self.planar_aligned(est) && ze_ok && pose.z > landing.z_land_threshold
    }

    fn final_aligned(&self, est: &FilterEstimate) -> bool {
        self.planar_aligned(est) && est.state[2].abs() <= self.config.landing.theta_tolerance
    }

    fn next_phase(&self, track: &TrackInput<'_>, pose: &VehiclePose) -> LandingPhase {
        use LandingPhase::*;
        let landing = &self.config.landing;
        match self.phase {
            Landed | Aborted => self.phase,
            FinalLand => {
                if pose.z <= TOUCHDOWN_ALTITUDE {
                    Landed
                } else {
                    FinalLand
                }
            }
            Search => match track {
                TrackInput::Estimate(_) => Align,
                TrackInput::Lost => {
                    if self.t - self.phase_entered_t >= landing.search_timeout {
                        Aborted
                    } else {
                        Search
                    }
                }
            },
            Align | Descend => match track {
                TrackInput::Lost => Search,
                TrackInput::Estimate(est) => {
                    if self.final_aligned(est) && pose.z <= landing.z_land_threshold {
                        FinalLand
                    } else if self.descend_permitted(est, pose) {
                        Descend
                    } else {
                        Align
                    }
                }
            },
        }
    }

    /// Advances the state machine by one tick and produces the motion
    /// command for the (possibly new) phase.
    pub fn control_step(
        &mut self,
        track: TrackInput<'_>,
        pose: &VehiclePose,
        dt: f64,
    ) -> Result<ControlCommand, ControllerError> {
        if !crate::positive(dt) {
            return Err(ControllerError::NonPositiveDt);
        }
        self.t += dt;
        let next = self.next_phase(&track, pose);
        if next != self.phase {
            self.transition(next)?;
        }

        let cmd = match self.phase {
            LandingPhase::Search => ControlCommand::hold(CommandMode::Align),
            LandingPhase::Aborted => ControlCommand::hold(CommandMode::Abort),
            LandingPhase::FinalLand | LandingPhase::Landed => ControlCommand {
                vx: 0.0,
                vy: 0.0,
                yaw_rate: 0.0,
                z_setpoint: Some(0.0),
                mode: CommandMode::FinalLand,
            },
            LandingPhase::Align | LandingPhase::Descend => {
                let est = match track {
                    TrackInput::Estimate(est) => est,
                    TrackInput::Lost => return Err(ControllerError::MissingEstimate),
                };
                let (ex, ey, etheta) = planar_errors(est, &self.frame);
                let (vx, pid_x) = pid_step(&self.config.planar_gains, ex, dt, &self.pid_x);
                let (vy, pid_y) = pid_step(&self.config.planar_gains, ey, dt, &self.pid_y);
                let (yaw_rate, pid_yaw) = pid_step(&self.config.yaw_gains, etheta, dt, &self.pid_yaw);
                self.pid_x = pid_x;
                self.pid_y = pid_y;
                self.pid_yaw = pid_yaw;
                let (z_setpoint, mode) = if self.phase == LandingPhase::Descend {
                    (
                        Some(descend_step(pose.z, &self.config.landing)?),
                        CommandMode::DescendStep,
                    )
                } else {
                    (None, CommandMode::Align)
                };
                ControlCommand {
                    vx,
                    vy,
                    yaw_rate,
                    z_setpoint,
                    mode,
                }
            }
        };
        Ok(cmd)
    }
}
