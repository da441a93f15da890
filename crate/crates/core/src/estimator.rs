//! Constant-velocity Kalman filter over the site state.
//!
//! State layout (10 components):
//!
//! ```text
//!  [0] x_c   centroid u          (px)     [5] x_c rate   (px/s)
//!  [1] y_c   centroid v          (px)     [6] y_c rate   (px/s)
//!  [2] theta site angle          (rad)    [7] theta rate (rad/s)
//!  [3] w     site width          (px)     [8] w rate     (px/s)
//!  [4] h     site height         (px)     [9] h rate     (px/s)
//! ```
//!
//! The process model is constant velocity per component with continuous
//! white-noise acceleration of intensity `process_noise_psd[i]`; a static
//! model cannot follow the growth of `w` and `h` during descent. The
//! measurement selects the five position components. Everything is linear
//! except the angle, whose innovation is computed as the shortest signed
//! distance modulo `pi/2`, and the angle component is re-wrapped to
//! `[-pi/4, pi/4)` after every operation.
//!
//! Covariance updates use the Joseph form and are re-symmetrized; positive
//! definiteness is checked by Cholesky after each update so tuning bugs
//! surface as errors instead of silent divergence over long episodes.
//!
//! Missing or degenerate detections produce predict-only steps ("coasting");
//! a partially visible site is still a full 5-D measurement but with its
//! noise inflated by `1 / visible_fraction^2`.

use core::fmt;

use nalgebra::{Cholesky, SMatrix, SVector};

use crate::geometry::{wrap_quarter, SiteState};

pub const STATE_DIM: usize = 10;
pub const MEAS_DIM: usize = 5;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type StateCovariance = SMatrix<f64, STATE_DIM, STATE_DIM>;
type MeasVector = SVector<f64, MEAS_DIM>;
type MeasCovariance = SMatrix<f64, MEAS_DIM, MEAS_DIM>;
type GainMatrix = SMatrix<f64, STATE_DIM, MEAS_DIM>;

/// Velocity components start this many times more uncertain than positions.
const VELOCITY_COV_FACTOR: f64 = 100.0;

/// Floor on `visible_fraction` when inflating measurement noise, so a sliver
/// of a detection degrades into a near-coast instead of producing a
/// numerically useless covariance.
const MIN_VISIBLE_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorError {
    /// Initialization or update with a degenerate (collapsed) measurement.
    DegenerateMeasurement,
    /// `predict`/`step` called with a non-positive time step.
    NonPositiveDt,
    /// Covariance lost positive definiteness; signals a tuning or model bug.
    CovarianceNotPositiveDefinite,
}

impl fmt::Display for EstimatorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DegenerateMeasurement => write!(f, "degenerate site measurement"),
            Self::NonPositiveDt => write!(f, "time step must be positive"),
            Self::CovarianceNotPositiveDefinite => {
                write!(f, "covariance is no longer positive definite")
            }
        }
    }
}

impl core::error::Error for EstimatorError {}

/// Filter tuning. Defaults are tuning values for the bundled simulator, not
/// claims from any reference system.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    /// Continuous white-noise acceleration intensity per tracked component
    /// (px^2/s^3 for positions and sizes, rad^2/s^3 for the angle).
    pub process_noise_psd: [f64; MEAS_DIM],
    /// Diagonal measurement variances (px^2, rad^2).
    pub measurement_noise: [f64; MEAS_DIM],
    /// Scale of the initial covariance identity block.
    pub initial_covariance_scale: f64,
    /// Predict-only frames tolerated before the track is declared lost.
    pub max_coast_frames: u32,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            // Sized so that roughly one second of coasting doubles the
            // settled position uncertainty at 20 Hz.
            process_noise_psd: [8.0, 8.0, 0.02, 8.0, 8.0],
            // sigma = 2 px on centroid, 0.02 rad on angle, 3 px on sizes.
            measurement_noise: [4.0, 4.0, 4e-4, 9.0, 9.0],
            initial_covariance_scale: 25.0,
            max_coast_frames: 20,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), &'static str> {
        if self.process_noise_psd.iter().any(|q| *q <= 0.0 || !q.is_finite()) {
            return Err("filter.process_noise_psd entries must be > 0");
        }
        if self.measurement_noise.iter().any(|r| *r <= 0.0 || !r.is_finite()) {
            return Err("filter.measurement_noise entries must be > 0");
        }
        if !crate::positive(self.initial_covariance_scale) {
            return Err("filter.initial_covariance_scale must be > 0");
        }
        if self.max_coast_frames < 1 {
            return Err("filter.max_coast_frames must be >= 1");
        }
        Ok(())
    }
}

/// A site measurement together with how much of the site was visible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub site: SiteState,
    pub visible_fraction: f64,
}

impl Measurement {
    /// A measurement of a fully visible site.
    pub fn full(site: SiteState) -> Self {
        Self {
            site,
            visible_fraction: 1.0,
        }
    }
}

/// Outcome of a filter step.
#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum TrackStatus {
    Tracking(FilterEstimate),
    /// Too many consecutive predict-only frames; the track must be re-seeded.
    Lost,
}

/// Filter state: mean, covariance, and coasting bookkeeping. A value type;
/// every operation consumes `&self` and returns a new estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterEstimate {
    pub state: StateVector,
    pub covariance: StateCovariance,
    /// Time of the estimate (s, simulation clock).
    pub timestamp: f64,
    /// Consecutive predict-only frames since the last accepted measurement.
    pub frames_since_measurement: u32,
}

fn transition(dt: f64) -> StateCovariance {
    let mut f = StateCovariance::identity();
    for i in 0..MEAS_DIM {
        f[(i, i + MEAS_DIM)] = dt;
    }
    f
}

fn process_noise(dt: f64, cfg: &FilterConfig) -> StateCovariance {
    let mut q = StateCovariance::zeros();
    let dt2 = dt * dt;
    let dt3 = dt2 * dt;
    for (i, &psd) in cfg.process_noise_psd.iter().enumerate() {
        q[(i, i)] = psd * dt3 / 3.0;
        q[(i, i + MEAS_DIM)] = psd * dt2 / 2.0;
        q[(i + MEAS_DIM, i)] = psd * dt2 / 2.0;
        q[(i + MEAS_DIM, i + MEAS_DIM)] = psd * dt;
    }
    q
}

fn observation() -> SMatrix<f64, MEAS_DIM, STATE_DIM> {
    SMatrix::from_fn(|r, c| if r == c { 1.0 } else { 0.0 })
}

fn measurement_noise(cfg: &FilterConfig, visible_fraction: f64) -> MeasCovariance {
    let vf = visible_fraction.clamp(MIN_VISIBLE_FRACTION, 1.0);
    let inflation = 1.0 / (vf * vf);
    MeasCovariance::from_fn(|r, c| {
        if r == c {
            cfg.measurement_noise[r] * inflation
        } else {
            0.0
        }
    })
}

fn symmetrize(m: &mut StateCovariance) {
    let t = m.transpose();
    *m = (*m + t) * 0.5;
}

impl FilterEstimate {
    /// Seeds a track from a first measurement: position components copied,
    /// velocities zero, covariance a scaled identity block that is large on
    /// the velocities. The stored angle is wrapped.
    pub fn init(z0: SiteState, cfg: &FilterConfig) -> Result<Self, EstimatorError> {
        if z0.is_degenerate() {
            return Err(EstimatorError::DegenerateMeasurement);
        }
        let mut state = StateVector::zeros();
        state[0] = z0.x_c;
        state[1] = z0.y_c;
        state[2] = wrap_quarter(z0.theta);
        state[3] = z0.w;
        state[4] = z0.h;
        let mut covariance = StateCovariance::zeros();
        for i in 0..MEAS_DIM {
            covariance[(i, i)] = cfg.initial_covariance_scale;
            covariance[(i + MEAS_DIM, i + MEAS_DIM)] =
                cfg.initial_covariance_scale * VELOCITY_COV_FACTOR;
        }
        Ok(Self {
            state,
            covariance,
            timestamp: 0.0,
            frames_since_measurement: 0,
        })
    }

    /// Propagates the estimate by `dt` under the constant-velocity model.
    pub fn predict(&self, dt: f64, cfg: &FilterConfig) -> Result<Self, EstimatorError> {
        if !crate::positive(dt) {
            return Err(EstimatorError::NonPositiveDt);
        }
        let f = transition(dt);
        let mut state = f * self.state;
        state[2] = wrap_quarter(state[2]);
        let mut covariance = f * self.covariance * f.transpose() + process_noise(dt, cfg);
        symmetrize(&mut covariance);
        Ok(Self {
            state,
            covariance,
            timestamp: self.timestamp + dt,
            frames_since_measurement: self.frames_since_measurement + 1,
        })
    }

    /// Measurement innovation `z - H x` with the angle component taken as
    /// the shortest signed distance modulo `pi/2`.
    fn innovation(&self, m: &Measurement) -> MeasVector {
        let mut y = MeasVector::zeros();
        y[0] = m.site.x_c - self.state[0];
        y[1] = m.site.y_c - self.state[1];
        y[2] = wrap_quarter(m.site.theta - self.state[2]);
        y[3] = m.site.w - self.state[3];
        y[4] = m.site.h - self.state[4];
        y
    }

    fn innovation_covariance(&self, m: &Measurement, cfg: &FilterConfig) -> MeasCovariance {
        let h = observation();
        h * self.covariance * h.transpose() + measurement_noise(cfg, m.visible_fraction)
    }

    /// Normalized innovation squared of `m` against the current (predicted)
    /// estimate. Averages to `MEAS_DIM` for a consistent filter; useful for
    /// whiteness checks and gating.
    pub fn nis(&self, m: &Measurement, cfg: &FilterConfig) -> f64 {
        let y = self.innovation(m);
        let s = self.innovation_covariance(m, cfg);
        match Cholesky::new(s) {
            Some(chol) => (y.transpose() * chol.solve(&y))[(0, 0)],
            None => f64::INFINITY,
        }
    }

    /// Standard linear Kalman update with Joseph-form covariance.
    pub fn update(&self, m: &Measurement, cfg: &FilterConfig) -> Result<Self, EstimatorError> {
        if m.site.is_degenerate() {
            return Err(EstimatorError::DegenerateMeasurement);
        }
        let h = observation();
        let r = measurement_noise(cfg, m.visible_fraction);
        let y = self.innovation(m);
        let s = self.innovation_covariance(m, cfg);
        let s_inv = Cholesky::new(s)
            .ok_or(EstimatorError::CovarianceNotPositiveDefinite)?
            .inverse();
        let k: GainMatrix = self.covariance * h.transpose() * s_inv;

        let mut state = self.state + k * y;
        state[2] = wrap_quarter(state[2]);

        let i_kh = StateCovariance::identity() - k * h;
        let mut covariance = i_kh * self.covariance * i_kh.transpose() + k * r * k.transpose();
        symmetrize(&mut covariance);
        if Cholesky::new(covariance).is_none() {
            return Err(EstimatorError::CovarianceNotPositiveDefinite);
        }
        Ok(Self {
            state,
            covariance,
            timestamp: self.timestamp,
            frames_since_measurement: 0,
        })
    }

    /// One filter cycle: always predict, update when a non-degenerate
    /// measurement is available, and declare the track lost once the coast
    /// budget is exhausted.
    pub fn step(
        &self,
        measurement: Option<&Measurement>,
        dt: f64,
        cfg: &FilterConfig,
    ) -> Result<TrackStatus, EstimatorError> {
        let mut est = self.predict(dt, cfg)?;
        match measurement {
            Some(m) if !m.site.is_degenerate() => {
                est = est.update(m, cfg)?;
            }
            _ => {}
        }
        if est.frames_since_measurement > cfg.max_coast_frames {
            return Ok(TrackStatus::Lost);
        }
        Ok(TrackStatus::Tracking(est))
    }

    /// Filtered site state (the position components of the mean).
    pub fn site(&self) -> SiteState {
        SiteState {
            x_c: self.state[0],
            y_c: self.state[1],
            theta: self.state[2],
            w: self.state[3],
            h: self.state[4],
            frame_id: 0,
        }
    }

    pub fn covariance_is_positive_definite(&self) -> bool {
        Cholesky::new(self.covariance).is_some()
    }
}
