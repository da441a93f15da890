//! Scenario files: TOML with one section per subsystem. Unknown keys are
//! rejected with the parser's line/column diagnostics; numeric ranges are
//! validated through the core config types before any episode runs.

use mavland_core::controller::{ControllerConfig, LandingConfig, PidGains};
use mavland_core::episode::{ScenarioConfig, StartPose};
use mavland_core::estimator::FilterConfig;
use mavland_core::geometry::ImageFrameSpec;
use mavland_core::simulator::{CameraModel, DetectorNoise, PadSpec, VehicleParams, WorldRect};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("unknown or non-numeric parameter `{0}`")]
    BadParameter(String),
}

/// Top-level scenario file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "defaults::max_time")]
    pub max_time: f64,
    /// Batch seeds; defaults to the single seed in `[noise]`.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub detector_latency_frames: u32,
    pub pad: PadSection,
    pub start_pose: StartSection,
    #[serde(default)]
    pub camera: CameraSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub filter: FilterSection,
    #[serde(default)]
    pub controller: ControllerSection,
    #[serde(default)]
    pub landing: LandingSection,
    #[serde(default)]
    pub vehicle: VehicleSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PadSection {
    pub cx: f64,
    pub cy: f64,
    pub length: f64,
    pub breadth: f64,
    #[serde(default)]
    pub yaw: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartSection {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    #[serde(default)]
    pub yaw: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraSection {
    pub width: f64,
    pub height: f64,
    pub rate: f64,
    pub focal_px: f64,
}

impl Default for CameraSection {
    fn default() -> Self {
        let cam = CameraModel::default();
        Self {
            width: cam.frame.width,
            height: cam.frame.height,
            rate: cam.frame.rate_hz,
            focal_px: cam.focal_px,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub corner_sigma: f64,
    pub dropout_prob: f64,
    /// `[min_x, min_y, max_x, max_y]` in world meters.
    pub occlusion_rect: Option<[f64; 4]>,
    pub seed: u64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        let noise = DetectorNoise::default();
        Self {
            corner_sigma: noise.corner_sigma,
            dropout_prob: noise.dropout_prob,
            occlusion_rect: None,
            seed: noise.seed,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSection {
    pub process_noise_psd: [f64; 5],
    pub measurement_noise: [f64; 5],
    pub initial_covariance_scale: f64,
    pub max_coast_frames: u32,
}

impl Default for FilterSection {
    fn default() -> Self {
        let cfg = FilterConfig::default();
        Self {
            process_noise_psd: cfg.process_noise_psd,
            measurement_noise: cfg.measurement_noise,
            initial_covariance_scale: cfg.initial_covariance_scale,
            max_coast_frames: cfg.max_coast_frames,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSection {
    pub planar: GainsSection,
    pub yaw: GainsSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GainsSection {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub output_limit: f64,
    pub integral_limit: f64,
    pub derivative_filter_tau: f64,
}

impl Default for GainsSection {
    fn default() -> Self {
        // Planar defaults; the yaw section overrides in from_gains below.
        Self::from_gains(&ControllerConfig::default().planar_gains)
    }
}

impl GainsSection {
    fn from_gains(g: &PidGains) -> Self {
        Self {
            kp: g.kp,
            ki: g.ki,
            kd: g.kd,
            output_limit: g.output_limit,
            integral_limit: g.integral_limit,
            derivative_filter_tau: g.derivative_filter_tau,
        }
    }

    fn to_gains(&self) -> PidGains {
        PidGains {
            kp: self.kp,
            ki: self.ki,
            kd: self.kd,
            output_limit: self.output_limit,
            integral_limit: self.integral_limit,
            derivative_filter_tau: self.derivative_filter_tau,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LandingSection {
    pub k_alt: f64,
    pub z_step: f64,
    pub z_land_threshold: f64,
    pub ze_descend_max: f64,
    pub align_tolerance_px: f64,
    pub theta_tolerance: f64,
    pub final_descent_rate: f64,
    pub search_timeout: f64,
    pub expected_aspect: f64,
}

impl Default for LandingSection {
    fn default() -> Self {
        let cfg = LandingConfig::default();
        Self {
            k_alt: cfg.k_alt,
            z_step: cfg.z_step,
            z_land_threshold: cfg.z_land_threshold,
            ze_descend_max: cfg.ze_descend_max,
            align_tolerance_px: cfg.align_tolerance_px,
            theta_tolerance: cfg.theta_tolerance,
            final_descent_rate: cfg.final_descent_rate,
            search_timeout: cfg.search_timeout,
            expected_aspect: cfg.expected_aspect,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleSection {
    pub tau: f64,
    pub altitude_tau: f64,
    pub min_vertical_rate: f64,
}

impl Default for VehicleSection {
    fn default() -> Self {
        let v = VehicleParams::default();
        Self {
            tau: v.tau,
            altitude_tau: v.altitude_tau,
            min_vertical_rate: v.min_vertical_rate,
        }
    }
}

mod defaults {
    pub fn max_time() -> f64 {
        120.0
    }
}

/// Parses and range-checks a scenario file.
pub fn parse_scenario(text: &str) -> Result<ScenarioFile, ConfigError> {
    let file: ScenarioFile = toml::from_str(text)?;
    // Surface range errors at load time, not at episode start.
    file.to_scenario(None)?;
    Ok(file)
}

impl ScenarioFile {
    /// Batch seeds: the explicit list, or the single `[noise] seed`.
    pub fn seeds(&self) -> Vec<u64> {
        match &self.seeds {
            Some(list) => list.clone(),
            None => vec![self.noise.seed],
        }
    }

    /// Builds the core scenario, optionally overriding the detector seed
    /// (one override per batch episode).
    pub fn to_scenario(&self, seed: Option<u64>) -> Result<ScenarioConfig, ConfigError> {
        let scenario = ScenarioConfig {
            pad: PadSpec {
                cx: self.pad.cx,
                cy: self.pad.cy,
                length: self.pad.length,
                breadth: self.pad.breadth,
                yaw: self.pad.yaw,
            },
            start: StartPose {
                x: self.start_pose.x,
                y: self.start_pose.y,
                z: self.start_pose.z,
                yaw: self.start_pose.yaw,
            },
            camera: CameraModel {
                focal_px: self.camera.focal_px,
                frame: ImageFrameSpec::new(self.camera.width, self.camera.height, self.camera.rate),
            },
            noise: DetectorNoise {
                corner_sigma: self.noise.corner_sigma,
                dropout_prob: self.noise.dropout_prob,
                occlusion_rect: self.noise.occlusion_rect.map(|[min_x, min_y, max_x, max_y]| {
                    WorldRect {
                        min_x,
                        min_y,
                        max_x,
                        max_y,
                    }
                }),
                seed: seed.unwrap_or(self.noise.seed),
            },
            filter: FilterConfig {
                process_noise_psd: self.filter.process_noise_psd,
                measurement_noise: self.filter.measurement_noise,
                initial_covariance_scale: self.filter.initial_covariance_scale,
                max_coast_frames: self.filter.max_coast_frames,
            },
            controller: ControllerConfig {
                planar_gains: self.controller.planar.to_gains(),
                yaw_gains: self.controller.yaw.to_gains(),
                landing: LandingConfig {
                    k_alt: self.landing.k_alt,
                    z_step: self.landing.z_step,
                    z_land_threshold: self.landing.z_land_threshold,
                    ze_descend_max: self.landing.ze_descend_max,
                    align_tolerance_px: self.landing.align_tolerance_px,
                    theta_tolerance: self.landing.theta_tolerance,
                    final_descent_rate: self.landing.final_descent_rate,
                    search_timeout: self.landing.search_timeout,
                    expected_aspect: self.landing.expected_aspect,
                },
            },
            vehicle: VehicleParams {
                tau: self.vehicle.tau,
                altitude_tau: self.vehicle.altitude_tau,
                min_vertical_rate: self.vehicle.min_vertical_rate,
                final_descent_rate: self.landing.final_descent_rate,
            },
            detector_latency_frames: self.detector_latency_frames,
            max_time: self.max_time,
        };
        scenario
            .validate()
            .map_err(|e| ConfigError::Invalid(e.message))?;
        Ok(scenario)
    }
}
