//! Deterministic closed-loop world: velocity-level quadrotor kinematics, a
//! landing pad on a flat ground plane, and a downward pinhole camera whose
//! detections stand in for a learned detector.
//!
//! The camera looks straight down (optical axis along -z of the body) with
//! the image `u` axis along body `x` and `v` along body `y`. Because every
//! ground point shares the camera's altitude, projection of the ground plane
//! is an exact similarity: `u = f * bx / z + cx`. All integration is explicit
//! Euler at the camera tick, which keeps every trajectory bit-reproducible.

use alloc::vec::Vec;

use core::f64::consts::FRAC_PI_2;
use core::fmt;

use libm::{cos, round, sin};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::controller::{CommandMode, ControlCommand};
use crate::geometry::{wrap_quarter, BoundingBox, ImageFrameSpec, ImagePoint};

/// Simulated MAV state: world position, altitude above ground, yaw, and the
/// velocities the first-order autopilot model integrates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VehiclePose {
    pub x: f64,
    pub y: f64,
    /// Altitude above the ground plane (m, never negative).
    pub z: f64,
    pub yaw: f64,
    /// Body-frame planar velocity (m/s).
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub yaw_rate: f64,
}

/// Landing pad: an oriented rectangle on the ground plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PadSpec {
    pub cx: f64,
    pub cy: f64,
    /// Side along the pad's own x axis (m).
    pub length: f64,
    /// Side along the pad's own y axis (m).
    pub breadth: f64,
    pub yaw: f64,
}

impl PadSpec {
    pub fn validate(&self) -> Result<(), &'static str> {
        if !crate::positive(self.length) || !crate::positive(self.breadth) {
            return Err("pad.length and pad.breadth must be > 0");
        }
        Ok(())
    }
}

/// Downward-facing pinhole camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub focal_px: f64,
    pub frame: ImageFrameSpec,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            // ~60 degree horizontal field of view at 640 px.
            focal_px: 554.3,
            frame: ImageFrameSpec::default(),
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), &'static str> {
        if !crate::positive(self.focal_px) {
            return Err("camera.focal_px must be > 0");
        }
        if !crate::positive(self.frame.width) || !crate::positive(self.frame.height) {
            return Err("camera frame dimensions must be > 0");
        }
        if !crate::positive(self.frame.rate_hz) {
            return Err("camera.rate must be > 0");
        }
        Ok(())
    }
}

/// Axis-aligned rectangle in world coordinates (m).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldRect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl WorldRect {
    pub fn validate(&self) -> Result<(), &'static str> {
        let extent_ok = self.max_x > self.min_x && self.max_y > self.min_y;
        if !extent_ok {
            return Err("occlusion rectangle must have positive extent");
        }
        Ok(())
    }

    fn corners(&self) -> [[f64; 2]; 4] {
        [
            [self.min_x, self.min_y],
            [self.max_x, self.min_y],
            [self.max_x, self.max_y],
            [self.min_x, self.max_y],
        ]
    }
}

/// Imperfections of the synthetic detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorNoise {
    /// Per-coordinate Gaussian corner noise (px).
    pub corner_sigma: f64,
    /// Per-frame missed-detection probability.
    pub dropout_prob: f64,
    /// Optional static occluder on the ground plane.
    pub occlusion_rect: Option<WorldRect>,
    pub seed: u64,
}

impl Default for DetectorNoise {
    fn default() -> Self {
        Self {
            corner_sigma: 2.0,
            dropout_prob: 0.05,
            occlusion_rect: None,
            seed: 0,
        }
    }
}

impl DetectorNoise {
    pub fn validate(&self) -> Result<(), &'static str> {
        if !self.corner_sigma.is_finite() || self.corner_sigma < 0.0 {
            return Err("noise.corner_sigma must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.dropout_prob) {
            return Err("noise.dropout_prob must be within [0, 1]");
        }
        if let Some(rect) = &self.occlusion_rect {
            rect.validate()?;
        }
        Ok(())
    }
}

/// First-order autopilot response parameters.
///
/// `altitude_tau` sets how aggressively the altitude channel chases its
/// setpoint (`vz_desired = (setpoint - z) / altitude_tau`), so the effective
/// stepped-descent rate is `z_step / altitude_tau` — 0.25 m/s with the
/// defaults.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleParams {
    /// Velocity-response lag (s).
    pub tau: f64,
    /// Altitude setpoint tracking constant (s).
    pub altitude_tau: f64,
    /// Slowest rate at which an altitude setpoint is chased (m/s). Without
    /// it the proportional approach asymptotes and never captures the
    /// setpoint.
    pub min_vertical_rate: f64,
    /// Constant descent rate while a FINAL_LAND command is active (m/s).
    pub final_descent_rate: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            tau: 0.3,
            altitude_tau: 2.0,
            min_vertical_rate: 0.05,
            final_descent_rate: 0.25,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), &'static str> {
        let all_positive = [
            self.tau,
            self.altitude_tau,
            self.min_vertical_rate,
            self.final_descent_rate,
        ]
        .iter()
        .all(|v| crate::positive(*v));
        if !all_positive {
            return Err("vehicle parameters must be > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionError {
    /// Projection is undefined at zero altitude.
    ZeroAltitude,
}

impl fmt::Display for ProjectionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ZeroAltitude => write!(f, "camera projection undefined at zero altitude"),
        }
    }
}

impl core::error::Error for ProjectionError {}

/// The ground-plane-to-image similarity of one camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundView {
    center_u: f64,
    center_v: f64,
    /// Pixels per meter of ground at the vehicle's altitude (f / z).
    scale: f64,
    cos_yaw: f64,
    sin_yaw: f64,
    pos_x: f64,
    pos_y: f64,
}

impl GroundView {
    pub fn new(pose: &VehiclePose, cam: &CameraModel) -> Result<Self, ProjectionError> {
        if !crate::positive(pose.z) {
            return Err(ProjectionError::ZeroAltitude);
        }
        let (center_u, center_v) = cam.frame.centroid();
        Ok(Self {
            center_u,
            center_v,
            scale: cam.focal_px / pose.z,
            cos_yaw: cos(pose.yaw),
            sin_yaw: sin(pose.yaw),
            pos_x: pose.x,
            pos_y: pose.y,
        })
    }

    /// Projects a ground point (world x, y) to the image plane.
    pub fn world_to_image(&self, wx: f64, wy: f64) -> ImagePoint {
        let dx = wx - self.pos_x;
        let dy = wy - self.pos_y;
        let bx = self.cos_yaw * dx + self.sin_yaw * dy;
        let by = -self.sin_yaw * dx + self.cos_yaw * dy;
        ImagePoint::new(self.center_u + self.scale * bx, self.center_v + self.scale * by)
    }
}

/// One Euler step of the velocity-level vehicle model. Velocities chase the
/// commanded values with lag `tau`; positions then integrate the updated
/// velocities. A FINAL_LAND command pins the vertical rate to the configured
/// constant descent, ignoring the setpoint channel.
pub fn vehicle_step(
    pose: &VehiclePose,
    cmd: &ControlCommand,
    dt: f64,
    params: &VehicleParams,
) -> VehiclePose {
    debug_assert!(dt > 0.0 && params.tau > 0.0);
    let mut next = *pose;
    let blend = dt / params.tau;
    next.vx += blend * (cmd.vx - pose.vx);
    next.vy += blend * (cmd.vy - pose.vy);
    next.yaw_rate += blend * (cmd.yaw_rate - pose.yaw_rate);
    next.vz = if cmd.mode == CommandMode::FinalLand {
        -params.final_descent_rate
    } else {
        let vz_desired = match cmd.z_setpoint {
            Some(setpoint) => {
                let v = (setpoint - pose.z) / params.altitude_tau;
                if v == 0.0 || v.abs() >= params.min_vertical_rate {
                    v
                } else {
                    // Setpoint capture: finish the approach at the minimum
                    // rate instead of decaying asymptotically.
                    params.min_vertical_rate * v.signum()
                }
            }
            None => 0.0,
        };
        pose.vz + blend * (vz_desired - pose.vz)
    };
    let (s, c) = (sin(pose.yaw), cos(pose.yaw));
    next.x += dt * (c * next.vx - s * next.vy);
    next.y += dt * (s * next.vx + c * next.vy);
    next.yaw += dt * next.yaw_rate;
    next.z = (pose.z + dt * next.vz).max(0.0);
    next
}

/// World corners of the pad, labeled for the corner convention of
/// [`crate::geometry`]. The relative pad/vehicle yaw is wrapped to
/// `[-pi/4, pi/4)` and the pad dimensions swap when the wrap crosses an odd
/// number of quarter turns, so labels stay consistent with what an
/// image-oriented detector would emit.
fn pad_world_corners(pad: &PadSpec, vehicle_yaw: f64) -> [[f64; 2]; 4] {
    let relative = pad.yaw - vehicle_yaw;
    let wrapped = wrap_quarter(relative);
    let quarter_turns = round((relative - wrapped) / FRAC_PI_2) as i64;
    let (half_u, half_v) = if quarter_turns % 2 == 0 {
        (pad.length / 2.0, pad.breadth / 2.0)
    } else {
        (pad.breadth / 2.0, pad.length / 2.0)
    };
    let direction = vehicle_yaw + wrapped;
    let (s, c) = (sin(direction), cos(direction));
    // Labels: 0 = (-u, -v), 1 = (+u, -v), 2 = (-u, +v), 3 = (+u, +v).
    [
        [-half_u, -half_v],
        [half_u, -half_v],
        [-half_u, half_v],
        [half_u, half_v],
    ]
    .map(|[x, y]| [pad.cx + c * x - s * y, pad.cy + s * x + c * y])
}

fn clamp_to_frame(p: ImagePoint, frame: &ImageFrameSpec) -> ImagePoint {
    ImagePoint::new(p.u.clamp(0.0, frame.width), p.v.clamp(0.0, frame.height))
}

/// Projects the pad through the downward pinhole. Corners falling outside
/// the frame are clamped to its boundary; `visible_fraction` is the clipped
/// polygon area over the full projected area. Returns `Ok(None)` when the
/// pad lies entirely outside the frame.
pub fn project_pad(
    pose: &VehiclePose,
    pad: &PadSpec,
    cam: &CameraModel,
    frame_id: u64,
) -> Result<Option<BoundingBox>, ProjectionError> {
    let view = GroundView::new(pose, cam)?;
    let world = pad_world_corners(pad, pose.yaw);
    let corners = world.map(|[wx, wy]| view.world_to_image(wx, wy));
    let outline = corner_polygon(&corners);
    let full_area = poly::area(&outline);
    if full_area <= 0.0 {
        return Ok(None);
    }
    let frame = &cam.frame;
    let frame_poly: Vec<[f64; 2]> = alloc::vec![
        [0.0, 0.0],
        [frame.width, 0.0],
        [frame.width, frame.height],
        [0.0, frame.height],
    ];
    let clipped = poly::clip_convex(&outline, &frame_poly);
    let fraction = (poly::area(&clipped) / full_area).clamp(0.0, 1.0);
    if fraction <= 0.0 {
        return Ok(None);
    }
    let clamped = corners.map(|p| clamp_to_frame(p, frame));
    Ok(Some(BoundingBox {
        corners: clamped,
        confidence: fraction,
        frame_id,
        visible_fraction: fraction,
    }))
}

/// Corner array (label order) to a cyclic polygon outline.
fn corner_polygon(corners: &[ImagePoint; 4]) -> Vec<[f64; 2]> {
    [corners[0], corners[1], corners[3], corners[2]]
        .iter()
        .map(|p| [p.u, p.v])
        .collect()
}

fn apply_occlusion(b: &BoundingBox, occ: &WorldRect, view: &GroundView) -> Option<BoundingBox> {
    let occ_poly: Vec<[f64; 2]> = occ
        .corners()
        .iter()
        .map(|[wx, wy]| {
            let p = view.world_to_image(*wx, *wy);
            [p.u, p.v]
        })
        .collect();
    let outline = corner_polygon(&b.corners);
    let box_area = poly::area(&outline);
    let mut out = *b;
    if box_area > 0.0 {
        let covered = poly::area(&poly::clip_convex(&outline, &occ_poly));
        let ratio = (covered / box_area).clamp(0.0, 1.0);
        out.visible_fraction = (out.visible_fraction * (1.0 - ratio)).clamp(0.0, 1.0);
    }
    if out.visible_fraction <= 0.0 {
        return None;
    }
    for corner in &mut out.corners {
        if poly::contains(&occ_poly, [corner.u, corner.v]) {
            let [u, v] = poly::nearest_on_boundary(&occ_poly, [corner.u, corner.v]);
            *corner = ImagePoint::new(u, v);
        }
    }
    out.confidence = out.confidence.min(out.visible_fraction);
    Some(out)
}

/// The stochastic detector stand-in. Applies the occluder (if configured) to
/// the true box, then a dropout draw, then iid Gaussian corner noise, and
/// clamps the result to the frame. The RNG is consumed in a fixed order
/// (one dropout draw, then corner coordinates in label order), which is what
/// makes externally replayed detections bit-compatible.
pub fn detect<R: Rng + ?Sized>(
    truth: Option<&BoundingBox>,
    noise: &DetectorNoise,
    view: &GroundView,
    frame: &ImageFrameSpec,
    rng: &mut R,
) -> Option<BoundingBox> {
    let mut b = *truth?;
    if let Some(occ) = &noise.occlusion_rect {
        b = apply_occlusion(&b, occ, view)?;
    }
    if rng.random::<f64>() < noise.dropout_prob {
        return None;
    }
    if noise.corner_sigma > 0.0 {
        let normal = Normal::new(0.0, noise.corner_sigma).expect("corner_sigma is validated");
        for corner in &mut b.corners {
            corner.u += normal.sample(rng);
            corner.v += normal.sample(rng);
        }
    }
    for corner in &mut b.corners {
        *corner = clamp_to_frame(*corner, frame);
    }
    Some(b)
}

/// Minimal convex-polygon helpers for visibility accounting.
mod poly {
    use alloc::vec::Vec;

    /// Unsigned polygon area (shoelace).
    pub fn area(pts: &[[f64; 2]]) -> f64 {
        signed_area(pts).abs()
    }

    fn signed_area(pts: &[[f64; 2]]) -> f64 {
        if pts.len() < 3 {
            return 0.0;
        }
        let mut sum = 0.0;
        for i in 0..pts.len() {
            let [x1, y1] = pts[i];
            let [x2, y2] = pts[(i + 1) % pts.len()];
            sum += x1 * y2 - x2 * y1;
        }
        sum / 2.0
    }

    fn oriented(clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
        let mut c: Vec<[f64; 2]> = clip.to_vec();
        if signed_area(&c) < 0.0 {
            c.reverse();
        }
        c
    }

    fn cross(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
        (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
    }

    /// Sutherland-Hodgman clip of a simple polygon against a convex polygon.
    pub fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
        let clip = oriented(clip);
        let mut output: Vec<[f64; 2]> = subject.to_vec();
        for i in 0..clip.len() {
            if output.is_empty() {
                break;
            }
            let a = clip[i];
            let b = clip[(i + 1) % clip.len()];
            let input = core::mem::take(&mut output);
            for j in 0..input.len() {
                let current = input[j];
                let previous = input[(j + input.len() - 1) % input.len()];
                let current_inside = cross(a, b, current) >= 0.0;
                let previous_inside = cross(a, b, previous) >= 0.0;
                if current_inside {
                    if !previous_inside {
                        output.push(intersect(previous, current, a, b));
                    }
                    output.push(current);
                } else if previous_inside {
                    output.push(intersect(previous, current, a, b));
                }
            }
        }
        output
    }

    fn intersect(p1: [f64; 2], p2: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
        let d1 = cross(a, b, p1);
        let d2 = cross(a, b, p2);
        let t = d1 / (d1 - d2);
        [p1[0] + t * (p2[0] - p1[0]), p1[1] + t * (p2[1] - p1[1])]
    }

    /// Strict interior test; points on the boundary are outside.
    pub fn contains(convex: &[[f64; 2]], p: [f64; 2]) -> bool {
        let c = oriented(convex);
        (0..c.len()).all(|i| cross(c[i], c[(i + 1) % c.len()], p) > 0.0)
    }

    /// Closest point on the polygon's boundary.
    pub fn nearest_on_boundary(polygon: &[[f64; 2]], p: [f64; 2]) -> [f64; 2] {
        let mut best = polygon[0];
        let mut best_dist = f64::INFINITY;
        for i in 0..polygon.len() {
            let a = polygon[i];
            let b = polygon[(i + 1) % polygon.len()];
            let abx = b[0] - a[0];
            let aby = b[1] - a[1];
            let len_sq = abx * abx + aby * aby;
            let t = if len_sq > 0.0 {
                (((p[0] - a[0]) * abx + (p[1] - a[1]) * aby) / len_sq).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let q = [a[0] + t * abx, a[1] + t * aby];
            let d = (q[0] - p[0]) * (q[0] - p[0]) + (q[1] - p[1]) * (q[1] - p[1]);
            if d < best_dist {
                best_dist = d;
                best = q;
            }
        }
        best
    }
}
