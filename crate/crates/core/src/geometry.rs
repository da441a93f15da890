//! Image-plane geometry: detected corners and their reduction to the
//! measurement vector consumed by the filter.
//!
//! Conventions held throughout the workspace:
//!
//! - Image coordinates: `u` grows rightward, `v` grows downward, origin at
//!   the top-left of the frame, units are pixels.
//! - Corner labels: 0 = top-left, 1 = top-right, 2 = bottom-left,
//!   3 = bottom-right of the detected quadrilateral. Edges (0,1) and (2,3)
//!   are the two widths, edges (0,2) and (1,3) the two heights. This is the
//!   only labeling under which those pairs are opposite edges of a
//!   conventional quadrilateral.
//! - Site angle `theta`: angle of the top edge (corner 0 -> corner 1)
//!   against the image horizontal. A bounding box is symmetric under 90
//!   degree rotation, so the closest direction parallel to its edges is
//!   treated as zero and `theta` is wrapped to `[-pi/4, pi/4)`.

use core::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use libm::{atan2, sqrt};

/// Sizes at or below this many pixels mark a degenerate (collapsed) box.
pub const DEGENERATE_SIZE_PX: f64 = 1e-9;

/// A point on the image plane, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImagePoint {
    pub u: f64,
    pub v: f64,
}

impl ImagePoint {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

/// Four ordered corners of a detected landing site, plus detection metadata.
///
/// `visible_fraction` is the fraction of the true site the box covers
/// (1 when fully visible); `confidence` is the detector's score in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub corners: [ImagePoint; 4],
    pub confidence: f64,
    pub frame_id: u64,
    pub visible_fraction: f64,
}

impl BoundingBox {
    pub fn new(corners: [ImagePoint; 4], confidence: f64, frame_id: u64) -> Self {
        Self {
            corners,
            confidence,
            frame_id,
            visible_fraction: 1.0,
        }
    }
}

/// Transformed site state: the 5-component measurement fed to the filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteState {
    /// Centroid, horizontal (px).
    pub x_c: f64,
    /// Centroid, vertical (px).
    pub y_c: f64,
    /// Site angle against the image horizontal, in `[-pi/4, pi/4)` (rad).
    pub theta: f64,
    /// Averaged width (px).
    pub w: f64,
    /// Averaged height (px).
    pub h: f64,
    pub frame_id: u64,
}

impl SiteState {
    /// A collapsed box carries no usable size or angle information;
    /// downstream consumers treat it as a missing measurement.
    pub fn is_degenerate(&self) -> bool {
        self.w <= DEGENERATE_SIZE_PX && self.h <= DEGENERATE_SIZE_PX
    }
}

/// Camera frame geometry and rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageFrameSpec {
    /// Frame width (px).
    pub width: f64,
    /// Frame height (px).
    pub height: f64,
    /// Frame rate (Hz).
    pub rate_hz: f64,
}

impl ImageFrameSpec {
    pub fn new(width: f64, height: f64, rate_hz: f64) -> Self {
        Self {
            width,
            height,
            rate_hz,
        }
    }

    /// Frame centroid, exactly half of each dimension.
    pub fn centroid(&self) -> (f64, f64) {
        (self.width / 2.0, self.height / 2.0)
    }

    /// Tick period (s).
    pub fn dt(&self) -> f64 {
        1.0 / self.rate_hz
    }
}

impl Default for ImageFrameSpec {
    fn default() -> Self {
        Self::new(640.0, 480.0, 20.0)
    }
}

/// Euclidean distance between two image points.
pub fn euclidean(p1: ImagePoint, p2: ImagePoint) -> f64 {
    let du = p1.u - p2.u;
    let dv = p1.v - p2.v;
    sqrt(du * du + dv * dv)
}

/// Wraps an angle to `[-pi/4, pi/4)` by adding or subtracting multiples of
/// `pi/2`. Ties at exactly `pi/4` map to `-pi/4`. Angles already in range
/// are returned bit-exactly, which makes the function idempotent.
pub fn wrap_quarter(angle: f64) -> f64 {
    if (-FRAC_PI_4..FRAC_PI_4).contains(&angle) {
        return angle;
    }
    let mut r = (angle + FRAC_PI_4) % FRAC_PI_2;
    if r < 0.0 {
        r += FRAC_PI_2;
    }
    if r >= FRAC_PI_2 {
        r -= FRAC_PI_2;
    }
    r - FRAC_PI_4
}

/// Reduces a bounding box to the site state: corner-average centroid, the
/// top-edge angle wrapped to `[-pi/4, pi/4)`, and the two averaged side
/// lengths. A fully collapsed box yields `w = h = 0` and `theta = 0`; it is
/// not an error and can be identified via [`SiteState::is_degenerate`].
pub fn bbox_to_state(b: &BoundingBox) -> SiteState {
    let [c0, c1, c2, c3] = b.corners;
    let x_c = (c0.u + c1.u + c2.u + c3.u) / 4.0;
    let y_c = (c0.v + c1.v + c2.v + c3.v) / 4.0;
    let w = (euclidean(c0, c1) + euclidean(c2, c3)) / 2.0;
    let h = (euclidean(c0, c2) + euclidean(c1, c3)) / 2.0;
    // atan2(0, 0) = 0, so a collapsed box gets theta = 0 without special
    // casing.
    let theta = wrap_quarter(atan2(c1.v - c0.v, c1.u - c0.u));
    SiteState {
        x_c,
        y_c,
        theta,
        w,
        h,
        frame_id: b.frame_id,
    }
}
