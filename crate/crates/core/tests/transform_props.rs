//! Property tests for the bounding-box-to-state transform, checked against
//! an independent re-derivation of the formulas (std math, not the library
//! path).

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use mavland_core::geometry::{bbox_to_state, wrap_quarter, BoundingBox, ImagePoint};
use proptest::prelude::*;

fn boxed(corners: [[f64; 2]; 4]) -> BoundingBox {
    BoundingBox::new(corners.map(|[u, v]| ImagePoint::new(u, v)), 1.0, 0)
}

/// Straight-line re-derivation of the transform used as the test oracle.
fn oracle_state(b: &BoundingBox) -> (f64, f64, f64, f64, f64) {
    let u: Vec<f64> = b.corners.iter().map(|c| c.u).collect();
    let v: Vec<f64> = b.corners.iter().map(|c| c.v).collect();
    let x_c = (u[0] + u[1] + u[2] + u[3]) / 4.0;
    let y_c = (v[0] + v[1] + v[2] + v[3]) / 4.0;
    let dist = |i: usize, j: usize| ((u[i] - u[j]).powi(2) + (v[i] - v[j]).powi(2)).sqrt();
    let w = (dist(0, 1) + dist(2, 3)) / 2.0;
    let h = (dist(0, 2) + dist(1, 3)) / 2.0;
    let raw = (v[1] - v[0]).atan2(u[1] - u[0]);
    let theta = (raw + FRAC_PI_4).rem_euclid(FRAC_PI_2) - FRAC_PI_4;
    (x_c, y_c, theta, w, h)
}

/// Arbitrary quadrilaterals with corners at least 1 px apart, so tiny edges
/// cannot amplify rounding into the angle.
fn arb_quad() -> impl Strategy<Value = BoundingBox> {
    proptest::array::uniform8(-2000.0..2000.0f64)
        .prop_map(|c| [[c[0], c[1]], [c[2], c[3]], [c[4], c[5]], [c[6], c[7]]])
        .prop_filter("corners too close", |corners| {
            for i in 0..4 {
                for j in (i + 1)..4 {
                    let du = corners[i][0] - corners[j][0];
                    let dv = corners[i][1] - corners[j][1];
                    if (du * du + dv * dv).sqrt() < 1.0 {
                        return false;
                    }
                }
            }
            true
        })
        .prop_map(boxed)
}

/// Rotated rectangles built by an explicit rotation matrix, with the wrapped
/// angle bounded away from the +-pi/4 boundary so label flips cannot occur.
fn arb_rect() -> impl Strategy<Value = (BoundingBox, f64, f64, f64)> {
    (
        -1000.0..1000.0f64,
        -1000.0..1000.0f64,
        0.5..800.0f64,
        0.5..800.0f64,
        -0.78..0.78f64,
        -2i32..3i32,
    )
        .prop_map(|(cx, cy, w, h, base, quarters)| {
            let angle = base + f64::from(quarters) * FRAC_PI_2;
            let (s, c) = angle.sin_cos();
            let local = [
                [-w / 2.0, -h / 2.0],
                [w / 2.0, -h / 2.0],
                [-w / 2.0, h / 2.0],
                [w / 2.0, h / 2.0],
            ];
            let corners = local.map(|[x, y]| [cx + c * x - s * y, cy + s * x + c * y]);
            (boxed(corners), base, w, h)
        })
}

/// Quarter-turn relabeling: rotate every corner 90 degrees about the
/// centroid and reassign labels the way an image-oriented detector would.
fn quarter_relabel(b: &BoundingBox) -> BoundingBox {
    let cx = b.corners.iter().map(|c| c.u).sum::<f64>() / 4.0;
    let cy = b.corners.iter().map(|c| c.v).sum::<f64>() / 4.0;
    let rot = |p: ImagePoint| ImagePoint::new(cx - (p.v - cy), cy + (p.u - cx));
    let c = &b.corners;
    BoundingBox::new([rot(c[2]), rot(c[0]), rot(c[3]), rot(c[1])], 1.0, 0)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, ..ProptestConfig::default() })]

    #[test]
    fn matches_independent_oracle(b in arb_quad()) {
        let s = bbox_to_state(&b);
        let (x_c, y_c, theta, w, h) = oracle_state(&b);
        prop_assert!((s.x_c - x_c).abs() <= 1e-9);
        prop_assert!((s.y_c - y_c).abs() <= 1e-9);
        prop_assert!((s.w - w).abs() <= 1e-9);
        prop_assert!((s.h - h).abs() <= 1e-9);
        prop_assert!(wrap_quarter(s.theta - theta).abs() <= 1e-9);
    }

    #[test]
    fn translation_equivariance(b in arb_quad(), du in -500.0..500.0f64, dv in -500.0..500.0f64) {
        let shifted = boxed(b.corners.map(|c| [c.u + du, c.v + dv]));
        let s0 = bbox_to_state(&b);
        let s1 = bbox_to_state(&shifted);
        prop_assert!((s1.x_c - (s0.x_c + du)).abs() <= 1e-9);
        prop_assert!((s1.y_c - (s0.y_c + dv)).abs() <= 1e-9);
        prop_assert!((s1.theta - s0.theta).abs() <= 1e-9);
        prop_assert!((s1.w - s0.w).abs() <= 1e-9);
        prop_assert!((s1.h - s0.h).abs() <= 1e-9);
    }

    #[test]
    fn uniform_scaling_scales_sizes_only(
        b in arb_quad(),
        scale in 0.01..100.0f64,
        px in -1000.0..1000.0f64,
        pv in -1000.0..1000.0f64,
    ) {
        let scaled = boxed(b.corners.map(|c| [px + scale * (c.u - px), pv + scale * (c.v - pv)]));
        let s0 = bbox_to_state(&b);
        let s1 = bbox_to_state(&scaled);
        let tol = |reference: f64| 1e-9 * (1.0 + reference.abs());
        prop_assert!((s1.w - scale * s0.w).abs() <= tol(scale * s0.w));
        prop_assert!((s1.h - scale * s0.h).abs() <= tol(scale * s0.h));
        prop_assert!((s1.theta - s0.theta).abs() <= 1e-9);
    }

    #[test]
    fn quarter_turn_relabel_swaps_sizes_and_keeps_theta(rect in arb_rect()) {
        let (b, theta, w, h) = rect;
        let s0 = bbox_to_state(&b);
        prop_assert!((s0.theta - theta).abs() <= 1e-9);
        prop_assert!((s0.w - w).abs() <= 1e-9 * (1.0 + w));
        prop_assert!((s0.h - h).abs() <= 1e-9 * (1.0 + h));

        let s1 = bbox_to_state(&quarter_relabel(&b));
        prop_assert!((s1.theta - s0.theta).abs() <= 1e-9);
        prop_assert!((s1.w - s0.h).abs() <= 1e-9 * (1.0 + s0.h));
        prop_assert!((s1.h - s0.w).abs() <= 1e-9 * (1.0 + s0.w));
        prop_assert!((s1.x_c - s0.x_c).abs() <= 1e-9);
        prop_assert!((s1.y_c - s0.y_c).abs() <= 1e-9);
    }

    #[test]
    fn wrap_quarter_properties(angle in -100.0..100.0f64) {
        let wrapped = wrap_quarter(angle);
        prop_assert!((-FRAC_PI_4..FRAC_PI_4).contains(&wrapped));
        // Idempotent, bit for bit.
        prop_assert_eq!(wrap_quarter(wrapped), wrapped);
        // Congruent to the input modulo pi/2.
        let turns = ((angle - wrapped) / FRAC_PI_2).round();
        prop_assert!((wrapped + turns * FRAC_PI_2 - angle).abs() <= 1e-9 * (1.0 + angle.abs()));
    }
}
