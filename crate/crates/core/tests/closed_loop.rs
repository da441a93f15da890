//! Closed-loop behavior of full episodes: phase-machine shape, monotone
//! descent setpoints, yaw convergence, the pinhole scale law, and latency
//! tolerance.

use mavland_core::controller::LandingPhase;
use mavland_core::episode::{run_episode, EpisodeResult, ScenarioConfig, StartPose};
use mavland_core::geometry::{bbox_to_state, wrap_quarter};
use mavland_core::simulator::{project_pad, CameraModel, PadSpec, VehiclePose};

fn nominal() -> ScenarioConfig {
    ScenarioConfig::default()
}

fn assert_sane_landing(result: &EpisodeResult) {
    assert!(result.success, "expected landing, got {:?}", result.final_phase);
    // Legal transitions only, starting in SEARCH and ending in LANDED.
    assert_eq!(result.phase_trace.first().unwrap().phase, LandingPhase::Search);
    assert_eq!(result.phase_trace.last().unwrap().phase, LandingPhase::Landed);
    for pair in result.phase_trace.windows(2) {
        assert!(
            LandingPhase::can_transition(pair[0].phase, pair[1].phase),
            "illegal transition {:?} -> {:?}",
            pair[0].phase,
            pair[1].phase
        );
    }
    // The final landing sequence engages exactly once, from the 0.3 m gate.
    assert_eq!(result.final_land_entries, 1);
    let entry = result.final_land_entry_z.expect("entry altitude recorded");
    assert!(
        entry > 0.3 - 0.0125 && entry <= 0.3,
        "FINAL_LAND entry altitude {entry}"
    );
    // Altitude setpoints never step upward.
    let mut last = f64::INFINITY;
    for sample in &result.trajectory {
        if let Some(z) = sample.z_setpoint {
            assert!(z <= last + 1e-9, "setpoint rose from {last} to {z}");
            last = z;
        }
    }
}

#[test]
fn nominal_noisy_episode_lands_cleanly() {
    let result = run_episode(&nominal()).unwrap();
    assert_sane_landing(&result);
    assert!(result.final_error_m < 0.5);
}

#[test]
fn phase_trace_passes_through_align_and_descend() {
    let result = run_episode(&nominal()).unwrap();
    let phases: Vec<LandingPhase> = result.phase_trace.iter().map(|p| p.phase).collect();
    assert!(phases.contains(&LandingPhase::Align));
    assert!(phases.contains(&LandingPhase::Descend));
    assert!(phases.contains(&LandingPhase::FinalLand));
}

#[test]
fn one_tick_detector_latency_still_lands() {
    let mut scenario = nominal();
    scenario.detector_latency_frames = 1;
    let result = run_episode(&scenario).unwrap();
    assert_sane_landing(&result);
}

#[test]
fn yaw_error_decreases_monotonically_without_noise() {
    let mut scenario = nominal();
    scenario.start = StartPose {
        x: 0.0,
        y: 0.0,
        z: 10.0,
        yaw: 0.0,
    };
    scenario.pad.yaw = 0.3;
    scenario.noise.corner_sigma = 0.0;
    scenario.noise.dropout_prob = 0.0;
    let result = run_episode(&scenario).unwrap();
    assert!(result.success);

    let tolerance = scenario.controller.landing.theta_tolerance;
    let errors: Vec<f64> = result
        .trajectory
        .iter()
        .map(|s| wrap_quarter(scenario.pad.yaw - s.yaw).abs())
        .collect();
    // Skip the spool-up of the yaw-rate lag, then require monotone decrease
    // until the error is inside the tolerance band.
    let start = errors
        .windows(2)
        .position(|w| w[1] < w[0])
        .expect("yaw error must start decreasing");
    let mut reached = false;
    for k in start..errors.len() - 1 {
        if errors[k] < tolerance {
            reached = true;
            break;
        }
        assert!(
            errors[k + 1] <= errors[k] + 1e-12,
            "yaw error rose from {} to {} at tick {k}",
            errors[k],
            errors[k + 1]
        );
    }
    assert!(reached, "yaw error never entered the tolerance band");
}

#[test]
fn pinhole_scale_law_box_side_times_altitude_constant() {
    let cam = CameraModel::default();
    let pad = PadSpec {
        cx: 0.0,
        cy: 0.0,
        length: 1.0,
        breadth: 1.0,
        yaw: 0.0,
    };
    let mut products = Vec::new();
    for z in [2.0, 4.0, 8.0] {
        let pose = VehiclePose {
            z,
            ..VehiclePose::default()
        };
        let b = project_pad(&pose, &pad, &cam, 0).unwrap().unwrap();
        let state = bbox_to_state(&b);
        products.push(state.w * z);
    }
    for p in &products[1..] {
        let rel = (p - products[0]).abs() / products[0];
        assert!(rel <= 1e-6, "scale law violated: {products:?}");
    }
}

#[test]
fn aborted_episode_reports_failure_without_landing_metrics() {
    let mut scenario = nominal();
    scenario.start = StartPose {
        x: 25.0,
        y: 0.0,
        z: 10.0,
        yaw: 0.0,
    };
    scenario.max_time = 20.0;
    let result = run_episode(&scenario).unwrap();
    assert!(!result.success);
    assert_eq!(result.final_phase, LandingPhase::Aborted);
    assert!(result.landing_time_s.is_nan());
    assert_eq!(result.final_land_entries, 0);
    assert!(result.final_error_m.is_finite());
}
