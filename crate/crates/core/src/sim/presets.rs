//! Named scenarios.

use std::f64::consts::PI;

use super::scenario::{Camera, LeadVehicle, NoiseModel, Profile, Scenario, ScenarioKind};

pub const NAMES: [&str; 5] = ["highway", "campus-curves", "mixed", "lane-change", "stop-and-go"];

pub const DEFAULT_SEED: u64 = 42;

pub fn by_name(name: &str, seed: u64) -> Option<Scenario> {
    Some(match name {
        "highway" => highway(seed),
        "campus-curves" => campus_curves(seed),
        "mixed" => mixed(seed),
        "lane-change" => lane_change(seed),
        "stop-and-go" => stop_and_go(seed),
        _ => return None,
    })
}

fn base(name: &str, kind: ScenarioKind, duration_s: f64, seed: u64) -> Scenario {
    Scenario {
        name: name.into(),
        kind,
        duration_s,
        speed: Profile::constant(0.0),
        curvature: Profile::constant(0.0),
        lead_vehicles: Vec::new(),
        camera: Camera::default(),
        noise: NoiseModel::default(),
        frame_spacing_m: 1.5,
        max_frame_interval_s: 1.0,
        seed,
    }
}

fn follower(gap_m: f64, rel_speed: Profile, lateral_offset_m: f64) -> LeadVehicle {
    LeadVehicle {
        gap_m,
        rel_speed,
        lateral_offset_m,
        width_m: 1.8,
        height_m: 1.4,
    }
}

/// Sine sampled on a regular time grid, zero before `t0`.
fn sine(t0: f64, t1: f64, amplitude: f64, period_s: f64, step: f64) -> Profile {
    let mut knots = vec![(0.0, 0.0)];
    let n = ((t1 - t0) / step).ceil() as usize;
    for i in 0..=n {
        let t = t0 + i as f64 * step;
        knots.push((t, amplitude * (2.0 * PI * (t - t0) / period_s).sin()));
    }
    Profile(knots)
}

/// About 1 km of straight highway behind a lead vehicle at a constant gap,
/// with a second vehicle in the next lane pulling away.
pub fn highway(seed: u64) -> Scenario {
    let mut sc = base("highway", ScenarioKind::Straight, 67.0, seed);
    sc.speed = Profile::constant(15.0);
    sc.lead_vehicles = vec![
        follower(20.0, Profile::constant(0.0), 0.0),
        follower(35.0, Profile::constant(0.6), 3.5),
    ];
    sc
}

/// One 150 m highway stretch with a constant-gap lead vehicle.
pub fn highway_segment(seed: u64) -> Scenario {
    let mut sc = base("highway-segment", ScenarioKind::Straight, 10.0, seed);
    sc.speed = Profile::constant(15.0);
    sc.lead_vehicles = vec![follower(20.0, Profile::constant(0.0), 0.0)];
    sc
}

/// Slow slalom through tight curves; the lead vehicle never holds still in
/// the image.
pub fn campus_curves(seed: u64) -> Scenario {
    let duration = 125.0;
    let mut sc = base("campus-curves", ScenarioKind::Curve, duration, seed);
    sc.speed = Profile::constant(8.0);
    // 60 m wavelength at 8 m/s
    sc.curvature = sine(0.0, duration, 0.03, 7.5, 0.25);
    sc.lead_vehicles = vec![follower(15.0, sine(0.0, duration, 1.0, 9.0, 0.25), 0.0)];
    sc.noise.outlier_rate = 0.05;
    sc
}

/// Straight following for the first half, slalom for the second.
pub fn mixed(seed: u64) -> Scenario {
    let duration = 80.0;
    let mut sc = base("mixed", ScenarioKind::Mixed, duration, seed);
    sc.speed = Profile::constant(12.0);
    // 60 m wavelength at 12 m/s
    sc.curvature = sine(40.0, duration, 0.02, 5.0, 0.25);
    sc.lead_vehicles = vec![follower(18.0, Profile::constant(0.0), 0.0)];
    sc
}

/// Two lane changes on a straight road with a lead vehicle that stays in lane.
pub fn lane_change(seed: u64) -> Scenario {
    let mut sc = base("lane-change", ScenarioKind::LaneChange, 40.0, seed);
    sc.speed = Profile::constant(14.0);
    let k = 0.004;
    sc.curvature = Profile(vec![
        (0.0, 0.0),
        (10.0, 0.0),
        (11.0, k),
        (12.0, 0.0),
        (13.0, -k),
        (14.0, 0.0),
        (25.0, 0.0),
        (26.0, -k),
        (27.0, 0.0),
        (28.0, k),
        (29.0, 0.0),
    ]);
    sc.lead_vehicles = vec![follower(25.0, Profile::constant(0.0), 0.0)];
    sc
}

/// Urban traffic: speed cycles between standstill and 10 m/s.
pub fn stop_and_go(seed: u64) -> Scenario {
    let mut sc = base("stop-and-go", ScenarioKind::StopAndGo, 90.0, seed);
    let mut knots = Vec::new();
    for c in 0..6 {
        let t = c as f64 * 15.0;
        knots.extend([(t, 0.0), (t + 3.0, 0.0), (t + 8.0, 10.0), (t + 12.0, 10.0)]);
    }
    knots.push((90.0, 0.0));
    sc.speed = Profile(knots);
    sc.lead_vehicles = vec![follower(12.0, Profile::constant(0.0), 0.0)];
    sc
}
