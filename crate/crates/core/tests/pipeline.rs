use lockon_core::eval::{aggregate, DEFAULT_BINS};
use lockon_core::framelog::FrameLog;
use lockon_core::par::Execution;
use lockon_core::pipeline::{
    estimates_csv, parse_estimates, run_method, segment_reports, sweep, Method, Params, PipelineError,
};
use lockon_core::sim::{presets, NoiseModel};

fn quiet_log(seed: u64) -> FrameLog {
    let mut sc = presets::highway(seed);
    sc.noise = NoiseModel::zero();
    FrameLog::simulate(&sc)
}

#[test]
fn zero_noise_log_is_perfect_for_every_method() {
    let log = quiet_log(1);
    for m in Method::ALL {
        let out = run_method(&log, m, &Params::default(), Execution::Parallel).unwrap();
        assert_eq!(out.reports.len(), 6);
        let s = aggregate(&out.reports, &DEFAULT_BINS).unwrap();
        assert_eq!(s.methods[0].overall.recall, Some(vec![1.0; 3]), "{m}");
    }
}

#[test]
fn ours_without_vehicles_equals_detection_disabled() {
    let mut sc = presets::highway(3);
    sc.lead_vehicles.clear();
    let log = FrameLog::simulate(&sc);
    let on = run_method(&log, Method::Ours, &Params::default(), Execution::Parallel).unwrap();
    let off_params = Params {
        detect_constraints: false,
        ..Params::default()
    };
    let off = run_method(&log, Method::Ours, &off_params, Execution::Parallel).unwrap();
    assert_eq!(on.estimates, off.estimates);
    assert!(on.estimates.iter().all(|e| !e.constrained));
}

#[test]
fn outlier_log_orders_methods() {
    let log = FrameLog::simulate(&presets::highway(5));
    let med: Vec<f64> = Method::ALL
        .iter()
        .map(|m| {
            let out = run_method(&log, *m, &Params::default(), Execution::Parallel).unwrap();
            aggregate(&out.reports, &DEFAULT_BINS).unwrap().methods[0].med_max
        })
        .collect();
    assert!(med[2] <= med[1] && med[1] <= med[0], "{med:?}");
}

#[test]
fn parallel_and_sequential_agree() {
    let log = FrameLog::simulate(&presets::mixed(8));
    for m in Method::ALL {
        let a = run_method(&log, m, &Params::default(), Execution::Parallel).unwrap();
        let b = run_method(&log, m, &Params::default(), Execution::Sequential).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn estimates_round_trip_and_rebuild_reports() {
    let log = FrameLog::simulate(&presets::highway(2));
    let out = run_method(&log, Method::Ours, &Params::default(), Execution::Parallel).unwrap();
    let text = estimates_csv(Method::Ours, &out.estimates);
    let (m, rows) = parse_estimates(&text).unwrap();
    assert_eq!(m, Method::Ours);
    assert_eq!(rows, out.estimates);
    assert_eq!(segment_reports(&log, "ours", &rows).unwrap(), out.reports);
}

#[test]
fn mismatched_estimates_are_rejected() {
    let log = FrameLog::simulate(&presets::highway(2));
    let out = run_method(&log, Method::Pnp, &Params::default(), Execution::Parallel).unwrap();
    let mut rows = out.estimates.clone();
    rows[5].t += 0.5;
    assert!(matches!(segment_reports(&log, "pnp", &rows), Err(PipelineError::FrameMismatch { .. })));
    let mut rows = out.estimates;
    rows[5].frame_id = 1_000_000;
    assert!(matches!(segment_reports(&log, "pnp", &rows), Err(PipelineError::FrameMismatch { .. })));
    assert!(parse_estimates("nonsense\n").is_err());
}

#[test]
fn segments_without_warmup_are_skipped() {
    let mut log = FrameLog::simulate(&presets::highway(2));
    // strip every measurement from the second segment
    for f in &mut log.frames[100..200] {
        f.meas = None;
    }
    let out = run_method(&log, Method::Ekf, &Params::default(), Execution::Parallel).unwrap();
    assert_eq!(out.skipped, vec![1]);
    assert_eq!(out.reports.len(), 5);
}

#[test]
fn sweep_rows_match_direct_runs() {
    let logs = vec![FrameLog::simulate(&presets::highway_segment(4)), FrameLog::simulate(&presets::mixed(4))];
    let base = Params::default();
    let direct = |p: &Params| {
        let mut reports = Vec::new();
        for l in &logs {
            reports.extend(run_method(l, Method::Ours, p, Execution::Parallel).unwrap().reports);
        }
        aggregate(&reports, &DEFAULT_BINS).unwrap().methods[0].clone()
    };
    let one = sweep(&logs, Method::Ours, &base, "v_m", &[0.005], &DEFAULT_BINS, Execution::Parallel).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].summary, direct(&base));

    // α = 1 leaves the bandwidths unshrunk, so lock-on has no effect
    let rows = sweep(&logs, Method::Ours, &base, "alpha", &[1.0, 2.0, 4.0], &DEFAULT_BINS, Execution::Parallel).unwrap();
    let off = Params {
        detect_constraints: false,
        ..base
    };
    let mut unconstrained = direct(&off);
    let alpha_one = rows[0].summary.clone();
    // only the lock-on bookkeeping differs
    unconstrained.active = alpha_one.active.clone();
    unconstrained.inactive = alpha_one.inactive.clone();
    unconstrained.constraint_frac = alpha_one.constraint_frac;
    assert_eq!(alpha_one, unconstrained);

    assert!(matches!(
        sweep(&logs, Method::Ours, &base, "bogus", &[1.0], &DEFAULT_BINS, Execution::Parallel),
        Err(PipelineError::UnknownParam(_))
    ));
}

#[test]
fn constraint_fraction_tracks_simulator_truth() {
    for name in presets::NAMES {
        let log = FrameLog::simulate(&presets::by_name(name, presets::DEFAULT_SEED).unwrap());
        let out = run_method(&log, Method::Ours, &Params::default(), Execution::Parallel).unwrap();
        if out.reports.is_empty() {
            continue;
        }
        let s = aggregate(&out.reports, &DEFAULT_BINS).unwrap();
        let m = &s.methods[0];
        assert_eq!(m.active.frames + m.inactive.frames, m.overall.frames);
        // distance-weighted truth over the same frames
        let (mut act, mut all) = (0.0, 0.0);
        for r in &out.reports {
            for (k, ds) in r.frames.clone().zip(&r.arc_increments) {
                all += ds;
                if log.frames[k].truth_constrained == Some(true) {
                    act += ds;
                }
            }
        }
        let truth = act / all;
        assert!((m.constraint_frac - truth).abs() <= 0.1, "{name}: {} vs {truth}", m.constraint_frac);
    }
}

#[test]
fn params_reject_bad_values() {
    let mut p = Params::default();
    assert!(p.set("v_m", 0.05).is_ok());
    assert_eq!(p.filter.v_m, 0.05);
    assert_eq!(p.gate.v_m, 0.05);
    assert!(matches!(p.set("nope", 1.0), Err(PipelineError::UnknownParam(_))));
    assert!(p.set("alpha", 0.5).is_err());
    assert!(p.set("min_matches", 2.5).is_err());
    assert!(p.set("v_p", f64::NAN).is_err());
}
