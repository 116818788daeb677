//! End-to-end runs over a frame log: raw measurements, the plain filter, and
//! the filter with lock-on gating, each restarted at every segment.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraint::{decide_sequence, ConstraintParams};
use crate::eskf::{self, CovarianceForm, FilterError, FilterParams, FilterState, Pose6DoF, VarianceProvider};
use crate::eval::{self, arc_lengths, pose_error, split_segments, Bin, MethodSummary, SegmentReport};
use crate::framelog::FrameLog;
use crate::gate::{AdaptiveGate, ConstantVariance, GateParams};
use crate::geometry::{Quat, Vec3};
use crate::par::{self, Execution};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("invalid value {value} for {name}: {reason}")]
    InvalidParam { name: String, value: f64, reason: String },
    #[error("frame {0} has no ground truth")]
    MissingGroundTruth(u64),
    #[error("estimate for frame {frame_id} does not match the log: {reason}")]
    FrameMismatch { frame_id: u64, reason: String },
    #[error("estimates line {line}: {reason}")]
    BadEstimate { line: usize, reason: String },
    #[error("no segment could be evaluated")]
    NoSegments,
    #[error("filter failure in segment {segment}: {source}")]
    Filter { segment: usize, source: FilterError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pnp,
    Ekf,
    Ours,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Pnp, Method::Ekf, Method::Ours];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pnp => "pnp",
            Method::Ekf => "ekf",
            Method::Ours => "ours",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method {s:?} (expected pnp, ekf or ours)"))
    }
}

/// Every tunable of a run in one place.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub filter: FilterParams,
    pub gate: GateParams,
    pub constraint: ConstraintParams,
    /// Measured poses used to bootstrap the velocity.
    pub warmup: usize,
    pub segment_length_m: f64,
    /// When false no frame is ever treated as locked on.
    pub detect_constraints: bool,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            filter: FilterParams::default(),
            gate: GateParams::default(),
            constraint: ConstraintParams::default(),
            warmup: 10,
            segment_length_m: 150.0,
            detect_constraints: true,
        }
    }
}

/// Names accepted by [`Params::set`] and by sweeps.
pub const TUNABLES: [&str; 12] = [
    "v_m",
    "v_p",
    "sigma_x",
    "sigma_y",
    "sigma_z",
    "alpha",
    "tau_divisor",
    "mask_fraction",
    "d_assoc",
    "min_matches",
    "warmup",
    "segment_length",
];

impl Params {
    pub fn set(&mut self, name: &str, value: f64) -> Result<(), PipelineError> {
        let invalid = |reason: &str| PipelineError::InvalidParam {
            name: name.to_string(),
            value,
            reason: reason.to_string(),
        };
        if !value.is_finite() {
            return Err(invalid("must be finite"));
        }
        let count = || -> Result<usize, PipelineError> {
            if value >= 0.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(invalid("must be a non-negative integer"))
            }
        };
        match name {
            "v_m" => {
                self.filter.v_m = value;
                self.gate.v_m = value;
            }
            "v_p" => self.filter.v_p = value,
            "sigma_x" => self.gate.sigma_x = value,
            "sigma_y" => self.gate.sigma_y = value,
            "sigma_z" => self.gate.sigma_z = value,
            "alpha" => self.gate.alpha = value,
            "tau_divisor" => self.constraint.tau_divisor = value,
            "mask_fraction" => self.constraint.mask_fraction = value,
            "d_assoc" => self.constraint.d_assoc = value,
            "min_matches" => self.constraint.min_matches = count()?,
            "warmup" => self.warmup = count()?,
            "segment_length" => self.segment_length_m = value,
            _ => return Err(PipelineError::UnknownParam(name.to_string())),
        }
        self.validate().map_err(|r| invalid(&r))
    }

    pub fn validate(&self) -> Result<(), String> {
        self.gate.validate()?;
        if !(self.filter.v_m > 0.0) {
            return Err("v_m must be positive".into());
        }
        if !(self.filter.v_p > 0.0) {
            return Err("v_p must be positive".into());
        }
        let c = &self.constraint;
        if !(c.tau_divisor > 0.0) || !(0.0..=1.0).contains(&c.mask_fraction) || !(c.d_assoc >= 0.0) {
            return Err("constraint parameters out of range".into());
        }
        if self.warmup < 2 {
            return Err("warmup needs at least 2 poses".into());
        }
        if !(self.segment_length_m > 0.0) {
            return Err("segment length must be positive".into());
        }
        Ok(())
    }

    pub fn covariance_form(mut self, form: CovarianceForm) -> Self {
        self.filter.covariance_form = form;
        self
    }
}

/// One estimated pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateRow {
    pub frame_id: u64,
    pub t: f64,
    pub pose: Pose6DoF,
    /// Measurement variance used at this frame, if an update happened.
    pub v_eff: Option<f64>,
    pub constrained: bool,
    pub segment: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub method: Method,
    pub estimates: Vec<EstimateRow>,
    pub reports: Vec<SegmentReport>,
    /// Segments that could not be started.
    pub skipped: Vec<usize>,
}

/// Lock-on decision per frame of the log.
pub fn constraint_flags(log: &FrameLog, params: &Params, exec: Execution) -> Vec<bool> {
    if !params.detect_constraints {
        return vec![false; log.frames.len()];
    }
    let dets: Vec<&[_]> = log.frames.iter().map(|f| f.detections.as_slice()).collect();
    let cam = &log.header.camera;
    decide_sequence(&dets, cam.width, cam.height, &params.constraint, exec)
        .into_iter()
        .map(|d| d.constrained)
        .collect()
}

fn ground_truth(log: &FrameLog) -> Result<Vec<Pose6DoF>, PipelineError> {
    log.frames
        .iter()
        .map(|f| f.gt.ok_or(PipelineError::MissingGroundTruth(f.frame_id)))
        .collect()
}

enum SegmentResult {
    Done(Vec<EstimateRow>),
    Skipped(String),
}

fn run_segment(
    log: &FrameLog,
    range: std::ops::Range<usize>,
    seg: usize,
    method: Method,
    params: &Params,
    flags: &[bool],
) -> Result<SegmentResult, PipelineError> {
    let frames = &log.frames[range.clone()];
    let row = |k: usize, pose: Pose6DoF, v_eff: Option<f64>| EstimateRow {
        frame_id: frames[k].frame_id,
        t: frames[k].t,
        pose,
        v_eff,
        constrained: flags[range.start + k],
        segment: seg,
    };
    let Some(first) = frames[0].meas else {
        return Ok(SegmentResult::Skipped("no measurement at the first frame".into()));
    };
    if method == Method::Pnp {
        let mut last = first;
        let rows = (0..frames.len())
            .map(|k| {
                if let Some(m) = frames[k].meas {
                    last = m;
                }
                row(k, last, None)
            })
            .collect();
        return Ok(SegmentResult::Done(rows));
    }

    let warmup: Vec<(Pose6DoF, f64)> = frames
        .iter()
        .filter_map(|f| f.meas.map(|m| (m, f.t)))
        .take(params.warmup)
        .collect();
    if warmup.len() < params.warmup {
        return Ok(SegmentResult::Skipped(format!(
            "only {} of {} warmup measurements",
            warmup.len(),
            params.warmup
        )));
    }
    let filter_err = |source| PipelineError::Filter { segment: seg, source };
    let mut state: FilterState = eskf::initialize(&first, frames[0].t, &warmup, &params.filter).map_err(filter_err)?;
    let mut rows = vec![row(0, state.pose(), None)];
    let mut gate = AdaptiveGate::new(GateParams {
        v_m: params.filter.v_m,
        ..params.gate
    })
    .with_last(first, frames[0].t);
    let mut constant = ConstantVariance(params.filter.v_m);
    for k in 1..frames.len() {
        let provider: &mut dyn VarianceProvider = match method {
            Method::Ours => {
                gate.set_constrained(flags[range.start + k]);
                &mut gate
            }
            _ => &mut constant,
        };
        let (next, trace) = eskf::step(&state, &frames[k], &params.filter, provider).map_err(filter_err)?;
        state = next;
        rows.push(row(k, trace.posterior, trace.variance.map(|v| v.variance)));
    }
    Ok(SegmentResult::Done(rows))
}

/// Runs one method over every full segment of the log.
pub fn run_method(log: &FrameLog, method: Method, params: &Params, exec: Execution) -> Result<RunOutput, PipelineError> {
    params.validate().map_err(|reason| PipelineError::InvalidParam {
        name: "params".into(),
        value: f64::NAN,
        reason,
    })?;
    let gt = ground_truth(log)?;
    let arc = arc_lengths(&gt.iter().map(|p| p.p).collect::<Vec<_>>());
    let segments = split_segments(&arc, params.segment_length_m);
    let flags = constraint_flags(log, params, exec);
    let indexed: Vec<(usize, std::ops::Range<usize>)> = segments.into_iter().enumerate().collect();
    let results = par::map(exec, &indexed, |(seg, range)| {
        run_segment(log, range.clone(), *seg, method, params, &flags)
    });
    let mut estimates = Vec::new();
    let mut skipped = Vec::new();
    for ((seg, _), res) in indexed.iter().zip(results) {
        match res? {
            SegmentResult::Done(rows) => estimates.extend(rows),
            SegmentResult::Skipped(why) => {
                warn!("segment {seg} skipped: {why}");
                skipped.push(*seg);
            }
        }
    }
    let reports = segment_reports(log, method.name(), &estimates)?;
    Ok(RunOutput {
        method,
        estimates,
        reports,
        skipped,
    })
}

/// Rebuilds per-segment reports from estimates and the log's ground truth.
pub fn segment_reports(log: &FrameLog, method: &str, estimates: &[EstimateRow]) -> Result<Vec<SegmentReport>, PipelineError> {
    let gt = ground_truth(log)?;
    let arc = arc_lengths(&gt.iter().map(|p| p.p).collect::<Vec<_>>());
    let mut reports = Vec::new();
    let mut i = 0;
    while i < estimates.len() {
        let seg = estimates[i].segment;
        let mut j = i;
        while j < estimates.len() && estimates[j].segment == seg {
            j += 1;
        }
        let rows = &estimates[i..j];
        let mut idx = Vec::with_capacity(rows.len());
        for r in rows {
            let k = log
                .frames
                .binary_search_by(|f| f.frame_id.cmp(&r.frame_id))
                .map_err(|_| PipelineError::FrameMismatch {
                    frame_id: r.frame_id,
                    reason: "frame id not in log".into(),
                })?;
            if (log.frames[k].t - r.t).abs() > 1e-9 * r.t.abs().max(1.0) {
                return Err(PipelineError::FrameMismatch {
                    frame_id: r.frame_id,
                    reason: format!("timestamp {} vs {}", r.t, log.frames[k].t),
                });
            }
            if let Some(&prev) = idx.last() {
                if k != prev + 1 {
                    return Err(PipelineError::FrameMismatch {
                        frame_id: r.frame_id,
                        reason: "segment frames are not consecutive".into(),
                    });
                }
            }
            idx.push(k);
        }
        let errors = rows.iter().zip(&idx).map(|(r, &k)| pose_error(&r.pose, &gt[k])).collect();
        let active = rows.iter().map(|r| r.constrained).collect();
        let incr = idx.iter().map(|&k| if k == 0 { 0.0 } else { arc[k] - arc[k - 1] }).collect();
        reports.push(SegmentReport::new(seg, method, idx[0]..idx[idx.len() - 1] + 1, errors, active, incr));
        i = j;
    }
    Ok(reports)
}

pub const ESTIMATES_HEADER: &str = "method,frame_id,t,px,py,pz,qw,qx,qy,qz,v_eff,constrained,segment";

pub fn estimates_csv(method: Method, rows: &[EstimateRow]) -> String {
    let mut s = String::from(ESTIMATES_HEADER);
    s.push('\n');
    for r in rows {
        let (p, q) = (r.pose.p, r.pose.q);
        let v = r.v_eff.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            method, r.frame_id, r.t, p.x, p.y, p.z, q.w, q.i, q.j, q.k, v, r.constrained as u8, r.segment
        );
    }
    s
}

pub fn parse_estimates(text: &str) -> Result<(Method, Vec<EstimateRow>), PipelineError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let bad = |line: usize, reason: String| PipelineError::BadEstimate { line: line + 1, reason };
    match lines.next() {
        Some((_, h)) if h.trim() == ESTIMATES_HEADER => {}
        Some((i, _)) => return Err(bad(i, format!("expected header {ESTIMATES_HEADER:?}"))),
        None => return Err(bad(0, "empty file".into())),
    }
    let mut method = None;
    let mut rows = Vec::new();
    for (i, line) in lines {
        let c: Vec<&str> = line.split(',').map(str::trim).collect();
        if c.len() != 13 {
            return Err(bad(i, format!("expected 13 columns, got {}", c.len())));
        }
        let m: Method = c[0].parse().map_err(|e| bad(i, e))?;
        if *method.get_or_insert(m) != m {
            return Err(bad(i, "mixed methods in one file".into()));
        }
        let f = |j: usize| -> Result<f64, PipelineError> {
            c[j].parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| bad(i, format!("column {} is not a finite number: {:?}", j + 1, c[j])))
        };
        let int = |j: usize| -> Result<u64, PipelineError> {
            c[j].parse::<u64>().map_err(|_| bad(i, format!("column {} is not an integer: {:?}", j + 1, c[j])))
        };
        let q = nalgebra::Quaternion::new(f(6)?, f(7)?, f(8)?, f(9)?);
        if !(q.norm() > 0.0) {
            return Err(bad(i, "zero quaternion".into()));
        }
        let q = if (q.norm() - 1.0).abs() < 1e-12 {
            Quat::new_unchecked(q)
        } else {
            Quat::new_normalize(q)
        };
        rows.push(EstimateRow {
            frame_id: int(1)?,
            t: f(2)?,
            pose: Pose6DoF::new(Vec3::new(f(3)?, f(4)?, f(5)?), q),
            v_eff: if c[10].is_empty() { None } else { Some(f(10)?) },
            constrained: match c[11] {
                "1" | "true" => true,
                "0" | "false" => false,
                other => return Err(bad(i, format!("bad constrained flag {other:?}"))),
            },
            segment: int(12)? as usize,
        });
    }
    let method = method.ok_or_else(|| bad(1, "no estimates".into()))?;
    Ok((method, rows))
}

/// One point of a parameter sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub summary: MethodSummary,
}

/// Runs `method` on every log for each value of `name`, pooling all logs'
/// segments into one summary per value. Points run in parallel.
pub fn sweep(
    logs: &[FrameLog],
    method: Method,
    base: &Params,
    name: &str,
    values: &[f64],
    bins: &[Bin],
    exec: Execution,
) -> Result<Vec<SweepRow>, PipelineError> {
    if !TUNABLES.contains(&name) {
        return Err(PipelineError::UnknownParam(name.to_string()));
    }
    let points = par::map(exec, values, |&value| -> Result<SweepRow, PipelineError> {
        let mut p = *base;
        p.set(name, value)?;
        let mut reports = Vec::new();
        for log in logs {
            reports.extend(run_method(log, method, &p, exec)?.reports);
        }
        let summary = eval::aggregate(&reports, bins).map_err(|_| PipelineError::NoSegments)?;
        Ok(SweepRow {
            value,
            summary: summary.methods.into_iter().next().ok_or(PipelineError::NoSegments)?,
        })
    });
    points.into_iter().collect()
}

pub fn sweep_csv(name: &str, bins: &[Bin], rows: &[SweepRow]) -> String {
    let mut s = String::from("parameter,value,method");
    for b in bins {
        let _ = write!(s, ",recall_{}", b.label());
    }
    s.push_str(",mean_end,med_end,mean_max,med_max,constraint_frac\n");
    for r in rows {
        let m = &r.summary;
        let _ = write!(s, "{name},{},{}", r.value, m.method);
        for i in 0..bins.len() {
            let v = m.overall.recall.as_ref().map_or(f64::NAN, |x| x[i]);
            let _ = write!(s, ",{v:.6}");
        }
        let _ = writeln!(
            s,
            ",{:.6},{:.6},{:.6},{:.6},{:.6}",
            m.mean_end, m.med_end, m.mean_max, m.med_max, m.constraint_frac
        );
    }
    s
}
