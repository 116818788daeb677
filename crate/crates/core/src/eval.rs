//! Localization metrics over arc-length segments: per-frame pose errors,
//! end and worst-case translation error per segment, and recall at
//! translation/rotation thresholds pooled over all frames.

use std::fmt::Write as _;
use std::ops::Range;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eskf::Pose6DoF;
use crate::geometry::{rotation_angle_between, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("recall of an empty error list is undefined")]
    Empty,
    #[error("no segment reports to aggregate")]
    NoReports,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    /// Translation error, m.
    pub trans: f64,
    /// Rotation error, degrees.
    pub rot: f64,
}

pub fn pose_error(est: &Pose6DoF, gt: &Pose6DoF) -> PoseError {
    PoseError {
        trans: (est.p - gt.p).norm(),
        rot: rotation_angle_between(&est.q, &gt.q),
    }
}

/// A recall threshold: translation ≤ `trans_m` and rotation ≤ `rot_deg`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub trans_m: f64,
    pub rot_deg: f64,
}

impl Bin {
    pub const fn new(trans_m: f64, rot_deg: f64) -> Self {
        Self { trans_m, rot_deg }
    }

    pub fn label(&self) -> String {
        format!("{}m/{}deg", self.trans_m, self.rot_deg)
    }

    pub fn contains(&self, e: &PoseError) -> bool {
        e.trans <= self.trans_m && e.rot <= self.rot_deg
    }
}

pub const DEFAULT_BINS: [Bin; 3] = [Bin::new(0.25, 2.0), Bin::new(0.5, 5.0), Bin::new(5.0, 10.0)];

pub fn recall_at(errors: &[PoseError], bins: &[Bin]) -> Result<Vec<f64>, EvalError> {
    if errors.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = errors.len() as f64;
    Ok(bins
        .iter()
        .map(|b| errors.iter().filter(|e| b.contains(e)).count() as f64 / n)
        .collect())
}

/// Cumulative ground-truth arc length at every position.
pub fn arc_lengths(positions: &[Vec3]) -> Vec<f64> {
    let mut s = Vec::with_capacity(positions.len());
    let mut acc = 0.0;
    for (k, p) in positions.iter().enumerate() {
        if k > 0 {
            acc += (p - positions[k - 1]).norm();
        }
        s.push(acc);
    }
    s
}

const ARC_EPS: f64 = 1e-6;

/// Consecutive frame ranges, segment `i` holding the frames whose arc
/// length lies in `[i·L, (i+1)·L)`. A segment is kept only when the
/// trajectory reaches its far end, so the trailing partial one is dropped.
pub fn split_segments(arc: &[f64], length_m: f64) -> Vec<Range<usize>> {
    let total = arc.last().copied().unwrap_or(0.0);
    let full = if length_m > 0.0 { ((total + ARC_EPS) / length_m).floor() as usize } else { 0 };
    if full == 0 {
        warn!("trajectory of {total:.1} m is shorter than one {length_m} m segment");
        return Vec::new();
    }
    let mut out = Vec::with_capacity(full);
    let mut start = 0;
    for i in 0..full {
        let end_s = (i + 1) as f64 * length_m - ARC_EPS;
        let end = start + arc[start..].partition_point(|s| *s < end_s);
        if end > start {
            out.push(start..end);
        }
        start = end;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub segment_id: usize,
    pub method: String,
    /// Log frame indices covered, in order.
    pub frames: Range<usize>,
    pub errors: Vec<PoseError>,
    pub constraint_active: Vec<bool>,
    /// Ground-truth distance travelled into each frame, m.
    pub arc_increments: Vec<f64>,
    pub end_err: f64,
    pub max_err: f64,
}

impl SegmentReport {
    pub fn new(
        segment_id: usize,
        method: impl Into<String>,
        frames: Range<usize>,
        errors: Vec<PoseError>,
        constraint_active: Vec<bool>,
        arc_increments: Vec<f64>,
    ) -> Self {
        assert_eq!(errors.len(), frames.len());
        assert_eq!(constraint_active.len(), frames.len());
        assert_eq!(arc_increments.len(), frames.len());
        let end_err = errors.last().map_or(0.0, |e| e.trans);
        let max_err = errors.iter().map(|e| e.trans).fold(0.0, f64::max);
        Self {
            segment_id,
            method: method.into(),
            frames,
            errors,
            constraint_active,
            arc_increments,
            end_err,
            max_err,
        }
    }
}

/// Median, with an even-length list giving the mean of the central pair.
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Recall over one subset of frames, `None` when the subset is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetRecall {
    pub frames: usize,
    pub recall: Option<Vec<f64>>,
}

impl SubsetRecall {
    fn of(errors: &[PoseError], bins: &[Bin]) -> Self {
        Self {
            frames: errors.len(),
            recall: recall_at(errors, bins).ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub segments: usize,
    pub mean_end: f64,
    pub med_end: f64,
    pub mean_max: f64,
    pub med_max: f64,
    pub overall: SubsetRecall,
    pub active: SubsetRecall,
    pub inactive: SubsetRecall,
    /// Fraction of travelled distance with the constraint active.
    pub constraint_frac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub bins: Vec<Bin>,
    pub methods: Vec<MethodSummary>,
}

/// Groups reports by method (in order of first appearance) and pools frames.
pub fn aggregate(reports: &[SegmentReport], bins: &[Bin]) -> Result<Summary, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::NoReports);
    }
    let mut order: Vec<&str> = Vec::new();
    for r in reports {
        if !order.contains(&r.method.as_str()) {
            order.push(&r.method);
        }
    }
    let methods = order
        .into_iter()
        .map(|m| {
            let rs: Vec<&SegmentReport> = reports.iter().filter(|r| r.method == m).collect();
            let ends: Vec<f64> = rs.iter().map(|r| r.end_err).collect();
            let maxes: Vec<f64> = rs.iter().map(|r| r.max_err).collect();
            let mut all = Vec::new();
            let mut act = Vec::new();
            let mut inact = Vec::new();
            let (mut d_act, mut d_all) = (0.0, 0.0);
            let (mut n_act, mut n_all) = (0usize, 0usize);
            for r in &rs {
                for ((e, a), ds) in r.errors.iter().zip(&r.constraint_active).zip(&r.arc_increments) {
                    all.push(*e);
                    d_all += ds;
                    n_all += 1;
                    if *a {
                        act.push(*e);
                        d_act += ds;
                        n_act += 1;
                    } else {
                        inact.push(*e);
                    }
                }
            }
            let constraint_frac = if d_all > 0.0 {
                d_act / d_all
            } else if n_all > 0 {
                n_act as f64 / n_all as f64
            } else {
                0.0
            };
            MethodSummary {
                method: m.to_string(),
                segments: rs.len(),
                mean_end: mean(&ends),
                med_end: median(&ends),
                mean_max: mean(&maxes),
                med_max: median(&maxes),
                overall: SubsetRecall::of(&all, bins),
                active: SubsetRecall::of(&act, bins),
                inactive: SubsetRecall::of(&inact, bins),
                constraint_frac,
            }
        })
        .collect();
    Ok(Summary {
        bins: bins.to_vec(),
        methods,
    })
}

fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.6}")
    } else {
        String::new()
    }
}

pub const RESULTS_HEADER: &str = "method,bin,recall,mean_end,med_end,mean_max,med_max,constraint_frac";
pub const SPLIT_HEADER: &str = "method,subset,bin,frames,recall";

impl Summary {
    /// One row per method and bin.
    pub fn results_csv(&self) -> String {
        let mut s = String::from(RESULTS_HEADER);
        s.push('\n');
        for m in &self.methods {
            for (i, b) in self.bins.iter().enumerate() {
                let recall = m.overall.recall.as_ref().map_or(f64::NAN, |r| r[i]);
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{}",
                    m.method,
                    b.label(),
                    num(recall),
                    num(m.mean_end),
                    num(m.med_end),
                    num(m.mean_max),
                    num(m.med_max),
                    num(m.constraint_frac)
                );
            }
        }
        s
    }

    /// Recall per method, bin and subset (all, active, inactive). Empty
    /// subsets leave the recall column blank.
    pub fn split_csv(&self) -> String {
        let mut s = String::from(SPLIT_HEADER);
        s.push('\n');
        for m in &self.methods {
            for (name, sub) in [("all", &m.overall), ("active", &m.active), ("inactive", &m.inactive)] {
                for (i, b) in self.bins.iter().enumerate() {
                    let r = sub.recall.as_ref().map_or(f64::NAN, |r| r[i]);
                    let _ = writeln!(s, "{},{},{},{},{}", m.method, name, b.label(), sub.frames, num(r));
                }
            }
        }
        s
    }

    /// Fixed-width table for terminals.
    pub fn text_table(&self) -> String {
        let mut s = String::new();
        let bins: Vec<String> = self.bins.iter().map(|b| b.label()).collect();
        let _ = write!(s, "{:<8} {:<9} {:>7}", "method", "subset", "frames");
        for b in &bins {
            let _ = write!(s, " {b:>13}");
        }
        let _ = writeln!(s, " {:>9} {:>9} {:>9} {:>9} {:>8}", "mean_end", "med_end", "mean_max", "med_max", "active");
        for m in &self.methods {
            for (name, sub) in [("all", &m.overall), ("active", &m.active), ("inactive", &m.inactive)] {
                let _ = write!(s, "{:<8} {:<9} {:>7}", m.method, name, sub.frames);
                for i in 0..bins.len() {
                    match &sub.recall {
                        Some(r) => {
                            let _ = write!(s, " {:>13.3}", r[i]);
                        }
                        None => {
                            let _ = write!(s, " {:>13}", "-");
                        }
                    }
                }
                if name == "all" {
                    let _ = writeln!(
                        s,
                        " {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>7.1}%",
                        m.mean_end,
                        m.med_end,
                        m.mean_max,
                        m.med_max,
                        100.0 * m.constraint_frac
                    );
                } else {
                    s.push('\n');
                }
            }
        }
        s
    }
}
