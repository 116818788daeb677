//! Lead-vehicle detections rendered through a pinhole camera.
//!
//! Each lead vehicle is a planar rectangle (its rear face) carrying a fixed
//! grid of feature points. Every point owns a persistent random descriptor;
//! per frame it is perturbed and renormalized so that identity is recoverable
//! without being trivial.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::constraint::{BBox, Descriptor, VehicleDetection};
use crate::geometry::{quat_to_rotmat, Vec3};

use super::scenario::{Camera, LeadVehicle, Scenario};
use super::trajectory::{PathTable, TrajectorySample};
use super::{rng_for, STREAM_DESCRIPTORS, STREAM_SCENE};

pub const DESCRIPTOR_DIM: usize = 128;
pub const GRID_COLS: usize = 5;
pub const GRID_ROWS: usize = 4;
/// Mask pixels per bounding-box pixel.
pub const MASK_FILL: f64 = 0.6;
/// Height of the lowest feature row above the road, m.
const FACE_BASE_M: f64 = 0.3;
const MIN_DEPTH_M: f64 = 0.5;

/// Relative bearing, range and heading change below which a lead vehicle is
/// labelled as held still relative to the ego vehicle.
pub const TRUTH_BEARING_RAD: f64 = 1e-3;
pub const TRUTH_RANGE_FRAC: f64 = 0.01;
pub const TRUTH_YAW_RAD: f64 = 2e-3;

/// A lead vehicle's world placement at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeadPlacement {
    /// Centre of the rear face at road level.
    pub base: Vec3,
    pub yaw: f64,
}

/// Places lead vehicles along the ego path at `gap(t)` metres ahead.
pub fn place_lead(lv: &LeadVehicle, path: &PathTable, ego: &TrajectorySample) -> LeadPlacement {
    let s = ego.s + lv.gap_m + lv.rel_speed.integral(ego.t);
    let (x, y, yaw) = path.at(s);
    let left = Vec3::new(-yaw.sin(), yaw.cos(), 0.0);
    LeadPlacement {
        base: Vec3::new(x, y, 0.0) + left * lv.lateral_offset_m,
        yaw,
    }
}

/// Feature points of the rear face in world coordinates, row-major.
pub fn face_points(lv: &LeadVehicle, at: &LeadPlacement) -> Vec<Vec3> {
    let left = Vec3::new(-at.yaw.sin(), at.yaw.cos(), 0.0);
    let mut pts = Vec::with_capacity(GRID_COLS * GRID_ROWS);
    for r in 0..GRID_ROWS {
        let h = FACE_BASE_M + lv.height_m * r as f64 / (GRID_ROWS - 1) as f64;
        for c in 0..GRID_COLS {
            let l = -0.5 * lv.width_m + lv.width_m * c as f64 / (GRID_COLS - 1) as f64;
            pts.push(at.base + left * l + Vec3::z() * h);
        }
    }
    pts
}

/// Pinhole projection from the ego pose. The camera looks along body +x
/// with image u to the right and v down.
pub fn project(cam: &Camera, ego: &TrajectorySample, world: &Vec3) -> Option<[f64; 2]> {
    let r = quat_to_rotmat(&ego.pose.q);
    let centre = ego.pose.p + r * Vec3::new(0.0, 0.0, cam.mount_height_m);
    let b = r.transpose() * (world - centre);
    let (xc, yc, zc) = (-b.y, -b.z, b.x);
    if zc < MIN_DEPTH_M {
        return None;
    }
    let u = cam.fu * xc / zc + cam.cu;
    let v = cam.fv * yc / zc + cam.cv;
    let inside = u >= 0.0 && u < cam.width as f64 && v >= 0.0 && v < cam.height as f64;
    inside.then_some([u, v])
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Descriptor {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| (x / n) as f32).collect()
}

/// Per-frame detection lists plus the simulator's lock-on ground truth.
pub struct SceneOutput {
    pub detections: Vec<Vec<VehicleDetection>>,
    pub truth: Vec<bool>,
}

#[derive(Debug, Clone, Copy)]
struct Relative {
    bearing: f64,
    range: f64,
    yaw: f64,
}

fn relative(ego: &TrajectorySample, at: &LeadPlacement) -> Relative {
    let r = quat_to_rotmat(&ego.pose.q);
    let b = r.transpose() * (at.base - ego.pose.p);
    Relative {
        bearing: b.y.atan2(b.x),
        range: b.norm(),
        yaw: at.yaw - ego.yaw,
    }
}

pub fn synth_scene(traj: &[TrajectorySample], sc: &Scenario) -> SceneOutput {
    let n = traj.len();
    if sc.lead_vehicles.is_empty() {
        return SceneOutput {
            detections: vec![Vec::new(); n],
            truth: vec![false; n],
        };
    }
    let max_gap = sc
        .lead_vehicles
        .iter()
        .map(|lv| lv.gap_m + lv.rel_speed.integral(sc.duration_s).max(0.0))
        .fold(0.0, f64::max);
    let path = PathTable::build(sc, max_gap + 20.0);

    let mut rng = rng_for(sc.seed, STREAM_SCENE);
    let signatures: Vec<Vec<Descriptor>> = sc
        .lead_vehicles
        .iter()
        .map(|_| (0..GRID_COLS * GRID_ROWS).map(|_| unit_gaussian(&mut rng, DESCRIPTOR_DIM)).collect())
        .collect();

    let mut detections = Vec::with_capacity(n);
    let mut visible_rel: Vec<Vec<Option<Relative>>> = Vec::with_capacity(n);
    for (k, ego) in traj.iter().enumerate() {
        let mut frame_rng = rng_for(sc.seed, STREAM_DESCRIPTORS + k as u64);
        let mut dets = Vec::new();
        let mut rels = Vec::with_capacity(sc.lead_vehicles.len());
        for (vi, lv) in sc.lead_vehicles.iter().enumerate() {
            let at = place_lead(lv, &path, ego);
            let mut kps = Vec::new();
            let mut descs = Vec::new();
            for (pi, pt) in face_points(lv, &at).iter().enumerate() {
                // draws are made for every point so visibility does not shift the stream
                let du: f64 = frame_rng.sample(StandardNormal);
                let dv: f64 = frame_rng.sample(StandardNormal);
                let noise: Vec<f64> = (0..DESCRIPTOR_DIM).map(|_| frame_rng.sample(StandardNormal)).collect();
                let Some([u, v]) = project(&sc.camera, ego, pt) else {
                    continue;
                };
                let sig = &signatures[vi][pi];
                let d: Descriptor = sig
                    .iter()
                    .zip(&noise)
                    .map(|(s, e)| *s + (e * sc.noise.descriptor_sigma) as f32)
                    .collect();
                kps.push([u + du * sc.noise.keypoint_sigma_px, v + dv * sc.noise.keypoint_sigma_px]);
                descs.push(d);
            }
            let bbox = bbox_of(&kps);
            let det = bbox.and_then(|b| VehicleDetection::new(dets.len(), b, b.area() * MASK_FILL, kps, descs).ok());
            match det {
                Some(d) => {
                    dets.push(d);
                    rels.push(Some(relative(ego, &at)));
                }
                None => rels.push(None),
            }
        }
        detections.push(dets);
        visible_rel.push(rels);
    }

    let truth = (0..n)
        .map(|k| {
            k > 0
                && (0..sc.lead_vehicles.len()).any(|vi| match (visible_rel[k - 1][vi], visible_rel[k][vi]) {
                    (Some(a), Some(b)) => {
                        (b.bearing - a.bearing).abs() < TRUTH_BEARING_RAD
                            && (b.range - a.range).abs() < TRUTH_RANGE_FRAC * a.range
                            && (b.yaw - a.yaw).abs() < TRUTH_YAW_RAD
                    }
                    _ => false,
                })
        })
        .collect();
    SceneOutput { detections, truth }
}

fn bbox_of(kps: &[[f64; 2]]) -> Option<BBox> {
    let first = kps.first()?;
    let mut b = BBox {
        u_min: first[0],
        v_min: first[1],
        u_max: first[0],
        v_max: first[1],
    };
    for p in kps {
        b.u_min = b.u_min.min(p[0]);
        b.v_min = b.v_min.min(p[1]);
        b.u_max = b.u_max.max(p[0]);
        b.v_max = b.v_max.max(p[1]);
    }
    (b.area() > 0.0).then_some(b)
}
