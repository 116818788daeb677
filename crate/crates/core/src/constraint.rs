//! Lock-on detection: decides whether some detected vehicle holds still in
//! the image between two consecutive frames.
//!
//! Vehicles are associated across frames through their pooled descriptors,
//! keypoints within an associated pair through mutual nearest neighbours,
//! and a pair locks when the mean keypoint shift stays below a threshold
//! that scales with the apparent size of the vehicle.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;

pub type Descriptor = Vec<f32>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectionError {
    #[error("vehicle {id}: {keypoints} keypoints but {descriptors} descriptors")]
    LengthMismatch { id: usize, keypoints: usize, descriptors: usize },
    #[error("vehicle {0}: no keypoints")]
    Empty(usize),
    #[error("vehicle {0}: bounding box has no area")]
    DegenerateBox(usize),
    #[error("vehicle {0}: descriptors have inconsistent dimension")]
    DimensionMismatch(usize),
    #[error("cannot pool an empty descriptor set")]
    EmptyPool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
}

impl BBox {
    pub fn area(&self) -> f64 {
        (self.u_max - self.u_min).max(0.0) * (self.v_max - self.v_min).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleDetection {
    /// Index of the vehicle within its frame.
    pub id: usize,
    pub bbox: BBox,
    /// Segmentation mask size in pixels.
    pub mask_area: f64,
    pub keypoints: Vec<[f64; 2]>,
    /// Unit-normalized local descriptors, one per keypoint.
    pub descriptors: Vec<Descriptor>,
    /// Componentwise mean of `descriptors`.
    pub pooled: Descriptor,
}

impl VehicleDetection {
    /// Builds a detection, normalizing descriptors and computing the pooled one.
    pub fn new(
        id: usize,
        bbox: BBox,
        mask_area: f64,
        keypoints: Vec<[f64; 2]>,
        descriptors: Vec<Descriptor>,
    ) -> Result<Self, DetectionError> {
        let descriptors: Vec<Descriptor> = descriptors.into_iter().map(normalized).collect();
        let pooled = pool_descriptor(&descriptors).map_err(|_| DetectionError::Empty(id))?;
        let det = Self {
            id,
            bbox,
            mask_area,
            keypoints,
            descriptors,
            pooled,
        };
        det.validate()?;
        Ok(det)
    }

    pub fn validate(&self) -> Result<(), DetectionError> {
        if self.keypoints.len() != self.descriptors.len() {
            return Err(DetectionError::LengthMismatch {
                id: self.id,
                keypoints: self.keypoints.len(),
                descriptors: self.descriptors.len(),
            });
        }
        if self.keypoints.is_empty() {
            return Err(DetectionError::Empty(self.id));
        }
        if !(self.bbox.area() > 0.0) {
            return Err(DetectionError::DegenerateBox(self.id));
        }
        let dim = self.pooled.len();
        if self.descriptors.iter().any(|d| d.len() != dim) {
            return Err(DetectionError::DimensionMismatch(self.id));
        }
        Ok(())
    }
}

fn normalized(mut d: Descriptor) -> Descriptor {
    let n = d.iter().map(|x| x * x).sum::<f32>().sqrt();
    if n > 0.0 {
        d.iter_mut().for_each(|x| *x /= n);
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintParams {
    /// Minimum mask size as a fraction of the image area.
    pub mask_fraction: f64,
    /// `τ = sqrt(A_b) / tau_divisor`.
    pub tau_divisor: f64,
    /// Maximum pooled-descriptor distance for a vehicle association.
    pub d_assoc: f64,
    /// Minimum keypoint correspondences for a pair to count.
    pub min_matches: usize,
}

impl Default for ConstraintParams {
    fn default() -> Self {
        Self {
            mask_fraction: 0.0004,
            tau_divisor: 70.0,
            d_assoc: 0.8,
            min_matches: 5,
        }
    }
}

/// One locked vehicle pair: ids in the previous and current frame, the
/// mean keypoint shift and the threshold it was compared against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LockedPair {
    pub prev_id: usize,
    pub curr_id: usize,
    pub mean_shift: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConstraintDecision {
    pub constrained: bool,
    pub locked_pairs: Vec<LockedPair>,
}

/// Drops detections whose mask is smaller than `mask_fraction` of the image.
pub fn filter_detections(dets: &[VehicleDetection], image_w: u32, image_h: u32, mask_fraction: f64) -> Vec<VehicleDetection> {
    let min_area = mask_fraction * image_w as f64 * image_h as f64;
    dets.iter().filter(|d| d.mask_area >= min_area).cloned().collect()
}

pub fn pool_descriptor(descriptors: &[Descriptor]) -> Result<Descriptor, DetectionError> {
    let first = descriptors.first().ok_or(DetectionError::EmptyPool)?;
    let mut acc = vec![0.0f64; first.len()];
    for d in descriptors {
        for (a, x) in acc.iter_mut().zip(d) {
            *a += *x as f64;
        }
    }
    let n = descriptors.len() as f64;
    Ok(acc.into_iter().map(|a| (a / n) as f32).collect())
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (*x - *y) as f64;
            d * d
        })
        .sum()
}

/// Greedy one-to-one association on unit-normalized pooled descriptors:
/// repeatedly takes the closest remaining pair until none is within `d_assoc`.
pub fn associate_vehicles(prev: &[VehicleDetection], curr: &[VehicleDetection], d_assoc: f64) -> Vec<(usize, usize)> {
    let pp: Vec<Descriptor> = prev.iter().map(|d| normalized(d.pooled.clone())).collect();
    let cp: Vec<Descriptor> = curr.iter().map(|d| normalized(d.pooled.clone())).collect();
    let mut cand: Vec<(f64, usize, usize)> = Vec::with_capacity(pp.len() * cp.len());
    for (i, a) in pp.iter().enumerate() {
        for (j, b) in cp.iter().enumerate() {
            let d = sq_dist(a, b).sqrt();
            if d <= d_assoc {
                cand.push((d, i, j));
            }
        }
    }
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_prev = vec![false; pp.len()];
    let mut used_curr = vec![false; cp.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in cand {
        if !used_prev[i] && !used_curr[j] {
            used_prev[i] = true;
            used_curr[j] = true;
            pairs.push((prev[i].id, curr[j].id));
        }
    }
    pairs.sort_unstable();
    pairs
}

fn argmin<I: Iterator<Item = f64>>(it: I) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, d) in it.enumerate() {
        match best {
            Some((_, bd)) if d >= bd => {}
            _ => best = Some((i, d)),
        }
    }
    best.map(|(i, _)| i)
}

/// Mutual nearest neighbours under Euclidean distance, ties to the lowest index.
pub fn mutual_nn_matches(l1: &[Descriptor], l2: &[Descriptor]) -> Vec<(usize, usize)> {
    if l1.is_empty() || l2.is_empty() {
        return Vec::new();
    }
    let dist: Vec<Vec<f64>> = l1.iter().map(|a| l2.iter().map(|b| sq_dist(a, b)).collect()).collect();
    let col_best: Vec<usize> = (0..l2.len())
        .map(|j| argmin(dist.iter().map(|row| row[j])).expect("non-empty"))
        .collect();
    dist.iter()
        .enumerate()
        .filter_map(|(i, row)| {
            let j = argmin(row.iter().copied())?;
            (col_best[j] == i).then_some((i, j))
        })
        .collect()
}

/// Mean pixel distance between matched keypoints, `None` without matches.
pub fn mean_pixel_shift(matches: &[(usize, usize)], kps1: &[[f64; 2]], kps2: &[[f64; 2]]) -> Option<f64> {
    if matches.is_empty() {
        return None;
    }
    let total: f64 = matches
        .iter()
        .map(|&(i, j)| {
            let (a, b) = (kps1[i], kps2[j]);
            (a[0] - b[0]).hypot(a[1] - b[1])
        })
        .sum();
    Some(total / matches.len() as f64)
}

pub fn tau(bbox_area: f64, divisor: f64) -> f64 {
    bbox_area.sqrt() / divisor
}

/// Lock-on decision for the current frame given the previous one.
pub fn detect_constraint(
    prev: &[VehicleDetection],
    curr: &[VehicleDetection],
    image_w: u32,
    image_h: u32,
    params: &ConstraintParams,
) -> ConstraintDecision {
    let prev = filter_detections(prev, image_w, image_h, params.mask_fraction);
    let curr = filter_detections(curr, image_w, image_h, params.mask_fraction);
    let mut locked = Vec::new();
    for (pid, cid) in associate_vehicles(&prev, &curr, params.d_assoc) {
        let (Some(a), Some(b)) = (prev.iter().find(|d| d.id == pid), curr.iter().find(|d| d.id == cid)) else {
            continue;
        };
        let matches = mutual_nn_matches(&a.descriptors, &b.descriptors);
        if matches.len() < params.min_matches.max(1) {
            continue;
        }
        let Some(shift) = mean_pixel_shift(&matches, &a.keypoints, &b.keypoints) else {
            continue;
        };
        let threshold = tau(b.bbox.area(), params.tau_divisor);
        if shift < threshold {
            locked.push(LockedPair {
                prev_id: pid,
                curr_id: cid,
                mean_shift: shift,
                tau: threshold,
            });
        }
    }
    ConstraintDecision {
        constrained: !locked.is_empty(),
        locked_pairs: locked,
    }
}

/// Decisions for every frame of a detection sequence. The first frame has no
/// predecessor and is never constrained.
pub fn decide_sequence(
    frames: &[&[VehicleDetection]],
    image_w: u32,
    image_h: u32,
    params: &ConstraintParams,
    exec: par::Execution,
) -> Vec<ConstraintDecision> {
    let idx: Vec<usize> = (0..frames.len()).collect();
    par::map(exec, &idx, |&k| {
        if k == 0 {
            ConstraintDecision::default()
        } else {
            detect_constraint(frames[k - 1], frames[k], image_w, image_h, params)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit(dim: usize, k: usize) -> Descriptor {
        let mut d = vec![0.0; dim];
        d[k] = 1.0;
        d
    }

    fn vehicle(id: usize, offset: [f64; 2], side: f64, first_axis: usize, n: usize) -> VehicleDetection {
        let kps: Vec<[f64; 2]> = (0..n).map(|i| [offset[0] + 3.0 * i as f64, offset[1] + (i % 3) as f64]).collect();
        let desc: Vec<Descriptor> = (0..n).map(|i| unit(32, first_axis + i)).collect();
        let bbox = BBox {
            u_min: offset[0],
            v_min: offset[1],
            u_max: offset[0] + side,
            v_max: offset[1] + side,
        };
        VehicleDetection::new(id, bbox, side * side * 0.6, kps, desc).unwrap()
    }

    #[test]
    fn mask_threshold_on_1024x768() {
        let mut a = vehicle(0, [0.0, 0.0], 40.0, 0, 6);
        let mut b = a.clone();
        a.mask_area = 314.0;
        b.mask_area = 315.0;
        b.id = 1;
        let kept = filter_detections(&[a.clone(), b.clone()], 1024, 768, 0.0004);
        assert_eq!(kept, vec![b.clone()]);
        assert!(filter_detections(&[], 1024, 768, 0.0004).is_empty());
        let big = vec![vehicle(0, [0.0, 0.0], 40.0, 0, 6), vehicle(1, [9.0, 9.0], 50.0, 6, 6)];
        assert_eq!(filter_detections(&big, 1024, 768, 0.0004), big);
    }

    #[test]
    fn pooling() {
        let d = vec![vec![0.25f32, 0.5, -1.0]];
        assert_eq!(pool_descriptor(&d).unwrap(), d[0]);
        let e = vec![unit(4, 0), unit(4, 1)];
        assert_eq!(pool_descriptor(&e).unwrap(), vec![0.5, 0.5, 0.0, 0.0]);
        let rev: Vec<_> = e.iter().rev().cloned().collect();
        assert_eq!(pool_descriptor(&rev).unwrap(), pool_descriptor(&e).unwrap());
        assert_eq!(pool_descriptor(&[]), Err(DetectionError::EmptyPool));
    }

    #[test]
    fn detection_validation() {
        let bbox = BBox { u_min: 0.0, v_min: 0.0, u_max: 10.0, v_max: 10.0 };
        let err = VehicleDetection::new(3, bbox, 60.0, vec![[0.0, 0.0]], vec![unit(4, 0), unit(4, 1)]);
        assert!(matches!(err, Err(DetectionError::LengthMismatch { id: 3, .. })));
        assert_eq!(VehicleDetection::new(2, bbox, 60.0, vec![], vec![]), Err(DetectionError::Empty(2)));
        let flat = BBox { v_max: 0.0, ..bbox };
        assert_eq!(
            VehicleDetection::new(1, flat, 60.0, vec![[0.0, 0.0]], vec![unit(4, 0)]),
            Err(DetectionError::DegenerateBox(1))
        );
        let d = VehicleDetection::new(0, bbox, 60.0, vec![[0.0, 0.0]], vec![vec![3.0, 4.0]]).unwrap();
        assert_eq!(d.descriptors[0], vec![0.6, 0.8]);
    }

    #[test]
    fn association_examples() {
        let a = vec![vehicle(0, [0.0, 0.0], 60.0, 0, 6), vehicle(1, [100.0, 0.0], 60.0, 10, 6)];
        assert_eq!(associate_vehicles(&a, &a, 0.8), vec![(0, 0), (1, 1)]);
        assert!(associate_vehicles(&a, &[], 0.8).is_empty());
        assert!(associate_vehicles(&[], &a, 0.8).is_empty());
        // disjoint appearance is rejected by the distance threshold
        let other = vec![vehicle(0, [0.0, 0.0], 60.0, 20, 6)];
        assert!(associate_vehicles(&a, &other, 0.8).is_empty());
    }

    #[test]
    fn crossed_two_by_two_matches_exhaustive_assignment() {
        let mk = |id: usize, pooled: Vec<f32>| VehicleDetection {
            id,
            bbox: BBox { u_min: 0.0, v_min: 0.0, u_max: 10.0, v_max: 10.0 },
            mask_area: 60.0,
            keypoints: vec![[0.0, 0.0]],
            descriptors: vec![pooled.clone()],
            pooled,
        };
        let prev = vec![mk(0, vec![1.0, 0.1, 0.0]), mk(1, vec![0.0, 1.0, 0.2])];
        let curr = vec![mk(0, vec![0.1, 1.0, 0.15]), mk(1, vec![1.0, 0.0, 0.05])];
        let got = associate_vehicles(&prev, &curr, 0.8);

        let cost = |i: usize, j: usize| {
            let a = normalized(prev[i].pooled.clone());
            let b = normalized(curr[j].pooled.clone());
            sq_dist(&a, &b).sqrt()
        };
        let straight = cost(0, 0) + cost(1, 1);
        let crossed = cost(0, 1) + cost(1, 0);
        let best = if crossed < straight { vec![(0, 1), (1, 0)] } else { vec![(0, 0), (1, 1)] };
        assert_eq!(got, best);
        assert_eq!(got, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn mutual_nn_examples() {
        let l: Vec<Descriptor> = (0..5).map(|k| unit(8, k)).collect();
        assert_eq!(mutual_nn_matches(&l, &l), (0..5).map(|i| (i, i)).collect::<Vec<_>>());
        // 0 → 0 but 0's nearest in l1 is 1, so only (1, 0) survives
        let l1 = vec![vec![0.0f32], vec![0.9]];
        let l2 = vec![vec![1.0f32]];
        assert_eq!(mutual_nn_matches(&l1, &l2), vec![(1, 0)]);
        assert!(mutual_nn_matches(&l1, &[]).is_empty());
    }

    #[test]
    fn pixel_shift_examples() {
        let k1 = vec![[10.0, 10.0], [20.0, 5.0]];
        let m = vec![(0, 0), (1, 1)];
        assert_eq!(mean_pixel_shift(&m, &k1, &k1), Some(0.0));
        let k2: Vec<[f64; 2]> = k1.iter().map(|p| [p[0] + 3.0, p[1] + 4.0]).collect();
        assert_abs_diff_eq!(mean_pixel_shift(&m, &k1, &k2).unwrap(), 5.0);
        let k3 = vec![[10.0, 10.0], [30.0, 5.0]];
        assert_abs_diff_eq!(mean_pixel_shift(&m, &k1, &k3).unwrap(), 5.0);
        assert_eq!(mean_pixel_shift(&[], &k1, &k1), None);
    }

    #[test]
    fn tau_examples() {
        assert_abs_diff_eq!(tau(4900.0, 70.0), 1.0);
        assert_abs_diff_eq!(tau(70.0 * 70.0 * 4.0, 70.0), 2.0);
        assert!(tau(5000.0, 70.0) > tau(4900.0, 70.0));
    }

    fn shifted(v: &VehicleDetection, du: f64) -> VehicleDetection {
        let mut out = v.clone();
        out.keypoints.iter_mut().for_each(|p| p[0] += du);
        out
    }

    #[test]
    fn lock_on_examples() {
        let p = ConstraintParams::default();
        assert!(!detect_constraint(&[], &[], 1024, 768, &p).constrained);
        // 70x70 box → τ = 1 px
        let lead = vehicle(0, [400.0, 300.0], 70.0, 0, 8);
        let d = detect_constraint(std::slice::from_ref(&lead), &[shifted(&lead, 0.5)], 1024, 768, &p);
        assert!(d.constrained);
        assert_eq!(d.locked_pairs.len(), 1);
        assert_abs_diff_eq!(d.locked_pairs[0].tau, 1.0);
        assert_abs_diff_eq!(d.locked_pairs[0].mean_shift, 0.5);
        let d = detect_constraint(std::slice::from_ref(&lead), &[shifted(&lead, 2.0)], 1024, 768, &p);
        assert!(!d.constrained);
        assert!(d.locked_pairs.is_empty());
    }

    #[test]
    fn too_few_matches_never_lock() {
        let p = ConstraintParams::default();
        let lead = vehicle(0, [400.0, 300.0], 70.0, 0, 4);
        assert!(!detect_constraint(std::slice::from_ref(&lead), std::slice::from_ref(&lead), 1024, 768, &p).constrained);
    }

    #[test]
    fn decision_ignores_vehicle_order() {
        let p = ConstraintParams::default();
        let a = vehicle(0, [100.0, 300.0], 70.0, 0, 8);
        let b = vehicle(1, [600.0, 300.0], 70.0, 10, 8);
        let prev = vec![a.clone(), b.clone()];
        let curr = vec![shifted(&a, 5.0), shifted(&b, 0.2)];
        let fwd = detect_constraint(&prev, &curr, 1024, 768, &p);
        let rev = detect_constraint(&[b, a], &[curr[1].clone(), curr[0].clone()], 1024, 768, &p);
        assert_eq!(fwd, rev);
        assert!(fwd.constrained);
        assert_eq!((fwd.locked_pairs[0].prev_id, fwd.locked_pairs[0].curr_id), (1, 1));
    }

    #[test]
    fn decision_ignores_keypoint_order() {
        let p = ConstraintParams::default();
        let a = vehicle(0, [100.0, 300.0], 70.0, 0, 8);
        let b = shifted(&a, 0.4);
        let mut perm = b.clone();
        perm.keypoints.reverse();
        perm.descriptors.reverse();
        let x = detect_constraint(std::slice::from_ref(&a), &[b], 1024, 768, &p);
        let y = detect_constraint(&[a], &[perm], 1024, 768, &p);
        assert_eq!(x.constrained, y.constrained);
        assert_abs_diff_eq!(x.locked_pairs[0].mean_shift, y.locked_pairs[0].mean_shift, epsilon = 1e-12);
    }

    #[test]
    fn larger_box_tolerates_larger_shift() {
        let p = ConstraintParams::default();
        // fixed 1.5 px shift locks once the box side exceeds 105 px (τ = side / 70)
        for side in [50.0, 70.0, 100.0, 140.0, 200.0] {
            let v = vehicle(0, [300.0, 300.0], side, 0, 8);
            let d = detect_constraint(std::slice::from_ref(&v), &[shifted(&v, 1.5)], 1024, 768, &p);
            assert_eq!(d.constrained, side / 70.0 > 1.5, "side {side}");
        }
    }
}
