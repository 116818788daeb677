//! Planar kinematic bicycle integration: heading rate is speed times path
//! curvature, the world is flat (z = 0, no roll or pitch).

use crate::eskf::Pose6DoF;
use crate::geometry::{yaw_quat, Vec3};

use super::scenario::Scenario;

/// Internal integration step, s.
pub const FINE_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub pose: Pose6DoF,
    pub velocity: Vec3,
    pub yaw: f64,
    /// Arc length travelled since t = 0, m.
    pub s: f64,
}

#[derive(Debug, Clone, Copy)]
struct Kin {
    t: f64,
    x: f64,
    y: f64,
    yaw: f64,
    s: f64,
}

impl Kin {
    /// Advances by `dt` with speed and curvature frozen at the midpoint, or
    /// by exactly `ds_exact` metres of arc when given.
    fn advance(&mut self, sc: &Scenario, dt: f64, ds_exact: Option<f64>) {
        let tm = self.t + 0.5 * dt;
        let v = sc.speed.at(tm).max(0.0);
        let kappa = sc.curvature.at(tm);
        let ds = ds_exact.unwrap_or(v * dt);
        let dyaw = kappa * ds;
        let (sin0, cos0) = self.yaw.sin_cos();
        let (dx, dy) = if dyaw.abs() < 1e-12 {
            (ds * cos0, ds * sin0)
        } else {
            let (sin1, cos1) = (self.yaw + dyaw).sin_cos();
            (ds * (sin1 - sin0) / dyaw, ds * (cos0 - cos1) / dyaw)
        };
        self.x += dx;
        self.y += dy;
        self.yaw += dyaw;
        self.s += ds;
        self.t += dt;
    }

    fn sample(&self, sc: &Scenario) -> TrajectorySample {
        let v = sc.speed.at(self.t).max(0.0);
        TrajectorySample {
            t: self.t,
            pose: Pose6DoF::new(Vec3::new(self.x, self.y, 0.0), yaw_quat(self.yaw)),
            velocity: Vec3::new(v * self.yaw.cos(), v * self.yaw.sin(), 0.0),
            yaw: self.yaw,
            s: self.s,
        }
    }
}

/// Ground truth sampled at camera instants: a frame every `frame_spacing_m`
/// of travel, or after `max_frame_interval_s` when moving slowly, plus a
/// final frame at the end of the scenario.
pub fn generate_trajectory(sc: &Scenario) -> Vec<TrajectorySample> {
    let mut k = Kin {
        t: 0.0,
        x: 0.0,
        y: 0.0,
        yaw: 0.0,
        s: 0.0,
    };
    let mut out = vec![k.sample(sc)];
    let mut s_next = sc.frame_spacing_m;
    let mut t_next = sc.max_frame_interval_s;
    const EPS: f64 = 1e-9;
    while k.t < sc.duration_s - EPS {
        let dt = FINE_STEP.min(sc.duration_s - k.t).min(t_next - k.t);
        let v = sc.speed.at(k.t + 0.5 * dt).max(0.0);
        if k.s + v * dt >= s_next - EPS && v > 0.0 {
            let ds = s_next - k.s;
            let dt_part = (ds / v).min(dt);
            k.advance(sc, dt_part, Some(ds));
            k.s = s_next;
        } else {
            k.advance(sc, dt, None);
        }
        let hit_space = k.s >= s_next - EPS;
        let hit_time = k.t >= t_next - EPS;
        if hit_space || hit_time {
            out.push(k.sample(sc));
            s_next = k.s + sc.frame_spacing_m;
            t_next = k.t + sc.max_frame_interval_s;
        }
    }
    let last_t = out.last().map(|s| s.t).unwrap_or(0.0);
    if k.t - last_t > 1e-6 {
        out.push(k.sample(sc));
    }
    out
}

/// Dense arc-length table of the ego path, used to place vehicles ahead.
#[derive(Debug, Clone)]
pub struct PathTable {
    /// `(s, x, y, yaw)` with strictly increasing `s`.
    pts: Vec<(f64, f64, f64, f64)>,
}

impl PathTable {
    /// Integrates the path until it extends `ahead_m` beyond the arc length
    /// reached at the end of the scenario. Past the scenario end the final
    /// curvature is held and speed is kept positive.
    pub fn build(sc: &Scenario, ahead_m: f64) -> Self {
        let mut k = Kin {
            t: 0.0,
            x: 0.0,
            y: 0.0,
            yaw: 0.0,
            s: 0.0,
        };
        let mut pts = vec![(0.0, 0.0, 0.0, 0.0)];
        let mut s_end: Option<f64> = None;
        let mut ext = sc.clone();
        let v_tail = sc.speed.at(sc.duration_s).max(5.0);
        ext.speed.0.push((sc.duration_s + 1e-6, v_tail));
        loop {
            if s_end.is_none() && k.t >= sc.duration_s {
                s_end = Some(k.s);
            }
            if let Some(se) = s_end {
                if k.s >= se + ahead_m {
                    break;
                }
            }
            k.advance(&ext, 1e-2, None);
            if k.s > pts[pts.len() - 1].0 {
                pts.push((k.s, k.x, k.y, k.yaw));
            }
        }
        Self { pts }
    }

    /// Position and heading at arc length `s`, clamped to the table.
    pub fn at(&self, s: f64) -> (f64, f64, f64) {
        let p = &self.pts;
        if s <= p[0].0 {
            return (p[0].1, p[0].2, p[0].3);
        }
        let last = p[p.len() - 1];
        if s >= last.0 {
            return (last.1, last.2, last.3);
        }
        let i = p.partition_point(|q| q.0 <= s);
        let (a, b) = (p[i - 1], p[i]);
        let w = (s - a.0) / (b.0 - a.0);
        (a.1 + w * (b.1 - a.1), a.2 + w * (b.2 - a.2), a.3 + w * (b.3 - a.3))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rotation_angle_between, Quat};
    use crate::sim::scenario::{Camera, NoiseModel, Profile, ScenarioKind};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    pub(crate) fn plain(speed: f64, kappa: f64, duration: f64) -> Scenario {
        Scenario {
            name: "test".into(),
            kind: ScenarioKind::Straight,
            duration_s: duration,
            speed: Profile::constant(speed),
            curvature: Profile::constant(kappa),
            lead_vehicles: vec![],
            camera: Camera::default(),
            noise: NoiseModel::zero(),
            frame_spacing_m: 1.5,
            max_frame_interval_s: 1.0,
            seed: 1,
        }
    }

    #[test]
    fn straight_line_end_pose() {
        let traj = generate_trajectory(&plain(15.0, 0.0, 10.0));
        assert_eq!(traj.len(), 101);
        let end = traj.last().unwrap();
        assert_abs_diff_eq!(end.t, 10.0, epsilon = 1e-9);
        assert_abs_diff_eq!(end.pose.p, Vec3::new(150.0, 0.0, 0.0), epsilon = 1e-9);
        assert!(rotation_angle_between(&end.pose.q, &Quat::identity()) < 1e-9);
        for w in traj.windows(2) {
            assert_abs_diff_eq!((w[1].pose.p - w[0].pose.p).norm(), 1.5, epsilon = 1e-9);
            assert!(w[1].t > w[0].t);
        }
    }

    #[test]
    fn constant_curvature_half_turn() {
        // θ = κ·s = (1/50)·(10·5π) = π
        let traj = generate_trajectory(&plain(10.0, 1.0 / 50.0, 5.0 * PI));
        let end = traj.last().unwrap();
        assert_abs_diff_eq!(end.t, 5.0 * PI, epsilon = 1e-9);
        assert_abs_diff_eq!(end.yaw, PI, epsilon = 1e-9);
        // a half circle of radius 50 ends 100 m to the left of the start
        assert_abs_diff_eq!(end.pose.p, Vec3::new(0.0, 100.0, 0.0), epsilon = 1e-6);
    }

    #[test]
    fn standing_still_keeps_pose_and_samples_at_min_rate() {
        let traj = generate_trajectory(&plain(0.0, 0.0, 5.0));
        assert_eq!(traj.len(), 6);
        assert!(traj.iter().all(|s| s.pose.p == Vec3::zeros()));
        assert_abs_diff_eq!(traj[3].t, 3.0, epsilon = 1e-9);
    }

    #[test]
    fn velocity_matches_finite_differences() {
        let mut sc = plain(12.0, 0.0, 30.0);
        sc.speed = Profile(vec![(0.0, 8.0), (30.0, 14.0)]);
        sc.curvature = Profile(vec![(0.0, 0.0), (15.0, 0.01), (30.0, -0.005)]);
        let traj = generate_trajectory(&sc);
        for w in traj.windows(3) {
            let fd = (w[2].pose.p - w[0].pose.p) / (w[2].t - w[0].t);
            let v = w[1].velocity;
            assert!((fd - v).norm() <= 0.01 * v.norm(), "{fd} vs {v}");
        }
    }

    #[test]
    fn path_table_follows_trajectory() {
        let sc = plain(10.0, 1.0 / 80.0, 20.0);
        let table = PathTable::build(&sc, 50.0);
        for s in generate_trajectory(&sc).iter().step_by(10) {
            let (x, y, yaw) = table.at(s.s);
            assert!((Vec3::new(x, y, 0.0) - s.pose.p).norm() < 1e-3);
            assert_abs_diff_eq!(yaw, s.yaw, epsilon = 1e-4);
        }
        let (x, _, _) = table.at(1e9);
        assert!(x.is_finite());
    }
}
