//! Pose measurements standing in for single-image localization.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::eskf::Pose6DoF;
use crate::geometry::{quat_from_rotvec, quat_multiply, Vec3};

use super::scenario::Scenario;
use super::trajectory::TrajectorySample;
use super::{rng_for, STREAM_MEAS};

/// Ground truth with Gaussian translation noise, a rotation of Gaussian angle
/// about a uniformly random axis, and occasional planar outliers. Every frame
/// consumes the same number of draws so each noise source is stable when
/// another one is reconfigured.
pub fn synth_measurements(traj: &[TrajectorySample], sc: &Scenario) -> Vec<Option<Pose6DoF>> {
    let mut rng = rng_for(sc.seed, STREAM_MEAS);
    let n = &sc.noise;
    let (lo, hi) = n.outlier_range;
    traj.iter()
        .map(|s| {
            let mut g = || -> f64 { rng.sample(StandardNormal) };
            let dt = Vec3::new(g(), g(), g()) * n.pnp_t_sigma;
            let axis = Vec3::new(g(), g(), g());
            let angle = g() * n.pnp_r_sigma_deg.to_radians();
            let u_out: f64 = rng.random();
            let u_dir: f64 = rng.random();
            let u_mag: f64 = rng.random();

            let axis = if axis.norm() > 1e-12 { axis.normalize() } else { Vec3::z() };
            let mut p = s.pose.p + dt;
            if u_out < n.outlier_rate {
                let phi = u_dir * std::f64::consts::TAU;
                let mag = lo + (hi - lo) * u_mag;
                p += Vec3::new(phi.cos(), phi.sin(), 0.0) * mag;
            }
            let q = quat_multiply(&s.pose.q, &quat_from_rotvec(&(axis * angle)));
            Some(Pose6DoF::new(p, q))
        })
        .collect()
}
