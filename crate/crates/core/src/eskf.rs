//! Error-state Kalman filter over position, velocity and attitude.
//!
//! The nominal state is `(p, v, q)` with `q` the body-to-map rotation. The
//! error state is ordered `(δp, δv, δθ)` where `δθ` is a local (body-frame)
//! attitude error, `q_true = q ⊗ q{δθ}`. Gyro increments are applied on the
//! body side, `q_k = q_{k-1} ⊗ q{ω δ}`, which is the Hamilton form of the
//! global-to-local propagation `q{ω δ} ⊗ q` written in JPL notation.
//!
//! The IMU sample consumed per frame is already integrated to the frame
//! timestamp and carries gravity-compensated specific force.

use log::warn;
use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    quat_from_rotvec, quat_multiply, quat_to_rotmat, rotvec_from_quat, serde_quat, serde_vec3,
    skew, Mat3, Quat, RotVec, Vec3,
};
use crate::sim::FrameRecord;

pub type Mat9 = SMatrix<f64, 9, 9>;
pub type Mat6 = SMatrix<f64, 6, 6>;
pub type Vec9 = SVector<f64, 9>;
pub type Vec6 = SVector<f64, 6>;
type Mat6x9 = SMatrix<f64, 6, 9>;
type Mat9x6 = SMatrix<f64, 9, 6>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("initialization needs at least 2 warmup poses, got {0}")]
    InsufficientWarmup(usize),
    #[error("warmup timestamps must be strictly increasing (index {0})")]
    NonMonotonicWarmup(usize),
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("measurement variance must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// Integrated IMU reading over one frame interval, body frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    /// Gravity-compensated linear acceleration, m/s².
    #[serde(with = "serde_vec3")]
    pub accel: Vec3,
    /// Angular rate, rad/s.
    #[serde(with = "serde_vec3")]
    pub gyro: Vec3,
}

impl ImuSample {
    pub fn zero() -> Self {
        Self {
            accel: Vec3::zeros(),
            gyro: Vec3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.accel.iter().chain(self.gyro.iter()).all(|x| x.is_finite())
    }
}

/// 6-DoF pose: map-frame position and body-to-map attitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose6DoF {
    #[serde(with = "serde_vec3")]
    pub p: Vec3,
    #[serde(with = "serde_quat")]
    pub q: Quat,
}

impl Pose6DoF {
    pub fn new(p: Vec3, q: Quat) -> Self {
        Self { p, q }
    }

    pub fn identity() -> Self {
        Self::new(Vec3::zeros(), Quat::identity())
    }
}

/// How the posterior covariance is formed after a measurement update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceForm {
    /// `(I - G H) C`
    Simple,
    /// `(I - G H) C (I - G H)ᵀ + G R Gᵀ`
    Joseph,
}

/// Statistic used to turn warmup pose pairs into an initial speed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeedEstimator {
    /// Mean of consecutive pairwise speeds.
    Mean,
    /// Median of consecutive pairwise speeds.
    Median,
    /// Least-squares speed over the largest set of poses consistent with one
    /// constant-velocity line (within [`WARMUP_INLIER_TOL_M`]).
    Consensus,
}

/// Distance from a candidate constant-velocity line below which a warmup
/// pose counts as consistent with it.
pub const WARMUP_INLIER_TOL_M: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    /// Base measurement variance.
    pub v_m: f64,
    /// Process variance.
    pub v_p: f64,
    pub covariance_form: CovarianceForm,
    pub warmup_speed: SpeedEstimator,
    /// Diagonal of the initial error covariance, ordered (δp, δv, δθ).
    pub initial_cov: [f64; 9],
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            v_m: 0.005,
            v_p: 0.5,
            covariance_form: CovarianceForm::Joseph,
            warmup_speed: SpeedEstimator::Consensus,
            initial_cov: [0.25, 0.25, 0.25, 1.0, 1.0, 1.0, 0.01, 0.01, 0.01],
        }
    }
}

/// Nominal state plus error-state covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterState {
    pub p: Vec3,
    pub v: Vec3,
    pub q: Quat,
    pub cov: Mat9,
    pub t_last: f64,
}

impl FilterState {
    pub fn pose(&self) -> Pose6DoF {
        Pose6DoF::new(self.p, self.q)
    }
}

/// Bootstraps the filter from the first measurement and a short run of
/// measured poses. The speed comes from the warmup translations (see
/// [`SpeedEstimator`]) and
/// the direction from the body x axis of the first measured attitude.
pub fn initialize(
    first: &Pose6DoF,
    t_first: f64,
    warmup: &[(Pose6DoF, f64)],
    params: &FilterParams,
) -> Result<FilterState, FilterError> {
    if warmup.len() < 2 {
        return Err(FilterError::InsufficientWarmup(warmup.len()));
    }
    let mut speeds = Vec::with_capacity(warmup.len() - 1);
    for (i, pair) in warmup.windows(2).enumerate() {
        let dt = pair[1].1 - pair[0].1;
        if !(dt > 0.0) {
            return Err(FilterError::NonMonotonicWarmup(i + 1));
        }
        speeds.push((pair[1].0.p - pair[0].0.p).norm() / dt);
    }
    let speed = match params.warmup_speed {
        SpeedEstimator::Mean => speeds.iter().sum::<f64>() / speeds.len() as f64,
        SpeedEstimator::Median => median(&mut speeds),
        SpeedEstimator::Consensus => consensus_speed(warmup),
    };
    let heading = quat_to_rotmat(&first.q) * Vec3::x();
    let v = heading * speed;
    if !v.iter().all(|x| x.is_finite()) || !first.p.iter().all(|x| x.is_finite()) {
        return Err(FilterError::NonFinite("initial state"));
    }
    Ok(FilterState {
        p: first.p,
        v,
        q: first.q,
        cov: Mat9::from_diagonal(&Vec9::from(params.initial_cov)),
        t_last: t_first,
    })
}

/// Tries the line through every pair of poses, keeps the one most poses
/// agree with, and refits velocity by least squares on its inliers.
fn consensus_speed(warmup: &[(Pose6DoF, f64)]) -> f64 {
    let n = warmup.len();
    let mut best: Option<(usize, f64, Vec<usize>)> = None;
    for i in 0..n {
        for j in i + 1..n {
            let (pi, ti) = (warmup[i].0.p, warmup[i].1);
            let v = (warmup[j].0.p - pi) / (warmup[j].1 - ti);
            let mut inliers = Vec::new();
            let mut cost = 0.0;
            for (k, (pose, t)) in warmup.iter().enumerate() {
                let r = (pose.p - pi - v * (t - ti)).norm();
                if r < WARMUP_INLIER_TOL_M {
                    inliers.push(k);
                    cost += r;
                }
            }
            let better = match &best {
                None => true,
                Some((count, c, _)) => inliers.len() > *count || (inliers.len() == *count && cost < *c),
            };
            if better {
                best = Some((inliers.len(), cost, inliers));
            }
        }
    }
    let inliers = best.map(|b| b.2).unwrap_or_default();
    let m = inliers.len() as f64;
    let t_mean = inliers.iter().map(|&k| warmup[k].1).sum::<f64>() / m;
    let p_mean = inliers.iter().map(|&k| warmup[k].0.p).sum::<Vec3>() / m;
    let (mut num, mut den) = (Vec3::zeros(), 0.0);
    for &k in &inliers {
        let dt = warmup[k].1 - t_mean;
        num += (warmup[k].0.p - p_mean) * dt;
        den += dt * dt;
    }
    (num / den).norm()
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Nominal-state propagation. Leaves the covariance untouched.
pub fn predict(s: &FilterState, imu: &ImuSample, dt: f64) -> Result<FilterState, FilterError> {
    if !(dt > 0.0) {
        return Err(FilterError::NonPositiveStep(dt));
    }
    let r = quat_to_rotmat(&s.q);
    let acc_map = r * imu.accel;
    Ok(FilterState {
        p: s.p + s.v * dt + acc_map * (0.5 * dt * dt),
        v: s.v + acc_map * dt,
        q: quat_multiply(&s.q, &quat_from_rotvec(&(imu.gyro * dt))),
        cov: s.cov,
        t_last: s.t_last + dt,
    })
}

/// Error-state transition matrix for one prediction step:
///
/// ```text
/// [ I   Iδ   -½δ² R[a]× ]
/// [ 0   I    -δ R[a]×   ]
/// [ 0   0    Rᵀ{ω δ}    ]
/// ```
///
/// The upper-right block is the second-order coupling of attitude error into
/// position through the acceleration term of the position update.
pub fn process_jacobian(s: &FilterState, imu: &ImuSample, dt: f64) -> Mat9 {
    let r = quat_to_rotmat(&s.q);
    let ra = r * skew(&imu.accel);
    let step_rot = quat_to_rotmat(&quat_from_rotvec(&(imu.gyro * dt)));
    let mut f = Mat9::identity();
    f.fixed_view_mut::<3, 3>(0, 3).copy_from(&(Mat3::identity() * dt));
    f.fixed_view_mut::<3, 3>(0, 6).copy_from(&(-ra * (0.5 * dt * dt)));
    f.fixed_view_mut::<3, 3>(3, 6).copy_from(&(-ra * dt));
    f.fixed_view_mut::<3, 3>(6, 6).copy_from(&step_rot.transpose());
    f
}

/// Noise input matrix: process noise enters the velocity and attitude rows.
pub fn noise_jacobian() -> Mat9x6 {
    let mut fw = Mat9x6::zeros();
    fw.fixed_view_mut::<6, 6>(3, 0).copy_from(&Mat6::identity());
    fw
}

/// `C ← F C Fᵀ + F_w Q F_wᵀ` with `Q = I₆ v_p δ²`.
pub fn propagate_covariance(s: &FilterState, fx: &Mat9, dt: f64, params: &FilterParams) -> FilterState {
    let fw = noise_jacobian();
    let q = Mat6::identity() * (params.v_p * dt * dt);
    let cov = fx * s.cov * fx.transpose() + fw * q * fw.transpose();
    FilterState {
        cov: symmetrize(&cov),
        ..*s
    }
}

/// Measurement Jacobian selecting position and attitude error.
pub fn measurement_jacobian() -> Mat6x9 {
    let mut h = Mat6x9::zeros();
    h.fixed_view_mut::<3, 3>(0, 0).copy_from(&Mat3::identity());
    h.fixed_view_mut::<3, 3>(3, 6).copy_from(&Mat3::identity());
    h
}

/// Pose residual `y ⊖ x`: translation difference and local rotation vector.
pub fn innovation(s: &FilterState, y: &Pose6DoF) -> Vec6 {
    let dp = y.p - s.p;
    let dth = rotvec_from_quat(&quat_multiply(&s.q.inverse(), &y.q));
    Vec6::new(dp.x, dp.y, dp.z, dth.x, dth.y, dth.z)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdateOutcome {
    Applied { correction: Vec9 },
    /// Innovation covariance could not be factored; state left unchanged.
    Rejected,
}

/// Pose measurement update with isotropic measurement variance `v_eff`,
/// followed by the error-state reset.
pub fn update(
    s: &FilterState,
    y: &Pose6DoF,
    v_eff: f64,
    params: &FilterParams,
) -> Result<(FilterState, UpdateOutcome), FilterError> {
    if !(v_eff > 0.0) {
        return Err(FilterError::NonPositiveVariance(v_eff));
    }
    let h = measurement_jacobian();
    let r = Mat6::identity() * v_eff;
    let s_mat = h * s.cov * h.transpose() + r;
    let Some(chol) = s_mat.cholesky() else {
        warn!("innovation covariance not positive definite; measurement at t={} rejected", s.t_last);
        return Ok((*s, UpdateOutcome::Rejected));
    };
    // G = C Hᵀ S⁻¹, computed as (S⁻¹ H C)ᵀ using the symmetry of S and C
    let gain: Mat9x6 = chol.solve(&(h * s.cov)).transpose();
    if !gain.iter().all(|x| x.is_finite()) {
        warn!("non-finite Kalman gain; measurement at t={} rejected", s.t_last);
        return Ok((*s, UpdateOutcome::Rejected));
    }
    let dx: Vec9 = gain * innovation(s, y);

    let ikh = Mat9::identity() - gain * h;
    let cov = match params.covariance_form {
        CovarianceForm::Simple => ikh * s.cov,
        CovarianceForm::Joseph => ikh * s.cov * ikh.transpose() + gain * r * gain.transpose(),
    };
    let dtheta: RotVec = dx.fixed_rows::<3>(6).into_owned();
    let corrected = FilterState {
        p: s.p + dx.fixed_rows::<3>(0),
        v: s.v + dx.fixed_rows::<3>(3),
        q: quat_multiply(&s.q, &quat_from_rotvec(&dtheta)),
        cov: symmetrize(&cov),
        t_last: s.t_last,
    };
    Ok((eskf_reset(&corrected, &dtheta), UpdateOutcome::Applied { correction: dx }))
}

/// Reset Jacobian `blockdiag(I, I, I - ½[δθ]×)`.
pub fn reset_jacobian(dtheta: &RotVec) -> Mat9 {
    let mut j = Mat9::identity();
    j.fixed_view_mut::<3, 3>(6, 6)
        .copy_from(&(Mat3::identity() - skew(dtheta) * 0.5));
    j
}

pub fn eskf_reset(s: &FilterState, dtheta: &RotVec) -> FilterState {
    let j = reset_jacobian(dtheta);
    FilterState {
        cov: symmetrize(&(j * s.cov * j.transpose())),
        ..*s
    }
}

pub fn symmetrize(m: &Mat9) -> Mat9 {
    (m + m.transpose()) * 0.5
}

/// Result of asking a variance provider for the measurement variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceReading {
    pub variance: f64,
    /// Whether the lock-on constraint was in force for this reading.
    pub constrained: bool,
    /// Expected measurement the variance was computed against, if any.
    pub expected: Option<Pose6DoF>,
    /// Kernel underflow forced the variance to its cap.
    pub saturated: bool,
}

/// Supplies the measurement variance used for each update.
pub trait VarianceProvider {
    /// `posterior` is the filter state at the previous frame, before prediction.
    fn measurement_variance(&mut self, posterior: &FilterState, frame: &FrameRecord, meas: &Pose6DoF) -> VarianceReading;
}

/// Per-frame record of what the filter did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTrace {
    pub t: f64,
    pub prior: Pose6DoF,
    pub predicted_measurement: Option<Pose6DoF>,
    pub variance: Option<VarianceReading>,
    pub posterior: Pose6DoF,
    pub outcome: Option<UpdateOutcome>,
}

/// One full filter cycle for a frame: predict, propagate, and update when
/// the frame carries a measurement.
pub fn step(
    s: &FilterState,
    frame: &FrameRecord,
    params: &FilterParams,
    gate: &mut dyn VarianceProvider,
) -> Result<(FilterState, StepTrace), FilterError> {
    let dt = frame.t - s.t_last;
    if !frame.imu.is_finite() {
        return Err(FilterError::NonFinite("imu sample"));
    }
    let predicted = predict(s, &frame.imu, dt)?;
    let fx = process_jacobian(s, &frame.imu, dt);
    let mut prior = propagate_covariance(&predicted, &fx, dt, params);
    prior.t_last = frame.t;

    let mut trace = StepTrace {
        t: frame.t,
        prior: prior.pose(),
        predicted_measurement: None,
        variance: None,
        posterior: prior.pose(),
        outcome: None,
    };
    let Some(meas) = frame.meas.as_ref() else {
        return Ok((prior, trace));
    };
    let reading = gate.measurement_variance(s, frame, meas);
    let (post, outcome) = update(&prior, meas, reading.variance, params)?;
    trace.predicted_measurement = Some(prior.pose());
    trace.variance = Some(reading);
    trace.posterior = post.pose();
    trace.outcome = Some(outcome);
    Ok((post, trace))
}
