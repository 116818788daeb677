//! Dynamic measurement variance from an RBF kernel over the gap between the
//! expected and the actual next measurement.
//!
//! The next measurement is expected at `M̄ = M_k + δ V_k`. Each translation
//! axis contributes `1/K - 1` with `K = exp(-d²/2σ²)`, so a measurement that
//! lands where the motion model says it should keeps the base variance and
//! anything else is inflated. While the vehicle is locked on to a lead
//! vehicle the x/y bandwidths shrink by `α`, tightening the gate. The z
//! bandwidth never shrinks because vertical motion is tied to the road.

use serde::{Deserialize, Serialize};

use crate::eskf::{FilterState, Pose6DoF, VarianceProvider, VarianceReading};
use crate::geometry::Vec3;
use crate::sim::FrameRecord;

/// Upper bound on the dynamic variance once a kernel underflows.
pub const VARIANCE_CAP: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub sigma_z: f64,
    pub alpha: f64,
    pub v_m: f64,
}

impl Default for GateParams {
    fn default() -> Self {
        Self {
            sigma_x: 2.6,
            sigma_y: 2.6,
            sigma_z: 2.1,
            alpha: 2.0,
            v_m: 0.005,
        }
    }
}

impl GateParams {
    pub fn validate(&self) -> Result<(), String> {
        let sig = [self.sigma_x, self.sigma_y, self.sigma_z];
        if !sig.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(format!("kernel bandwidths must be positive, got {sig:?}"));
        }
        if !(self.alpha >= 1.0) {
            return Err(format!("alpha must be >= 1, got {}", self.alpha));
        }
        if !(self.v_m > 0.0) {
            return Err(format!("v_m must be positive, got {}", self.v_m));
        }
        Ok(())
    }

    /// Bandwidths in effect, with x/y shrunk by `alpha` under constraint.
    pub fn bandwidths(&self, constrained: bool) -> Vec3 {
        let shrink = if constrained { self.alpha } else { 1.0 };
        Vec3::new(self.sigma_x / shrink, self.sigma_y / shrink, self.sigma_z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementPrediction {
    pub expected: Pose6DoF,
    pub previous: Pose6DoF,
    pub velocity: Vec3,
    pub dt: f64,
}

/// Constant-velocity extrapolation of the last measurement. Attitude is
/// carried over unchanged.
pub fn predict_measurement(previous: &Pose6DoF, velocity: &Vec3, dt: f64) -> MeasurementPrediction {
    MeasurementPrediction {
        expected: Pose6DoF::new(previous.p + velocity * dt, previous.q),
        previous: *previous,
        velocity: *velocity,
        dt,
    }
}

pub fn rbf_kernel(d: f64, sigma: f64) -> f64 {
    (-(d * d) / (2.0 * sigma * sigma)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicVariance {
    pub value: f64,
    pub kernels: Vec3,
    /// A kernel underflowed and the value was clamped to [`VARIANCE_CAP`].
    pub saturated: bool,
}

/// `v'_m = v_m + Σ_axis (1/K_axis - 1)` over the translation displacement.
pub fn dynamic_variance(actual: &Pose6DoF, expected: &Pose6DoF, params: &GateParams, constrained: bool) -> DynamicVariance {
    let d = actual.p - expected.p;
    let bw = params.bandwidths(constrained);
    let kernels = Vec3::new(rbf_kernel(d.x, bw.x), rbf_kernel(d.y, bw.y), rbf_kernel(d.z, bw.z));
    let mut value = params.v_m;
    let mut saturated = false;
    for k in kernels.iter() {
        if *k <= 0.0 || !k.is_finite() {
            saturated = true;
            break;
        }
        value += 1.0 / k - 1.0;
    }
    if saturated || !(value < VARIANCE_CAP) {
        return DynamicVariance {
            value: VARIANCE_CAP,
            kernels,
            saturated: true,
        };
    }
    DynamicVariance {
        value,
        kernels,
        saturated,
    }
}

/// Fixed measurement variance, the plain filter baseline.
#[derive(Debug, Clone, Copy)]
pub struct ConstantVariance(pub f64);

impl VarianceProvider for ConstantVariance {
    fn measurement_variance(&mut self, _: &FilterState, _: &FrameRecord, _: &Pose6DoF) -> VarianceReading {
        VarianceReading {
            variance: self.0,
            constrained: false,
            expected: None,
            saturated: false,
        }
    }
}

/// Stateful RBF gate. Remembers the last raw measurement and reads the
/// lock-on flag set by the caller before each frame.
#[derive(Debug, Clone)]
pub struct AdaptiveGate {
    params: GateParams,
    last: Option<(Pose6DoF, f64)>,
    constrained: bool,
}

impl AdaptiveGate {
    pub fn new(params: GateParams) -> Self {
        Self {
            params,
            last: None,
            constrained: false,
        }
    }

    /// Seeds the gate with the measurement the filter was initialized from.
    pub fn with_last(mut self, meas: Pose6DoF, t: f64) -> Self {
        self.last = Some((meas, t));
        self
    }

    pub fn set_constrained(&mut self, constrained: bool) {
        self.constrained = constrained;
    }

    pub fn params(&self) -> &GateParams {
        &self.params
    }
}

impl VarianceProvider for AdaptiveGate {
    fn measurement_variance(&mut self, posterior: &FilterState, frame: &FrameRecord, meas: &Pose6DoF) -> VarianceReading {
        let reading = match self.last {
            Some((prev, t_prev)) if frame.t > t_prev => {
                let pred = predict_measurement(&prev, &posterior.v, frame.t - t_prev);
                let dv = dynamic_variance(meas, &pred.expected, &self.params, self.constrained);
                VarianceReading {
                    variance: dv.value,
                    constrained: self.constrained,
                    expected: Some(pred.expected),
                    saturated: dv.saturated,
                }
            }
            _ => VarianceReading {
                variance: self.params.v_m,
                constrained: self.constrained,
                expected: None,
                saturated: false,
            },
        };
        self.last = Some((*meas, frame.t));
        reading
    }
}
