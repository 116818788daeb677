use serde::{Deserialize, Serialize};

/// Piecewise-linear function of time given by `(t, value)` knots, held
/// constant outside the knot range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Profile(pub Vec<(f64, f64)>);

impl Profile {
    pub fn constant(v: f64) -> Self {
        Profile(vec![(0.0, v)])
    }

    pub fn at(&self, t: f64) -> f64 {
        let k = &self.0;
        if t <= k[0].0 {
            return k[0].1;
        }
        let last = k[k.len() - 1];
        if t >= last.0 {
            return last.1;
        }
        let i = k.partition_point(|(tk, _)| *tk <= t);
        let (t0, v0) = k[i - 1];
        let (t1, v1) = k[i];
        if t1 <= t0 {
            return v1;
        }
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    /// Exact integral over `[0, t]`.
    pub fn integral(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let k = &self.0;
        let mut knots: Vec<f64> = k.iter().map(|(tk, _)| *tk).filter(|tk| *tk > 0.0 && *tk < t).collect();
        knots.insert(0, 0.0);
        knots.push(t);
        knots
            .windows(2)
            .map(|w| 0.5 * (self.at(w[0]) + self.at(w[1])) * (w[1] - w[0]))
            .sum()
    }

    fn validate(&self, what: &str) -> Result<(), String> {
        if self.0.is_empty() {
            return Err(format!("{what} profile has no knots"));
        }
        if self.0.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(format!("{what} profile has non-finite knots"));
        }
        if self.0.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(format!("{what} profile knots must be sorted by time"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Straight,
    Curve,
    LaneChange,
    StopAndGo,
    Mixed,
}

/// A vehicle driving ahead on the ego path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadVehicle {
    /// Initial arc-length gap to the ego vehicle, m.
    pub gap_m: f64,
    /// Speed relative to the ego vehicle, m/s (positive pulls away).
    pub rel_speed: Profile,
    /// Lateral offset from the ego path, m (positive to the left).
    pub lateral_offset_m: f64,
    #[serde(default = "default_width")]
    pub width_m: f64,
    #[serde(default = "default_height")]
    pub height_m: f64,
}

fn default_width() -> f64 {
    1.8
}

fn default_height() -> f64 {
    1.4
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fu: f64,
    pub fv: f64,
    pub cu: f64,
    pub cv: f64,
    pub width: u32,
    pub height: u32,
    /// Height of the optical centre above the body origin, m.
    pub mount_height_m: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Self {
            fu: 800.0,
            fv: 800.0,
            cu: 512.0,
            cv: 384.0,
            width: 1024,
            height: 768,
            mount_height_m: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Per-axis translation noise of pose measurements, m.
    pub pnp_t_sigma: f64,
    /// Rotation noise of pose measurements, degrees.
    pub pnp_r_sigma_deg: f64,
    pub outlier_rate: f64,
    /// Outlier displacement magnitude range, m.
    pub outlier_range: (f64, f64),
    /// Accelerometer noise on integrated samples, m/s².
    pub imu_a_sigma: f64,
    /// Gyro noise on integrated samples, rad/s.
    pub imu_w_sigma: f64,
    #[serde(default)]
    pub keypoint_sigma_px: f64,
    #[serde(default = "default_descriptor_sigma")]
    pub descriptor_sigma: f64,
}

fn default_descriptor_sigma() -> f64 {
    0.03
}

impl NoiseModel {
    pub fn zero() -> Self {
        Self {
            pnp_t_sigma: 0.0,
            pnp_r_sigma_deg: 0.0,
            outlier_rate: 0.0,
            outlier_range: (0.0, 0.0),
            imu_a_sigma: 0.0,
            imu_w_sigma: 0.0,
            keypoint_sigma_px: 0.0,
            descriptor_sigma: 0.0,
        }
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            pnp_t_sigma: 0.15,
            pnp_r_sigma_deg: 1.0,
            outlier_rate: 0.1,
            outlier_range: (5.0, 20.0),
            imu_a_sigma: 0.5,
            imu_w_sigma: 0.01,
            keypoint_sigma_px: 0.0,
            descriptor_sigma: 0.03,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub kind: ScenarioKind,
    pub duration_s: f64,
    /// Ego speed, m/s.
    pub speed: Profile,
    /// Path curvature, 1/m.
    pub curvature: Profile,
    #[serde(default)]
    pub lead_vehicles: Vec<LeadVehicle>,
    #[serde(default)]
    pub camera: Camera,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default = "default_spacing")]
    pub frame_spacing_m: f64,
    #[serde(default = "default_max_interval")]
    pub max_frame_interval_s: f64,
    pub seed: u64,
}

fn default_spacing() -> f64 {
    1.5
}

fn default_max_interval() -> f64 {
    1.0
}

impl Scenario {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return Err(format!("duration must be positive, got {}", self.duration_s));
        }
        self.speed.validate("speed")?;
        self.curvature.validate("curvature")?;
        if self.speed.0.iter().any(|(_, v)| *v < 0.0) {
            return Err("speed profile must be non-negative".into());
        }
        let n = &self.noise;
        let sigmas = [
            n.pnp_t_sigma,
            n.pnp_r_sigma_deg,
            n.imu_a_sigma,
            n.imu_w_sigma,
            n.keypoint_sigma_px,
            n.descriptor_sigma,
        ];
        if sigmas.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err("noise standard deviations must be finite and >= 0".into());
        }
        if !(0.0..=1.0).contains(&n.outlier_rate) {
            return Err(format!("outlier rate must lie in [0, 1], got {}", n.outlier_rate));
        }
        let (lo, hi) = n.outlier_range;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return Err(format!("outlier range must satisfy 0 <= lo <= hi, got ({lo}, {hi})"));
        }
        let c = &self.camera;
        if c.width == 0 || c.height == 0 || !(c.fu > 0.0) || !(c.fv > 0.0) {
            return Err("camera needs positive focal lengths and image size".into());
        }
        if !(self.frame_spacing_m > 0.0) || !(self.max_frame_interval_s > 0.0) {
            return Err("frame spacing and maximum frame interval must be positive".into());
        }
        for (i, lv) in self.lead_vehicles.iter().enumerate() {
            lv.rel_speed.validate("relative speed")?;
            if !(lv.width_m > 0.0 && lv.height_m > 0.0) {
                return Err(format!("lead vehicle {i} needs a positive size"));
            }
        }
        Ok(())
    }
}
