//! Desk-scale driving simulator: ground truth, IMU, pose measurements and
//! lead-vehicle detections for a scenario.

pub mod imu;
pub mod measurements;
pub mod presets;
pub mod scenario;
pub mod scene;
pub mod trajectory;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraint::VehicleDetection;
use crate::eskf::{ImuSample, Pose6DoF};

pub use imu::synth_imu;
pub use measurements::synth_measurements;
pub use scenario::{Camera, LeadVehicle, NoiseModel, Profile, Scenario, ScenarioKind};
pub use scene::synth_scene;
pub use trajectory::{generate_trajectory, TrajectorySample};

pub const STREAM_IMU: u64 = 1;
pub const STREAM_MEAS: u64 = 2;
pub const STREAM_SCENE: u64 = 3;
/// Per-frame descriptor noise uses `STREAM_DESCRIPTORS + frame index`.
pub const STREAM_DESCRIPTORS: u64 = 1 << 32;

/// Independent random stream for one purpose of one scenario.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Everything known about one camera frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: u64,
    pub t: f64,
    /// Integrated IMU over the interval ending at this frame.
    pub imu: ImuSample,
    #[serde(default)]
    pub meas: Option<Pose6DoF>,
    #[serde(default)]
    pub detections: Vec<VehicleDetection>,
    #[serde(default)]
    pub gt: Option<Pose6DoF>,
    #[serde(default)]
    pub gt_v: Option<[f64; 3]>,
    /// Simulator label: some lead vehicle holds still relative to the ego vehicle.
    #[serde(default)]
    pub truth_constrained: Option<bool>,
}

/// Generates the frame sequence for a scenario. Pure function of `sc`.
pub fn generate_frames(sc: &Scenario) -> Vec<FrameRecord> {
    let traj = generate_trajectory(sc);
    let imu = synth_imu(&traj, sc);
    let meas = synth_measurements(&traj, sc);
    let scene = synth_scene(&traj, sc);
    traj.iter()
        .zip(imu)
        .zip(meas)
        .zip(scene.detections)
        .zip(scene.truth)
        .enumerate()
        .map(|(k, ((((s, imu), meas), detections), truth))| FrameRecord {
            frame_id: k as u64,
            t: s.t,
            imu,
            meas,
            detections,
            gt: Some(s.pose),
            gt_v: Some([s.velocity.x, s.velocity.y, s.velocity.z]),
            truth_constrained: Some(truth),
        })
        .collect()
}
