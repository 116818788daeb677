//! Quaternion and rotation helpers used by the filter and the evaluator.
//!
//! Quaternions follow the Hamilton convention (w first, right-handed) and
//! represent the body-to-map rotation. Sign canonicalization (`w >= 0`) is
//! only applied where two rotations are compared.

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Quat = UnitQuaternion<f64>;

/// Rotation vector (axis scaled by angle, radians).
pub type RotVec = Vector3<f64>;

const SMALL_ANGLE: f64 = 1e-8;

/// Hamilton product `a ⊗ b`, renormalized.
pub fn quat_multiply(a: &Quat, b: &Quat) -> Quat {
    Quat::new_normalize(a.quaternion() * b.quaternion())
}

pub fn quat_from_rotvec(v: &RotVec) -> Quat {
    let theta = v.norm();
    let q = if theta < SMALL_ANGLE {
        // cos(θ/2) ≈ 1 - θ²/8, sin(θ/2)/θ ≈ 1/2 - θ²/48
        let t2 = theta * theta;
        let s = 0.5 - t2 / 48.0;
        Quaternion::new(1.0 - t2 / 8.0, s * v.x, s * v.y, s * v.z)
    } else {
        let half = 0.5 * theta;
        let s = half.sin() / theta;
        Quaternion::new(half.cos(), s * v.x, s * v.y, s * v.z)
    };
    Quat::new_normalize(q)
}

/// Inverse of [`quat_from_rotvec`]; the result has magnitude in `[0, π]`.
pub fn rotvec_from_quat(q: &Quat) -> RotVec {
    let q = canonical(q);
    let w = q.w;
    let xyz = q.imag();
    let s = xyz.norm();
    if s < SMALL_ANGLE {
        // θ ≈ 2s, so rotvec ≈ 2·xyz
        return xyz * (2.0 / w.max(f64::MIN_POSITIVE));
    }
    let theta = 2.0 * s.atan2(w);
    xyz * (theta / s)
}

pub fn quat_to_rotmat(q: &Quat) -> Mat3 {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Rotation matrix to quaternion. The input must be a proper rotation.
pub fn rotmat_to_quat(m: &Mat3) -> Quat {
    canonical(&Quat::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*m)))
}

/// Skew-symmetric matrix `[a]×` with `[a]× b = a × b`.
pub fn skew(a: &Vec3) -> Mat3 {
    Mat3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// Sign-canonical representative (`w >= 0`).
pub fn canonical(q: &Quat) -> Quat {
    if q.w < 0.0 {
        Quat::new_unchecked(-q.into_inner())
    } else {
        *q
    }
}

/// Angle of the relative rotation between `a` and `b`, in degrees, in `[0, 180]`.
pub fn rotation_angle_between(a: &Quat, b: &Quat) -> f64 {
    let rel = quat_multiply(&a.inverse(), b);
    let s = rel.imag().norm();
    let c = rel.w.abs();
    (2.0 * s.atan2(c)).to_degrees()
}

/// Rotation about the map z axis.
pub fn yaw_quat(yaw: f64) -> Quat {
    quat_from_rotvec(&Vec3::new(0.0, 0.0, yaw))
}

/// Heading angle of the body x axis projected onto the map xy plane.
pub fn yaw_of(q: &Quat) -> f64 {
    let fwd = quat_to_rotmat(q) * Vec3::x();
    fwd.y.atan2(fwd.x)
}

/// Quaternion (de)serialization as a `[w, x, y, z]` array.
pub mod serde_quat {
    use super::Quat;
    use nalgebra::Quaternion;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(q: &Quat, s: S) -> Result<S::Ok, S::Error> {
        [q.w, q.i, q.j, q.k].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Quat, D::Error> {
        let [w, x, y, z] = <[f64; 4]>::deserialize(d)?;
        let q = Quaternion::new(w, x, y, z);
        if !(q.norm() > 0.0) || !q.coords.iter().all(|c| c.is_finite()) {
            return Err(serde::de::Error::custom("quaternion must be finite and non-zero"));
        }
        // keep already-unit input bit-exact so logs round-trip
        if (q.norm() - 1.0).abs() < 1e-12 {
            Ok(Quat::new_unchecked(q))
        } else {
            Ok(Quat::new_normalize(q))
        }
    }
}

/// Vector (de)serialization as a plain `[x, y, z]` array.
pub mod serde_vec3 {
    use super::Vec3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vec3, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y, v.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec3, D::Error> {
        let [x, y, z] = <[f64; 3]>::deserialize(d)?;
        Ok(Vec3::new(x, y, z))
    }
}
