//! Pose fusion for vehicle localization: an error-state Kalman filter over
//! IMU and 6-DoF pose measurements whose measurement variance is gated by an
//! RBF kernel and tightened while a lead vehicle is locked on in the image.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constraint;
pub mod eskf;
pub mod eval;
pub mod framelog;
pub mod gate;
pub mod geometry;
pub mod par;
pub mod pipeline;
pub mod sim;
