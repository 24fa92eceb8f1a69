//! Multiplicative extended Kalman filter estimating the kinematics of a
//! legged robot's centroid together with its contact wrenches, gyro biases
//! and unmodeled external wrench.
//!
//! Every numeric routine is generic over the scalar (`f32` or `f64`); the
//! aliases at the crate root fix it to `f64`, with `*F32` variants.

#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![cfg_attr(test, allow(clippy::field_reassign_with_default))]

pub mod baseline;
pub mod contact;
pub mod dynamics;
pub mod error;
pub mod lie;
pub mod measurement;
pub mod mekf;
pub mod odometry;
pub mod scalar;
pub mod state;

pub use error::{Error, Result};
pub use scalar::Real;
pub use state::{ContactId, StateLayout};

pub type Rotation = lie::Rotation<f64>;
pub type RotationF32 = lie::Rotation<f32>;
pub type EstimatorState = state::EstimatorState<f64>;
pub type EstimatorStateF32 = state::EstimatorState<f32>;
pub type InputFrame = state::InputFrame<f64>;
pub type InputFrameF32 = state::InputFrame<f32>;
pub type MeasurementFrame = state::MeasurementFrame<f64>;
pub type MeasurementFrameF32 = state::MeasurementFrame<f32>;
pub type ContactInput = state::ContactInput<f64>;
pub type ImuInput = state::ImuInput<f64>;
pub type Wrench = state::Wrench<f64>;
pub type RestPose = state::RestPose<f64>;
pub type StiffnessDamping = contact::StiffnessDamping<f64>;
pub type NoiseConfig = mekf::NoiseConfig<f64>;
pub type Estimator = mekf::Estimator<f64>;
pub type EstimatorF32 = mekf::Estimator<f32>;
pub type LeggedOdometry = baseline::LeggedOdometry<f64>;
