//! Measurement model `g(x, u)`.
//!
//! Stacking order: every available IMU (accelerometer then gyrometer), then
//! every available contact wrench (force then torque), contact ids ascending.

use nalgebra::{DVector, Vector3};

use crate::dynamics::{accelerations, local_gravity, CentroidAccel};
use crate::error::{Error, Result};
use crate::lie::skew;
use crate::scalar::{lit, Real};
use crate::state::{ContactId, EstimatorState, ImuInput, InputFrame, MeasurementFrame, Wrench};

/// Gyrometer reading predicted for IMU `j`.
pub fn predict_gyro<T: Real>(x: &EstimatorState<T>, j: usize, imu: &ImuInput<T>) -> Result<Vector3<T>> {
    let bias = x.gyro_biases.get(j).ok_or(Error::UnknownImu {
        index: j,
        count: x.gyro_biases.len(),
    })?;
    Ok(imu.orientation.transpose() * (imu.angular_velocity + x.kinematics.angular_velocity) + bias)
}

/// Accelerometer reading predicted for an IMU, given the centroid accelerations.
pub fn predict_accelerometer_with<T: Real>(
    x: &EstimatorState<T>,
    acc: &CentroidAccel<T>,
    imu: &ImuInput<T>,
) -> Vector3<T> {
    let sw = skew(&x.kinematics.angular_velocity);
    let specific = (skew(&acc.angular) + sw * sw) * imu.position
        + sw * imu.linear_velocity * lit::<T>(2.0)
        + local_gravity(&x.kinematics)
        + acc.linear
        + imu.linear_acceleration;
    imu.orientation.transpose() * specific
}

/// Accelerometer reading predicted for IMU `j`; accelerations come from the
/// Newton-Euler model of the state.
pub fn predict_accelerometer<T: Real>(x: &EstimatorState<T>, u: &InputFrame<T>, j: usize) -> Result<Vector3<T>> {
    let imu = u.imus.get(j).ok_or(Error::UnknownImu {
        index: j,
        count: u.imus.len(),
    })?;
    Ok(predict_accelerometer_with(x, &accelerations(x, u)?, imu))
}

/// Wrench sensor reading predicted for a contact: its estimated wrench.
pub fn predict_contact_wrench<T: Real>(x: &EstimatorState<T>, id: ContactId) -> Result<Wrench<T>> {
    x.contact(id).map(|c| c.wrench).ok_or(Error::UnknownContact(id))
}

/// Which sensors produced a sample this step.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SensorMask {
    pub imus: Vec<usize>,
    pub wrenches: Vec<ContactId>,
}

impl SensorMask {
    pub fn of<T: Real>(y: &MeasurementFrame<T>) -> Self {
        Self {
            imus: y.imus.iter().enumerate().filter_map(|(j, r)| r.map(|_| j)).collect(),
            wrenches: y.wrenches.keys().copied().collect(),
        }
    }

    pub fn dim(&self) -> usize {
        6 * (self.imus.len() + self.wrenches.len())
    }

    pub fn is_empty(&self) -> bool {
        self.dim() == 0
    }
}

fn put<T: Real>(out: &mut DVector<T>, at: &mut usize, v: &Vector3<T>) {
    out.fixed_rows_mut::<3>(*at).copy_from(v);
    *at += 3;
}

/// Stacked prediction of the sensors selected by `mask`.
pub fn predict_measurements<T: Real>(
    x: &EstimatorState<T>,
    u: &InputFrame<T>,
    mask: &SensorMask,
) -> Result<DVector<T>> {
    let mut out = DVector::zeros(mask.dim());
    let mut at = 0;
    if !mask.imus.is_empty() {
        let acc = accelerations(x, u)?;
        for &j in &mask.imus {
            let imu = u.imus.get(j).ok_or(Error::UnknownImu {
                index: j,
                count: u.imus.len(),
            })?;
            put(&mut out, &mut at, &predict_accelerometer_with(x, &acc, imu));
            put(&mut out, &mut at, &predict_gyro(x, j, imu)?);
        }
    }
    for &id in &mask.wrenches {
        let w = predict_contact_wrench(x, id)?;
        put(&mut out, &mut at, &w.force);
        put(&mut out, &mut at, &w.torque);
    }
    Ok(out)
}

/// Stacks the available readings in the same order as [`predict_measurements`].
pub fn stack_measurements<T: Real>(y: &MeasurementFrame<T>) -> DVector<T> {
    let mut out = DVector::zeros(y.dim());
    let mut at = 0;
    for r in y.imus.iter().flatten() {
        put(&mut out, &mut at, &r.accelerometer);
        put(&mut out, &mut at, &r.gyrometer);
    }
    for w in y.wrenches.values() {
        put(&mut out, &mut at, &w.force);
        put(&mut out, &mut at, &w.torque);
    }
    out
}

/// Per-row noise variances for the sensors of `mask`.
pub fn measurement_variances<T: Real>(
    mask: &SensorMask,
    accelerometer: &Vector3<T>,
    gyro: &Vector3<T>,
    force: &Vector3<T>,
    torque: &Vector3<T>,
) -> DVector<T> {
    let mut out = DVector::zeros(mask.dim());
    let mut at = 0;
    for _ in &mask.imus {
        put(&mut out, &mut at, accelerometer);
        put(&mut out, &mut at, gyro);
    }
    for _ in &mask.wrenches {
        put(&mut out, &mut at, force);
        put(&mut out, &mut at, torque);
    }
    out
}
