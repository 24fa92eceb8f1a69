//! State-transition model: Newton-Euler accelerations and kinematic integration.

use nalgebra::Vector3;

use crate::contact::{predicted_wrench, wrench_at_centroid};
use crate::error::{Error, Result};
use crate::lie::skew;
use crate::scalar::{lit, Real};
use crate::state::{CentroidKinematics, EstimatorState, InputFrame};

/// Standard gravity (m/s²), world z up.
pub const GRAVITY: f64 = 9.81;

/// Local accelerations of the centroid frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CentroidAccel<T: Real> {
    pub linear: Vector3<T>,
    pub angular: Vector3<T>,
}

/// Sum of the contact forces of the state, centroid frame.
fn contact_force_sum<T: Real>(x: &EstimatorState<T>, u: &InputFrame<T>) -> Vector3<T> {
    x.contacts
        .iter()
        .zip(&u.contacts)
        .fold(Vector3::zeros(), |acc, (c, ci)| acc + ci.orientation * c.wrench.force)
}

/// Gravity expressed in the centroid frame, `g₀·Rᵀe_z`.
pub fn local_gravity<T: Real>(k: &CentroidKinematics<T>) -> Vector3<T> {
    k.orientation.transpose() * Vector3::z() * lit::<T>(GRAVITY)
}

/// Linear acceleration of the centroid, local frame.
pub fn linear_acceleration<T: Real>(x: &EstimatorState<T>, u: &InputFrame<T>) -> Vector3<T> {
    let f = u.residual.force + x.external.force + contact_force_sum(x, u);
    f / u.mass - local_gravity(&x.kinematics)
}

/// Total contact torque around the centroid, centroid frame.
pub fn contact_torque<T: Real>(x: &EstimatorState<T>, u: &InputFrame<T>) -> Vector3<T> {
    x.contacts
        .iter()
        .zip(&u.contacts)
        .fold(Vector3::zeros(), |acc, (c, ci)| {
            acc + wrench_at_centroid(ci, &c.wrench).torque
        })
}

/// Angular acceleration of the centroid, local frame.
pub fn angular_acceleration<T: Real>(x: &EstimatorState<T>, u: &InputFrame<T>) -> Result<Vector3<T>> {
    let w = &x.kinematics.angular_velocity;
    let rhs = u.residual.torque + contact_torque(x, u) + x.external.torque
        - u.inertia_dot * w
        - u.momentum_dot
        - skew(w) * (u.inertia * w + u.momentum);
    u.inertia
        .cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or(Error::SingularInertia)
}

pub fn accelerations<T: Real>(x: &EstimatorState<T>, u: &InputFrame<T>) -> Result<CentroidAccel<T>> {
    Ok(CentroidAccel {
        linear: linear_acceleration(x, u),
        angular: angular_acceleration(x, u)?,
    })
}

/// Integrates the centroid kinematics over `dt` with constant local accelerations.
pub fn integrate_kinematics<T: Real>(
    k: &CentroidKinematics<T>,
    acc: &CentroidAccel<T>,
    dt: T,
) -> CentroidKinematics<T> {
    let half_dt2 = dt * dt * lit(0.5);
    let sw = skew(&k.angular_velocity);
    let sw2 = sw * sw;
    let p = k.position - (sw * k.position) * dt - (skew(&acc.angular) * k.position) * half_dt2
        + (sw2 * k.position) * half_dt2
        + k.linear_velocity * dt
        - (sw * k.linear_velocity) * (dt * dt)
        + acc.linear * half_dt2;
    CentroidKinematics {
        position: p,
        orientation: k
            .orientation
            .boxplus(&(k.angular_velocity * dt + acc.angular * half_dt2)),
        linear_velocity: k.linear_velocity + (acc.linear - sw * k.linear_velocity) * dt,
        angular_velocity: k.angular_velocity + acc.angular * dt,
    }
}

/// `f(x, u)`: one prediction step of length `dt`.
pub fn state_transition<T: Real>(x: &EstimatorState<T>, u: &InputFrame<T>, dt: T) -> Result<EstimatorState<T>> {
    transition(x, u, u, dt)
}

/// Like [`state_transition`], with the contact geometry used for the predicted
/// wrenches taken from `next`, the input frame of the time the prediction lands on.
pub fn transition<T: Real>(
    x: &EstimatorState<T>,
    u: &InputFrame<T>,
    next: &InputFrame<T>,
    dt: T,
) -> Result<EstimatorState<T>> {
    u.check_matches(x)?;
    next.check_matches(x)?;
    let acc = accelerations(x, u)?;
    let mut out = x.clone();
    out.kinematics = integrate_kinematics(&x.kinematics, &acc, dt);
    for (c, ci) in out.contacts.iter_mut().zip(&next.contacts) {
        c.wrench = predicted_wrench(&out.kinematics, ci, &c.rest);
    }
    Ok(out)
}
