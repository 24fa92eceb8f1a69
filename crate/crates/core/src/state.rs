//! State, input and measurement containers of the estimator.
//!
//! The state lives on the product group `R^3 × SO(3) × R^3 × R^3 × (R^3)^nI ×
//! R^3 × R^3 × (R^3 × SO(3) × R^3 × R^3)^nc`. Its tangent space is indexed by
//! [`StateLayout`] in a fixed order: centroid position, orientation, linear
//! velocity, angular velocity, gyro biases, external force, external torque,
//! then one 12-block per contact (rest position, rest orientation, force,
//! torque), contacts sorted by id.

use core::fmt;
use core::ops::Range;
use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::contact::StiffnessDamping;
use crate::error::{Error, Result};
use crate::lie::Rotation;
use crate::scalar::{lit, Real};

/// Stable identifier of a contact (usually the limb it belongs to).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ContactId(pub u32);

impl fmt::Display for ContactId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Wrench<T: Real> {
    pub force: Vector3<T>,
    pub torque: Vector3<T>,
}

impl<T: Real> Wrench<T> {
    pub fn new(force: Vector3<T>, torque: Vector3<T>) -> Self {
        Self { force, torque }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }
}

/// World pose of a contact's rest frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RestPose<T: Real> {
    pub position: Vector3<T>,
    pub orientation: Rotation<T>,
}

impl<T: Real> RestPose<T> {
    pub fn new(position: Vector3<T>, orientation: Rotation<T>) -> Self {
        Self { position, orientation }
    }
}

/// Estimated quantities attached to one contact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactState<T: Real> {
    pub id: ContactId,
    pub rest: RestPose<T>,
    /// Reaction wrench expressed in the contact frame.
    pub wrench: Wrench<T>,
}

/// Centroid frame kinematics. Everything but the orientation is expressed
/// in the centroid (local) frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CentroidKinematics<T: Real> {
    /// `Rᵀ p` with `p` the world position of the centroid.
    pub position: Vector3<T>,
    pub orientation: Rotation<T>,
    pub linear_velocity: Vector3<T>,
    pub angular_velocity: Vector3<T>,
}

impl<T: Real> CentroidKinematics<T> {
    /// Builds local kinematics from world-frame position and velocities.
    pub fn from_world(
        position: &Vector3<T>,
        orientation: Rotation<T>,
        linear_velocity: &Vector3<T>,
        angular_velocity: &Vector3<T>,
    ) -> Self {
        let rt = orientation.transpose();
        Self {
            position: &rt * position,
            orientation,
            linear_velocity: &rt * linear_velocity,
            angular_velocity: &rt * angular_velocity,
        }
    }

    pub fn world_position(&self) -> Vector3<T> {
        self.orientation * self.position
    }

    pub fn world_linear_velocity(&self) -> Vector3<T> {
        self.orientation * self.linear_velocity
    }

    pub fn world_angular_velocity(&self) -> Vector3<T> {
        self.orientation * self.angular_velocity
    }
}

/// Full estimator state.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState<T: Real> {
    pub kinematics: CentroidKinematics<T>,
    pub gyro_biases: Vec<Vector3<T>>,
    /// Unmodeled external wrench at the centroid, centroid frame.
    pub external: Wrench<T>,
    /// Sorted by id.
    pub contacts: Vec<ContactState<T>>,
}

/// Index map of the state tangent space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub n_imu: usize,
    pub n_contacts: usize,
}

impl StateLayout {
    pub const POSITION: usize = 0;
    pub const ORIENTATION: usize = 3;
    pub const LINEAR_VELOCITY: usize = 6;
    pub const ANGULAR_VELOCITY: usize = 9;
    const BIASES: usize = 12;

    /// Offsets inside a contact block.
    pub const REST_POSITION: usize = 0;
    pub const REST_ORIENTATION: usize = 3;
    pub const FORCE: usize = 6;
    pub const TORQUE: usize = 9;
    pub const CONTACT_DIM: usize = 12;

    pub fn new(n_imu: usize, n_contacts: usize) -> Self {
        Self { n_imu, n_contacts }
    }

    pub fn dim(&self) -> usize {
        Self::BIASES + 3 * self.n_imu + 6 + Self::CONTACT_DIM * self.n_contacts
    }

    pub fn gyro_bias(&self, j: usize) -> usize {
        Self::BIASES + 3 * j
    }

    pub fn external_force(&self) -> usize {
        Self::BIASES + 3 * self.n_imu
    }

    pub fn external_torque(&self) -> usize {
        self.external_force() + 3
    }

    /// First index of the `i`-th contact block.
    pub fn contact(&self, i: usize) -> usize {
        self.external_torque() + 3 + Self::CONTACT_DIM * i
    }

    pub fn contact_range(&self, i: usize) -> Range<usize> {
        let s = self.contact(i);
        s..s + Self::CONTACT_DIM
    }

    /// Start indices of every SO(3) block.
    pub fn rotation_blocks(&self) -> impl Iterator<Item = usize> + '_ {
        core::iter::once(Self::ORIENTATION)
            .chain((0..self.n_contacts).map(move |i| self.contact(i) + Self::REST_ORIENTATION))
    }

    /// Every named 3-block with its start index, in tangent order.
    pub fn blocks(&self) -> Vec<(StateBlock, usize)> {
        let mut out = vec![
            (StateBlock::Position, Self::POSITION),
            (StateBlock::Orientation, Self::ORIENTATION),
            (StateBlock::LinearVelocity, Self::LINEAR_VELOCITY),
            (StateBlock::AngularVelocity, Self::ANGULAR_VELOCITY),
        ];
        out.extend((0..self.n_imu).map(|j| (StateBlock::GyroBias(j), self.gyro_bias(j))));
        out.push((StateBlock::ExternalForce, self.external_force()));
        out.push((StateBlock::ExternalTorque, self.external_torque()));
        for i in 0..self.n_contacts {
            let c = self.contact(i);
            out.push((StateBlock::RestPosition(i), c + Self::REST_POSITION));
            out.push((StateBlock::RestOrientation(i), c + Self::REST_ORIENTATION));
            out.push((StateBlock::ContactForce(i), c + Self::FORCE));
            out.push((StateBlock::ContactTorque(i), c + Self::TORQUE));
        }
        out
    }
}

/// Symbol occupying a 3-block of the tangent space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateBlock {
    Position,
    Orientation,
    LinearVelocity,
    AngularVelocity,
    GyroBias(usize),
    ExternalForce,
    ExternalTorque,
    RestPosition(usize),
    RestOrientation(usize),
    ContactForce(usize),
    ContactTorque(usize),
}

#[inline]
fn block<T: Real>(v: &DVector<T>, start: usize) -> Vector3<T> {
    Vector3::new(v[start], v[start + 1], v[start + 2])
}

#[inline]
fn set_block<T: Real>(v: &mut DVector<T>, start: usize, b: &Vector3<T>) {
    v[start] = b.x;
    v[start + 1] = b.y;
    v[start + 2] = b.z;
}

impl<T: Real> EstimatorState<T> {
    /// State at rest at the world origin, with `n_imu` zero biases and no contacts.
    pub fn new(n_imu: usize) -> Self {
        Self {
            kinematics: CentroidKinematics::default(),
            gyro_biases: vec![Vector3::zeros(); n_imu],
            external: Wrench::zero(),
            contacts: Vec::new(),
        }
    }

    pub fn layout(&self) -> StateLayout {
        StateLayout::new(self.gyro_biases.len(), self.contacts.len())
    }

    pub fn tangent_dim(&self) -> usize {
        self.layout().dim()
    }

    pub fn contact_index(&self, id: ContactId) -> Option<usize> {
        self.contacts.binary_search_by_key(&id, |c| c.id).ok()
    }

    pub fn contact(&self, id: ContactId) -> Option<&ContactState<T>> {
        self.contact_index(id).map(|i| &self.contacts[i])
    }

    /// `x ⊞ δ`: vector blocks add, rotation blocks compose on the right with `Exp`.
    pub fn boxplus(&self, delta: &DVector<T>) -> Result<Self> {
        let layout = self.layout();
        if delta.len() != layout.dim() {
            return Err(Error::DimensionMismatch {
                expected: layout.dim(),
                got: delta.len(),
            });
        }
        let mut out = self.clone();
        let k = &mut out.kinematics;
        k.position += block(delta, StateLayout::POSITION);
        k.orientation = k.orientation.boxplus(&block(delta, StateLayout::ORIENTATION));
        k.linear_velocity += block(delta, StateLayout::LINEAR_VELOCITY);
        k.angular_velocity += block(delta, StateLayout::ANGULAR_VELOCITY);
        for (j, b) in out.gyro_biases.iter_mut().enumerate() {
            *b += block(delta, layout.gyro_bias(j));
        }
        out.external.force += block(delta, layout.external_force());
        out.external.torque += block(delta, layout.external_torque());
        for (i, c) in out.contacts.iter_mut().enumerate() {
            let s = layout.contact(i);
            c.rest.position += block(delta, s + StateLayout::REST_POSITION);
            c.rest.orientation = c
                .rest
                .orientation
                .boxplus(&block(delta, s + StateLayout::REST_ORIENTATION));
            c.wrench.force += block(delta, s + StateLayout::FORCE);
            c.wrench.torque += block(delta, s + StateLayout::TORQUE);
        }
        Ok(out)
    }

    /// `x ⊞ (h · e_index)`, a single-coordinate perturbation. Equivalent to
    /// [`EstimatorState::boxplus`] with a one-hot vector, without allocating it.
    pub fn boxplus_axis(&self, index: usize, h: T) -> Self {
        let layout = self.layout();
        let mut out = self.clone();
        let mut e = Vector3::zeros();
        e[index % 3] = h;
        let start = index - index % 3;
        let k = &mut out.kinematics;
        match start {
            StateLayout::POSITION => k.position += e,
            StateLayout::ORIENTATION => k.orientation = k.orientation.boxplus(&e),
            StateLayout::LINEAR_VELOCITY => k.linear_velocity += e,
            StateLayout::ANGULAR_VELOCITY => k.angular_velocity += e,
            s if s < layout.external_force() => out.gyro_biases[(s - layout.gyro_bias(0)) / 3] += e,
            s if s == layout.external_force() => out.external.force += e,
            s if s == layout.external_torque() => out.external.torque += e,
            s => {
                let rel = s - layout.contact(0);
                let c = &mut out.contacts[rel / StateLayout::CONTACT_DIM];
                match rel % StateLayout::CONTACT_DIM {
                    StateLayout::REST_POSITION => c.rest.position += e,
                    StateLayout::REST_ORIENTATION => c.rest.orientation = c.rest.orientation.boxplus(&e),
                    StateLayout::FORCE => c.wrench.force += e,
                    _ => c.wrench.torque += e,
                }
            }
        }
        out
    }

    /// `self ⊟ other`, such that `other ⊞ (self ⊟ other) == self`.
    pub fn boxminus(&self, other: &Self) -> Result<DVector<T>> {
        self.check_same_structure(other)?;
        let layout = self.layout();
        let mut d = DVector::zeros(layout.dim());
        let (a, b) = (&self.kinematics, &other.kinematics);
        set_block(&mut d, StateLayout::POSITION, &(a.position - b.position));
        set_block(
            &mut d,
            StateLayout::ORIENTATION,
            &a.orientation.boxminus(&b.orientation),
        );
        set_block(
            &mut d,
            StateLayout::LINEAR_VELOCITY,
            &(a.linear_velocity - b.linear_velocity),
        );
        set_block(
            &mut d,
            StateLayout::ANGULAR_VELOCITY,
            &(a.angular_velocity - b.angular_velocity),
        );
        for (j, (ba, bb)) in self.gyro_biases.iter().zip(&other.gyro_biases).enumerate() {
            set_block(&mut d, layout.gyro_bias(j), &(ba - bb));
        }
        set_block(
            &mut d,
            layout.external_force(),
            &(self.external.force - other.external.force),
        );
        set_block(
            &mut d,
            layout.external_torque(),
            &(self.external.torque - other.external.torque),
        );
        for (i, (ca, cb)) in self.contacts.iter().zip(&other.contacts).enumerate() {
            let s = layout.contact(i);
            set_block(
                &mut d,
                s + StateLayout::REST_POSITION,
                &(ca.rest.position - cb.rest.position),
            );
            set_block(
                &mut d,
                s + StateLayout::REST_ORIENTATION,
                &ca.rest.orientation.boxminus(&cb.rest.orientation),
            );
            set_block(&mut d, s + StateLayout::FORCE, &(ca.wrench.force - cb.wrench.force));
            set_block(&mut d, s + StateLayout::TORQUE, &(ca.wrench.torque - cb.wrench.torque));
        }
        Ok(d)
    }

    fn check_same_structure(&self, other: &Self) -> Result<()> {
        if self.gyro_biases.len() != other.gyro_biases.len() {
            return Err(Error::StructureMismatch(format!(
                "{} vs {} IMUs",
                self.gyro_biases.len(),
                other.gyro_biases.len()
            )));
        }
        let same_ids = self.contacts.len() == other.contacts.len()
            && self.contacts.iter().zip(&other.contacts).all(|(a, b)| a.id == b.id);
        if !same_ids {
            return Err(Error::StructureMismatch("contact sets differ".into()));
        }
        Ok(())
    }

    /// True when every component is finite.
    pub fn is_finite(&self) -> bool {
        let fin = |v: &Vector3<T>| v.iter().all(|x| x.is_finite());
        let k = &self.kinematics;
        fin(&k.position)
            && fin(&k.linear_velocity)
            && fin(&k.angular_velocity)
            && k.orientation.wxyz().iter().all(|x| x.is_finite())
            && self.gyro_biases.iter().all(fin)
            && fin(&self.external.force)
            && fin(&self.external.torque)
            && self.contacts.iter().all(|c| {
                fin(&c.rest.position)
                    && fin(&c.wrench.force)
                    && fin(&c.wrench.torque)
                    && c.rest.orientation.wxyz().iter().all(|x| x.is_finite())
            })
    }
}

/// Diagonal covariance blocks of one contact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactBlocks<T: Real> {
    pub rest_position: Vector3<T>,
    pub rest_orientation: Vector3<T>,
    pub force: Vector3<T>,
    pub torque: Vector3<T>,
}

impl<T: Real> ContactBlocks<T> {
    pub fn zero() -> Self {
        Self {
            rest_position: Vector3::zeros(),
            rest_orientation: Vector3::zeros(),
            force: Vector3::zeros(),
            torque: Vector3::zeros(),
        }
    }

    /// Writes the blocks on the diagonal of `p` starting at `start`.
    pub fn write_diagonal(&self, p: &mut DMatrix<T>, start: usize) {
        let parts = [
            (StateLayout::REST_POSITION, &self.rest_position),
            (StateLayout::REST_ORIENTATION, &self.rest_orientation),
            (StateLayout::FORCE, &self.force),
            (StateLayout::TORQUE, &self.torque),
        ];
        for (off, v) in parts {
            for a in 0..3 {
                p[(start + off + a, start + off + a)] = v[a];
            }
        }
    }
}

/// Inserts a contact into the state and grows the covariance.
///
/// The rest pose comes from the contact's initial guess (`Ξ`'s impulsional
/// part); the wrench is seeded with `measured` when a collocated sensor is
/// available, zero otherwise. The new covariance block is `blocks` on the
/// diagonal with zero cross-covariance.
pub fn add_contact<T: Real>(
    x: &mut EstimatorState<T>,
    p: &mut DMatrix<T>,
    input: &ContactInput<T>,
    measured: Option<&Wrench<T>>,
    blocks: &ContactBlocks<T>,
) -> Result<()> {
    let id = input.id;
    let pos = match x.contacts.binary_search_by_key(&id, |c| c.id) {
        Ok(_) => return Err(Error::DuplicateContact(id)),
        Err(pos) => pos,
    };
    let rest = input.initial_rest_pose.ok_or(Error::MissingRestGuess(id))?;
    let layout = x.layout();
    if p.nrows() != layout.dim() || p.ncols() != layout.dim() {
        return Err(Error::DimensionMismatch {
            expected: layout.dim(),
            got: p.nrows(),
        });
    }
    let start = layout.contact(pos);
    let grown = core::mem::replace(p, DMatrix::zeros(0, 0))
        .insert_rows(start, StateLayout::CONTACT_DIM, T::zero())
        .insert_columns(start, StateLayout::CONTACT_DIM, T::zero());
    *p = grown;
    blocks.write_diagonal(p, start);
    x.contacts.insert(
        pos,
        ContactState {
            id,
            rest,
            wrench: measured.copied().unwrap_or_else(Wrench::zero),
        },
    );
    Ok(())
}

/// Removes a contact, deleting its rows and columns from the covariance.
pub fn remove_contact<T: Real>(
    x: &mut EstimatorState<T>,
    p: &mut DMatrix<T>,
    id: ContactId,
) -> Result<ContactState<T>> {
    let pos = x.contact_index(id).ok_or(Error::UnknownContact(id))?;
    let layout = x.layout();
    if p.nrows() != layout.dim() || p.ncols() != layout.dim() {
        return Err(Error::DimensionMismatch {
            expected: layout.dim(),
            got: p.nrows(),
        });
    }
    let start = layout.contact(pos);
    let shrunk = core::mem::replace(p, DMatrix::zeros(0, 0))
        .remove_rows(start, StateLayout::CONTACT_DIM)
        .remove_columns(start, StateLayout::CONTACT_DIM);
    *p = shrunk;
    Ok(x.contacts.remove(pos))
}

/// Per-contact inputs `Ξ_i`: kinematics of the contact in the centroid frame
/// (from joint encoders), the contact flexibility, and the rest pose guess
/// given on the creation step only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactInput<T: Real> {
    pub id: ContactId,
    pub initial_rest_pose: Option<RestPose<T>>,
    pub position: Vector3<T>,
    pub orientation: Rotation<T>,
    pub linear_velocity: Vector3<T>,
    pub angular_velocity: Vector3<T>,
    pub stiffness: StiffnessDamping<T>,
}

impl<T: Real> ContactInput<T> {
    /// Static contact at `position`/`orientation` in the centroid frame.
    pub fn fixed(
        id: ContactId,
        position: Vector3<T>,
        orientation: Rotation<T>,
        stiffness: StiffnessDamping<T>,
    ) -> Self {
        Self {
            id,
            initial_rest_pose: None,
            position,
            orientation,
            linear_velocity: Vector3::zeros(),
            angular_velocity: Vector3::zeros(),
            stiffness,
        }
    }
}

/// Per-IMU inputs `Ψ_j`: sensor kinematics in the centroid frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImuInput<T: Real> {
    pub position: Vector3<T>,
    pub orientation: Rotation<T>,
    pub linear_velocity: Vector3<T>,
    pub angular_velocity: Vector3<T>,
    pub linear_acceleration: Vector3<T>,
}

/// Inputs `u` of one filter step.
#[derive(Debug, Clone, PartialEq)]
pub struct InputFrame<T: Real> {
    /// Total mass (kg).
    pub mass: T,
    /// Inertia at the centroid, centroid frame.
    pub inertia: Matrix3<T>,
    pub inertia_dot: Matrix3<T>,
    /// Angular momentum not captured by `inertia · ω`, centroid frame.
    pub momentum: Vector3<T>,
    pub momentum_dot: Vector3<T>,
    /// Wrench measured by sensors not associated with a contact, centroid frame.
    pub residual: Wrench<T>,
    /// Sorted by id; must match the state's contact list.
    pub contacts: Vec<ContactInput<T>>,
    pub imus: Vec<ImuInput<T>>,
}

impl<T: Real> InputFrame<T> {
    /// Rigid body of mass `mass` and inertia `inertia`, with no contacts.
    pub fn rigid_body(mass: T, inertia: Matrix3<T>, imus: Vec<ImuInput<T>>) -> Self {
        Self {
            mass,
            inertia,
            inertia_dot: Matrix3::zeros(),
            momentum: Vector3::zeros(),
            momentum_dot: Vector3::zeros(),
            residual: Wrench::zero(),
            contacts: Vec::new(),
            imus,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass > T::zero()) {
            return Err(Error::InvalidParameter("mass must be positive".into()));
        }
        let tol = lit::<T>(1e-9) * T::one().max(self.inertia.norm());
        if (self.inertia - self.inertia.transpose()).norm() > tol {
            return Err(Error::InvalidParameter("inertia must be symmetric".into()));
        }
        if self.inertia.cholesky().is_none() {
            return Err(Error::SingularInertia);
        }
        if self.contacts.windows(2).any(|w| w[0].id >= w[1].id) {
            return Err(Error::InvalidParameter(
                "contact inputs must be sorted by id without duplicates".into(),
            ));
        }
        Ok(())
    }

    pub fn contact(&self, id: ContactId) -> Option<&ContactInput<T>> {
        self.contacts
            .binary_search_by_key(&id, |c| c.id)
            .ok()
            .map(|i| &self.contacts[i])
    }

    /// Checks that contact inputs and IMU inputs line up with the state.
    pub fn check_matches(&self, x: &EstimatorState<T>) -> Result<()> {
        if self.imus.len() != x.gyro_biases.len() {
            return Err(Error::StructureMismatch(format!(
                "{} IMU inputs for {} gyro biases",
                self.imus.len(),
                x.gyro_biases.len()
            )));
        }
        if self.contacts.len() != x.contacts.len() || self.contacts.iter().zip(&x.contacts).any(|(u, c)| u.id != c.id) {
            return Err(Error::StructureMismatch(
                "contact inputs do not match state contacts".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImuReading<T: Real> {
    pub accelerometer: Vector3<T>,
    pub gyrometer: Vector3<T>,
}

/// Sensor readings of one step. Missing entries are simply not used.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeasurementFrame<T: Real> {
    /// Indexed like the IMU inputs; `None` when the IMU produced no sample.
    pub imus: Vec<Option<ImuReading<T>>>,
    /// Contact-frame wrench measured at contacts of the state.
    pub wrenches: BTreeMap<ContactId, Wrench<T>>,
}

impl<T: Real> MeasurementFrame<T> {
    pub fn dim(&self) -> usize {
        6 * (self.imus.iter().flatten().count() + self.wrenches.len())
    }

    pub fn is_empty(&self) -> bool {
        self.dim() == 0
    }
}
