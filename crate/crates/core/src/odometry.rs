//! Contact detection and rest-pose initialization of new contacts.

use std::collections::BTreeSet;

use nalgebra::Vector3;

use crate::contact::contact_world_kinematics;
use crate::dynamics::GRAVITY;
use crate::error::{Error, Result};
use crate::lie::Rotation;
use crate::scalar::{lit, Real};
use crate::state::{CentroidKinematics, ContactId, ContactInput, RestPose, Wrench};

/// How the rest pose of a new contact is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OdometryMode<T: Real> {
    /// Full pose from the current estimate and the measured wrench.
    SixD,
    /// As `SixD`, with the height pinned to a known ground plane.
    Planar { ground_height: T },
    /// Pose supplied by a contact planner.
    None,
}

impl<T: Real> OdometryMode<T> {
    pub fn planar() -> Self {
        Self::Planar {
            ground_height: T::zero(),
        }
    }
}

/// Force magnitude above which a contact is considered set.
pub fn contact_threshold<T: Real>(mass: T, fraction: T) -> T {
    fraction * mass * lit::<T>(GRAVITY)
}

fn check_fraction<T: Real>(fraction: T) -> Result<()> {
    if fraction > T::zero() && fraction < T::one() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "contact threshold fraction must lie in (0, 1), got {}",
            fraction.to_f64()
        )))
    }
}

/// Contacts whose measured force reaches `fraction` of the weight.
pub fn detect_contacts<T: Real>(
    forces: impl IntoIterator<Item = (ContactId, Vector3<T>)>,
    mass: T,
    fraction: T,
) -> Result<BTreeSet<ContactId>> {
    check_fraction(fraction)?;
    let th = contact_threshold(mass, fraction);
    Ok(forces
        .into_iter()
        .filter(|(_, f)| f.norm() >= th)
        .map(|(id, _)| id)
        .collect())
}

/// Contact set changes produced by one detector update.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ContactChanges {
    pub created: Vec<ContactId>,
    pub broken: Vec<ContactId>,
}

/// Threshold detector with a break threshold below the make threshold.
#[derive(Debug, Clone)]
pub struct ContactDetector<T: Real> {
    fraction: T,
    break_ratio: T,
    active: BTreeSet<ContactId>,
}

impl<T: Real> ContactDetector<T> {
    /// `break_ratio` of 1 disables the hysteresis.
    pub fn new(fraction: T, break_ratio: T) -> Result<Self> {
        check_fraction(fraction)?;
        if !(break_ratio > T::zero() && break_ratio <= T::one()) {
            return Err(Error::InvalidParameter("break ratio must lie in (0, 1]".into()));
        }
        Ok(Self {
            fraction,
            break_ratio,
            active: BTreeSet::new(),
        })
    }

    pub fn with_default_hysteresis(fraction: T) -> Result<Self> {
        Self::new(fraction, lit(0.8))
    }

    pub fn active(&self) -> &BTreeSet<ContactId> {
        &self.active
    }

    pub fn is_active(&self, id: ContactId) -> bool {
        self.active.contains(&id)
    }

    /// Updates the active set from measured forces. Limbs missing from
    /// `forces` are considered unloaded.
    pub fn update(&mut self, forces: impl IntoIterator<Item = (ContactId, Vector3<T>)>, mass: T) -> ContactChanges {
        let make = contact_threshold(mass, self.fraction);
        let brk = make * self.break_ratio;
        let mut next = BTreeSet::new();
        for (id, f) in forces {
            let th = if self.active.contains(&id) { brk } else { make };
            if f.norm() >= th {
                next.insert(id);
            }
        }
        let changes = ContactChanges {
            created: next.difference(&self.active).copied().collect(),
            broken: self.active.difference(&next).copied().collect(),
        };
        self.active = next;
        changes
    }
}

/// Rest pose of a new contact explaining the measured contact-frame wrench
/// with the visco-elastic model, given the current centroid estimate.
pub fn init_rest_pose_6d<T: Real>(
    centroid: &CentroidKinematics<T>,
    input: &ContactInput<T>,
    measured: &Wrench<T>,
) -> Result<RestPose<T>> {
    let k = &input.stiffness;
    if k.kpt.iter().any(|s| *s == T::zero()) {
        return Err(Error::SingularStiffness);
    }
    let c = contact_world_kinematics(centroid, input);
    let rc = &c.orientation;
    let lin = rc * &measured.force + k.kdt.component_mul(&c.linear_velocity);
    let position = c.position + lin.component_div(&k.kpt);
    if k.is_point_contact() {
        return Ok(RestPose::new(position, c.orientation));
    }
    let ang = rc * &measured.torque + k.kdr.component_mul(&c.angular_velocity);
    let half_d = Vector3::from_fn(|i, _| {
        if k.kpr[i] == T::zero() {
            T::zero()
        } else {
            -ang[i] / k.kpr[i]
        }
    });
    let n = half_d.norm();
    let deformation = if n < lit(1e-12) {
        Rotation::identity()
    } else {
        let theta = n.min(T::one()).asin();
        Rotation::exp(&(half_d * (theta / n)))
    };
    Ok(RestPose::new(position, deformation.transpose() * c.orientation))
}

/// Applies the odometry mode to a 6D rest pose guess.
pub fn apply_mode<T: Real>(
    id: ContactId,
    rest: RestPose<T>,
    mode: &OdometryMode<T>,
    reference: Option<&RestPose<T>>,
) -> Result<RestPose<T>> {
    match mode {
        OdometryMode::SixD => Ok(rest),
        OdometryMode::Planar { ground_height } => {
            let mut r = rest;
            r.position.z = *ground_height;
            Ok(r)
        }
        OdometryMode::None => reference.copied().ok_or(Error::MissingReference(id)),
    }
}
