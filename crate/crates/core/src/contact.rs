//! Visco-elastic contact model.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::lie::{skew, Rotation};
use crate::scalar::{lit, Real};
use crate::state::{CentroidKinematics, ContactInput, RestPose, Wrench};

/// Diagonal stiffness and damping of a contact (translation and rotation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StiffnessDamping<T: Real> {
    pub kpt: Vector3<T>,
    pub kdt: Vector3<T>,
    pub kpr: Vector3<T>,
    pub kdr: Vector3<T>,
}

impl<T: Real> StiffnessDamping<T> {
    /// Isotropic gains.
    pub fn isotropic(kpt: f64, kdt: f64, kpr: f64, kdr: f64) -> Self {
        Self {
            kpt: Vector3::repeat(lit(kpt)),
            kdt: Vector3::repeat(lit(kdt)),
            kpr: Vector3::repeat(lit(kpr)),
            kdr: Vector3::repeat(lit(kdr)),
        }
    }

    /// Flexibility tuned for HRP-5P.
    pub fn hrp5p() -> Self {
        Self::isotropic(3e5, 150.0, 1000.0, 17.0)
    }

    /// Flexibility tuned for HRP-2Kai.
    pub fn hrp2kai() -> Self {
        Self::isotropic(4e4, 65.0, 720.0, 17.0)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.kpt, self.kdt, self.kpr, self.kdr]
            .iter()
            .all(|v| v.iter().all(|k| k.is_finite() && *k >= T::zero()));
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(
                "stiffness and damping entries must be finite and non-negative".into(),
            ))
        }
    }

    /// A contact with no rotational stiffness transmits no torque.
    pub fn is_point_contact(&self) -> bool {
        self.kpr.iter().all(|k| *k == T::zero())
    }

    pub fn kpt_matrix(&self) -> Matrix3<T> {
        Matrix3::from_diagonal(&self.kpt)
    }
}

/// World-frame kinematics of a contact frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ContactKinematics<T: Real> {
    pub position: Vector3<T>,
    pub orientation: Rotation<T>,
    pub linear_velocity: Vector3<T>,
    pub angular_velocity: Vector3<T>,
}

/// Forward kinematics of a contact from the centroid state and the contact
/// pose in the centroid frame.
pub fn contact_world_kinematics<T: Real>(
    centroid: &CentroidKinematics<T>,
    contact: &ContactInput<T>,
) -> ContactKinematics<T> {
    let r = &centroid.orientation;
    let w = &centroid.angular_velocity;
    ContactKinematics {
        position: r * &(contact.position + centroid.position),
        orientation: r * &contact.orientation,
        linear_velocity: r * &(contact.linear_velocity + w.cross(&contact.position) + centroid.linear_velocity),
        angular_velocity: r * &(contact.angular_velocity + w),
    }
}

/// Difference between the current contact kinematics and its rest frame
/// (which has zero velocity).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discrepancy<T: Real> {
    pub position: Vector3<T>,
    pub linear_velocity: Vector3<T>,
    /// `R_C · R_rᵀ`
    pub orientation: Rotation<T>,
    pub angular_velocity: Vector3<T>,
}

pub fn discrepancy<T: Real>(k: &ContactKinematics<T>, rest: &RestPose<T>) -> Discrepancy<T> {
    Discrepancy {
        position: k.position - rest.position,
        linear_velocity: k.linear_velocity,
        orientation: k.orientation * rest.orientation.transpose(),
        angular_velocity: k.angular_velocity,
    }
}

/// Reaction wrench in the contact frame produced by the spring-damper.
pub fn viscoelastic_wrench<T: Real>(
    d: &Discrepancy<T>,
    contact_orientation: &Rotation<T>,
    k: &StiffnessDamping<T>,
) -> Wrench<T> {
    let rt = contact_orientation.transpose();
    let f = k.kpt.component_mul(&d.position) + k.kdt.component_mul(&d.linear_velocity);
    let t = k.kpr.component_mul(&d.orientation.antisymmetric_vec()) + k.kdr.component_mul(&d.angular_velocity);
    Wrench::new(-(rt * f), -(rt * t))
}

/// Wrench predicted for a contact whose rest pose is `rest`.
pub fn predicted_wrench<T: Real>(
    centroid: &CentroidKinematics<T>,
    contact: &ContactInput<T>,
    rest: &RestPose<T>,
) -> Wrench<T> {
    let k = contact_world_kinematics(centroid, contact);
    viscoelastic_wrench(&discrepancy(&k, rest), &k.orientation, &contact.stiffness)
}

/// Contact wrench moved to the centroid, in the centroid frame.
pub fn wrench_at_centroid<T: Real>(contact: &ContactInput<T>, w: &Wrench<T>) -> Wrench<T> {
    let f = contact.orientation * w.force;
    let t = contact.orientation * w.torque + skew(&contact.position) * f;
    Wrench::new(f, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::exp_so3;
    use crate::state::ContactId;
    use approx::assert_relative_eq;
    use nalgebra::{Isometry3, Translation3, UnitQuaternion};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v3(rng: &mut ChaCha8Rng) -> Vector3<f64> {
        Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
    }

    fn input(p: Vector3<f64>) -> ContactInput<f64> {
        ContactInput::fixed(ContactId(0), p, Rotation::identity(), StiffnessDamping::hrp5p())
    }

    #[test]
    fn world_kinematics_examples() {
        let c = CentroidKinematics::default();
        let k = contact_world_kinematics(&c, &input(Vector3::new(0.0, 0.0, -1.0)));
        assert_eq!(k.position, Vector3::new(0.0, 0.0, -1.0));
        assert_eq!(k.linear_velocity, Vector3::zeros());

        let mut c = CentroidKinematics::default();
        c.angular_velocity = Vector3::new(0.0, 0.0, 1.0);
        let k = contact_world_kinematics(&c, &input(Vector3::new(1.0, 0.0, 0.0)));
        assert_relative_eq!(k.linear_velocity, Vector3::new(0.0, 1.0, 0.0));
    }

    #[test]
    fn world_kinematics_matches_transform_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (p, v, w) = (v3(&mut rng), v3(&mut rng), v3(&mut rng));
            let r = Rotation::exp(&v3(&mut rng));
            let c = CentroidKinematics::from_world(&p, r, &v, &w);
            let mut ci = input(v3(&mut rng));
            ci.orientation = Rotation::exp(&v3(&mut rng));
            ci.linear_velocity = v3(&mut rng);
            ci.angular_velocity = v3(&mut rng);
            let k = contact_world_kinematics(&c, &ci);

            let world = Isometry3::from_parts(Translation3::from(p), *r.quaternion());
            let local = Isometry3::from_parts(Translation3::from(ci.position), *ci.orientation.quaternion());
            let composed = world * local;
            assert_relative_eq!(k.position, composed.translation.vector, epsilon = 1e-12);
            assert!((composed.rotation.to_rotation_matrix().into_inner() - k.orientation.matrix()).amax() < 1e-12);
            // velocity of a point attached to the moving frame, world frame
            let lever = r.matrix() * ci.position;
            let pdot = v + w.cross(&lever) + r.matrix() * ci.linear_velocity;
            assert_relative_eq!(k.linear_velocity, pdot, epsilon = 1e-12);
            assert_relative_eq!(
                k.angular_velocity,
                w + r.matrix() * ci.angular_velocity,
                epsilon = 1e-12
            );
            let _ = UnitQuaternion::<f64>::identity();
        }
    }

    #[test]
    fn discrepancy_examples() {
        let rest = RestPose::new(Vector3::new(0.3, 0.1, 0.0), Rotation::exp(&Vector3::new(0.1, 0.2, 0.3)));
        let k = ContactKinematics {
            position: rest.position,
            orientation: rest.orientation,
            ..Default::default()
        };
        let d = discrepancy(&k, &rest);
        assert_eq!(d.position, Vector3::zeros());
        assert!(d.orientation.angle() < 1e-12);

        let k2 = ContactKinematics {
            position: rest.position + Vector3::new(0.0, 0.0, -0.001),
            orientation: Rotation::exp(&Vector3::new(0.01, 0.0, 0.0)) * rest.orientation,
            ..Default::default()
        };
        let d = discrepancy(&k2, &rest);
        assert_relative_eq!(d.position, Vector3::new(0.0, 0.0, -0.001), epsilon = 1e-15);
        assert_relative_eq!(d.orientation.log(), Vector3::new(0.01, 0.0, 0.0), epsilon = 1e-14);
    }

    #[test]
    fn wrench_examples() {
        let k = StiffnessDamping::<f64>::hrp5p();
        let zero = Discrepancy {
            position: Vector3::zeros(),
            linear_velocity: Vector3::zeros(),
            orientation: Rotation::identity(),
            angular_velocity: Vector3::zeros(),
        };
        assert_eq!(viscoelastic_wrench(&zero, &Rotation::identity(), &k), Wrench::zero());

        let mut d = zero;
        d.position = Vector3::new(0.0, 0.0, -0.001);
        let w = viscoelastic_wrench(&d, &Rotation::identity(), &k);
        assert_relative_eq!(w.force, Vector3::new(0.0, 0.0, 300.0), epsilon = 1e-9);

        let mut d = zero;
        d.orientation = Rotation::exp(&Vector3::new(0.01, 0.0, 0.0));
        let w = viscoelastic_wrench(&d, &Rotation::identity(), &k);
        assert!((w.torque.x + 10.0).abs() / 10.0 < 2e-4);
        assert_relative_eq!(w.torque.x, -1000.0 * 0.01f64.sin(), epsilon = 1e-10);
    }

    #[test]
    fn elastic_force_opposes_displacement() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut k = StiffnessDamping::<f64>::hrp5p();
        k.kdt = Vector3::zeros();
        k.kpt = Vector3::new(1e5, 2e5, 3e5);
        for _ in 0..1000 {
            let rc = Rotation::exp(&v3(&mut rng));
            let d = Discrepancy {
                position: v3(&mut rng),
                linear_velocity: v3(&mut rng),
                orientation: Rotation::identity(),
                angular_velocity: Vector3::zeros(),
            };
            let w = viscoelastic_wrench(&d, &rc, &k);
            assert!((rc * w.force).dot(&d.position) <= 0.0);
        }
    }

    #[test]
    fn torque_magnitude_is_sine_of_angle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut k = StiffnessDamping::<f64>::hrp5p();
        k.kdr = Vector3::zeros();
        for _ in 0..1000 {
            let axis = v3(&mut rng).normalize();
            let theta = rng.random_range(0.0..core::f64::consts::FRAC_PI_2);
            let d = Discrepancy {
                position: Vector3::zeros(),
                linear_velocity: Vector3::zeros(),
                orientation: Rotation::exp(&(axis * theta)),
                angular_velocity: v3(&mut rng),
            };
            let w = viscoelastic_wrench(&d, &Rotation::exp(&v3(&mut rng)), &k);
            assert_relative_eq!(w.torque.norm(), 1000.0 * theta.sin(), epsilon = 1e-9);
        }
    }

    #[test]
    fn point_contact_has_no_torque() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let k = StiffnessDamping::<f64>::isotropic(3e5, 150.0, 0.0, 0.0);
        assert!(k.is_point_contact());
        for _ in 0..100 {
            let d = Discrepancy {
                position: v3(&mut rng),
                linear_velocity: v3(&mut rng),
                orientation: Rotation::exp(&v3(&mut rng)),
                angular_velocity: v3(&mut rng),
            };
            let w = viscoelastic_wrench(&d, &Rotation::exp(&v3(&mut rng)), &k);
            assert_eq!(w.torque, Vector3::zeros());
        }
    }

    #[test]
    fn centroid_wrench_transport() {
        let mut c = input(Vector3::new(0.0, 0.1, -1.0));
        c.orientation = exp_so3(&Vector3::zeros());
        let w = wrench_at_centroid(&c, &Wrench::new(Vector3::new(0.0, 0.0, 981.0), Vector3::zeros()));
        assert_relative_eq!(w.torque, Vector3::new(98.1, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn validation() {
        let mut k = StiffnessDamping::<f64>::hrp2kai();
        assert!(k.validate().is_ok());
        k.kdr.x = -1.0;
        assert!(k.validate().is_err());
    }
}
