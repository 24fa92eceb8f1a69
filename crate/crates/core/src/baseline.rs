//! Legged odometry: dead reckoning from contact anchors, used as a reference
//! method. Orientation is rebuilt from foot anchors only and its tilt is
//! replaced by an external tilt estimate.

use std::collections::BTreeMap;

use nalgebra::Vector3;

use crate::lie::{interpolate, merge_yaw_tilt, Rotation};
use crate::scalar::Real;
use crate::state::ContactId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorKind {
    Foot,
    Hand,
}

/// World pose of a contact captured when it was created.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactAnchor<T: Real> {
    pub id: ContactId,
    pub kind: AnchorKind,
    pub position: Vector3<T>,
    pub orientation: Rotation<T>,
}

/// Current observation of a contact: its pose in the base frame and the
/// norm of its measured force.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimbObservation<T: Real> {
    pub id: ContactId,
    pub kind: AnchorKind,
    pub position: Vector3<T>,
    pub orientation: Rotation<T>,
    pub force_norm: T,
}

/// Weighted mean of per-contact position estimates. `None` when the total
/// weight is not positive.
pub fn baseline_position<T: Real>(estimates: impl IntoIterator<Item = (Vector3<T>, T)>) -> Option<Vector3<T>> {
    let (sum, total) = estimates
        .into_iter()
        .fold((Vector3::zeros(), T::zero()), |(s, t), (p, w)| (s + p * w, t + w));
    (total > T::zero()).then(|| sum / total)
}

/// Force-weighted geodesic mean of orientation estimates, folded pairwise
/// from the left. `None` when the total weight is not positive.
pub fn baseline_orientation<T: Real>(estimates: impl IntoIterator<Item = (Rotation<T>, T)>) -> Option<Rotation<T>> {
    let mut acc: Option<(Rotation<T>, T)> = None;
    for (r, w) in estimates {
        acc = Some(match acc {
            None => (r, w),
            Some((ra, wa)) => {
                let total = wa + w;
                if total > T::zero() {
                    (interpolate(&ra, &r, w / total), total)
                } else {
                    (ra, total)
                }
            }
        });
    }
    acc.and_then(|(r, w)| (w > T::zero()).then_some(r))
}

/// Pins the height of an anchor.
pub fn baseline_planar<T: Real>(p: Vector3<T>, height: T) -> Vector3<T> {
    Vector3::new(p.x, p.y, height)
}

#[derive(Debug, Clone)]
pub struct LeggedOdometry<T: Real> {
    position: Vector3<T>,
    orientation: Rotation<T>,
    anchors: BTreeMap<ContactId, ContactAnchor<T>>,
    planar_height: Option<T>,
}

impl<T: Real> LeggedOdometry<T> {
    /// `planar_height` pins new anchors to a ground plane.
    pub fn new(position: Vector3<T>, orientation: Rotation<T>, planar_height: Option<T>) -> Self {
        Self {
            position,
            orientation,
            anchors: BTreeMap::new(),
            planar_height,
        }
    }

    pub fn position(&self) -> &Vector3<T> {
        &self.position
    }

    pub fn orientation(&self) -> &Rotation<T> {
        &self.orientation
    }

    pub fn anchors(&self) -> impl Iterator<Item = &ContactAnchor<T>> {
        self.anchors.values()
    }

    /// Advances the odometry with the current contact set. `tilt_source`
    /// supplies roll and pitch.
    pub fn update(&mut self, contacts: &[LimbObservation<T>], tilt_source: &Rotation<T>) {
        self.anchors.retain(|id, _| contacts.iter().any(|c| c.id == *id));
        for c in contacts {
            if !self.anchors.contains_key(&c.id) {
                let mut p = self.position + self.orientation * c.position;
                if let Some(h) = self.planar_height {
                    p = baseline_planar(p, h);
                }
                self.anchors.insert(
                    c.id,
                    ContactAnchor {
                        id: c.id,
                        kind: c.kind,
                        position: p,
                        orientation: self.orientation * c.orientation,
                    },
                );
            }
        }

        let feet = contacts.iter().filter(|c| c.kind == AnchorKind::Foot).map(|c| {
            (
                self.anchors[&c.id].orientation * c.orientation.transpose(),
                c.force_norm,
            )
        });
        let yaw_source = baseline_orientation(feet).unwrap_or(self.orientation);
        self.orientation = merge_yaw_tilt(&yaw_source, tilt_source);

        let r = self.orientation;
        let est = contacts
            .iter()
            .map(|c| (self.anchors[&c.id].position - r * c.position, c.force_norm));
        if let Some(p) = baseline_position(est) {
            self.position = p;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::{split_yaw_tilt, yaw};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v3(rng: &mut ChaCha8Rng, s: f64) -> Vector3<f64> {
        Vector3::new(
            rng.random_range(-s..s),
            rng.random_range(-s..s),
            rng.random_range(-s..s),
        )
    }

    #[test]
    fn position_examples() {
        let e = Vector3::new(0.3, -1.0, 2.0);
        assert_eq!(baseline_position([(e, 5.0)]), Some(e));
        let (e1, e2) = (Vector3::new(1.0, 2.0, 3.0), Vector3::new(3.0, 2.0, 1.0));
        assert_relative_eq!(baseline_position([(e1, 7.0), (e2, 7.0)]).unwrap(), (e1 + e2) / 2.0);
        let p = baseline_position([(Vector3::new(1.0, 0.0, 0.0), 300.0), (Vector3::zeros(), 100.0)]);
        assert_relative_eq!(p.unwrap(), Vector3::new(0.75, 0.0, 0.0));
        assert_eq!(baseline_position::<f64>([]), None);
        assert_eq!(baseline_position([(e, 0.0)]), None);
    }

    #[test]
    fn position_weights_are_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for _ in 0..100 {
            let pts: Vec<_> = (0..3)
                .map(|_| (v3(&mut rng, 1.0), rng.random_range(1.0..500.0)))
                .collect();
            let s = rng.random_range(0.01..100.0);
            let a = baseline_position(pts.clone()).unwrap();
            let b = baseline_position(pts.into_iter().map(|(p, w)| (p, w * s))).unwrap();
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn orientation_examples() {
        let r1 = Rotation::about_z(0.2);
        let r2 = Rotation::about_z(0.6);
        let mid = baseline_orientation([(r1, 10.0), (r2, 10.0)]).unwrap();
        assert_relative_eq!(yaw(&mid), 0.4, epsilon = 1e-12);
        let first = baseline_orientation([(r1, 10.0), (r2, 0.0)]).unwrap();
        assert!(first.boxminus(&r1).norm() < 1e-12);
        assert!(baseline_orientation([(r1, 0.0)]).is_none());
    }

    #[test]
    fn tilt_fusion_keeps_yaw_and_tilt() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        for _ in 0..200 {
            let odo = Rotation::exp(&v3(&mut rng, 1.0));
            let tilt_src = Rotation::exp(&v3(&mut rng, 1.0));
            let fused = merge_yaw_tilt(&odo, &tilt_src);
            let up = |r: &Rotation<f64>| r.transpose() * Vector3::z();
            assert!((up(&fused) - up(&tilt_src)).norm() < 1e-9);
            let (y_fused, _) = split_yaw_tilt(&fused);
            let (y_odo, _) = split_yaw_tilt(&odo);
            assert!(crate::lie::wrap_angle(y_fused - y_odo).abs() < 1e-9);
        }
    }

    fn foot(id: u32, y: f64, force: f64) -> LimbObservation<f64> {
        LimbObservation {
            id: ContactId(id),
            kind: AnchorKind::Foot,
            position: Vector3::new(0.0, y, -0.8),
            orientation: Rotation::identity(),
            force_norm: force,
        }
    }

    #[test]
    fn permanent_anchor_gives_exact_odometry() {
        // base translates and yaws over a fixed foot
        let mut odo = LeggedOdometry::new(Vector3::new(0.0, 0.02, 0.8), Rotation::identity(), None);
        let foot_world = Vector3::new(0.0, 0.1, 0.0);
        for k in 0..200 {
            let t = k as f64 * 0.01;
            let r = Rotation::about_z(0.3 * t.sin());
            let p = Vector3::new(0.05 * t, 0.02 * t.cos(), 0.8 + 0.01 * t);
            let local = r.transpose() * (foot_world - p);
            let obs = LimbObservation {
                position: local,
                orientation: r.transpose(),
                ..foot(0, 0.0, 400.0)
            };
            odo.update(&[obs], &r);
            assert!(
                (odo.position() - p).norm() < 1e-12,
                "{k} {}",
                (odo.position() - p).norm()
            );
            assert!(odo.orientation().boxminus(&r).norm() < 1e-12);
        }
    }

    #[test]
    fn hands_do_not_drive_orientation() {
        let mut odo = LeggedOdometry::new(Vector3::zeros(), Rotation::identity(), None);
        let mut hand = foot(9, 0.0, 200.0);
        hand.kind = AnchorKind::Hand;
        odo.update(&[foot(0, 0.1, 500.0), hand], &Rotation::identity());
        // the hand frame now reports a rotated pose; a foot-only estimate ignores it
        hand.orientation = Rotation::about_z(0.5);
        odo.update(&[foot(0, 0.1, 500.0), hand], &Rotation::identity());
        assert!(yaw(odo.orientation()).abs() < 1e-12);
    }

    #[test]
    fn planar_pins_anchor_height_and_holds_without_contacts() {
        let mut odo = LeggedOdometry::new(Vector3::new(1.0, 0.0, 0.85), Rotation::identity(), Some(0.0));
        odo.update(&[foot(0, 0.1, 500.0)], &Rotation::identity());
        let a = odo.anchors().next().unwrap();
        assert_eq!(a.position.z, 0.0);
        assert_relative_eq!(odo.position().z, 0.8, epsilon = 1e-12);
        let held = *odo.position();
        odo.update(&[], &Rotation::identity());
        assert_eq!(*odo.position(), held);
        assert_eq!(odo.anchors().count(), 0);
    }
}
