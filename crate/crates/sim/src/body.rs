//! Rigid-body truth dynamics with compliant unilateral contacts.

use legged_mekf::contact::{
    contact_world_kinematics, discrepancy, viscoelastic_wrench, wrench_at_centroid, ContactKinematics, StiffnessDamping,
};
use legged_mekf::dynamics::GRAVITY;
use legged_mekf::state::CentroidKinematics;
use legged_mekf::Rotation;
use legged_mekf::{ContactId, ContactInput, RestPose, Wrench};
use nalgebra::{Matrix3, Vector3};

use crate::gait::{LimbKind, Plan};

/// Time constant of the derivative filter in the ankle feedback.
const FILTER_TAU: f64 = 0.01;
const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyState {
    /// World position of the centroid.
    pub position: Vector3<f64>,
    pub orientation: Rotation,
    /// World frame.
    pub linear_velocity: Vector3<f64>,
    /// Body frame.
    pub angular_velocity: Vector3<f64>,
    /// Internal state of the ankle feedback.
    pub filter: Vector3<f64>,
}

impl BodyState {
    pub fn at_rest(position: Vector3<f64>, orientation: Rotation) -> Self {
        Self {
            position,
            orientation,
            linear_velocity: Vector3::zeros(),
            angular_velocity: Vector3::zeros(),
            filter: Vector3::zeros(),
        }
    }

    pub fn kinematics(&self) -> CentroidKinematics<f64> {
        CentroidKinematics::from_world(
            &self.position,
            self.orientation,
            &self.linear_velocity,
            &(self.orientation * self.angular_velocity),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.linear_velocity.iter().all(|v| v.is_finite())
            && self.angular_velocity.iter().all(|v| v.is_finite())
            && self.orientation.wxyz().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derivative {
    pub linear_velocity: Vector3<f64>,
    pub angular_velocity: Vector3<f64>,
    pub linear_acceleration: Vector3<f64>,
    pub angular_acceleration: Vector3<f64>,
    pub filter: Vector3<f64>,
}

/// Anchor displacement applied progressively over `[start, start + ramp]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slide {
    pub start: f64,
    pub ramp: f64,
    pub displacement: Vector3<f64>,
}

impl Slide {
    pub fn offset(&self, t: f64) -> Vector3<f64> {
        let s = if self.ramp > 0.0 {
            ((t - self.start) / self.ramp).clamp(0.0, 1.0)
        } else if t >= self.start {
            1.0
        } else {
            0.0
        };
        self.displacement * s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Limb {
    pub id: ContactId,
    pub kind: LimbKind,
    pub anchor: Option<RestPose>,
    pub slides: Vec<Slide>,
}

impl Limb {
    pub fn anchor_at(&self, t: f64) -> Option<RestPose> {
        self.anchor.map(|a| {
            let d: Vector3<f64> = self.slides.iter().map(|s| s.offset(t)).sum();
            RestPose::new(a.position + d, a.orientation)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stabilizer {
    pub gain: f64,
    pub damping: f64,
}

/// Limb frame in the centroid frame as commanded for the given body pose.
fn limb_geometry(
    plan: &Plan,
    limb: usize,
    kind: LimbKind,
    orientation: &Rotation,
    filter: &Vector3<f64>,
    stab: &Stabilizer,
) -> (Vector3<f64>, Rotation) {
    let rt = plan.body_orientation.transpose();
    let desired = &plan.limbs[limb].desired;
    let p = rt * (desired.position - plan.body_position);
    let r = rt * desired.orientation;
    if kind != LimbKind::Foot {
        return (p, r);
    }
    let e = orientation_error(plan, orientation);
    let d = (e - filter) / FILTER_TAU;
    let delta = e * stab.gain - d * stab.damping;
    (p, Rotation::exp(&-delta) * r)
}

fn orientation_error(plan: &Plan, orientation: &Rotation) -> Vector3<f64> {
    orientation.boxminus(&plan.body_orientation)
}

#[derive(Debug, Clone)]
pub struct LimbEval {
    pub input: ContactInput,
    pub world: ContactKinematics<f64>,
    /// Contact frame; zero when not in contact.
    pub wrench: Wrench,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub derivative: Derivative,
    pub limbs: Vec<LimbEval>,
    /// External wrench at the centroid, body frame.
    pub external: Wrench,
}

pub struct Body<'a> {
    pub mass: f64,
    pub inertia: Matrix3<f64>,
    pub inertia_inv: Matrix3<f64>,
    pub stiffness: &'a StiffnessDamping<f64>,
    pub stabilizer: Stabilizer,
}

impl Body<'_> {
    /// Limb inputs (pose and velocity in the centroid frame) and the filter rate.
    pub fn limb_inputs(&self, plans: [&Plan; 3], s: &BodyState, limbs: &[Limb]) -> (Vec<ContactInput>, Vector3<f64>) {
        let [plan, before, after] = plans;
        let zdot = (orientation_error(plan, &s.orientation) - s.filter) / FILTER_TAU;
        let h = FD_STEP;
        let r_minus = s.orientation.boxplus(&(s.angular_velocity * -h));
        let r_plus = s.orientation.boxplus(&(s.angular_velocity * h));
        let (z_minus, z_plus) = (s.filter - zdot * h, s.filter + zdot * h);
        let inputs = limbs
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let (p, r) = limb_geometry(plan, i, l.kind, &s.orientation, &s.filter, &self.stabilizer);
                let (p0, r0) = limb_geometry(before, i, l.kind, &r_minus, &z_minus, &self.stabilizer);
                let (p1, r1) = limb_geometry(after, i, l.kind, &r_plus, &z_plus, &self.stabilizer);
                ContactInput {
                    id: l.id,
                    initial_rest_pose: None,
                    position: p,
                    orientation: r,
                    linear_velocity: (p1 - p0) / (2.0 * h),
                    angular_velocity: (r1 * r0.transpose()).log() / (2.0 * h),
                    stiffness: *self.stiffness,
                }
            })
            .collect();
        (inputs, zdot)
    }

    pub fn evaluate(
        &self,
        t: f64,
        plans: [&Plan; 3],
        s: &BodyState,
        limbs: &[Limb],
        external_world: &Wrench,
    ) -> Evaluation {
        let (inputs, zdot) = self.limb_inputs(plans, s, limbs);
        let kin = s.kinematics();
        let rt = s.orientation.transpose();
        let mut force = rt * Vector3::new(0.0, 0.0, -self.mass * GRAVITY);
        let mut torque = Vector3::zeros();
        let external = Wrench::new(rt * external_world.force, rt * external_world.torque);
        force += external.force;
        torque += external.torque;
        let mut evals = Vec::with_capacity(limbs.len());
        for (limb, input) in limbs.iter().zip(inputs) {
            let world = contact_world_kinematics(&kin, &input);
            let wrench = match limb.anchor_at(t) {
                Some(rest) => viscoelastic_wrench(&discrepancy(&world, &rest), &world.orientation, self.stiffness),
                None => Wrench::zero(),
            };
            let at_c = wrench_at_centroid(&input, &wrench);
            force += at_c.force;
            torque += at_c.torque;
            evals.push(LimbEval { input, world, wrench });
        }
        let w = s.angular_velocity;
        let derivative = Derivative {
            linear_velocity: s.linear_velocity,
            angular_velocity: w,
            linear_acceleration: s.orientation * (force / self.mass),
            angular_acceleration: self.inertia_inv * (torque - w.cross(&(self.inertia * w))),
            filter: zdot,
        };
        Evaluation {
            derivative,
            limbs: evals,
            external,
        }
    }
}

/// `s ⊕ h·d`
pub fn advance(s: &BodyState, d: &Derivative, h: f64) -> BodyState {
    BodyState {
        position: s.position + d.linear_velocity * h,
        orientation: s.orientation.boxplus(&(d.angular_velocity * h)),
        linear_velocity: s.linear_velocity + d.linear_acceleration * h,
        angular_velocity: s.angular_velocity + d.angular_acceleration * h,
        filter: s.filter + d.filter * h,
    }
}

/// Weighted combination of the four RK4 stages.
pub fn rk4_combine(d: [&Derivative; 4]) -> Derivative {
    let c = |f: fn(&Derivative) -> Vector3<f64>| (f(d[0]) + f(d[1]) * 2.0 + f(d[2]) * 2.0 + f(d[3])) / 6.0;
    Derivative {
        linear_velocity: c(|x| x.linear_velocity),
        angular_velocity: c(|x| x.angular_velocity),
        linear_acceleration: c(|x| x.linear_acceleration),
        angular_acceleration: c(|x| x.angular_acceleration),
        filter: c(|x| x.filter),
    }
}

/// Mechanical energy: kinetic, gravitational and elastic (isotropic gains).
pub fn energy(
    mass: f64,
    inertia: &Matrix3<f64>,
    s: &BodyState,
    limbs: &[LimbEval],
    anchors: &[Option<RestPose>],
    k: &StiffnessDamping<f64>,
) -> f64 {
    let w = s.angular_velocity;
    let mut e =
        0.5 * mass * s.linear_velocity.norm_squared() + 0.5 * w.dot(&(inertia * w)) + mass * GRAVITY * s.position.z;
    for (l, a) in limbs.iter().zip(anchors) {
        if let Some(rest) = a {
            let d = discrepancy(&l.world, rest);
            e += 0.5 * d.position.component_mul(&k.kpt).dot(&d.position);
            e += k.kpr.x * (1.0 - d.orientation.angle().cos());
        }
    }
    e
}
