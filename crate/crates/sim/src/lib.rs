//! Deterministic simulator of a compliant humanoid producing estimator inputs,
//! noisy sensor readings and ground truth.

#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![cfg_attr(test, allow(clippy::field_reassign_with_default))]

pub mod body;
pub mod gait;
pub mod scenario;

use legged_mekf::contact::wrench_at_centroid;
use legged_mekf::dynamics::GRAVITY;
use legged_mekf::lie::yaw;
use legged_mekf::state::ImuReading;
use legged_mekf::Rotation;
use legged_mekf::{ContactId, ContactInput, ImuInput, RestPose, Wrench};
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use body::{advance, rk4_combine, Body, BodyState, Evaluation, Limb, Slide, Stabilizer};
pub use gait::{GaitScript, LimbKind, Phase};
pub use scenario::SimScenario;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("simulation diverged at t = {time:.4} s")]
    Unstable { time: f64 },
    #[error("slip at t = {time} s targets limb {limb}, which is not in contact")]
    InactiveSlipTarget { limb: u32, time: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthSample {
    /// World frame.
    pub position: Vector3<f64>,
    pub orientation: Rotation,
    /// World frame.
    pub linear_velocity: Vector3<f64>,
    /// Body frame.
    pub angular_velocity: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
    /// Perturbation wrench at the centroid, body frame.
    pub perturbation: Wrench,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimbSample {
    pub kind: LimbKind,
    /// Geometry in the centroid frame with the nominal stiffness. The planned
    /// rest pose is attached while the limb is in contact.
    pub input: ContactInput,
    /// Noisy wrench sensor, contact frame.
    pub measured: Wrench,
    pub in_contact: bool,
    pub truth_wrench: Wrench,
    pub truth_anchor: Option<RestPose>,
}

impl LimbSample {
    pub fn id(&self) -> ContactId {
        self.input.id
    }

    /// True wrench moved to the centroid, body frame.
    pub fn truth_wrench_at_centroid(&self) -> Wrench {
        wrench_at_centroid(&self.input, &self.truth_wrench)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimFrame {
    pub time: f64,
    pub truth: TruthSample,
    pub imu: ImuReading<f64>,
    pub limbs: Vec<LimbSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub mass: f64,
    pub inertia: Matrix3<f64>,
    pub imu: ImuInput,
    pub dt: f64,
    pub frames: Vec<SimFrame>,
}

const PRELOAD_ITERATIONS: usize = 8;

struct Noise {
    rng: ChaCha8Rng,
}

impl Noise {
    fn vec(&mut self, std: f64) -> Vector3<f64> {
        if std == 0.0 {
            return Vector3::zeros();
        }
        let n = Normal::new(0.0, std).expect("validated standard deviation");
        Vector3::from_fn(|_, _| n.sample(&mut self.rng))
    }
}

struct Scheduled {
    limb: usize,
    time: f64,
    displacement: Vector3<f64>,
    explicit: bool,
}

fn slip_schedule(sc: &SimScenario, gait: &GaitScript, rng: &mut ChaCha8Rng) -> Vec<Scheduled> {
    let mut out = Vec::new();
    let s = &sc.slippage;
    if s.enabled {
        for w in gait.support_windows() {
            let (lo, hi) = (w.start + 0.1, w.end - 0.1 - s.ramp);
            if hi <= lo {
                continue;
            }
            let time = rng.random_range(lo..hi);
            let mag = if s.max > s.min {
                rng.random_range(s.min..s.max)
            } else {
                s.min
            };
            let dir = rng.random_range(0.0..std::f64::consts::TAU);
            out.push(Scheduled {
                limb: w.limb,
                time,
                displacement: Vector3::new(dir.cos(), dir.sin(), 0.0) * mag,
                explicit: false,
            });
        }
    }
    for e in &sc.slips {
        out.push(Scheduled {
            limb: e.limb as usize,
            time: e.time,
            displacement: e.displacement.into(),
            explicit: true,
        });
    }
    out.sort_by(|a, b| a.time.total_cmp(&b.time));
    out
}

fn perturbation_at(sc: &SimScenario, t: f64) -> Wrench {
    sc.perturbations
        .iter()
        .filter(|p| t >= p.start && t < p.end)
        .fold(Wrench::zero(), |w, p| {
            Wrench::new(w.force + Vector3::from(p.force), w.torque + Vector3::from(p.torque))
        })
}

/// Vertical load of each stance limb at the initial equilibrium.
fn initial_loads(sc: &SimScenario, gait: &GaitScript) -> Vec<f64> {
    let weight = sc.mass * GRAVITY;
    let hand = match &sc.gait {
        scenario::Gait::Multicontact(h) => h.load_fraction,
        _ => 0.0,
    };
    let feet = gait.limbs().iter().filter(|k| **k == LimbKind::Foot).count() as f64;
    gait.limbs()
        .iter()
        .map(|k| match k {
            LimbKind::Foot => weight * (1.0 - hand) / feet,
            LimbKind::Hand => weight * hand,
        })
        .collect()
}

struct Sim<'a> {
    sc: &'a SimScenario,
    gait: GaitScript,
    body: Body<'a>,
    state: BodyState,
    limbs: Vec<Limb>,
    nominal: legged_mekf::StiffnessDamping,
    /// Planned rest pose captured with the anchor.
    planned: Vec<Option<RestPose>>,
}

impl Sim<'_> {
    fn plans(&self, t: f64) -> [gait::Plan; 3] {
        let h = 1e-6;
        [self.gait.plan(t), self.gait.plan(t - h), self.gait.plan(t + h)]
    }

    fn evaluate(&self, t: f64, s: &BodyState) -> Evaluation {
        let [p, b, a] = self.plans(t);
        self.body
            .evaluate(t, [&p, &b, &a], s, &self.limbs, &perturbation_at(self.sc, t))
    }

    fn substep(&mut self, t: f64, h: f64) -> Result<(), SimError> {
        let s = self.state;
        let k1 = self.evaluate(t, &s).derivative;
        let k2 = self.evaluate(t + h / 2.0, &advance(&s, &k1, h / 2.0)).derivative;
        let k3 = self.evaluate(t + h / 2.0, &advance(&s, &k2, h / 2.0)).derivative;
        let k4 = self.evaluate(t + h, &advance(&s, &k3, h)).derivative;
        self.state = advance(&s, &rk4_combine([&k1, &k2, &k3, &k4]), h);
        let t1 = t + h;
        if !self.state.is_finite()
            || self.state.linear_velocity.norm() > 50.0
            || self.state.angular_velocity.norm() > 50.0
        {
            return Err(SimError::Unstable { time: t1 });
        }
        self.contact_events(t1);
        Ok(())
    }

    fn contact_events(&mut self, t: f64) {
        let plan = self.gait.plan(t);
        let eval = self.evaluate(t, &self.state);
        for (i, limb) in self.limbs.iter_mut().enumerate() {
            let lp = &plan.limbs[i];
            let e = &eval.limbs[i];
            match (limb.anchor.is_some(), lp.phase) {
                (true, Phase::Swing { .. }) => {
                    let normal = (e.world.orientation * e.wrench.force).z;
                    if normal <= 0.0 {
                        limb.anchor = None;
                        limb.slides.clear();
                        self.planned[i] = None;
                    }
                }
                (false, Phase::Swing { landing: true }) | (false, Phase::Stance)
                    if limb.kind == LimbKind::Foot && e.world.position.z <= 0.0 =>
                {
                    // Soles land flat on the floor.
                    let p = e.world.position;
                    limb.anchor = Some(RestPose::new(
                        Vector3::new(p.x, p.y, 0.0),
                        Rotation::about_z(yaw(&e.world.orientation)),
                    ));
                    self.planned[i] = Some(planned_stance(&self.gait, t, i));
                }
                _ => {}
            }
        }
    }

    fn apply_slip(&mut self, s: &Scheduled) -> Result<(), SimError> {
        match self.limbs.get_mut(s.limb) {
            Some(l) if l.anchor.is_some() => {
                l.slides.push(Slide {
                    start: s.time,
                    ramp: self.sc.slippage.ramp,
                    displacement: s.displacement,
                });
                Ok(())
            }
            _ if s.explicit => Err(SimError::InactiveSlipTarget {
                limb: s.limb as u32,
                time: s.time,
            }),
            _ => Ok(()),
        }
    }
}

/// Planned stance pose of limb `i` for the stance phase that contains `t`.
fn planned_stance(gait: &GaitScript, t: f64, i: usize) -> RestPose {
    let mut tt = t;
    loop {
        let p = gait.plan(tt);
        if p.limbs[i].phase == Phase::Stance || tt > gait.motion_end() {
            return p.limbs[i].desired;
        }
        tt += 0.01;
    }
}

/// Runs a scenario from `t = 0` to `duration`, sampled every `dt`.
pub fn simulate(sc: &SimScenario) -> Result<SimOutput, SimError> {
    sc.validate()?;
    let gait = GaitScript::new(sc);
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let schedule = slip_schedule(sc, &gait, &mut rng);
    let mut noise = Noise { rng };

    let truth_k = sc.stiffness.scaled(sc.truth_stiffness_factor).to_model();
    let nominal = sc.stiffness.to_model();
    let inertia = sc.inertia_matrix();
    let body = Body {
        mass: sc.mass,
        inertia,
        inertia_inv: inertia.try_inverse().expect("validated inertia"),
        stiffness: &truth_k,
        stabilizer: Stabilizer {
            gain: sc.stabilizer_gain,
            damping: sc.stabilizer_damping,
        },
    };

    let t0 = -sc.settle;
    let plan0 = gait.plan(t0);
    let loads = initial_loads(sc, &gait);
    let foot_load = loads
        .iter()
        .zip(gait.limbs())
        .find(|(_, k)| **k == LimbKind::Foot)
        .map(|(l, _)| *l)
        .unwrap_or(0.0);
    let sink = if truth_k.kpt.z > 0.0 {
        foot_load / truth_k.kpt.z
    } else {
        0.0
    };
    let state = BodyState::at_rest(
        plan0.body_position - Vector3::new(0.0, 0.0, sink),
        plan0.body_orientation,
    );
    let mut limbs: Vec<Limb> = gait
        .limbs()
        .iter()
        .enumerate()
        .map(|(i, k)| Limb {
            id: ContactId(i as u32),
            kind: *k,
            anchor: None,
            slides: Vec::new(),
        })
        .collect();
    let mut sim = Sim {
        sc,
        gait,
        body,
        state,
        limbs: Vec::new(),
        nominal,
        planned: vec![None; limbs.len()],
    };
    // anchors that reproduce the equilibrium loads
    sim.limbs = limbs.clone();
    let eval = sim.evaluate(t0, &sim.state);
    for (i, limb) in limbs.iter_mut().enumerate() {
        if plan0.limbs[i].phase == Phase::Stance {
            let w = &eval.limbs[i].world;
            let lift = if truth_k.kpt.z > 0.0 {
                loads[i] / truth_k.kpt.z
            } else {
                0.0
            };
            let anchor = RestPose::new(w.position + Vector3::new(0.0, 0.0, lift), w.orientation);
            limb.anchor = Some(anchor);
            sim.planned[i] = Some(anchor);
        }
    }
    sim.limbs = limbs;

    let h = sc.dt / sc.substeps as f64;
    let settle_steps = (sc.settle / h).round() as usize;
    let hand = match &sc.gait {
        scenario::Gait::Multicontact(p) => sim
            .limbs
            .iter()
            .position(|l| l.kind == LimbKind::Hand)
            .map(|i| (i, p.load_fraction)),
        _ => None,
    };
    let segments = if hand.is_some() { PRELOAD_ITERATIONS + 1 } else { 1 };
    for n in 0..settle_steps {
        sim.substep(t0 + n as f64 * h, h)?;
        let done = n + 1;
        if let Some((i, target)) = hand {
            if done % (settle_steps / segments).max(1) == 0 && done < settle_steps {
                sim.calibrate_preload(t0 + done as f64 * h, i, target);
            }
        }
    }
    // settling ends at exactly t = 0
    let steps = sc.steps();
    let mut bias = Vector3::from(sc.gyro_bias.offset);
    let mut frames = Vec::with_capacity(steps + 1);
    let mut next_slip = 0;
    for k in 0..=steps {
        let t = k as f64 * sc.dt;
        while next_slip < schedule.len() && schedule[next_slip].time < t + sc.dt && k < steps {
            if schedule[next_slip].time >= t {
                sim.apply_slip(&schedule[next_slip])?;
            }
            next_slip += 1;
        }
        frames.push(sim.sample(t, &bias, &mut noise));
        if k < steps {
            for n in 0..sc.substeps {
                sim.substep(t + n as f64 * h, h)?;
            }
            bias += noise.vec(sc.gyro_bias.random_walk);
        }
    }

    Ok(SimOutput {
        mass: sc.mass,
        inertia,
        imu: ImuInput {
            position: sc.imu_position.into(),
            ..Default::default()
        },
        dt: sc.dt,
        frames,
    })
}

impl Sim<'_> {
    /// Shifts a limb anchor vertically so that its share of the weight moves
    /// toward `target`.
    fn calibrate_preload(&mut self, t: f64, limb: usize, target: f64) {
        let eval = self.evaluate(t, &self.state);
        let e = &eval.limbs[limb];
        let weight = self.sc.mass * GRAVITY;
        let share = (e.world.orientation * e.wrench.force).z / weight;
        let kz = self.body.stiffness.kpt.z;
        if let Some(a) = self.limbs[limb].anchor.as_mut() {
            a.position.z += 1.5 * (target - share) * weight / kz;
            self.planned[limb] = Some(*a);
        }
    }

    fn sample(&self, t: f64, bias: &Vector3<f64>, noise: &mut Noise) -> SimFrame {
        let s = &self.state;
        let eval = self.evaluate(t, s);
        let d = &eval.derivative;
        let r = Vector3::from(self.sc.imu_position);
        let w = s.angular_velocity;
        let acc_world =
            d.linear_acceleration + s.orientation * (d.angular_acceleration.cross(&r) + w.cross(&w.cross(&r)));
        let specific = s.orientation.transpose() * (acc_world + Vector3::new(0.0, 0.0, GRAVITY));
        let n = &self.sc.noise;
        let imu = ImuReading {
            accelerometer: specific + noise.vec(n.accelerometer),
            gyrometer: w + bias + noise.vec(n.gyro),
        };
        let limbs = eval
            .limbs
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let anchor = self.limbs[i].anchor_at(t);
                LimbSample {
                    kind: self.limbs[i].kind,
                    input: ContactInput {
                        initial_rest_pose: self.planned[i],
                        stiffness: self.nominal,
                        ..e.input
                    },
                    measured: Wrench::new(
                        e.wrench.force + noise.vec(n.force),
                        e.wrench.torque + noise.vec(n.torque),
                    ),
                    in_contact: anchor.is_some(),
                    truth_wrench: e.wrench,
                    truth_anchor: anchor,
                }
            })
            .collect();
        SimFrame {
            time: t,
            truth: TruthSample {
                position: s.position,
                orientation: s.orientation,
                linear_velocity: s.linear_velocity,
                angular_velocity: s.angular_velocity,
                gyro_bias: *bias,
                perturbation: eval.external,
            },
            imu,
            limbs,
        }
    }
}
