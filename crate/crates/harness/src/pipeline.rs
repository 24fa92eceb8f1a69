//! Simulator → contact detection → estimator (+ baseline) pipeline.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use legged_mekf::baseline::{AnchorKind, LimbObservation};
use legged_mekf::contact::wrench_at_centroid;
use legged_mekf::odometry::{apply_mode, init_rest_pose_6d, ContactDetector, OdometryMode};
use legged_mekf::state::CentroidKinematics;
use legged_mekf::{
    ContactId, ContactInput, Estimator, EstimatorState, InputFrame, LeggedOdometry, MeasurementFrame, RestPose,
    Rotation, Wrench,
};
use legged_sim::{simulate, LimbKind, LimbSample, SimFrame, SimOutput};
use nalgebra::Vector3;

use crate::config::RunConfig;
use crate::metrics::{compute_metrics, RunMetrics};
use crate::records::{self, BaselineRecord, ContactRecord, EstimateRecord, StateRecord};
use crate::HarnessError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub n_limbs: usize,
    pub truth: Vec<StateRecord>,
    pub estimate: Vec<EstimateRecord>,
    pub baseline: Option<Vec<BaselineRecord>>,
    /// Wall time of each filter iteration; empty for the initial row.
    pub step_times_us: Vec<Option<f64>>,
}

/// Simulates the configured scenario and runs the estimator on it.
pub fn run(cfg: &RunConfig) -> Result<RunOutput, HarnessError> {
    cfg.validate()?;
    let sim = simulate(&cfg.simulation)?;
    estimate(cfg, &sim, &Rotation::identity())
}

fn rotate_pose(world: &Rotation, r: &RestPose) -> RestPose {
    RestPose::new(world * &r.position, world * &r.orientation)
}

struct Context<'a> {
    sim: &'a SimOutput,
    world: Rotation,
    hidden: BTreeSet<ContactId>,
    mode: OdometryMode<f64>,
}

impl Context<'_> {
    fn visible<'s>(&'s self, f: &'s SimFrame) -> impl Iterator<Item = &'s LimbSample> + 's {
        f.limbs.iter().filter(|l| !self.hidden.contains(&l.id()))
    }

    fn contact_input(&self, l: &LimbSample) -> ContactInput {
        ContactInput {
            initial_rest_pose: l.input.initial_rest_pose.map(|r| rotate_pose(&self.world, &r)),
            ..l.input
        }
    }

    fn input_frame(&self, f: &SimFrame, active: &BTreeSet<ContactId>) -> InputFrame {
        let mut u = InputFrame::rigid_body(self.sim.mass, self.sim.inertia, vec![self.sim.imu]);
        let mut residual = Wrench::zero();
        for l in self.visible(f) {
            if active.contains(&l.id()) {
                u.contacts.push(self.contact_input(l));
            } else {
                let w = wrench_at_centroid(&l.input, &l.measured);
                residual = Wrench::new(residual.force + w.force, residual.torque + w.torque);
            }
        }
        u.residual = residual;
        u
    }

    fn measurement(&self, f: &SimFrame, active: &BTreeSet<ContactId>) -> MeasurementFrame {
        MeasurementFrame {
            imus: vec![Some(f.imu)],
            wrenches: self
                .visible(f)
                .filter(|l| active.contains(&l.id()))
                .map(|l| (l.id(), l.measured))
                .collect(),
        }
    }

    fn rest_guess(&self, kin: &CentroidKinematics<f64>, l: &LimbSample) -> Result<RestPose, legged_mekf::Error> {
        let input = self.contact_input(l);
        let reference = input.initial_rest_pose;
        let six = match self.mode {
            OdometryMode::None => reference.unwrap_or_default(),
            _ => init_rest_pose_6d(kin, &input, &l.measured)?,
        };
        apply_mode(l.id(), six, &self.mode, reference.as_ref())
    }

    fn truth_record(&self, f: &SimFrame) -> StateRecord {
        let w = &self.world;
        let tr = &f.truth;
        let r = w * &tr.orientation;
        let mut ext = tr.perturbation;
        for l in f.limbs.iter().filter(|l| self.hidden.contains(&l.id())) {
            let h = l.truth_wrench_at_centroid();
            ext = Wrench::new(ext.force + h.force, ext.torque + h.torque);
        }
        StateRecord {
            t: f.time,
            position: (w * &tr.position).into(),
            orientation: r.wxyz(),
            linear_velocity: (w * &tr.linear_velocity).into(),
            angular_velocity: (r * tr.angular_velocity).into(),
            contacts: f
                .limbs
                .iter()
                .map(|l| {
                    l.truth_anchor.map(|a| {
                        let a = rotate_pose(w, &a);
                        ContactRecord {
                            rest_position: a.position.into(),
                            rest_orientation: a.orientation.wxyz(),
                            force: l.truth_wrench.force.into(),
                            torque: l.truth_wrench.torque.into(),
                        }
                    })
                })
                .collect(),
            gyro_bias: tr.gyro_bias.into(),
            external_force: ext.force.into(),
            external_torque: ext.torque.into(),
        }
    }

    fn estimate_record(&self, t: f64, est: &Estimator) -> EstimateRecord {
        let x = est.state();
        let k = &x.kinematics;
        let p = est.covariance();
        let layout = x.layout();
        let n_limbs = self.sim.frames[0].limbs.len();
        let diag = |i: usize| Some(p[(i, i)]);
        let mut covariance: Vec<Option<f64>> = (0..12).map(diag).collect();
        covariance.extend((0..3).map(|i| diag(layout.gyro_bias(0) + i)));
        covariance.extend((0..6).map(|i| diag(layout.external_force() + i)));
        let mut contacts = vec![None; n_limbs];
        for (i, slot) in contacts.iter_mut().enumerate() {
            match x.contact_index(ContactId(i as u32)) {
                Some(ci) => {
                    let c = &x.contacts[ci];
                    *slot = Some(ContactRecord {
                        rest_position: c.rest.position.into(),
                        rest_orientation: c.rest.orientation.wxyz(),
                        force: c.wrench.force.into(),
                        torque: c.wrench.torque.into(),
                    });
                    covariance.extend(layout.contact_range(ci).map(diag));
                }
                None => covariance.extend(std::iter::repeat_n(None, 12)),
            }
        }
        EstimateRecord {
            state: StateRecord {
                t,
                position: k.world_position().into(),
                orientation: k.orientation.wxyz(),
                linear_velocity: k.world_linear_velocity().into(),
                angular_velocity: k.world_angular_velocity().into(),
                contacts,
                gyro_bias: x.gyro_biases[0].into(),
                external_force: x.external.force.into(),
                external_torque: x.external.torque.into(),
            },
            covariance,
        }
    }

    fn observations(&self, f: &SimFrame, active: &BTreeSet<ContactId>) -> Vec<LimbObservation<f64>> {
        self.visible(f)
            .filter(|l| active.contains(&l.id()))
            .map(|l| LimbObservation {
                id: l.id(),
                kind: match l.kind {
                    LimbKind::Foot => AnchorKind::Foot,
                    LimbKind::Hand => AnchorKind::Hand,
                },
                position: l.input.position,
                orientation: l.input.orientation,
                force_norm: l.measured.force.norm(),
            })
            .collect()
    }
}

fn apply_changes(
    ctx: &Context,
    est: &mut Estimator,
    detector: &mut ContactDetector<f64>,
    f: &SimFrame,
    step: usize,
) -> Result<(), HarnessError> {
    let wrap = |source| HarnessError::Estimator { step, source };
    let changes = detector.update(ctx.visible(f).map(|l| (l.id(), l.measured.force)), ctx.sim.mass);
    for id in changes.broken {
        est.remove_contact(id).map_err(wrap)?;
    }
    for id in changes.created {
        let l = f.limbs.iter().find(|l| l.id() == id).expect("detected limb exists");
        let rest = ctx.rest_guess(&est.state().kinematics, l).map_err(wrap)?;
        let input = ContactInput {
            initial_rest_pose: Some(rest),
            ..l.input
        };
        est.add_contact(&input, Some(&l.measured)).map_err(wrap)?;
    }
    Ok(())
}

/// Runs the estimator (and the baseline) on a simulated stream. `world` is
/// a rotation applied to the whole world: initial pose, planned rest poses
/// and the logged truth.
pub fn estimate(cfg: &RunConfig, sim: &SimOutput, world: &Rotation) -> Result<RunOutput, HarnessError> {
    let ec = &cfg.estimator;
    let n_limbs = sim.frames.first().map_or(0, |f| f.limbs.len());
    for id in &ec.hide_contacts {
        if *id as usize >= n_limbs {
            return Err(HarnessError::Invalid(format!(
                "hidden contact {id} does not exist ({n_limbs} limbs)"
            )));
        }
    }
    let ctx = Context {
        sim,
        world: *world,
        hidden: ec.hide_contacts.iter().map(|i| ContactId(*i)).collect(),
        mode: ec.odometry_mode(),
    };
    let frames = &sim.frames;
    let f0 = &frames[0];
    let tr = &f0.truth;
    let err = &ec.initial_error;
    let r0 = Rotation::exp(&Vector3::from(err.rotation)) * (world * &tr.orientation);
    let p0 = world * &tr.position + Vector3::from(err.position);
    let v0 = world * &tr.linear_velocity;
    let w0 = (world * &tr.orientation) * tr.angular_velocity;
    let mut x0 = EstimatorState::new(1);
    x0.kinematics = CentroidKinematics::from_world(&p0, r0, &v0, &w0);
    let mut est =
        Estimator::new(x0, ec.noise(), sim.dt).map_err(|source| HarnessError::Estimator { step: 0, source })?;
    let mut detector =
        ContactDetector::new(ec.threshold, ec.break_ratio).map_err(|e| HarnessError::Invalid(e.to_string()))?;
    let mut baseline = ec.baseline.then(|| {
        let planar = match ctx.mode {
            OdometryMode::Planar { ground_height } => Some(ground_height),
            _ => None,
        };
        LeggedOdometry::new(p0, r0, planar)
    });

    let mut truth = Vec::with_capacity(frames.len());
    let mut estimates = Vec::with_capacity(frames.len());
    let mut base_rows = Vec::with_capacity(frames.len());
    let mut times = Vec::with_capacity(frames.len());

    apply_changes(&ctx, &mut est, &mut detector, f0, 0)?;
    let mut record_baseline =
        |b: &mut Option<LeggedOdometry>, f: &SimFrame, active: &BTreeSet<ContactId>, est: &Estimator| {
            if let Some(b) = b.as_mut() {
                b.update(&ctx.observations(f, active), &est.state().kinematics.orientation);
                base_rows.push(BaselineRecord {
                    t: f.time,
                    position: (*b.position()).into(),
                    orientation: b.orientation().wxyz(),
                });
            }
        };
    record_baseline(&mut baseline, f0, detector.active(), &est);
    truth.push(ctx.truth_record(f0));
    estimates.push(ctx.estimate_record(f0.time, &est));
    times.push(None);

    for k in 0..frames.len().saturating_sub(1) {
        let (f, g) = (&frames[k], &frames[k + 1]);
        if k > 0 {
            apply_changes(&ctx, &mut est, &mut detector, f, k)?;
        }
        let active = detector.active().clone();
        let u = ctx.input_frame(f, &active);
        let next = ctx.input_frame(g, &active);
        let y = ctx.measurement(g, &active);
        let start = Instant::now();
        est.step(&u, &next, &y)
            .map_err(|source| HarnessError::Estimator { step: k + 1, source })?;
        let elapsed = start.elapsed();
        if !est.state().is_finite() {
            return Err(HarnessError::Diverged { step: k + 1 });
        }
        record_baseline(&mut baseline, g, &active, &est);
        truth.push(ctx.truth_record(g));
        estimates.push(ctx.estimate_record(g.time, &est));
        times.push(Some(elapsed.as_secs_f64() * 1e6));
    }
    Ok(RunOutput {
        n_limbs,
        truth,
        estimate: estimates,
        baseline: baseline.map(|_| base_rows),
        step_times_us: times,
    })
}

pub const TRUTH_FILE: &str = "truth.csv";
pub const ESTIMATE_FILE: &str = "estimate.csv";
pub const BASELINE_FILE: &str = "baseline.csv";
pub const METRICS_FILE: &str = "metrics.csv";

/// Writes the run logs and metrics into `dir`. Step times are only logged
/// with `timing`, which keeps the files reproducible otherwise.
pub fn write_outputs(dir: &Path, out: &RunOutput, timing: bool) -> Result<RunMetrics, HarnessError> {
    std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let m = compute_metrics(
        &out.truth,
        &out.estimate,
        out.baseline.as_deref(),
        timing.then_some(out.step_times_us.as_slice()),
    )?;
    records::write_truth(&dir.join(TRUTH_FILE), out.n_limbs, &out.truth)?;
    records::write_estimate(&dir.join(ESTIMATE_FILE), out.n_limbs, &out.estimate)?;
    let baseline = dir.join(BASELINE_FILE);
    match &out.baseline {
        Some(b) => records::write_baseline(&baseline, b)?,
        None => {
            if baseline.exists() {
                std::fs::remove_file(&baseline).map_err(|source| HarnessError::Io { path: baseline, source })?;
            }
        }
    }
    records::write_metrics(&dir.join(METRICS_FILE), &m.rows)?;
    Ok(m)
}

/// Recomputes the metrics of a run directory from its truth, estimate and
/// baseline logs. Step times are taken from its metrics log when present.
pub fn metrics_from_dir(dir: &Path) -> Result<RunMetrics, HarnessError> {
    let truth = records::read_truth(&dir.join(TRUTH_FILE))?;
    let estimate = records::read_estimate(&dir.join(ESTIMATE_FILE))?;
    let baseline_path = dir.join(BASELINE_FILE);
    let baseline = baseline_path
        .exists()
        .then(|| records::read_baseline(&baseline_path))
        .transpose()?;
    let metrics_path = dir.join(METRICS_FILE);
    let times = metrics_path
        .exists()
        .then(|| records::read_metrics(&metrics_path))
        .transpose()?
        .map(|rows| rows.iter().map(|r| r.step_time_us).collect::<Vec<_>>())
        .filter(|t| t.len() == truth.len());
    compute_metrics(&truth, &estimate, baseline.as_deref(), times.as_deref())
}
