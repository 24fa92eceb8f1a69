//! Multiplicative extended Kalman filter over the estimator state.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, Vector3};

use crate::dynamics::transition;
use crate::error::{Error, Result};
use crate::measurement::{measurement_variances, predict_measurements, stack_measurements, SensorMask};
use crate::scalar::{lit, Real};
use crate::state::{
    add_contact, remove_contact, ContactBlocks, ContactId, ContactInput, ContactState, EstimatorState, InputFrame,
    MeasurementFrame, StateLayout, Wrench,
};

/// Diagonal covariance blocks for every state symbol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateBlocks<T: Real> {
    pub position: Vector3<T>,
    pub orientation: Vector3<T>,
    pub linear_velocity: Vector3<T>,
    pub angular_velocity: Vector3<T>,
    pub gyro_bias: Vector3<T>,
    pub external_force: Vector3<T>,
    pub external_torque: Vector3<T>,
    pub contact: ContactBlocks<T>,
}

impl<T: Real> StateBlocks<T> {
    pub fn zero() -> Self {
        Self {
            position: Vector3::zeros(),
            orientation: Vector3::zeros(),
            linear_velocity: Vector3::zeros(),
            angular_velocity: Vector3::zeros(),
            gyro_bias: Vector3::zeros(),
            external_force: Vector3::zeros(),
            external_torque: Vector3::zeros(),
            contact: ContactBlocks::zero(),
        }
    }

    /// Diagonal laid out according to `layout`.
    pub fn diagonal(&self, layout: &StateLayout) -> DVector<T> {
        let mut d = DVector::zeros(layout.dim());
        let mut put = |at: usize, v: &Vector3<T>| d.fixed_rows_mut::<3>(at).copy_from(v);
        put(StateLayout::POSITION, &self.position);
        put(StateLayout::ORIENTATION, &self.orientation);
        put(StateLayout::LINEAR_VELOCITY, &self.linear_velocity);
        put(StateLayout::ANGULAR_VELOCITY, &self.angular_velocity);
        for j in 0..layout.n_imu {
            put(layout.gyro_bias(j), &self.gyro_bias);
        }
        put(layout.external_force(), &self.external_force);
        put(layout.external_torque(), &self.external_torque);
        for i in 0..layout.n_contacts {
            let s = layout.contact(i);
            put(s + StateLayout::REST_POSITION, &self.contact.rest_position);
            put(s + StateLayout::REST_ORIENTATION, &self.contact.rest_orientation);
            put(s + StateLayout::FORCE, &self.contact.force);
            put(s + StateLayout::TORQUE, &self.contact.torque);
        }
        d
    }

    pub fn matrix(&self, layout: &StateLayout) -> DMatrix<T> {
        DMatrix::from_diagonal(&self.diagonal(layout))
    }

    fn all(&self) -> [&Vector3<T>; 11] {
        [
            &self.position,
            &self.orientation,
            &self.linear_velocity,
            &self.angular_velocity,
            &self.gyro_bias,
            &self.external_force,
            &self.external_torque,
            &self.contact.rest_position,
            &self.contact.rest_orientation,
            &self.contact.force,
            &self.contact.torque,
        ]
    }
}

/// Measurement noise variances per sensor type.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementNoise<T: Real> {
    pub accelerometer: Vector3<T>,
    pub gyro: Vector3<T>,
    pub force: Vector3<T>,
    pub torque: Vector3<T>,
}

/// Process, measurement and initial covariances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig<T: Real> {
    pub initial: StateBlocks<T>,
    pub process: StateBlocks<T>,
    pub measurement: MeasurementNoise<T>,
}

fn rep<T: Real>(x: f64) -> Vector3<T> {
    Vector3::repeat(lit(x))
}

fn v<T: Real>(x: f64, y: f64, z: f64) -> Vector3<T> {
    Vector3::new(lit(x), lit(y), lit(z))
}

impl<T: Real> Default for NoiseConfig<T> {
    fn default() -> Self {
        Self {
            initial: StateBlocks {
                position: rep(0.0),
                orientation: rep(0.0),
                linear_velocity: rep(0.0),
                angular_velocity: rep(0.0),
                gyro_bias: rep(1e-2),
                external_force: rep(0.0),
                external_torque: rep(0.0),
                contact: ContactBlocks {
                    rest_position: v(1e-9, 1e-8, 1e-8),
                    rest_orientation: rep(1e-6),
                    force: rep(400.0),
                    torque: rep(360.0),
                },
            },
            process: StateBlocks {
                position: rep(1e-10),
                orientation: rep(1e-12),
                linear_velocity: rep(0.0),
                angular_velocity: rep(0.0),
                gyro_bias: rep(1e-12),
                external_force: rep(9e-2),
                external_torque: rep(5e-2),
                contact: ContactBlocks {
                    rest_position: rep(0.0),
                    rest_orientation: rep(0.0),
                    force: v(250.0, 250.0, 2500.0),
                    torque: rep(250.0),
                },
            },
            measurement: MeasurementNoise {
                accelerometer: rep(1e-4),
                gyro: rep(1e-6),
                force: rep(20.0),
                torque: rep(1.5),
            },
        }
    }
}

impl<T: Real> NoiseConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let m = &self.measurement;
        let ok = self
            .initial
            .all()
            .into_iter()
            .chain(self.process.all())
            .chain([&m.accelerometer, &m.gyro, &m.force, &m.torque])
            .all(|b| b.iter().all(|x| x.is_finite() && *x >= T::zero()));
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(
                "variances must be finite and non-negative".into(),
            ))
        }
    }
}

/// `A = ∂f/∂x` by central differences on the manifold.
pub fn jacobian_a<T: Real>(
    x: &EstimatorState<T>,
    u: &InputFrame<T>,
    next: &InputFrame<T>,
    dt: T,
    eps: T,
) -> Result<DMatrix<T>> {
    let f0 = transition(x, u, next, dt)?;
    let n = x.tangent_dim();
    let mut a = DMatrix::zeros(n, n);
    let two_eps = eps + eps;
    for c in 0..n {
        let fp = transition(&x.boxplus_axis(c, eps), u, next, dt)?;
        let fm = transition(&x.boxplus_axis(c, -eps), u, next, dt)?;
        let col = (fp.boxminus(&f0)? - fm.boxminus(&f0)?) / two_eps;
        a.set_column(c, &col);
    }
    Ok(a)
}

/// `C = ∂g/∂x` by central differences, rows of the sensors in `mask`.
pub fn jacobian_c<T: Real>(x: &EstimatorState<T>, u: &InputFrame<T>, mask: &SensorMask, eps: T) -> Result<DMatrix<T>> {
    let n = x.tangent_dim();
    let mut c = DMatrix::zeros(mask.dim(), n);
    if mask.is_empty() {
        return Ok(c);
    }
    let two_eps = eps + eps;
    for k in 0..n {
        let gp = predict_measurements(&x.boxplus_axis(k, eps), u, mask)?;
        let gm = predict_measurements(&x.boxplus_axis(k, -eps), u, mask)?;
        c.set_column(k, &((gp - gm) / two_eps));
    }
    Ok(c)
}

pub fn symmetrize<T: Real>(p: &mut DMatrix<T>) {
    let half = lit::<T>(0.5);
    let n = p.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let m = (p[(i, j)] + p[(j, i)]) * half;
            p[(i, j)] = m;
            p[(j, i)] = m;
        }
    }
}

/// Prediction: `x̄ = f(x, u)`, `P̄ = A P Aᵀ + Q`.
pub fn predict<T: Real>(
    x: &EstimatorState<T>,
    p: &DMatrix<T>,
    u: &InputFrame<T>,
    next: &InputFrame<T>,
    noise: &NoiseConfig<T>,
    dt: T,
) -> Result<(EstimatorState<T>, DMatrix<T>)> {
    let xbar = transition(x, u, next, dt)?;
    let a = jacobian_a(x, u, next, dt, T::fd_step())?;
    let mut pbar = &a * p * a.transpose();
    for (i, q) in noise.process.diagonal(&x.layout()).iter().enumerate() {
        pbar[(i, i)] += *q;
    }
    symmetrize(&mut pbar);
    Ok((xbar, pbar))
}

/// Result of the linear part of an update.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearUpdate<T: Real> {
    pub correction: DVector<T>,
    pub covariance: DMatrix<T>,
    pub innovation_covariance: DMatrix<T>,
}

/// Kalman gain, correction `K z` and Joseph-form covariance for a linearized
/// measurement `z ≈ C δx + noise(R)`.
pub fn kalman_update<T: Real>(
    p: &DMatrix<T>,
    c: &DMatrix<T>,
    r: &DVector<T>,
    z: &DVector<T>,
) -> Result<LinearUpdate<T>> {
    let pct = p * c.transpose();
    let mut s = c * &pct;
    for (i, ri) in r.iter().enumerate() {
        s[(i, i)] += *ri;
    }
    symmetrize(&mut s);
    let chol = match s.clone().cholesky() {
        Some(ch) => ch,
        None => {
            let mut jittered = s.clone();
            for i in 0..jittered.nrows() {
                jittered[(i, i)] += lit::<T>(1e-12);
            }
            jittered.cholesky().ok_or_else(|| Error::NonPositiveInnovation {
                min_eigenvalue: s
                    .clone()
                    .symmetric_eigenvalues()
                    .iter()
                    .fold(f64::INFINITY, |m, e| m.min(e.to_f64())),
            })?
        }
    };
    // K = P Cᵀ S⁻¹, from S Kᵀ = C P
    let k = chol.solve(&pct.transpose()).transpose();
    let correction = &k * z;
    let n = p.nrows();
    let ikc = DMatrix::identity(n, n) - &k * c;
    let mut krk = k.clone();
    for (j, rj) in r.iter().enumerate() {
        krk.column_mut(j).scale_mut(*rj);
    }
    let mut covariance = &ikc * p * ikc.transpose() + krk * k.transpose();
    symmetrize(&mut covariance);
    Ok(LinearUpdate {
        correction,
        covariance,
        innovation_covariance: s,
    })
}

/// Innovation data of one update.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct UpdateInfo<T: Real> {
    pub innovation: DVector<T>,
    pub innovation_covariance: DMatrix<T>,
}

/// Update: `x⁺ = x̄ ⊞ K (y − g(x̄, u))` with Joseph-form covariance.
pub fn update<T: Real>(
    xbar: &EstimatorState<T>,
    pbar: &DMatrix<T>,
    y: &MeasurementFrame<T>,
    u: &InputFrame<T>,
    noise: &NoiseConfig<T>,
) -> Result<(EstimatorState<T>, DMatrix<T>, UpdateInfo<T>)> {
    let mask = SensorMask::of(y);
    if mask.is_empty() {
        return Ok((xbar.clone(), pbar.clone(), UpdateInfo::default()));
    }
    let innovation = stack_measurements(y) - predict_measurements(xbar, u, &mask)?;
    let c = jacobian_c(xbar, u, &mask, T::fd_step())?;
    let m = &noise.measurement;
    let r = measurement_variances(&mask, &m.accelerometer, &m.gyro, &m.force, &m.torque);
    let lin = kalman_update(pbar, &c, &r, &innovation)?;
    let x = xbar.boxplus(&lin.correction)?;
    Ok((
        x,
        lin.covariance,
        UpdateInfo {
            innovation,
            innovation_covariance: lin.innovation_covariance,
        },
    ))
}

/// Per-step diagnostics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics<T: Real> {
    pub innovation: DVector<T>,
    pub innovation_covariance: DMatrix<T>,
    pub elapsed: Duration,
}

/// Prediction from `u` (inputs at the current time, `next` at the time of
/// `y`) followed by the update with `y`.
#[allow(clippy::too_many_arguments)]
pub fn step<T: Real>(
    x: &EstimatorState<T>,
    p: &DMatrix<T>,
    u: &InputFrame<T>,
    next: &InputFrame<T>,
    y: &MeasurementFrame<T>,
    noise: &NoiseConfig<T>,
    dt: T,
) -> Result<(EstimatorState<T>, DMatrix<T>, Diagnostics<T>)> {
    let start = Instant::now();
    let (xbar, pbar) = predict(x, p, u, next, noise, dt)?;
    let (xp, pp, info) = update(&xbar, &pbar, y, next, noise)?;
    Ok((
        xp,
        pp,
        Diagnostics {
            innovation: info.innovation,
            innovation_covariance: info.innovation_covariance,
            elapsed: start.elapsed(),
        },
    ))
}

/// Filter instance: state, covariance and tuning.
#[derive(Debug, Clone)]
pub struct Estimator<T: Real> {
    state: EstimatorState<T>,
    covariance: DMatrix<T>,
    noise: NoiseConfig<T>,
    dt: T,
}

impl<T: Real> Estimator<T> {
    /// Starts from `state` with the initial covariance of `noise`.
    pub fn new(state: EstimatorState<T>, noise: NoiseConfig<T>, dt: T) -> Result<Self> {
        noise.validate()?;
        if !(dt > T::zero()) {
            return Err(Error::InvalidParameter("time step must be positive".into()));
        }
        let covariance = noise.initial.matrix(&state.layout());
        Ok(Self {
            state,
            covariance,
            noise,
            dt,
        })
    }

    pub fn state(&self) -> &EstimatorState<T> {
        &self.state
    }

    pub fn covariance(&self) -> &DMatrix<T> {
        &self.covariance
    }

    pub fn noise(&self) -> &NoiseConfig<T> {
        &self.noise
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    /// Replaces state and covariance; dimensions must agree.
    pub fn reset(&mut self, state: EstimatorState<T>, covariance: DMatrix<T>) -> Result<()> {
        let n = state.tangent_dim();
        if covariance.shape() != (n, n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: covariance.nrows(),
            });
        }
        self.state = state;
        self.covariance = covariance;
        Ok(())
    }

    /// Adds a contact whose rest pose guess is carried by `input`.
    pub fn add_contact(&mut self, input: &ContactInput<T>, measured: Option<&Wrench<T>>) -> Result<()> {
        add_contact(
            &mut self.state,
            &mut self.covariance,
            input,
            measured,
            &self.noise.initial.contact,
        )
    }

    pub fn remove_contact(&mut self, id: ContactId) -> Result<ContactState<T>> {
        remove_contact(&mut self.state, &mut self.covariance, id)
    }

    /// One filter iteration; `u` and `next` must match the current contact set.
    pub fn step(&mut self, u: &InputFrame<T>, next: &InputFrame<T>, y: &MeasurementFrame<T>) -> Result<Diagnostics<T>> {
        let (x, p, d) = step(&self.state, &self.covariance, u, next, y, &self.noise, self.dt)?;
        self.state = x;
        self.covariance = p;
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contact::StiffnessDamping;
    use crate::dynamics::GRAVITY;
    use crate::lie::Rotation;
    use crate::measurement::predict_measurements;
    use crate::state::{ImuInput, ImuReading, RestPose};
    use approx::assert_relative_eq;
    use nalgebra::Matrix3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const DT: f64 = 0.005;

    fn v3(rng: &mut ChaCha8Rng, s: f64) -> Vector3<f64> {
        Vector3::new(
            rng.random_range(-s..s),
            rng.random_range(-s..s),
            rng.random_range(-s..s),
        )
    }

    /// Two-foot stance with one IMU; `rng` randomizes everything but the structure.
    fn scene(rng: Option<&mut ChaCha8Rng>) -> (EstimatorState<f64>, InputFrame<f64>) {
        let mut x = EstimatorState::new(1);
        x.kinematics.position = Vector3::new(0.0, 0.0, 0.8);
        let mut u = InputFrame::rigid_body(
            100.0,
            Matrix3::from_diagonal(&Vector3::new(10.0, 10.0, 5.0)),
            vec![ImuInput {
                position: Vector3::new(0.0, 0.0, 0.3),
                ..Default::default()
            }],
        );
        let k = StiffnessDamping::hrp5p();
        let half = 100.0 * GRAVITY / 2.0;
        for (i, y) in [0.1, -0.1].into_iter().enumerate() {
            let id = ContactId(i as u32);
            let p = Vector3::new(0.0, y, -0.8);
            u.contacts.push(ContactInput::fixed(id, p, Rotation::identity(), k));
            x.contacts.push(ContactState {
                id,
                rest: RestPose::new(Vector3::new(0.0, y, half / 3e5), Rotation::identity()),
                wrench: Wrench::new(Vector3::new(0.0, 0.0, half), Vector3::zeros()),
            });
        }
        if let Some(rng) = rng {
            let kin = &mut x.kinematics;
            kin.position = v3(rng, 1.0);
            kin.orientation = Rotation::exp(&v3(rng, 1.0));
            kin.linear_velocity = v3(rng, 0.5);
            kin.angular_velocity = v3(rng, 0.5);
            x.gyro_biases[0] = v3(rng, 0.1);
            x.external = Wrench::new(v3(rng, 20.0), v3(rng, 2.0));
            for c in &mut x.contacts {
                c.rest = RestPose::new(v3(rng, 1.0), Rotation::exp(&v3(rng, 1.0)));
                c.wrench = Wrench::new(v3(rng, 500.0), v3(rng, 20.0));
            }
            for ci in &mut u.contacts {
                ci.position += v3(rng, 0.1);
                ci.orientation = Rotation::exp(&v3(rng, 0.3));
                ci.linear_velocity = v3(rng, 0.2);
                ci.angular_velocity = v3(rng, 0.2);
            }
            let imu = &mut u.imus[0];
            imu.orientation = Rotation::exp(&v3(rng, 1.0));
            imu.linear_velocity = v3(rng, 0.1);
            imu.angular_velocity = v3(rng, 0.1);
            imu.linear_acceleration = v3(rng, 0.1);
        }
        (x, u)
    }

    fn full_frame(x: &EstimatorState<f64>, u: &InputFrame<f64>) -> MeasurementFrame<f64> {
        let mut y = MeasurementFrame {
            imus: vec![Some(ImuReading::default())],
            ..Default::default()
        };
        for c in &x.contacts {
            y.wrenches.insert(c.id, Wrench::zero());
        }
        let g = predict_measurements(x, u, &SensorMask::of(&y)).unwrap();
        let r = y.imus[0].as_mut().unwrap();
        r.accelerometer = Vector3::new(g[0], g[1], g[2]);
        r.gyrometer = Vector3::new(g[3], g[4], g[5]);
        for (k, w) in y.wrenches.values_mut().enumerate() {
            let s = 6 + 6 * k;
            *w = Wrench::new(
                Vector3::new(g[s], g[s + 1], g[s + 2]),
                Vector3::new(g[s + 3], g[s + 4], g[s + 5]),
            );
        }
        y
    }

    #[test]
    fn default_noise_matches_tuning_table() {
        let n = NoiseConfig::<f64>::default();
        assert_eq!(n.initial.gyro_bias, Vector3::repeat(1e-2));
        assert_eq!(n.initial.contact.force, Vector3::repeat(400.0));
        assert_eq!(n.process.contact.force, Vector3::new(250.0, 250.0, 2500.0));
        assert_eq!(n.measurement.gyro, Vector3::repeat(1e-6));
        let l = StateLayout::new(1, 2);
        let d = n.initial.diagonal(&l);
        assert_eq!(d[l.contact(1) + StateLayout::REST_POSITION], 1e-9);
        assert_eq!(d[l.contact(1) + StateLayout::TORQUE + 2], 360.0);
        let mut bad = n;
        bad.process.position.x = -1.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn jacobian_a_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (x, u) = scene(Some(&mut rng));
        let a = jacobian_a(&x, &u, &u, DT, 1e-6).unwrap();
        let l = x.layout();
        let n = l.dim();
        let mut constant: Vec<usize> = (l.gyro_bias(0)..l.external_torque() + 3).collect();
        for i in 0..l.n_contacts {
            constant.extend(l.contact(i)..l.contact(i) + 6);
        }
        for &r in &constant {
            for c in 0..n {
                let expect = if r == c { 1.0 } else { 0.0 };
                assert!((a[(r, c)] - expect).abs() < 1e-8, "A[{r},{c}] = {}", a[(r, c)]);
            }
        }

        let (mut x, u) = scene(None);
        x.kinematics.angular_velocity = Vector3::zeros();
        let a = jacobian_a(&x, &u, &u, DT, 1e-6).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { DT } else { 0.0 };
                assert!((a[(i, 6 + j)] - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn jacobian_a_matches_second_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..5 {
            let (x, u) = scene(Some(&mut rng));
            let a = jacobian_a(&x, &u, &u, DT, 1e-6).unwrap();
            let f0 = transition(&x, &u, &u, DT).unwrap();
            let h = 1e-7;
            let n = x.tangent_dim();
            let mut oracle = DMatrix::zeros(n, n);
            for c in 0..n {
                let mut d = DVector::zeros(n);
                d[c] = h;
                let fp = transition(&x.boxplus(&d).unwrap(), &u, &u, DT).unwrap();
                oracle.set_column(c, &(fp.boxminus(&f0).unwrap() / h));
            }
            let scale = oracle.amax();
            assert!(
                (&a - &oracle).amax() < 1e-5 * scale,
                "{}",
                (&a - &oracle).amax() / scale
            );
        }
    }

    #[test]
    fn jacobian_c_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let (x, u) = scene(Some(&mut rng));
        let y = full_frame(&x, &u);
        let mask = SensorMask::of(&y);
        let c = jacobian_c(&x, &u, &mask, 1e-6).unwrap();
        let l = x.layout();
        assert_eq!(c.shape(), (18, l.dim()));
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((c[(3 + i, l.gyro_bias(0) + j)] - e).abs() < 1e-8);
            }
        }
        for k in 0..2 {
            let rows = 6 + 6 * k;
            for col in 0..l.dim() {
                for r in 0..6 {
                    let e = if col == l.contact(k) + StateLayout::FORCE + r {
                        1.0
                    } else {
                        0.0
                    };
                    assert!((c[(rows + r, col)] - e).abs() < 1e-8);
                }
            }
            // no dependency on the other contact's rest pose
            let other = l.contact(1 - k);
            for r in 0..6 {
                for col in other..other + 6 {
                    assert_eq!(c[(rows + r, col)], 0.0);
                }
            }
        }
    }

    #[test]
    fn linearization_error_is_second_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let (x, u) = scene(Some(&mut rng));
        let a = jacobian_a(&x, &u, &u, DT, 1e-6).unwrap();
        let f0 = transition(&x, &u, &u, DT).unwrap();
        let n = x.tangent_dim();
        let dir = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)).normalize();
        let err = |eps: f64| {
            let f = transition(&x.boxplus(&(&dir * eps)).unwrap(), &u, &u, DT).unwrap();
            (f.boxminus(&f0).unwrap() - &a * &dir * eps).norm()
        };
        let (e1, e2) = (err(1e-2), err(5e-3));
        assert!((e1 / e2 - 4.0).abs() < 0.5, "ratio {}", e1 / e2);
    }

    #[test]
    fn predict_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let (x, u) = scene(Some(&mut rng));
        let n = x.tangent_dim();
        let mut noise = NoiseConfig::default();
        noise.process = StateBlocks::zero();
        let a = jacobian_a(&x, &u, &u, DT, 1e-6).unwrap();
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let p = &m * m.transpose() + DMatrix::identity(n, n) * 1e-3;
        let (_, pbar) = predict(&x, &p, &u, &u, &noise, DT).unwrap();
        let expect = &a * &p * a.transpose();
        assert!((&pbar - &expect).amax() < 1e-9 * expect.amax());
        let eig = pbar.clone().symmetric_eigenvalues();
        assert!(eig.min() > -1e-10 * eig.amax());

        let q = 0.25;
        let mut noise = NoiseConfig::default();
        noise.process = StateBlocks {
            position: Vector3::repeat(q),
            orientation: Vector3::repeat(q),
            linear_velocity: Vector3::repeat(q),
            angular_velocity: Vector3::repeat(q),
            gyro_bias: Vector3::repeat(q),
            external_force: Vector3::repeat(q),
            external_torque: Vector3::repeat(q),
            contact: ContactBlocks {
                rest_position: Vector3::repeat(q),
                rest_orientation: Vector3::repeat(q),
                force: Vector3::repeat(q),
                torque: Vector3::repeat(q),
            },
        };
        let (_, pbar) = predict(&x, &DMatrix::zeros(n, n), &u, &u, &noise, DT).unwrap();
        assert_eq!(pbar, DMatrix::identity(n, n) * q);
    }

    #[test]
    fn predict_keeps_covariance_of_constant_submodels() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (x, u) = scene(Some(&mut rng));
        let l = x.layout();
        let n = l.dim();
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let p = &m * m.transpose();
        let mut noise = NoiseConfig::default();
        noise.process = StateBlocks::zero();
        let (_, pbar) = predict(&x, &p, &u, &u, &noise, DT).unwrap();
        let mut constant: Vec<usize> = (l.gyro_bias(0)..l.external_torque() + 3).collect();
        for i in 0..l.n_contacts {
            constant.extend(l.contact(i)..l.contact(i) + 6);
        }
        for &i in &constant {
            for &j in &constant {
                assert!((pbar[(i, j)] - p[(i, j)]).abs() < 1e-8 * p.amax());
            }
        }
    }

    #[test]
    fn scalar_kalman_identity() {
        let (p, r) = (2.0, 3.0);
        let lin = kalman_update(
            &DMatrix::from_element(1, 1, p),
            &DMatrix::from_element(1, 1, 1.0),
            &DVector::from_element(1, r),
            &DVector::from_element(1, 1.0),
        )
        .unwrap();
        assert_relative_eq!(lin.covariance[(0, 0)], p * r / (p + r), epsilon = 1e-15);
        assert_relative_eq!(lin.correction[0], p / (p + r), epsilon = 1e-15);
    }

    #[test]
    fn joseph_matches_simple_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        for _ in 0..20 {
            let (n, m) = (8, 5);
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let p = &a * a.transpose() + DMatrix::identity(n, n);
            let c = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
            let r = DVector::from_fn(m, |_, _| rng.random_range(0.5..2.0));
            let lin = kalman_update(&p, &c, &r, &DVector::zeros(m)).unwrap();
            let s = &c * &p * c.transpose() + DMatrix::from_diagonal(&r);
            let k = &p * c.transpose() * s.try_inverse().unwrap();
            let simple = (DMatrix::identity(n, n) - &k * &c) * &p;
            assert!((lin.covariance - simple).amax() < 1e-6);
        }
    }

    #[test]
    fn non_positive_innovation_is_reported() {
        let p = DMatrix::from_element(1, 1, -5.0);
        let err = kalman_update(
            &p,
            &DMatrix::from_element(1, 1, 1.0),
            &DVector::from_element(1, 1.0),
            &DVector::from_element(1, 1.0),
        )
        .unwrap_err();
        assert_eq!(err, Error::NonPositiveInnovation { min_eigenvalue: -4.0 });
    }

    #[test]
    fn zero_innovation_leaves_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let (x, u) = scene(Some(&mut rng));
        let y = full_frame(&x, &u);
        let noise = NoiseConfig::default();
        let p = noise.initial.matrix(&x.layout()) + DMatrix::identity(x.tangent_dim(), x.tangent_dim()) * 1e-3;
        let (xp, _, info) = update(&x, &p, &y, &u, &noise).unwrap();
        assert!(info.innovation.amax() < 1e-9);
        assert!(xp.boxminus(&x).unwrap().amax() < 1e-9);
    }

    #[test]
    fn huge_measurement_noise_means_no_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(38);
        let (x, u) = scene(Some(&mut rng));
        let mut y = full_frame(&x, &u);
        y.imus[0].as_mut().unwrap().accelerometer += Vector3::new(0.3, -0.2, 0.1);
        for w in y.wrenches.values_mut() {
            w.force += Vector3::new(10.0, 5.0, -20.0);
        }
        let mut noise = NoiseConfig::default();
        noise.measurement = MeasurementNoise {
            accelerometer: Vector3::repeat(1e12),
            gyro: Vector3::repeat(1e12),
            force: Vector3::repeat(1e12),
            torque: Vector3::repeat(1e12),
        };
        let n = x.tangent_dim();
        let p = DMatrix::identity(n, n) * 1e-2;
        let (xp, pp, _) = update(&x, &p, &y, &u, &noise).unwrap();
        assert!(xp.boxminus(&x).unwrap().amax() < 1e-6);
        assert!((pp - p).amax() < 1e-6);
    }

    #[test]
    fn masked_step_is_predict() {
        let mut rng = ChaCha8Rng::seed_from_u64(39);
        let (x, u) = scene(Some(&mut rng));
        let noise = NoiseConfig::default();
        let p = noise.initial.matrix(&x.layout());
        let (xs, ps, d) = step(&x, &p, &u, &u, &MeasurementFrame::default(), &noise, DT).unwrap();
        let (xb, pb) = predict(&x, &p, &u, &u, &noise, DT).unwrap();
        assert_eq!(xs, xb);
        assert_eq!(ps, pb);
        assert_eq!(d.innovation.len(), 0);
    }

    #[test]
    fn noise_free_standing_is_a_filter_fixed_point() {
        let (x, u) = scene(None);
        let y = full_frame(&x, &u);
        let mut est = Estimator::new(x.clone(), NoiseConfig::default(), DT).unwrap();
        for _ in 0..1000 {
            est.step(&u, &u, &y).unwrap();
        }
        let err = est.state().boxminus(&x).unwrap();
        assert!(err.amax() < 1e-9, "{}", err.amax());
    }

    #[test]
    fn estimator_contact_bookkeeping() {
        let (x, u) = scene(None);
        let mut est = Estimator::new(x, NoiseConfig::default(), DT).unwrap();
        let n = est.state().tangent_dim();
        let removed = est.remove_contact(ContactId(1)).unwrap();
        assert_eq!(est.covariance().nrows(), n - 12);
        let mut ci = u.contacts[1];
        ci.initial_rest_pose = Some(removed.rest);
        est.add_contact(&ci, Some(&removed.wrench)).unwrap();
        assert_eq!(est.covariance().nrows(), n);
        assert_eq!(est.state().contacts[1], removed);
        assert!(Estimator::new(EstimatorState::<f64>::new(0), NoiseConfig::default(), 0.0).is_err());
    }

    #[test]
    fn covariance_stays_healthy_over_random_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let (x, u) = scene(None);
        let noise = NoiseConfig::default();
        let mut est = Estimator::new(x, noise, DT).unwrap();
        for _ in 0..300 {
            let mut y = full_frame(est.state(), &u);
            let r = y.imus[0].as_mut().unwrap();
            r.accelerometer += v3(&mut rng, 0.02);
            r.gyrometer += v3(&mut rng, 0.002);
            for w in y.wrenches.values_mut() {
                w.force += v3(&mut rng, 5.0);
            }
            if rng.random_bool(0.3) {
                y.imus[0] = None;
            }
            est.step(&u, &u, &y).unwrap();
            let p = est.covariance();
            assert!((p - p.transpose()).amax() < 1e-9);
            assert!(p.clone().symmetric_eigenvalues().min() >= -1e-9);
        }
    }

    #[test]
    fn f32_filter_runs() {
        let mut x = EstimatorState::<f32>::new(1);
        let u = InputFrame::<f32>::rigid_body(
            100.0,
            Matrix3::from_diagonal(&Vector3::new(10.0, 10.0, 5.0)),
            vec![ImuInput::default()],
        );
        x.kinematics.angular_velocity = Vector3::new(0.0, 0.0, 0.1);
        let y = MeasurementFrame {
            imus: vec![Some(ImuReading {
                accelerometer: Vector3::zeros(),
                gyrometer: Vector3::new(0.0, 0.0, 0.1),
            })],
            ..Default::default()
        };
        let mut est = Estimator::new(x, NoiseConfig::default(), 0.005).unwrap();
        for _ in 0..100 {
            est.step(&u, &u, &y).unwrap();
        }
        assert!(est.state().is_finite());
    }
}
