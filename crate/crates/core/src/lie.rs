//! SO(3) and R^3 primitives.
//!
//! Rotations are stored as unit quaternions with a cached matrix view. The
//! quaternion is renormalized after every operation so that long chains of
//! small compositions (one per filter step) do not drift off the manifold.
//!
//! Perturbations follow the right (body-frame) convention everywhere:
//! `R ⊞ δ = R · Exp(δ)` and `R1 ⊟ R2 = Log(R2ᵀ R1)`.

use core::ops::Mul;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// Cross-product matrix: `skew(v) * w == v.cross(&w)`.
pub fn skew<T: Real>(v: &Vector3<T>) -> Matrix3<T> {
    let z = T::zero();
    Matrix3::new(z, -v.z, v.y, v.z, z, -v.x, -v.y, v.x, z)
}

/// Inverse of [`skew`]. Rejects matrices whose symmetric part exceeds `1e-9`
/// (scaled by the matrix magnitude for large inputs).
pub fn vee<T: Real>(m: &Matrix3<T>) -> Result<Vector3<T>> {
    let asym = (m + m.transpose()).norm();
    let scale = T::one().max(m.norm());
    if asym > lit::<T>(1e-9) * scale {
        return Err(Error::NotAntisymmetric {
            asymmetry: asym.to_f64(),
        });
    }
    Ok(vee_unchecked(m))
}

/// Reads the axial vector of the antisymmetric part, `½·vec(M − Mᵀ)`.
#[inline]
pub fn vee_unchecked<T: Real>(m: &Matrix3<T>) -> Vector3<T> {
    let half = lit::<T>(0.5);
    Vector3::new(
        (m[(2, 1)] - m[(1, 2)]) * half,
        (m[(0, 2)] - m[(2, 0)]) * half,
        (m[(1, 0)] - m[(0, 1)]) * half,
    )
}

/// Rotation in SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation<T: Real> {
    quat: UnitQuaternion<T>,
    mat: Matrix3<T>,
}

impl<T: Real> Default for Rotation<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> Rotation<T> {
    pub fn identity() -> Self {
        Self {
            quat: UnitQuaternion::identity(),
            mat: Matrix3::identity(),
        }
    }

    /// Builds a rotation from an arbitrary (non-zero) quaternion, normalizing it.
    pub fn from_quaternion(q: Quaternion<T>) -> Self {
        let quat = UnitQuaternion::new_normalize(q);
        let mat = quat.to_rotation_matrix().into_inner();
        Self { quat, mat }
    }

    /// Components in `(w, x, y, z)` order.
    pub fn from_wxyz(w: T, x: T, y: T, z: T) -> Self {
        Self::from_quaternion(Quaternion::new(w, x, y, z))
    }

    /// Projects a (nearly) orthonormal matrix onto SO(3).
    pub fn from_matrix(m: &Matrix3<T>) -> Self {
        let quat = UnitQuaternion::from_matrix_eps(m, T::default_epsilon(), 100, UnitQuaternion::identity());
        Self::from_quaternion(quat.into_inner())
    }

    /// Rotation of `angle` about the world vertical axis.
    pub fn about_z(angle: T) -> Self {
        Self::exp(&Vector3::new(T::zero(), T::zero(), angle))
    }

    /// `Exp: R^3 -> SO(3)`, rotation by `|w|` about `w / |w|`.
    pub fn exp(w: &Vector3<T>) -> Self {
        let theta2 = w.norm_squared();
        let theta = theta2.sqrt();
        let half = lit::<T>(0.5);
        let (c, s) = if theta < T::small_angle() {
            (T::one() - theta2 / lit(8.0), half - theta2 / lit(48.0))
        } else {
            let h = theta * half;
            (h.cos(), h.sin() / theta)
        };
        Self::from_quaternion(Quaternion::new(c, w.x * s, w.y * s, w.z * s))
    }

    /// `Log: SO(3) -> R^3`, minimal-norm rotation vector.
    ///
    /// The angle is read from the quaternion with `atan2`, which stays
    /// accurate near zero and near π. At exactly π the axis sign is chosen so
    /// that its largest-magnitude component is positive.
    pub fn log(&self) -> Vector3<T> {
        let q = self.quat.quaternion();
        let (mut w, mut v) = (q.w, q.imag());
        if w < T::zero() {
            w = -w;
            v = -v;
        }
        let n = v.norm();
        if n < T::small_angle() * lit(0.5) {
            // θ/n ≈ 2/w · (1 - n²/(3w²))
            let scale = lit::<T>(2.0) / w * (T::one() - n * n / (lit::<T>(3.0) * w * w));
            return v * scale;
        }
        if w == T::zero() {
            let mut axis = v / n;
            let imax = axis.iamax();
            if axis[imax] < T::zero() {
                axis = -axis;
            }
            return axis * T::pi();
        }
        let theta = lit::<T>(2.0) * n.atan2(w);
        v * (theta / n)
    }

    #[inline]
    pub fn matrix(&self) -> &Matrix3<T> {
        &self.mat
    }

    #[inline]
    pub fn quaternion(&self) -> &UnitQuaternion<T> {
        &self.quat
    }

    /// `(w, x, y, z)` components of the unit quaternion.
    pub fn wxyz(&self) -> [T; 4] {
        let q = self.quat.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn transpose(&self) -> Self {
        Self {
            quat: self.quat.inverse(),
            mat: self.mat.transpose(),
        }
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> T {
        self.log().norm()
    }

    /// `R ⊞ δ = R · Exp(δ)`.
    pub fn boxplus(&self, delta: &Vector3<T>) -> Self {
        *self * Self::exp(delta)
    }

    /// `self ⊟ other = Log(otherᵀ · self)`, the inverse of [`Rotation::boxplus`].
    pub fn boxminus(&self, other: &Self) -> Vector3<T> {
        if self.quat == other.quat {
            return Vector3::zeros();
        }
        (other.transpose() * *self).log()
    }

    /// `½·vec(R − Rᵀ)`, equal to `sin(θ)·u` for a rotation of angle θ about u.
    pub fn antisymmetric_vec(&self) -> Vector3<T> {
        vee_unchecked(&self.mat)
    }
}

impl<T: Real> Mul for Rotation<T> {
    type Output = Rotation<T>;

    fn mul(self, rhs: Self) -> Self {
        Self::from_quaternion(self.quat.into_inner() * rhs.quat.into_inner())
    }
}

impl<T: Real> Mul<&Rotation<T>> for &Rotation<T> {
    type Output = Rotation<T>;

    fn mul(self, rhs: &Rotation<T>) -> Rotation<T> {
        *self * *rhs
    }
}

impl<T: Real> Mul<Vector3<T>> for Rotation<T> {
    type Output = Vector3<T>;

    fn mul(self, v: Vector3<T>) -> Vector3<T> {
        self.mat * v
    }
}

impl<T: Real> Mul<&Vector3<T>> for &Rotation<T> {
    type Output = Vector3<T>;

    fn mul(self, v: &Vector3<T>) -> Vector3<T> {
        self.mat * v
    }
}

#[inline]
pub fn exp_so3<T: Real>(w: &Vector3<T>) -> Rotation<T> {
    Rotation::exp(w)
}

#[inline]
pub fn log_so3<T: Real>(r: &Rotation<T>) -> Vector3<T> {
    r.log()
}

/// Geodesic interpolation `R1 · Exp(ρ · Log(R1ᵀ R2))`.
pub fn interpolate<T: Real>(r1: &Rotation<T>, r2: &Rotation<T>, rho: T) -> Rotation<T> {
    let rel = (r1.transpose() * *r2).log();
    *r1 * Rotation::exp(&(rel * rho))
}

/// Minimal rotation `R_tilt` with `R_tiltᵀ e_z = Rᵀ e_z`: the roll/pitch part
/// of `r` without any twist about the vertical.
pub fn tilt_part<T: Real>(r: &Rotation<T>) -> Rotation<T> {
    // body-frame direction of the world vertical
    let t = r.transpose() * Vector3::z();
    let axis = t.cross(&Vector3::z());
    let s = axis.norm();
    let c = t.z;
    if s < T::small_angle() {
        if c > T::zero() {
            return Rotation::identity();
        }
        return Rotation::exp(&Vector3::new(T::pi(), T::zero(), T::zero()));
    }
    Rotation::exp(&(axis * (s.atan2(c) / s)))
}

/// Splits `r = R_z(yaw) · R_tilt` and returns `(yaw, R_tilt)`.
pub fn split_yaw_tilt<T: Real>(r: &Rotation<T>) -> (T, Rotation<T>) {
    let tilt = tilt_part(r);
    let yaw_rot = *r * tilt.transpose();
    let m = yaw_rot.matrix();
    (m[(1, 0)].atan2(m[(0, 0)]), tilt)
}

/// Yaw angle of the minimal-twist decomposition.
pub fn yaw<T: Real>(r: &Rotation<T>) -> T {
    split_yaw_tilt(r).0
}

/// Keeps the yaw of `yaw_source` and replaces its tilt with the tilt of
/// `tilt_source`.
pub fn merge_yaw_tilt<T: Real>(yaw_source: &Rotation<T>, tilt_source: &Rotation<T>) -> Rotation<T> {
    Rotation::about_z(yaw(yaw_source)) * tilt_part(tilt_source)
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle<T: Real>(a: T) -> T {
    let two_pi = T::two_pi();
    let mut r = a % two_pi;
    if r > T::pi() {
        r -= two_pi;
    } else if r <= -T::pi() {
        r += two_pi;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use core::f64::consts::{FRAC_PI_2, PI};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, max_norm: f64) -> Vector3<f64> {
        loop {
            let v = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if v.norm() <= 1.0 && v.norm() > 1e-3 {
                return v * max_norm;
            }
        }
    }

    /// Matrix Rodrigues formula, independent of the quaternion path.
    fn rodrigues(w: &Vector3<f64>) -> Matrix3<f64> {
        let th = w.norm();
        let k = skew(w);
        if th == 0.0 {
            return Matrix3::identity();
        }
        Matrix3::identity() + k * (th.sin() / th) + k * k * ((1.0 - th.cos()) / (th * th))
    }

    #[test]
    fn skew_examples() {
        assert_eq!(skew(&Vector3::<f64>::zeros()), Matrix3::zeros());
        let s = skew(&Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(s, Matrix3::new(0.0, -3.0, 2.0, 3.0, 0.0, -1.0, -2.0, 1.0, 0.0));
        let v = Vector3::new(0.3, -0.1, 0.7);
        assert_eq!(vee(&skew(&v)).unwrap(), v);
        let w = Vector3::new(-2.0, 0.5, 1.0);
        assert_relative_eq!(skew(&v) * w, v.cross(&w), epsilon = 1e-15);
    }

    #[test]
    fn vee_examples() {
        assert_eq!(vee(&Matrix3::<f64>::zeros()).unwrap(), Vector3::zeros());
        let v = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(vee(&skew(&v)).unwrap(), v);
        let v = Vector3::new(-PI, 0.0, PI);
        assert_eq!(vee(&skew(&v)).unwrap(), v);
        let mut m = skew(&v);
        m[(0, 0)] = 1e-3;
        assert!(matches!(vee(&m), Err(Error::NotAntisymmetric { .. })));
    }

    #[test]
    fn exp_examples() {
        assert_eq!(Rotation::<f64>::exp(&Vector3::zeros()).matrix(), &Matrix3::identity());
        let r = Rotation::exp(&Vector3::new(FRAC_PI_2, 0.0, 0.0));
        assert_relative_eq!(r * Vector3::y(), Vector3::z(), epsilon = 1e-15);
        // Rodrigues oracle
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let w = random_vec(&mut rng, 3.0);
            assert_relative_eq!(*Rotation::exp(&w).matrix(), rodrigues(&w), epsilon = 1e-13);
        }
        // small-angle branch agrees with the closed form
        let w = Vector3::new(3e-9, -1e-9, 2e-9);
        assert_relative_eq!(*Rotation::exp(&w).matrix(), rodrigues(&w), epsilon = 1e-16);
    }

    #[test]
    fn log_examples() {
        assert_eq!(Rotation::<f64>::identity().log(), Vector3::zeros());
        let w = Vector3::new(0.0, 1.2, 0.0);
        assert_relative_eq!(Rotation::exp(&w).log(), w, epsilon = 1e-15);
        let w = Vector3::new(0.0, 0.0, PI - 1e-6);
        let r = Rotation::exp(&w);
        assert_relative_eq!(r.log(), w, epsilon = 1e-8);
        // quaternion-angle oracle
        let q = r.quaternion();
        assert_relative_eq!(2.0 * q.w.abs().acos(), PI - 1e-6, epsilon = 1e-8);
    }

    #[test]
    fn log_at_pi_uses_sign_convention() {
        let r = Rotation::<f64>::from_wxyz(0.0, 0.0, -1.0, 0.0);
        assert_relative_eq!(r.log(), Vector3::new(0.0, PI, 0.0), epsilon = 1e-15);
        let r = Rotation::<f64>::from_wxyz(0.0, 0.6, -0.8, 0.0);
        let l = r.log();
        assert!(l.y > 0.0);
        assert_relative_eq!(l.norm(), PI, epsilon = 1e-15);
    }

    #[test]
    fn roundtrips() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let v = random_vec(&mut rng, PI - 0.01);
            assert_relative_eq!(Rotation::exp(&v).log(), v, epsilon = 1e-9);
        }
    }

    #[test]
    fn rotation_invariants_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut r = Rotation::<f64>::identity();
        for _ in 0..10_000 {
            r = r * Rotation::exp(&random_vec(&mut rng, 0.1));
        }
        let m = r.matrix();
        assert!((m.transpose() * m - Matrix3::identity()).norm() < 1e-12);
        assert!((m.determinant() - 1.0).abs() < 1e-12);
        assert!((r.quaternion().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exp_rotates_by_norm() {
        let w = Vector3::new(0.0, 0.0, 0.7);
        let v = Vector3::new(2.0, 0.0, 0.0);
        let rv = Rotation::exp(&w) * v;
        assert_relative_eq!(v.angle(&rv), 0.7, epsilon = 1e-12);
    }

    #[test]
    fn antisymmetric_vec_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let w = random_vec(&mut rng, PI - 0.01);
            let r = Rotation::exp(&w);
            let l = r.log();
            let th = l.norm();
            assert_relative_eq!(r.antisymmetric_vec(), l * (th.sin() / th), epsilon = 1e-9);
        }
    }

    #[test]
    fn interpolate_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r1 = Rotation::exp(&random_vec(&mut rng, 2.0));
        let r2 = Rotation::exp(&random_vec(&mut rng, 2.0));
        assert_relative_eq!(*interpolate(&r1, &r2, 0.0).matrix(), *r1.matrix(), epsilon = 1e-15);
        assert_relative_eq!(*interpolate(&r1, &r2, 1.0).matrix(), *r2.matrix(), epsilon = 1e-12);
        let mid = interpolate(&Rotation::identity(), &Rotation::exp(&Vector3::new(0.0, 0.0, 0.4)), 0.5);
        assert_relative_eq!(mid.log(), Vector3::new(0.0, 0.0, 0.2), epsilon = 1e-15);
        // nalgebra slerp as an independent oracle
        let want = r1.quaternion().slerp(r2.quaternion(), 0.3);
        let got = interpolate(&r1, &r2, 0.3);
        assert!(got.quaternion().angle_to(&want) < 1e-9);
    }

    #[test]
    fn yaw_tilt_split_recomposes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..500 {
            let r = Rotation::exp(&random_vec(&mut rng, 2.5));
            let (psi, tilt) = split_yaw_tilt(&r);
            let back = Rotation::about_z(psi) * tilt;
            assert_relative_eq!(*back.matrix(), *r.matrix(), epsilon = 1e-12);
            // the tilt part carries no twist about its own vertical
            let tz = tilt.log();
            let up = tilt.transpose() * Vector3::z();
            assert!(tz.dot(&up).abs() < 1e-12);
        }
    }

    #[test]
    fn wrap_angle_range() {
        assert_relative_eq!(wrap_angle(3.0 * PI), PI, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(-0.5f64), -0.5);
        assert_relative_eq!(wrap_angle(2.0 * PI + 0.1), 0.1, epsilon = 1e-12);
    }

    #[test]
    fn works_in_single_precision() {
        let w = Vector3::new(0.3f32, -0.2, 0.9);
        let r = Rotation::exp(&w);
        assert!((r.log() - w).norm() < 1e-5);
        let tiny = Vector3::new(1e-6f32, 0.0, 0.0);
        assert!((Rotation::exp(&tiny).log() - tiny).norm() < 1e-10);
    }
}
