//! Matrix Lie groups used by the relative-pose estimator.
//!
//! * [`Rotation`] is an element of SO(3).
//! * [`ExtendedPose`] is an element of SE_2(3), embedded as the 5x5 matrix
//!   `[[C, v, r], [0, 1, 0], [0, 0, 1]]`.
//! * [`Increment`] is an element of DE_2(3), embedded as
//!   `[[C, v, r], [0, 1, dt], [0, 0, 1]]`. IMU input matrices, relative motion
//!   increments and intermediate filter states all live here.
//!
//! Tangent vectors are 9-vectors ordered `(attitude, velocity, position)` and
//! all elements are stored in factored form, never as raw 5x5 matrices.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix5, SMatrix, SVector, Vector3, Vector5};
use thiserror::Error;

pub type Vector9 = SVector<f64, 9>;
pub type Matrix9 = SMatrix<f64, 9, 9>;
pub type Matrix5x9 = SMatrix<f64, 5, 9>;

/// Tangent vector of SE_2(3): `(phi, nu, rho)`.
pub type Tangent = Vector9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LieError {
    #[error("rotation angle is pi: logarithm axis is ambiguous")]
    BranchAmbiguous,
    #[error("matrix is not a rotation (orthogonality error {0:e})")]
    NotARotation(f64),
    #[error("increment has non-zero time slot {0:e}; not an extended pose")]
    NotAPose(f64),
}

/// Below this angle the trigonometric coefficients are evaluated from their
/// Taylor series, which are exact to machine precision there.
const SERIES_ANGLE: f64 = 1.0;
const SERIES_TERMS: usize = 14;

fn alternating_series(theta_sq: f64, coeff: impl Fn(usize) -> f64) -> f64 {
    let mut acc = 0.0;
    let mut power = 1.0;
    for m in 0..SERIES_TERMS {
        acc += coeff(m) * power;
        power *= -theta_sq;
    }
    acc
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// `sin(t)/t`
fn coeff_a(theta: f64) -> f64 {
    if theta < 1e-4 {
        let t2 = theta * theta;
        1.0 - t2 / 6.0 + t2 * t2 / 120.0
    } else {
        theta.sin() / theta
    }
}

/// `(1 - cos t)/t^2`
fn coeff_b(theta: f64) -> f64 {
    let half = coeff_a(0.5 * theta);
    0.5 * half * half
}

/// `(t - sin t)/t^3`
fn coeff_c(theta: f64) -> f64 {
    if theta < SERIES_ANGLE {
        alternating_series(theta * theta, |m| 1.0 / factorial(2 * m + 3))
    } else {
        (theta - theta.sin()) / theta.powi(3)
    }
}

/// `(t^2/2 + cos t - 1)/t^4`
fn coeff_d(theta: f64) -> f64 {
    if theta < SERIES_ANGLE {
        alternating_series(theta * theta, |m| 1.0 / factorial(2 * m + 4))
    } else {
        (0.5 * theta * theta + theta.cos() - 1.0) / theta.powi(4)
    }
}

/// `(2t - 3 sin t + t cos t)/(2 t^5)`
fn coeff_e(theta: f64) -> f64 {
    if theta < SERIES_ANGLE {
        alternating_series(theta * theta, |m| (m + 1) as f64 / factorial(2 * m + 5))
    } else {
        (2.0 * theta - 3.0 * theta.sin() + theta * theta.cos()) / (2.0 * theta.powi(5))
    }
}

/// Cross-product matrix `v^x`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn unskew(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Left Jacobian of SO(3), `sum_l (psi^x)^l / (l+1)!`.
pub fn left_jacobian_so3(psi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = psi.norm();
    let x = skew(psi);
    Matrix3::identity() + coeff_b(theta) * x + coeff_c(theta) * x * x
}

pub fn left_jacobian_so3_inv(psi: &Vector3<f64>) -> Matrix3<f64> {
    // J_l is well conditioned for |psi| < 2 pi.
    left_jacobian_so3(psi)
        .try_inverse()
        .expect("SO(3) left Jacobian is singular only at multiples of 2 pi")
}

/// `N(psi) = 2 sum_l (psi^x)^l / (l+2)!`, the position coefficient of the
/// discretized IMU input matrix.
pub fn n_matrix(psi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = psi.norm();
    let x = skew(psi);
    Matrix3::identity() + 2.0 * coeff_c(theta) * x + 2.0 * coeff_d(theta) * x * x
}

/// Coupling block of the SE(3)-type left Jacobian for a translational
/// component `rho` riding on the rotation `phi`.
fn q_block(phi: &Vector3<f64>, rho: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let p = skew(phi);
    let r = skew(rho);
    let pr = p * r;
    let rp = r * p;
    let prp = pr * p;
    0.5 * r
        + coeff_c(theta) * (pr + rp + prp)
        + coeff_d(theta) * (p * pr + rp * p - 3.0 * prp)
        + coeff_e(theta) * (prp * p + p * prp)
}

/// Left Jacobian of SE_2(3).
pub fn left_jacobian_se23(xi: &Tangent) -> Matrix9 {
    let phi = xi.fixed_rows::<3>(0).into_owned();
    let nu = xi.fixed_rows::<3>(3).into_owned();
    let rho = xi.fixed_rows::<3>(6).into_owned();
    let jl = left_jacobian_so3(&phi);
    let mut out = Matrix9::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&jl);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&jl);
    out.fixed_view_mut::<3, 3>(6, 6).copy_from(&jl);
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&q_block(&phi, &nu));
    out.fixed_view_mut::<3, 3>(6, 0).copy_from(&q_block(&phi, &rho));
    out
}

/// `xi^` as a 5x5 matrix.
pub fn wedge(xi: &Tangent) -> Matrix5<f64> {
    let mut m = Matrix5::zeros();
    m.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&skew(&xi.fixed_rows::<3>(0).into_owned()));
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&xi.fixed_rows::<3>(3));
    m.fixed_view_mut::<3, 1>(0, 4).copy_from(&xi.fixed_rows::<3>(6));
    m
}

pub fn vee(m: &Matrix5<f64>) -> Tangent {
    let mut xi = Tangent::zeros();
    xi.fixed_rows_mut::<3>(0)
        .copy_from(&unskew(&m.fixed_view::<3, 3>(0, 0).into_owned()));
    xi.fixed_rows_mut::<3>(3).copy_from(&m.fixed_view::<3, 1>(0, 3));
    xi.fixed_rows_mut::<3>(6).copy_from(&m.fixed_view::<3, 1>(0, 4));
    xi
}

/// The odot operator: `odot(p) * xi == wedge(xi) * p`.
pub fn odot(p: &Vector5<f64>) -> Matrix5x9 {
    let mut m = Matrix5x9::zeros();
    let head = Vector3::new(p[0], p[1], p[2]);
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&head)));
    m.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(Matrix3::identity() * p[3]));
    m.fixed_view_mut::<3, 3>(0, 6)
        .copy_from(&(Matrix3::identity() * p[4]));
    m
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wraps a matrix without checking it. Callers guarantee orthonormality.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    pub fn try_from_matrix(m: Matrix3<f64>) -> Result<Self, LieError> {
        let err = (m * m.transpose() - Matrix3::identity()).abs().max();
        if err > 1e-9 || (m.determinant() - 1.0).abs() > 1e-9 {
            return Err(LieError::NotARotation(err));
        }
        Ok(Rotation(m))
    }

    pub fn exp(phi: &Vector3<f64>) -> Self {
        let theta = phi.norm();
        let x = skew(phi);
        Rotation(Matrix3::identity() + coeff_a(theta) * x + coeff_b(theta) * x * x)
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        Self::exp(&(axis.normalize() * angle))
    }

    /// Principal logarithm. At exactly pi the axis sign is chosen so that its
    /// leading non-zero component is positive.
    pub fn log(&self) -> Vector3<f64> {
        let c = &self.0;
        let s = 0.5 * unskew(&(c - c.transpose()));
        let cos = ((c.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        let sin = s.norm();
        let theta = sin.atan2(cos);
        if theta < 1e-4 {
            // theta / sin(theta) series
            let t2 = theta * theta;
            return s * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0);
        }
        if cos > -0.7 {
            return s * (theta / sin);
        }
        // Near pi: recover the axis from the symmetric part.
        let b = 0.5 * (c + c.transpose()) - Matrix3::identity() * cos;
        let (col, _) = (0..3)
            .map(|i| (i, b[(i, i)]))
            .fold((0, f64::MIN), |acc, x| if x.1 > acc.1 { x } else { acc });
        let mut axis = b.column(col).into_owned();
        axis /= axis.norm();
        if sin > 1e-12 {
            if axis.dot(&s) < 0.0 {
                axis = -axis;
            }
        } else if let Some(first) = axis.iter().find(|v| v.abs() > 1e-12) {
            if *first < 0.0 {
                axis = -axis;
            }
        }
        axis * theta
    }

    /// Like [`Rotation::log`] but refuses rotations within `tol` of pi.
    pub fn log_checked(&self, tol: f64) -> Result<Vector3<f64>, LieError> {
        let phi = self.log();
        if (phi.norm() - PI).abs() <= tol {
            return Err(LieError::BranchAmbiguous);
        }
        Ok(phi)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn angle(&self) -> f64 {
        self.log().norm()
    }

    /// Polar projection back onto SO(3).
    pub fn renormalized(&self) -> Self {
        let svd = self.0.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut m = u * vt;
        if m.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            m = u * vt;
        }
        Rotation(m)
    }

    pub fn orthogonality_error(&self) -> f64 {
        (self.0 * self.0.transpose() - Matrix3::identity()).abs().max()
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vector3<f64>> for Rotation {
    type Output = Vector3<f64>;
    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

/// Element of SE_2(3): attitude, velocity and position.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExtendedPose {
    pub rotation: Rotation,
    pub velocity: Vector3<f64>,
    pub position: Vector3<f64>,
}

impl ExtendedPose {
    pub fn new(rotation: Rotation, velocity: Vector3<f64>, position: Vector3<f64>) -> Self {
        Self {
            rotation,
            velocity,
            position,
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn exp(xi: &Tangent) -> Self {
        let phi = xi.fixed_rows::<3>(0).into_owned();
        let jl = left_jacobian_so3(&phi);
        Self {
            rotation: Rotation::exp(&phi),
            velocity: jl * xi.fixed_rows::<3>(3),
            position: jl * xi.fixed_rows::<3>(6),
        }
    }

    pub fn log(&self) -> Tangent {
        let phi = self.rotation.log();
        let jinv = left_jacobian_so3_inv(&phi);
        let mut xi = Tangent::zeros();
        xi.fixed_rows_mut::<3>(0).copy_from(&phi);
        xi.fixed_rows_mut::<3>(3).copy_from(&(jinv * self.velocity));
        xi.fixed_rows_mut::<3>(6).copy_from(&(jinv * self.position));
        xi
    }

    pub fn inverse(&self) -> Self {
        let ct = self.rotation.inverse();
        Self {
            rotation: ct,
            velocity: -(ct * self.velocity),
            position: -(ct * self.position),
        }
    }

    /// Adjoint matrix: `Exp(Ad(T) xi) = T Exp(xi) T^-1`.
    pub fn adjoint(&self) -> Matrix9 {
        Increment::from(*self).adjoint()
    }

    pub fn matrix(&self) -> Matrix5<f64> {
        Increment::from(*self).matrix()
    }

    /// Acts on a homogeneous 5-vector `(x, a, b)`.
    pub fn act(&self, p: &Vector5<f64>) -> Vector5<f64> {
        Increment::from(*self).act(p)
    }

    pub fn renormalized(&self) -> Self {
        Self {
            rotation: self.rotation.renormalized(),
            ..*self
        }
    }
}

impl Mul for ExtendedPose {
    type Output = ExtendedPose;
    fn mul(self, rhs: ExtendedPose) -> ExtendedPose {
        ExtendedPose {
            rotation: self.rotation * rhs.rotation,
            velocity: self.rotation * rhs.velocity + self.velocity,
            position: self.rotation * rhs.position + self.position,
        }
    }
}

/// Element of DE_2(3). With `dt == 0` it is an [`ExtendedPose`]; with an
/// identity pose part it is a time machine.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Increment {
    pub rotation: Rotation,
    pub velocity: Vector3<f64>,
    pub position: Vector3<f64>,
    pub dt: f64,
}

impl From<ExtendedPose> for Increment {
    fn from(t: ExtendedPose) -> Self {
        Increment {
            rotation: t.rotation,
            velocity: t.velocity,
            position: t.position,
            dt: 0.0,
        }
    }
}

impl Increment {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn time_machine(dt: f64) -> Self {
        Increment {
            dt,
            ..Self::default()
        }
    }

    pub fn pose_part(&self) -> ExtendedPose {
        ExtendedPose::new(self.rotation, self.velocity, self.position)
    }

    /// Returns the pose if the time slot is zero within `tol`.
    pub fn to_pose(&self, tol: f64) -> Result<ExtendedPose, LieError> {
        if self.dt.abs() > tol {
            return Err(LieError::NotAPose(self.dt));
        }
        Ok(self.pose_part())
    }

    pub fn inverse(&self) -> Self {
        let ct = self.rotation.inverse();
        Increment {
            rotation: ct,
            velocity: -(ct * self.velocity),
            position: -(ct * (self.position - self.velocity * self.dt)),
            dt: -self.dt,
        }
    }

    /// Adjoint of a DE_2(3) element acting on SE_2(3) tangent vectors.
    pub fn adjoint(&self) -> Matrix9 {
        let c = self.rotation.matrix();
        let mut ad = Matrix9::zeros();
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(c);
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(c);
        ad.fixed_view_mut::<3, 3>(6, 6).copy_from(c);
        ad.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(skew(&self.velocity) * c));
        ad.fixed_view_mut::<3, 3>(6, 0)
            .copy_from(&(-skew(&(self.velocity * self.dt - self.position)) * c));
        ad.fixed_view_mut::<3, 3>(6, 3).copy_from(&(-self.dt * c));
        ad
    }

    pub fn matrix(&self) -> Matrix5<f64> {
        let mut m = Matrix5::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.velocity);
        m.fixed_view_mut::<3, 1>(0, 4).copy_from(&self.position);
        m[(3, 4)] = self.dt;
        m
    }

    /// Reads back a 5x5 matrix of DE_2(3) form without validation.
    pub fn from_matrix_unchecked(m: &Matrix5<f64>) -> Self {
        Increment {
            rotation: Rotation::from_matrix_unchecked(m.fixed_view::<3, 3>(0, 0).into_owned()),
            velocity: m.fixed_view::<3, 1>(0, 3).into_owned(),
            position: m.fixed_view::<3, 1>(0, 4).into_owned(),
            dt: m[(3, 4)],
        }
    }

    pub fn act(&self, p: &Vector5<f64>) -> Vector5<f64> {
        let head = Vector3::new(p[0], p[1], p[2]);
        let out = self.rotation * head + self.velocity * p[3] + self.position * p[4];
        Vector5::new(out.x, out.y, out.z, p[3] + self.dt * p[4], p[4])
    }

    /// Left retraction by an SE_2(3) tangent vector.
    pub fn perturb_left(&self, xi: &Tangent) -> Self {
        Increment::from(ExtendedPose::exp(xi)) * *self
    }

    pub fn renormalized(&self) -> Self {
        Increment {
            rotation: self.rotation.renormalized(),
            ..*self
        }
    }
}

impl Mul for Increment {
    type Output = Increment;
    fn mul(self, rhs: Increment) -> Increment {
        Increment {
            rotation: self.rotation * rhs.rotation,
            velocity: self.rotation * rhs.velocity + self.velocity,
            position: self.rotation * rhs.position + self.velocity * rhs.dt + self.position,
            dt: self.dt + rhs.dt,
        }
    }
}

impl Mul<ExtendedPose> for Increment {
    type Output = Increment;
    fn mul(self, rhs: ExtendedPose) -> Increment {
        self * Increment::from(rhs)
    }
}

impl Mul<Increment> for ExtendedPose {
    type Output = Increment;
    fn mul(self, rhs: Increment) -> Increment {
        Increment::from(self) * rhs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{expm, logm};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tangent(rng: &mut ChaCha8Rng, scale: f64) -> Tangent {
        Tangent::from_fn(|_, _| rng.random_range(-scale..scale))
    }

    fn random_increment(rng: &mut ChaCha8Rng) -> Increment {
        let mut u = Increment::from(ExtendedPose::exp(&random_tangent(rng, 1.5)));
        u.dt = rng.random_range(-1.0..1.0);
        u
    }

    fn rel_err(a: &Matrix5<f64>, b: &Matrix5<f64>) -> f64 {
        (a - b).norm() / b.norm().max(1.0)
    }

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(ExtendedPose::exp(&Tangent::zeros()), ExtendedPose::identity());
    }

    #[test]
    fn pure_rotation_about_z() {
        let mut xi = Tangent::zeros();
        xi[2] = PI / 2.0;
        let t = ExtendedPose::exp(&xi);
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(*t.rotation.matrix(), expected, epsilon = 1e-15);
        assert_eq!(t.velocity, Vector3::zeros());
        assert_eq!(t.position, Vector3::zeros());
    }

    #[test]
    fn exp_matches_dense_matrix_exponential() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let xi = random_tangent(&mut rng, 2.0);
            let closed = ExtendedPose::exp(&xi).matrix();
            let dense = expm(&wedge(&xi));
            assert!(rel_err(&closed, &dense) < 1e-9);
        }
    }

    #[test]
    fn log_matches_dense_matrix_logarithm() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let mut xi = random_tangent(&mut rng, 2.0);
            let phi_norm = xi.fixed_rows::<3>(0).norm();
            if phi_norm > 3.0 {
                let s = 3.0 / phi_norm;
                xi.fixed_rows_mut::<3>(0).scale_mut(s);
            }
            let t = ExtendedPose::exp(&xi);
            let dense = vee(&logm(&t.matrix()));
            assert!((t.log() - dense).norm() < 1e-9 * dense.norm().max(1.0));
            assert!((t.log() - xi).norm() < 1e-9 * xi.norm().max(1.0));
        }
    }

    #[test]
    fn log_near_pi_and_at_pi() {
        let axis = Vector3::new(1.0, -2.0, 0.5).normalize();
        let r = Rotation::from_axis_angle(&axis, PI - 1e-6);
        assert_relative_eq!(r.log(), axis * (PI - 1e-6), epsilon = 1e-9);
        let at_pi = Rotation::from_axis_angle(&(-axis), PI);
        let phi = at_pi.log();
        assert_relative_eq!(phi.norm(), PI, epsilon = 1e-12);
        // leading non-zero component is positive
        assert!(phi.x > 0.0);
        assert_relative_eq!(Rotation::exp(&phi).matrix(), at_pi.matrix(), epsilon = 1e-12);
        assert_eq!(at_pi.log_checked(1e-9), Err(LieError::BranchAmbiguous));
    }

    #[test]
    fn adjoint_identity_cases() {
        assert_eq!(ExtendedPose::identity().adjoint(), Matrix9::identity());
        let m = Increment::time_machine(0.004);
        let mut expected = Matrix9::identity();
        expected
            .fixed_view_mut::<3, 3>(6, 3)
            .copy_from(&(-0.004 * Matrix3::identity()));
        assert_relative_eq!(m.adjoint(), expected, epsilon = 1e-15);
    }

    #[test]
    fn adjoint_defining_identity_and_homomorphism() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let xi = random_tangent(&mut rng, 0.8);
            // SE_2(3)
            let t = ExtendedPose::exp(&random_tangent(&mut rng, 1.5));
            let lhs = ExtendedPose::exp(&(t.adjoint() * xi)).matrix();
            let rhs = (t * ExtendedPose::exp(&xi) * t.inverse()).matrix();
            assert!(rel_err(&lhs, &rhs) < 1e-9);
            // DE_2(3)
            let u = random_increment(&mut rng);
            let lhs = ExtendedPose::exp(&(u.adjoint() * xi)).matrix();
            let rhs = (u * ExtendedPose::exp(&xi) * u.inverse()).matrix();
            assert!(rel_err(&lhs, &rhs) < 1e-9);
            // homomorphism
            let (a, b) = (random_increment(&mut rng), random_increment(&mut rng));
            assert!((a.adjoint() * b.adjoint() - (a * b).adjoint()).norm() < 1e-9);
            let (p, q) = (
                ExtendedPose::exp(&random_tangent(&mut rng, 1.0)),
                ExtendedPose::exp(&random_tangent(&mut rng, 1.0)),
            );
            assert!((p.adjoint() * q.adjoint() - (p * q).adjoint()).norm() < 1e-9);
        }
    }

    #[test]
    fn adjoint_de23_reduces_to_se23() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = ExtendedPose::exp(&random_tangent(&mut rng, 1.0));
        let mut ad_se = Matrix9::zeros();
        let c = *t.rotation.matrix();
        for k in 0..3 {
            ad_se.fixed_view_mut::<3, 3>(3 * k, 3 * k).copy_from(&c);
        }
        ad_se.fixed_view_mut::<3, 3>(3, 0).copy_from(&(skew(&t.velocity) * c));
        ad_se.fixed_view_mut::<3, 3>(6, 0).copy_from(&(skew(&t.position) * c));
        assert_relative_eq!(Increment::from(t).adjoint(), ad_se, epsilon = 1e-14);
    }

    #[test]
    fn odot_matches_wedge() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(odot(&Vector5::zeros()), Matrix5x9::zeros());
        let e5 = Vector5::new(0.0, 0.0, 0.0, 0.0, 1.0);
        let m = odot(&e5);
        assert_eq!(m.fixed_view::<3, 3>(0, 6).into_owned(), Matrix3::identity());
        assert_eq!(m.fixed_view::<3, 6>(0, 0).into_owned(), SMatrix::<f64, 3, 6>::zeros());
        for _ in 0..50 {
            let p = Vector5::from_fn(|_, _| rng.random_range(-3.0..3.0));
            let m = odot(&p);
            for j in 0..9 {
                let mut xi = Tangent::zeros();
                xi[j] = 1.0;
                assert_relative_eq!(m.column(j).into_owned(), wedge(&xi) * p, epsilon = 1e-15);
            }
        }
    }

    fn series(psi: &Vector3<f64>, offset: usize) -> Matrix3<f64> {
        series_n(psi, offset, 20)
    }

    fn series_n(psi: &Vector3<f64>, offset: usize, terms: usize) -> Matrix3<f64> {
        let x = skew(psi);
        let mut acc = Matrix3::zeros();
        let mut power = Matrix3::identity();
        for l in 0..terms {
            acc += power / factorial(l + offset);
            power *= x;
        }
        acc
    }

    #[test]
    fn so3_jacobian_and_n_against_series() {
        let axis = Vector3::new(0.3, -0.5, 0.8).normalize();
        let psi = axis * (PI / 3.0);
        assert_relative_eq!(left_jacobian_so3(&psi), series(&psi, 1), epsilon = 1e-12);
        assert_relative_eq!(n_matrix(&psi), 2.0 * series(&psi, 2), epsilon = 1e-12);
        assert_eq!(left_jacobian_so3(&Vector3::zeros()), Matrix3::identity());
        assert_eq!(n_matrix(&Vector3::zeros()), Matrix3::identity());
        let tiny = n_matrix(&(axis * 1e-9));
        assert!(tiny.iter().all(|v| v.is_finite()));
        // across the series/closed-form switch
        for theta in [0.999_999, 1.0, 1.000_001, 2.5] {
            let p = axis * theta;
            assert_relative_eq!(left_jacobian_so3(&p), series_n(&p, 1, 40), epsilon = 1e-12);
            assert_relative_eq!(n_matrix(&p), 2.0 * series_n(&p, 2, 40), epsilon = 1e-12);
        }
    }

    #[test]
    fn so3_left_jacobian_first_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let psi = Vector3::from_fn(|_, _| rng.random_range(-1.5..1.5));
            let delta = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize() * 1e-6;
            let lhs = Rotation::exp(&(psi + delta));
            let rhs = Rotation::exp(&(left_jacobian_so3(&psi) * delta)) * Rotation::exp(&psi);
            assert!((lhs.matrix() - rhs.matrix()).norm() < 1e-11);
        }
    }

    #[test]
    fn se23_left_jacobian() {
        assert_eq!(left_jacobian_se23(&Tangent::zeros()), Matrix9::identity());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let xi = random_tangent(&mut rng, 1.2);
            let j = left_jacobian_se23(&xi);
            let phi = xi.fixed_rows::<3>(0).into_owned();
            assert_relative_eq!(
                j.fixed_view::<3, 3>(0, 0).into_owned(),
                left_jacobian_so3(&phi),
                epsilon = 1e-15
            );
            // series oracle sum ad(xi)^k / (k+1)!
            let mut ad = Matrix9::zeros();
            let px = skew(&phi);
            for k in 0..3 {
                ad.fixed_view_mut::<3, 3>(3 * k, 3 * k).copy_from(&px);
            }
            ad.fixed_view_mut::<3, 3>(3, 0)
                .copy_from(&skew(&xi.fixed_rows::<3>(3).into_owned()));
            ad.fixed_view_mut::<3, 3>(6, 0)
                .copy_from(&skew(&xi.fixed_rows::<3>(6).into_owned()));
            let mut acc = Matrix9::zeros();
            let mut power = Matrix9::identity();
            for k in 0..40 {
                acc += power / factorial(k + 1);
                power *= ad;
            }
            assert!((acc - j).norm() < 1e-12 * acc.norm());
            // first-order expansion
            let d = random_tangent(&mut rng, 1.0).normalize() * 1e-6;
            let lhs = ExtendedPose::exp(&(xi + d)).matrix();
            let rhs = (ExtendedPose::exp(&(j * d)) * ExtendedPose::exp(&xi)).matrix();
            assert!((lhs - rhs).norm() < 1e-10);
        }
    }

    #[test]
    fn first_order_expansion_of_exp() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let d = random_tangent(&mut rng, 1.0).normalize() * 1e-6;
            let err = ExtendedPose::exp(&d).matrix() - Matrix5::identity() - wedge(&d);
            assert!(err.norm() <= 1e-11);
        }
    }

    #[test]
    fn increment_inverse_and_time_machine_factorization() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let u = random_increment(&mut rng);
            assert!(((u * u.inverse()).matrix() - Matrix5::identity()).norm() < 1e-12);
            assert!(
                ((u.inverse()).matrix() - u.matrix().try_inverse().unwrap()).norm() < 1e-12
            );
            let factored = Increment::time_machine(u.dt) * u.pose_part();
            assert!((factored.matrix() - u.matrix()).norm() < 1e-15);
            let (a, b) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let m = Increment::time_machine(a) * Increment::time_machine(b);
            assert_eq!(m.pose_part(), ExtendedPose::identity());
            assert_relative_eq!(m.dt, a + b);
            // matrix product agrees with the factored product
            let w = random_increment(&mut rng);
            assert!(((u * w).matrix() - u.matrix() * w.matrix()).norm() < 1e-12);
        }
        let zero_dt = Increment::from(ExtendedPose::exp(&random_tangent(&mut rng, 1.0)));
        assert!(zero_dt.to_pose(0.0).is_ok());
    }

    #[test]
    fn group_axioms_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..100 {
            let (a, b, c) = (
                random_increment(&mut rng),
                random_increment(&mut rng),
                random_increment(&mut rng),
            );
            assert!((((a * b) * c).matrix() - (a * (b * c)).matrix()).norm() < 1e-10);
            let p = ExtendedPose::exp(&random_tangent(&mut rng, 2.0));
            let q = ExtendedPose::exp(&random_tangent(&mut rng, 2.0));
            let pq = p * q;
            assert!(pq.rotation.orthogonality_error() < 1e-12);
            assert!((pq.rotation.matrix().determinant() - 1.0).abs() < 1e-12);
            assert!(((p * p.inverse()).matrix() - Matrix5::identity()).norm() < 1e-12);
        }
    }

    #[test]
    fn renormalization_restores_orthogonality() {
        let noisy = Rotation::from_matrix_unchecked(
            Rotation::exp(&Vector3::new(0.4, 0.1, -0.3)).matrix() * (1.0 + 1e-8),
        );
        assert!(noisy.orthogonality_error() > 1e-9);
        let fixed = noisy.renormalized();
        assert!(fixed.orthogonality_error() < 1e-14);
        assert!(Rotation::try_from_matrix(*fixed.matrix()).is_ok());
    }

    proptest::proptest! {
        #[test]
        fn wedge_vee_roundtrip(v in proptest::collection::vec(-10.0f64..10.0, 9)) {
            let xi = Tangent::from_column_slice(&v);
            proptest::prop_assert_eq!(vee(&wedge(&xi)), xi);
        }

        #[test]
        fn exp_log_roundtrip(v in proptest::collection::vec(-1.7f64..1.7, 9)) {
            let xi = Tangent::from_column_slice(&v);
            proptest::prop_assume!(xi.fixed_rows::<3>(0).norm() < 3.0);
            let back = ExtendedPose::exp(&xi).log();
            proptest::prop_assert!((back - xi).norm() <= 1e-9 * xi.norm().max(1.0));
        }
    }
}
