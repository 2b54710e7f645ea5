//! Brute-force numerical references: dense matrix exponential/logarithm,
//! Van Loan discretization, RK4 and finite differences.
//!
//! These are deliberately independent of the closed forms in the rest of the
//! crate and are used by tests and by the `selftest` suites.

use nalgebra::{DMatrix, DVector, SMatrix};

/// Dense matrix exponential by scaling and squaring with a Taylor core.
pub fn expm_dyn(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a.abs().row_sum().max();
    let mut squarings = 0;
    let mut scale = 1.0;
    while norm * scale > 0.25 {
        scale *= 0.5;
        squarings += 1;
    }
    let x = a * scale;
    let mut acc = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=24 {
        term = &term * &x / k as f64;
        acc += &term;
    }
    for _ in 0..squarings {
        acc = &acc * &acc;
    }
    acc
}

fn sqrtm_dyn(a: &DMatrix<f64>) -> DMatrix<f64> {
    // Denman-Beavers iteration.
    let n = a.nrows();
    let mut y = a.clone();
    let mut z = DMatrix::identity(n, n);
    for _ in 0..100 {
        let yi = y.clone().try_inverse().expect("sqrtm: singular iterate");
        let zi = z.clone().try_inverse().expect("sqrtm: singular iterate");
        let y_next = (&y + zi) * 0.5;
        let z_next = (&z + yi) * 0.5;
        let delta = (&y_next - &y).norm();
        y = y_next;
        z = z_next;
        if delta <= 1e-15 * y.norm() {
            break;
        }
    }
    y
}

/// Principal matrix logarithm by inverse scaling and squaring.
pub fn logm_dyn(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut x = a.clone();
    let mut roots = 0;
    while (&x - &eye).norm() > 0.05 {
        x = sqrtm_dyn(&x);
        roots += 1;
        assert!(roots < 64, "logm: square roots did not converge");
    }
    let e = &x - &eye;
    let mut acc = DMatrix::zeros(n, n);
    let mut power = eye.clone();
    for j in 1..=30 {
        power = &power * &e;
        let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
        acc += &power * (sign / j as f64);
    }
    acc * 2f64.powi(roots)
}

fn to_dyn<const N: usize>(a: &SMatrix<f64, N, N>) -> DMatrix<f64> {
    DMatrix::from_column_slice(N, N, a.as_slice())
}

fn from_dyn<const N: usize>(a: &DMatrix<f64>) -> SMatrix<f64, N, N> {
    SMatrix::<f64, N, N>::from_column_slice(a.as_slice())
}

pub fn expm<const N: usize>(a: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    from_dyn(&expm_dyn(&to_dyn(a)))
}

pub fn logm<const N: usize>(a: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    from_dyn(&logm_dyn(&to_dyn(a)))
}

/// Van Loan discretization of `x' = A x + w`, `E[w w^T] = Qc delta(t)`.
/// Returns `(A_d, Q_d)`.
pub fn van_loan(a: &DMatrix<f64>, qc: &DMatrix<f64>, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(&(-a * dt));
    m.view_mut((0, n), (n, n)).copy_from(&(qc * dt));
    m.view_mut((n, n), (n, n)).copy_from(&(a.transpose() * dt));
    let g = expm_dyn(&m);
    let ad = g.view((n, n), (n, n)).transpose();
    let qd = &ad * g.view((0, n), (n, n));
    (ad, qd)
}

/// Integrates `x' = f(t, x)` with fixed-step classical Runge-Kutta.
pub fn rk4<F>(f: F, x0: &DVector<f64>, t0: f64, t1: f64, steps: usize) -> DVector<f64>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let h = (t1 - t0) / steps as f64;
    let mut x = x0.clone();
    for k in 0..steps {
        let t = t0 + h * k as f64;
        let k1 = f(t, &x);
        let k2 = f(t + 0.5 * h, &(&x + &k1 * (0.5 * h)));
        let k3 = f(t + 0.5 * h, &(&x + &k2 * (0.5 * h)));
        let k4 = f(t + h, &(&x + &k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    x
}

/// Central-difference Jacobian of `f` at `x`.
pub fn central_difference<F>(f: F, x: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let m = f(x).len();
    let mut jac = DMatrix::zeros(m, x.len());
    for j in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        jac.set_column(j, &((f(&xp) - f(&xm)) / (2.0 * h)));
    }
    jac
}

/// Relative error `|a - b| / max(|b|, floor)` in the Frobenius norm.
pub fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>, floor: f64) -> f64 {
    (a - b).norm() / b.norm().max(floor)
}
