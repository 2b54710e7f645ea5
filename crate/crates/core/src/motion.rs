//! Relative extended-pose kinematics driven by two robots' IMUs.
//!
//! The relative pose `T_0i` obeys `dT/dt = T U_i - U_0 T` with piecewise
//! constant generators, whose exact discretization is
//! `T_{k+1} = U_0^-1 T_k U_i`.

use nalgebra::{DMatrix, Matrix3, Matrix5, SMatrix, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lie::{
    left_jacobian_se23, left_jacobian_so3_inv, n_matrix, skew, ExtendedPose, Increment, Matrix9,
    Rotation, Tangent,
};

pub type Matrix9x6 = SMatrix<f64, 9, 6>;
pub type Matrix6 = SMatrix<f64, 6, 6>;

/// Gravity in the absolute frame [m/s^2].
pub const GRAVITY: Vector3<f64> = Vector3::new(0.0, 0.0, -9.81);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MotionError {
    #[error("input intervals differ ({0} s vs {1} s)")]
    DtMismatch(f64, f64),
    #[error("covariance is not symmetric positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),
}

/// One IMU reading held constant over `dt` seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    /// Angular velocity [rad/s].
    pub gyro: Vector3<f64>,
    /// Specific force [m/s^2].
    pub accel: Vector3<f64>,
    pub dt: f64,
}

impl ImuSample {
    pub fn new(gyro: Vector3<f64>, accel: Vector3<f64>, dt: f64) -> Self {
        Self { gyro, accel, dt }
    }
}

/// Discrete per-sample noise standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuNoiseModel {
    pub gyro_std: f64,
    pub accel_std: f64,
}

impl Default for ImuNoiseModel {
    fn default() -> Self {
        Self {
            gyro_std: 0.0066,
            accel_std: 0.023,
        }
    }
}

impl ImuNoiseModel {
    pub fn noiseless() -> Self {
        Self {
            gyro_std: 0.0,
            accel_std: 0.0,
        }
    }

    pub fn covariance(&self) -> Matrix6 {
        let mut q = Matrix6::zeros();
        for k in 0..3 {
            q[(k, k)] = self.gyro_std * self.gyro_std;
            q[(k + 3, k + 3)] = self.accel_std * self.accel_std;
        }
        q
    }

    pub fn scaled(&self, variance_factor: f64) -> Self {
        let s = variance_factor.sqrt();
        Self {
            gyro_std: self.gyro_std * s,
            accel_std: self.accel_std * s,
        }
    }
}

/// Continuous-time generator `[[w^x, a, 0], [0, 0, 1], [0, 0, 0]]`.
pub fn continuous_generator(u: &ImuSample) -> Matrix5<f64> {
    let mut m = Matrix5::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&u.gyro));
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&u.accel);
    m[(3, 4)] = 1.0;
    m
}

/// Closed-form `exp(generator * dt)`.
pub fn build_increment(u: &ImuSample) -> Increment {
    let omega = u.gyro * u.dt;
    Increment {
        rotation: Rotation::exp(&omega),
        velocity: u.dt * (crate::lie::left_jacobian_so3(&omega) * u.accel),
        position: 0.5 * u.dt * u.dt * (n_matrix(&omega) * u.accel),
        dt: u.dt,
    }
}

/// The matrix `V` with `U = M(dt) Exp(V u)`.
pub fn input_matrix(u: &ImuSample) -> Matrix9x6 {
    let omega = u.gyro * u.dt;
    let mut v = Matrix9x6::zeros();
    v.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(Matrix3::identity() * u.dt));
    v.fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&(Matrix3::identity() * u.dt));
    v.fixed_view_mut::<3, 3>(6, 3)
        .copy_from(&(0.5 * u.dt * u.dt * left_jacobian_so3_inv(&omega) * n_matrix(&omega)));
    v
}

/// `L` such that `U(u + du) ~= U(u) Exp(L du)`, neglecting the
/// dependence of `V` on the input.
pub fn input_jacobian(u: &ImuSample) -> Matrix9x6 {
    let v = input_matrix(u);
    let mut uvec = SMatrix::<f64, 6, 1>::zeros();
    uvec.fixed_rows_mut::<3>(0).copy_from(&u.gyro);
    uvec.fixed_rows_mut::<3>(3).copy_from(&u.accel);
    let xi: Tangent = v * uvec;
    left_jacobian_se23(&(-xi)) * v
}

fn check_dt(a: f64, b: f64) -> Result<(), MotionError> {
    if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
        return Err(MotionError::DtMismatch(a, b));
    }
    Ok(())
}

/// `U0^-1 T Ui`.
pub fn propagate_pose(
    t: &ExtendedPose,
    u0: &Increment,
    ui: &Increment,
) -> Result<ExtendedPose, MotionError> {
    check_dt(u0.dt, ui.dt)?;
    Ok((u0.inverse() * *t * *ui).pose_part())
}

pub fn pose_state_jacobian(u0: &Increment) -> Matrix9 {
    u0.inverse().adjoint()
}

/// Jacobians of the propagated relative pose with respect to robot 0's and
/// robot i's input noise.
pub fn input_noise_jacobians(
    u0: &ImuSample,
    ui: &ImuSample,
    t_next: &ExtendedPose,
) -> (Matrix9x6, Matrix9x6) {
    (-input_jacobian(u0), t_next.adjoint() * input_jacobian(ui))
}

/// Per-neighbour data for one covariance propagation step.
#[derive(Debug, Clone, Copy)]
pub struct NeighbourStep {
    pub imu: ImuSample,
    /// Predicted relative pose after the step.
    pub pose_next: ExtendedPose,
}

fn min_eigenvalue(p: &DMatrix<f64>) -> f64 {
    p.clone().symmetric_eigenvalues().min()
}

/// Propagates the joint covariance of `n` relative poses (`9n x 9n`)
/// through one step. The shared robot-0 input noise correlates all
/// neighbours.
pub fn propagate_pose_covariance(
    p: &DMatrix<f64>,
    u0: &ImuSample,
    neighbours: &[NeighbourStep],
    noise: &ImuNoiseModel,
) -> Result<DMatrix<f64>, MotionError> {
    let n = neighbours.len();
    assert_eq!(p.nrows(), 9 * n);
    let asym = (p - p.transpose()).abs().max();
    let scale = p.abs().max().max(1e-300);
    let min_eig = if n > 0 { min_eigenvalue(p) } else { 0.0 };
    if asym > 1e-9 * scale || min_eig < -1e-9 * p.trace().abs().max(1e-300) {
        return Err(MotionError::NotPsd(min_eig));
    }
    let ad = pose_state_jacobian(&build_increment(u0));
    let q = noise.covariance();
    let l0 = input_jacobian(u0);
    let shared = l0 * q * l0.transpose();
    let mut out = DMatrix::zeros(9 * n, 9 * n);
    for i in 0..n {
        check_dt(u0.dt, neighbours[i].imu.dt)?;
        for j in 0..n {
            let block = p.fixed_view::<9, 9>(9 * i, 9 * j);
            let mut next = ad * block * ad.transpose() + shared;
            if i == j {
                let li = neighbours[i].pose_next.adjoint() * input_jacobian(&neighbours[i].imu);
                next += li * q * li.transpose();
            }
            out.fixed_view_mut::<9, 9>(9 * i, 9 * j).copy_from(&next);
        }
    }
    Ok(0.5 * (&out + out.transpose()))
}
