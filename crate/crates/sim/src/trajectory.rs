//! Smooth analytic trajectories and their exact IMU readings.
//!
//! Each position axis and each ZYX Euler angle is a constant plus a sum of
//! sinusoids, so velocities, accelerations and body rates are closed-form.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use relnav::lie::{ExtendedPose, Rotation};
use relnav::motion::{ImuNoiseModel, ImuSample, GRAVITY};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sinusoid {
    pub amplitude: f64,
    /// [rad/s]
    pub frequency: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub offset: f64,
    pub terms: Vec<Sinusoid>,
}

impl Profile {
    pub fn constant(offset: f64) -> Self {
        Self {
            offset,
            terms: Vec::new(),
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        self.offset
            + self
                .terms
                .iter()
                .map(|s| s.amplitude * (s.frequency * t + s.phase).sin())
                .sum::<f64>()
    }

    pub fn rate(&self, t: f64) -> f64 {
        self.terms
            .iter()
            .map(|s| s.amplitude * s.frequency * (s.frequency * t + s.phase).cos())
            .sum()
    }

    pub fn accel(&self, t: f64) -> f64 {
        -self
            .terms
            .iter()
            .map(|s| s.amplitude * s.frequency.powi(2) * (s.frequency * t + s.phase).sin())
            .sum::<f64>()
    }

    /// Upper bound on `|rate|`.
    pub fn rate_bound(&self) -> f64 {
        self.terms.iter().map(|s| (s.amplitude * s.frequency).abs()).sum()
    }

    /// Upper bound on `|value - offset|`.
    pub fn amplitude_bound(&self) -> f64 {
        self.terms.iter().map(|s| s.amplitude.abs()).sum()
    }

    /// Three terms with frequencies in `freq` scaled so the rate stays
    /// below `rate_cap` and the excursion below `amp_cap`.
    fn random<R: Rng + ?Sized>(rng: &mut R, offset: f64, freq: (f64, f64), rate_cap: f64, amp_cap: f64) -> Self {
        let mut terms: Vec<Sinusoid> = (0..3)
            .map(|_| Sinusoid {
                amplitude: rng.random_range(0.2..1.0),
                frequency: rng.random_range(freq.0..freq.1),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            })
            .collect();
        let p = Profile { offset, terms: terms.clone() };
        let scale = (rate_cap / p.rate_bound()).min(amp_cap / p.amplitude_bound());
        for s in terms.iter_mut() {
            s.amplitude *= scale;
        }
        Profile { offset, terms }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLimits {
    /// [m/s]
    pub max_speed: f64,
    /// [rad/s]
    pub max_rate: f64,
}

impl Default for TrajectoryLimits {
    fn default() -> Self {
        Self {
            max_speed: 5.5,
            max_rate: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub position: [Profile; 3],
    /// Roll, pitch, yaw.
    pub euler: [Profile; 3],
}

fn rx(a: f64) -> Rotation {
    Rotation::exp(&Vector3::new(a, 0.0, 0.0))
}

fn ry(a: f64) -> Rotation {
    Rotation::exp(&Vector3::new(0.0, a, 0.0))
}

fn rz(a: f64) -> Rotation {
    Rotation::exp(&Vector3::new(0.0, 0.0, a))
}

impl Trajectory {
    pub fn hover(position: Vector3<f64>, yaw: f64) -> Self {
        Self {
            position: [
                Profile::constant(position.x),
                Profile::constant(position.y),
                Profile::constant(position.z),
            ],
            euler: [Profile::constant(0.0), Profile::constant(0.0), Profile::constant(yaw)],
        }
    }

    /// Robot `index` of `robots` starts on a 4 m circle at 2 m height.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, index: usize, robots: usize, limits: &TrajectoryLimits) -> Self {
        let angle = std::f64::consts::TAU * index as f64 / robots.max(1) as f64;
        let centre = Vector3::new(4.0 * angle.cos(), 4.0 * angle.sin(), 2.0);
        let hx = rng.random_range(0.4..0.65) * limits.max_speed;
        let hy = rng.random_range(0.4..0.65) * limits.max_speed;
        let position = [
            Profile::random(rng, centre.x, (0.15, 0.8), hx, f64::INFINITY),
            Profile::random(rng, centre.y, (0.15, 0.8), hy, f64::INFINITY),
            Profile::random(rng, centre.z, (0.15, 0.8), 0.2 * limits.max_speed, 1.5),
        ];
        // |E| <= 1 + |sin(pitch)| < 1.3 with tilt below 0.3 rad
        let tilt_rate = 0.3 * limits.max_rate;
        let euler = [
            Profile::random(rng, 0.0, (0.3, 1.5), tilt_rate, 0.3),
            Profile::random(rng, 0.0, (0.3, 1.5), tilt_rate, 0.3),
            Profile::random(rng, angle, (0.15, 0.6), 0.4 * limits.max_rate, f64::INFINITY),
        ];
        Self { position, euler }
    }

    pub fn position(&self, t: f64) -> Vector3<f64> {
        Vector3::from_fn(|i, _| self.position[i].value(t))
    }

    pub fn velocity(&self, t: f64) -> Vector3<f64> {
        Vector3::from_fn(|i, _| self.position[i].rate(t))
    }

    pub fn acceleration(&self, t: f64) -> Vector3<f64> {
        Vector3::from_fn(|i, _| self.position[i].accel(t))
    }

    pub fn euler_angles(&self, t: f64) -> Vector3<f64> {
        Vector3::from_fn(|i, _| self.euler[i].value(t))
    }

    /// `Rz(yaw) Ry(pitch) Rx(roll)`.
    pub fn rotation(&self, t: f64) -> Rotation {
        let e = self.euler_angles(t);
        rz(e.z) * ry(e.y) * rx(e.x)
    }

    /// Body-frame angular velocity.
    pub fn angular_velocity(&self, t: f64) -> Vector3<f64> {
        let e = self.euler_angles(t);
        let rates = Vector3::from_fn(|i, _| self.euler[i].rate(t));
        let (sr, cr) = e.x.sin_cos();
        let (sp, cp) = e.y.sin_cos();
        let m = Matrix3::new(1.0, 0.0, -sp, 0.0, cr, sr * cp, 0.0, -sr, cr * cp);
        m * rates
    }
}

/// Rigid yaw-and-translation change of the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WorldFrame {
    pub yaw: f64,
    pub offset: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Team {
    pub trajectories: Vec<Trajectory>,
    pub frame: WorldFrame,
}

impl Team {
    pub fn random<R: Rng + ?Sized>(rng: &mut R, robots: usize, limits: &TrajectoryLimits) -> Self {
        Self {
            trajectories: (0..robots).map(|i| Trajectory::random(rng, i, robots, limits)).collect(),
            frame: WorldFrame::default(),
        }
    }

    pub fn robots(&self) -> usize {
        self.trajectories.len()
    }

    fn frame_rotation(&self) -> Rotation {
        rz(self.frame.yaw)
    }

    /// Absolute extended pose of `robot` at `t`.
    pub fn pose(&self, robot: usize, t: f64) -> ExtendedPose {
        let tr = &self.trajectories[robot];
        let g = self.frame_rotation();
        ExtendedPose::new(
            g * tr.rotation(t),
            g * tr.velocity(t),
            g * tr.position(t) + self.frame.offset,
        )
    }

    /// Pose of `robot` relative to robot 0.
    pub fn relative_pose(&self, robot: usize, t: f64) -> ExtendedPose {
        self.pose(0, t).inverse() * self.pose(robot, t)
    }

    /// Exact gyro and accelerometer readings at `t`.
    pub fn imu_truth(&self, robot: usize, t: f64) -> (Vector3<f64>, Vector3<f64>) {
        let tr = &self.trajectories[robot];
        let c = self.frame_rotation() * tr.rotation(t);
        let a = self.frame_rotation() * tr.acceleration(t);
        (tr.angular_velocity(t), c.inverse() * (a - GRAVITY))
    }
}

/// IMU sample for the step `[t, t + dt]`, read at the midpoint.
pub fn synthesize_imu<R: Rng + ?Sized>(
    team: &Team,
    robot: usize,
    t: f64,
    dt: f64,
    noise: &ImuNoiseModel,
    rng: &mut R,
) -> ImuSample {
    let (gyro, accel) = team.imu_truth(robot, t + 0.5 * dt);
    let mut n = || -> f64 { rng.sample(StandardNormal) };
    let gn = Vector3::new(n(), n(), n()) * noise.gyro_std;
    let an = Vector3::new(n(), n(), n()) * noise.accel_std;
    ImuSample::new(gyro + gn, accel + an, dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn profile_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = Profile::random(&mut rng, 1.0, (0.2, 1.0), 2.0, f64::INFINITY);
        let h = 1e-5;
        for k in 0..50 {
            let t = 0.37 * k as f64;
            assert_relative_eq!(p.rate(t), (p.value(t + h) - p.value(t - h)) / (2.0 * h), epsilon = 1e-8);
            assert_relative_eq!(p.accel(t), (p.rate(t + h) - p.rate(t - h)) / (2.0 * h), epsilon = 1e-8);
        }
        assert!(p.rate_bound() <= 2.0 + 1e-12);
    }

    #[test]
    fn hover_reads_gravity() {
        let team = Team {
            trajectories: vec![Trajectory::hover(Vector3::new(1.0, 2.0, 3.0), 0.7)],
            frame: WorldFrame::default(),
        };
        let (gyro, accel) = team.imu_truth(0, 4.2);
        assert_eq!(gyro, Vector3::zeros());
        assert_relative_eq!(accel, Vector3::new(0.0, 0.0, 9.81), epsilon = 1e-12);
    }

    #[test]
    fn limits_hold_on_a_dense_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let limits = TrajectoryLimits::default();
        for i in 0..7 {
            let tr = Trajectory::random(&mut rng, i, 7, &limits);
            for k in 0..6000 {
                let t = 0.01 * k as f64;
                assert!(tr.velocity(t).norm() <= limits.max_speed);
                assert!(tr.angular_velocity(t).norm() <= limits.max_rate);
            }
        }
    }

    #[test]
    fn body_rate_matches_attitude_derivative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tr = Trajectory::random(&mut rng, 0, 3, &TrajectoryLimits::default());
        let h = 1e-6;
        for k in 0..20 {
            let t = 1.3 * k as f64;
            let c = tr.rotation(t);
            let dc = (tr.rotation(t + h).matrix() - tr.rotation(t - h).matrix()) / (2.0 * h);
            let omega_x = c.matrix().transpose() * dc;
            let w = tr.angular_velocity(t);
            assert_relative_eq!(Vector3::new(omega_x[(2, 1)], omega_x[(0, 2)], omega_x[(1, 0)]), w, epsilon = 1e-7);
        }
    }

    #[test]
    fn gyro_integrates_back_to_attitude() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tr = Trajectory::random(&mut rng, 1, 3, &TrajectoryLimits::default());
        let f = |t: f64, c: &Matrix3<f64>| c * relnav::lie::skew(&tr.angular_velocity(t));
        let h = 1e-4;
        let mut c = *tr.rotation(0.0).matrix();
        let steps = 100_000;
        for k in 0..steps {
            let t = k as f64 * h;
            let k1 = f(t, &c);
            let k2 = f(t + h / 2.0, &(c + k1 * (h / 2.0)));
            let k3 = f(t + h / 2.0, &(c + k2 * (h / 2.0)));
            let k4 = f(t + h, &(c + k3 * h));
            c += (k1 + 2.0 * k2 + 2.0 * k3 + k4) * (h / 6.0);
        }
        let end = Rotation::from_matrix_unchecked(c).renormalized();
        let err = (end.inverse() * tr.rotation(steps as f64 * h)).log().norm();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn yaw_frame_change_keeps_imu_and_relative_poses() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let team = Team::random(&mut rng, 3, &TrajectoryLimits::default());
        let mut moved = team.clone();
        moved.frame = WorldFrame {
            yaw: 1.1,
            offset: Vector3::new(30.0, -12.0, 4.0),
        };
        for k in 0..50 {
            let t = 0.61 * k as f64;
            for r in 0..3 {
                let (g0, a0) = team.imu_truth(r, t);
                let (g1, a1) = moved.imu_truth(r, t);
                assert_relative_eq!(g0, g1, epsilon = 1e-12);
                assert_relative_eq!(a0, a1, epsilon = 1e-12);
                let d = team.relative_pose(r, t).matrix() - moved.relative_pose(r, t).matrix();
                assert!(d.norm() < 1e-10);
            }
        }
    }
}
