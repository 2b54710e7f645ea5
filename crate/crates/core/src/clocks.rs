//! Second-order transceiver clock model.
//!
//! Units: offsets in nanoseconds, skews in parts-per-billion, time in
//! seconds. Because `1 ppb * 1 s = 1 ns` the transition matrix needs no
//! conversion factor.

use nalgebra::{DMatrix, Matrix2, Vector2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Offset `tau` [ns] and skew `gamma` [ppb] of a clock.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClockState {
    pub tau: f64,
    pub gamma: f64,
}

impl ClockState {
    pub fn new(tau: f64, gamma: f64) -> Self {
        Self { tau, gamma }
    }

    pub fn as_vector(&self) -> Vector2<f64> {
        Vector2::new(self.tau, self.gamma)
    }

    pub fn from_vector(v: &Vector2<f64>) -> Self {
        Self::new(v[0], v[1])
    }

    /// Offset after `dt` seconds of noiseless flow.
    pub fn offset_after(&self, dt: f64) -> f64 {
        self.tau + self.gamma * dt
    }

    pub fn relative_to(&self, reference: &ClockState) -> ClockState {
        ClockState::new(self.tau - reference.tau, self.gamma - reference.gamma)
    }
}

/// Per-clock power spectral densities of the offset [ns^2/Hz] and skew
/// [ppb^2/Hz] driving noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockNoiseModel {
    pub q_tau: f64,
    pub q_gamma: f64,
}

impl Default for ClockNoiseModel {
    fn default() -> Self {
        Self {
            q_tau: 0.4,
            q_gamma: 640.0,
        }
    }
}

impl ClockNoiseModel {
    pub fn noiseless() -> Self {
        Self {
            q_tau: 0.0,
            q_gamma: 0.0,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.q_tau >= 0.0 && self.q_gamma >= 0.0 && self.q_tau.is_finite() && self.q_gamma.is_finite()
    }
}

pub fn clock_transition(dt: f64) -> Matrix2<f64> {
    Matrix2::new(1.0, dt, 0.0, 1.0)
}

/// Discrete noise of a single absolute clock over `dt`.
pub fn absolute_clock_noise(dt: f64, model: &ClockNoiseModel) -> Matrix2<f64> {
    let (qt, qg) = (model.q_tau, model.q_gamma);
    let off = dt * dt * qg / 2.0;
    Matrix2::new(dt * qt + dt.powi(3) * qg / 3.0, off, off, dt * qg)
}

/// Discrete noise of a clock expressed relative to another: both absolute
/// clocks contribute, hence twice the single-clock value.
pub fn clock_process_noise(dt: f64, model: &ClockNoiseModel) -> Matrix2<f64> {
    2.0 * absolute_clock_noise(dt, model)
}

/// Cross-covariance between the noises of two relative clocks sharing the
/// same reference clock.
pub fn clock_cross_covariance(dt: f64, model: &ClockNoiseModel) -> Matrix2<f64> {
    0.5 * clock_process_noise(dt, model)
}

/// Joint noise of `m` relative clocks sharing one reference.
pub fn joint_clock_noise(m: usize, dt: f64, model: &ClockNoiseModel) -> DMatrix<f64> {
    let q = clock_process_noise(dt, model);
    let x = clock_cross_covariance(dt, model);
    let mut out = DMatrix::zeros(2 * m, 2 * m);
    for i in 0..m {
        for j in 0..m {
            let block = if i == j { q } else { x };
            out.view_mut((2 * i, 2 * j), (2, 2)).copy_from(&block);
        }
    }
    out
}

/// Propagates a relative clock mean and covariance by `dt`.
pub fn propagate_clock(
    state: &ClockState,
    cov: &Matrix2<f64>,
    dt: f64,
    model: &ClockNoiseModel,
) -> (ClockState, Matrix2<f64>) {
    let a = clock_transition(dt);
    let next = ClockState::from_vector(&(a * state.as_vector()));
    (next, a * cov * a.transpose() + clock_process_noise(dt, model))
}

/// Lower factor of a 2x2 PSD matrix; tolerates singular inputs.
pub fn psd_factor2(q: &Matrix2<f64>) -> Matrix2<f64> {
    let l11 = q[(0, 0)].max(0.0).sqrt();
    let l21 = if l11 > 0.0 { q[(1, 0)] / l11 } else { 0.0 };
    let l22 = (q[(1, 1)] - l21 * l21).max(0.0).sqrt();
    Matrix2::new(l11, 0.0, l21, l22)
}

/// One exact discrete step `c <- A c + w`, `w ~ N(0, q)`.
pub fn sample_clock_step<R: Rng + ?Sized>(
    state: &ClockState,
    dt: f64,
    q: &Matrix2<f64>,
    rng: &mut R,
) -> ClockState {
    let l = psd_factor2(q);
    let z = Vector2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
    ClockState::from_vector(&(clock_transition(dt) * state.as_vector() + l * z))
}

/// Samples a relative clock trajectory of `n_steps + 1` states starting at
/// `initial`.
pub fn simulate_clock(
    model: &ClockNoiseModel,
    initial: ClockState,
    dt: f64,
    n_steps: usize,
    seed: u64,
) -> Vec<ClockState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = clock_process_noise(dt, model);
    let mut out = Vec::with_capacity(n_steps + 1);
    let mut c = initial;
    out.push(c);
    for _ in 0..n_steps {
        c = sample_clock_step(&c, dt, &q, &mut rng);
        out.push(c);
    }
    out
}
