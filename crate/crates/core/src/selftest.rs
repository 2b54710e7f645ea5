//! Oracle suites run by the command-line self test and the acceptance
//! target. Each suite reports the largest observed error against its
//! tolerance.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, Matrix5, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clocks::ClockState;
use crate::estimator::{ClockPrior, NavState, PosePrior};
use crate::lie::{wedge, ExtendedPose, Matrix9, Rotation, Tangent};
use crate::motion::{
    build_increment, continuous_generator, input_noise_jacobians, pose_state_jacobian, propagate_pose, ImuNoiseModel,
    ImuSample,
};
use crate::oracle::{central_difference, expm, relative_error, rk4};
use crate::preint::{apply_neighbour_rmi, check_window, propagate_without_neighbour, Rmi};
use crate::lie::Increment;
use crate::motion::input_jacobian;
use crate::ranging::{
    all_transceivers, distance_jacobian, form_pseudomeasurements, measurement_covariance, measurement_model,
    synthesize_timestamps, transceiver_distance, LeverArms, ListenerRole, TransactionPlan, TransactionWorld,
    TransceiverId,
};

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub elapsed: Duration,
    pub passed: bool,
}

impl SuiteReport {
    fn new(name: &'static str, cases: usize, max_error: f64, tolerance: f64, start: Instant) -> Self {
        Self {
            name,
            cases,
            max_error,
            tolerance,
            elapsed: start.elapsed(),
            passed: max_error.is_finite() && max_error <= tolerance,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {:<14} cases={:<8} max_error={:.3e} tolerance={:.1e} time={:.2}s",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.max_error,
            self.tolerance,
            self.elapsed.as_secs_f64()
        )
    }
}

/// Analytic pseudomeasurement covariance `R(sigma, role, delay_ratio)`.
pub type CovarianceBuilder = fn(f64, ListenerRole, f64) -> DMatrix<f64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelftestOptions {
    pub seed: u64,
    pub lie_samples: usize,
    pub covariance_samples: usize,
    pub preint_windows: usize,
    pub jacobian_cases: usize,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        Self {
            seed: 7,
            lie_samples: 1000,
            covariance_samples: 1_000_000,
            preint_windows: 100,
            jacobian_cases: 100,
        }
    }
}

fn tangent(rng: &mut ChaCha8Rng, scale: f64) -> Tangent {
    Tangent::from_fn(|_, _| rng.random_range(-scale..scale))
}

fn matrix_error(a: &Matrix5<f64>, b: &Matrix5<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

/// Closed-form `Exp` and increment construction against the dense matrix
/// exponential, and `Log(Exp(xi)) = xi`.
pub fn lie_suite(samples: usize, seed: u64) -> SuiteReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let xi = tangent(&mut rng, 2.0);
        let closed = ExtendedPose::exp(&xi);
        worst = worst.max(matrix_error(&closed.matrix(), &expm(&wedge(&xi))));
        // keep the angle below pi so the logarithm is unique
        let mut small = xi;
        let angle = small.fixed_rows::<3>(0).norm();
        if angle > 3.0 {
            small.fixed_rows_mut::<3>(0).scale_mut(3.0 / angle);
        }
        let back = ExtendedPose::exp(&small).log();
        worst = worst.max((back - small).norm() / small.norm().max(1.0));

        let dt = rng.random_range(1e-4..0.05);
        let u = ImuSample::new(
            Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0)),
            Vector3::from_fn(|_, _| rng.random_range(-15.0..15.0)),
            dt,
        );
        let dense = expm(&(continuous_generator(&u) * dt));
        worst = worst.max(matrix_error(&build_increment(&u).matrix(), &dense));
    }
    SuiteReport::new("lie", samples, worst, 1e-9, start)
}

fn mat_to_vec(m: &Matrix5<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Closed-form relative-pose propagation against RK4 of the continuous
/// model over 1 s at `dt = 1e-4`; error in position [m].
pub fn discretization_suite() -> SuiteReport {
    let start = Instant::now();
    let dt = 1e-4;
    let steps = 10_000;
    let inputs = |j: usize, t: f64| {
        let s = j as f64 + 1.0;
        ImuSample::new(
            Vector3::new((s * t).sin(), 0.5 * (2.0 * t).cos(), 0.3 * s),
            Vector3::new(2.0 * t.cos(), -1.0 + s * t, 9.81 + (3.0 * t).sin()),
            dt,
        )
    };
    let mut closed = ExtendedPose::new(
        Rotation::exp(&Vector3::new(0.2, 0.1, -0.4)),
        Vector3::new(0.5, -0.3, 0.1),
        Vector3::new(3.0, -1.0, 0.5),
    );
    let mut x = mat_to_vec(&closed.matrix());
    let mut worst = 0.0f64;
    for k in 0..steps {
        let t = (k as f64 + 0.5) * dt;
        let (a0, ai) = (inputs(0, t), inputs(1, t));
        closed = match propagate_pose(&closed, &build_increment(&a0), &build_increment(&ai)) {
            Ok(p) => p,
            Err(_) => return SuiteReport::new("discretization", steps, f64::NAN, 1e-6, start),
        };
        let (g0, gi) = (continuous_generator(&a0), continuous_generator(&ai));
        x = rk4(
            |_, v| {
                let m = Matrix5::from_column_slice(v.as_slice());
                mat_to_vec(&(m * gi - g0 * m))
            },
            &x,
            0.0,
            dt,
            1,
        );
        let integrated = Matrix5::from_column_slice(x.as_slice());
        worst = worst.max((closed.position - integrated.fixed_view::<3, 1>(0, 4)).norm());
    }
    SuiteReport::new("discretization", steps, worst, 1e-6, start)
}

struct FixedWorld {
    positions: Vec<Vector3<f64>>,
    clocks: Vec<ClockState>,
}

impl TransactionWorld for FixedWorld {
    fn position(&self, id: TransceiverId) -> Vector3<f64> {
        self.positions[2 * id.robot + id.slot as usize]
    }

    fn clock(&self, id: TransceiverId) -> ClockState {
        self.clocks[2 * id.robot + id.slot as usize]
    }
}

/// Worst entry error of a sample covariance against `r`: relative for
/// entries above a tenth of `sqrt(r_ii r_jj)`, scaled by it otherwise.
pub fn covariance_entry_error(sample: &DMatrix<f64>, r: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..r.nrows() {
        for j in 0..r.ncols() {
            let scale = (r[(i, i)] * r[(j, j)]).sqrt();
            let denom = if r[(i, j)].abs() >= 0.1 * scale { r[(i, j)].abs() } else { scale };
            worst = worst.max((sample[(i, j)] - r[(i, j)]).abs() / denom);
        }
    }
    worst
}

/// Monte-Carlo covariance of the 5- and 8-value pseudomeasurement vectors
/// against `builder`, `samples` transactions per role.
pub fn covariance_suite(samples: usize, seed: u64, builder: CovarianceBuilder) -> SuiteReport {
    let start = Instant::now();
    let sigma = 0.33;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let world = FixedWorld {
        positions: (0..6)
            .map(|_| Vector3::from_fn(|_, _| rng.random_range(-8.0..8.0)))
            .collect(),
        clocks: (0..6)
            .map(|_| ClockState::new(rng.random_range(-1e4..1e4), rng.random_range(-2e4..2e4)))
            .collect(),
    };
    let ids = all_transceivers(3);
    let cases = [
        (TransactionPlan::new(TransceiverId::first(1), TransceiverId::second(2)), ListenerRole::Passive),
        (TransactionPlan::new(TransceiverId::second(0), TransceiverId::first(2)), ListenerRole::Active),
    ];
    let mut worst = 0.0f64;
    for (plan, role) in cases {
        let m = role.dim();
        let mut sum = DVector::<f64>::zeros(m);
        let mut outer = DMatrix::<f64>::zeros(m, m);
        let mut reference: Option<DVector<f64>> = None;
        for _ in 0..samples {
            let tx = synthesize_timestamps(&world, &plan, 1e9, &ids, sigma, &mut rng);
            let y = match form_pseudomeasurements(&tx, 0, sigma) {
                Ok(y) => y.values,
                Err(_) => return SuiteReport::new("covariance", samples, f64::NAN, 0.02, start),
            };
            // centre on the first draw to keep the accumulation well conditioned
            let c = reference.get_or_insert_with(|| y.clone());
            let d = &y - &*c;
            sum += &d;
            outer.ger(1.0, &d, &d, 1.0);
        }
        let n = samples as f64;
        let mean = &sum / n;
        let sample = (outer - &mean * mean.transpose() * n) / (n - 1.0);
        let r = builder(sigma, role, plan.delay_ratio());
        worst = worst.max(covariance_entry_error(&sample, &r));
    }
    SuiteReport::new("covariance", 2 * samples, worst, 0.02, start)
}

/// The covariance with the sign of the offset row's passive block
/// flipped; used as a mutation check.
pub fn flipped_offset_sign_covariance(sigma: f64, role: ListenerRole, ratio: f64) -> DMatrix<f64> {
    let mut r = measurement_covariance(sigma, role, ratio);
    for k in 0..role.listeners() {
        for j in 0..2 {
            let c = 2 + 3 * k + j;
            r[(1, c)] = -r[(1, c)];
            r[(c, 1)] = -r[(c, 1)];
        }
    }
    r
}

fn imu(rng: &mut ChaCha8Rng) -> ImuSample {
    ImuSample::new(
        Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)),
        Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0)) + Vector3::new(0.0, 0.0, 9.81),
        0.004,
    )
}

fn random_psd(rng: &mut ChaCha8Rng, scale: f64) -> Matrix9 {
    let a = Matrix9::from_fn(|_, _| rng.random_range(-scale..scale));
    a * a.transpose()
}

/// Relative mean and covariance differences between closing a window
/// with an RMI and propagating the neighbour step by step.
pub fn preint_window_error(rng: &mut ChaCha8Rng, steps: usize) -> Option<(f64, f64)> {
    let noise = ImuNoiseModel::default();
    let t0 = ExtendedPose::exp(&tangent(rng, 1.0));
    let p0 = random_psd(rng, 0.05);
    let inputs: Vec<(ImuSample, ImuSample)> = (0..steps).map(|_| (imu(rng), imu(rng))).collect();
    let q = noise.covariance();
    let (mut t, mut p) = (t0, p0);
    for (a0, ai) in &inputs {
        t = propagate_pose(&t, &build_increment(a0), &build_increment(ai)).ok()?;
        let ad = pose_state_jacobian(&build_increment(a0));
        let (j0, ji) = input_noise_jacobians(a0, ai, &t);
        p = ad * p * ad.transpose() + j0 * q * j0.transpose() + ji * q * ji.transpose();
    }
    let mut rmi = Rmi::empty(0);
    for (_, ai) in &inputs {
        rmi.update(ai, &noise);
    }
    let (mut state, mut pr) = (Increment::from(t0), p0);
    let last = inputs.len() - 1;
    for (a0, _) in &inputs[..last] {
        let (next, jac) = propagate_without_neighbour(&state, &build_increment(a0));
        let l0 = input_jacobian(a0);
        state = next;
        pr = jac * pr * jac.transpose() + l0 * q * l0.transpose();
    }
    let a0 = &inputs[last].0;
    check_window(&rmi, (0, steps)).ok()?;
    let closed = apply_neighbour_rmi(&state, &build_increment(a0), &rmi).ok()?;
    let (a, b) = (closed.state_jacobian, closed.rmi_jacobian);
    let l0 = input_jacobian(a0);
    pr = a * pr * a.transpose() + l0 * q * l0.transpose() + b * rmi.covariance * b.transpose();
    let dm = (closed.pose.matrix() - t.matrix()).norm() / t.matrix().norm();
    let dc = (pr - p).norm() / p.norm();
    Some((dm, dc))
}

/// RMI path against per-step propagation on random windows of 1 to 50
/// steps.
pub fn preint_suite(windows: usize, seed: u64) -> SuiteReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..windows {
        let steps = rng.random_range(1..=50);
        match preint_window_error(&mut rng, steps) {
            Some((dm, dc)) => worst = worst.max(dm).max(dc),
            None => worst = f64::NAN,
        }
    }
    SuiteReport::new("preint", windows, worst, 1e-9, start)
}

fn tangent_vec(x: &DVector<f64>, offset: usize) -> Tangent {
    Tangent::from_iterator(x.rows(offset, 9).iter().copied())
}

fn log_diff(a: &ExtendedPose, nominal: &ExtendedPose) -> DVector<f64> {
    DVector::from_column_slice((*a * nominal.inverse()).log().as_slice())
}

/// Distance, process and measurement Jacobians against central
/// differences; `cases` random configurations each.
pub fn jacobian_suite(cases: usize, seed: u64) -> SuiteReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-6;
    let mut worst = 0.0f64;
    let lever = |rng: &mut ChaCha8Rng| Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5));
    for _ in 0..cases {
        // distance
        let (a, b) = (ExtendedPose::exp(&tangent(&mut rng, 2.0)), ExtendedPose::exp(&tangent(&mut rng, 2.0)));
        let (la, lb) = (lever(&mut rng), lever(&mut rng));
        let Ok((ja, jb)) = distance_jacobian(&a, &b, &la, &lb) else {
            return SuiteReport::new("jacobians", cases, f64::NAN, 1e-4, start);
        };
        let f = |x: &DVector<f64>| {
            let pa = ExtendedPose::exp(&tangent_vec(x, 0)) * a;
            let pb = ExtendedPose::exp(&tangent_vec(x, 9)) * b;
            DVector::from_element(1, transceiver_distance(&pa, &pb, &la, &lb))
        };
        let fd = central_difference(f, &DVector::zeros(18), h);
        let analytic = DMatrix::from_row_iterator(1, 18, ja.iter().chain(jb.iter()).copied());
        worst = worst.max(relative_error(&analytic, &fd, 1.0));

        // process model: state and input Jacobians
        let t = ExtendedPose::exp(&tangent(&mut rng, 1.5));
        let (a0, ai) = (imu(&mut rng), imu(&mut rng));
        let (u0, ui) = (build_increment(&a0), build_increment(&ai));
        let Ok(nominal) = propagate_pose(&t, &u0, &ui) else {
            return SuiteReport::new("jacobians", cases, f64::NAN, 1e-4, start);
        };
        let fs = |x: &DVector<f64>| {
            let moved = ExtendedPose::exp(&tangent_vec(x, 0)) * t;
            propagate_pose(&moved, &u0, &ui).map_or_else(|_| DVector::from_element(9, f64::NAN), |p| log_diff(&p, &nominal))
        };
        let fd = central_difference(fs, &DVector::zeros(9), h);
        let ad = pose_state_jacobian(&u0);
        worst = worst.max(relative_error(&DMatrix::from_column_slice(9, 9, ad.as_slice()), &fd, 1.0));
        let fu = |du: &DVector<f64>| {
            let shift = |s: &ImuSample, o: usize| {
                ImuSample::new(
                    s.gyro + Vector3::new(du[o], du[o + 1], du[o + 2]),
                    s.accel + Vector3::new(du[o + 3], du[o + 4], du[o + 5]),
                    s.dt,
                )
            };
            propagate_pose(&t, &build_increment(&shift(&a0, 0)), &build_increment(&shift(&ai, 6)))
                .map_or_else(|_| DVector::from_element(9, f64::NAN), |p| log_diff(&p, &nominal))
        };
        let fd = central_difference(fu, &DVector::zeros(12), h);
        let (j0, ji) = input_noise_jacobians(&a0, &ai, &nominal);
        let mut jac = DMatrix::zeros(9, 12);
        jac.view_mut((0, 0), (9, 6)).copy_from(&j0);
        jac.view_mut((0, 6), (9, 6)).copy_from(&ji);
        worst = worst.max(relative_error(&jac, &fd, 1.0));

        // measurement model on the filter state
        worst = worst.max(measurement_jacobian_error(&mut rng, h));
    }
    SuiteReport::new("jacobians", cases, worst, 1e-4, start)
}

fn measurement_jacobian_error(rng: &mut ChaCha8Rng, h: f64) -> f64 {
    let poses: Vec<ExtendedPose> = (0..2).map(|_| ExtendedPose::exp(&tangent(rng, 2.0))).collect();
    let clocks = ClockPrior {
        states: (0..5)
            .map(|_| ClockState::new(rng.random_range(-100.0..100.0), rng.random_range(-1e4..1e4)))
            .collect(),
        covariance: DMatrix::identity(10, 10),
    };
    let state = NavState::from_prior(&poses, &PosePrior::default(), &clocks);
    let ids = all_transceivers(3);
    let (i, j) = loop {
        let (i, j) = (rng.random_range(0..6), rng.random_range(0..6));
        if ids[i].robot != ids[j].robot {
            break (i, j);
        }
    };
    let world = FixedWorld {
        positions: (0..6).map(|_| Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0))).collect(),
        clocks: vec![ClockState::default(); 6],
    };
    let tx = synthesize_timestamps(&world, &TransactionPlan::new(ids[i], ids[j]), 0.0, &ids, 0.0, rng);
    let Ok(y) = form_pseudomeasurements(&tx, 0, 0.33) else {
        return f64::NAN;
    };
    let levers = LeverArms::default();
    let Ok((_, jac)) = measurement_model(&state, &y, &levers) else {
        return f64::NAN;
    };
    let f = |dx: &DVector<f64>| {
        let mut s = state.clone();
        s.retract(dx);
        measurement_model(&s, &y, &levers).map_or_else(|_| DVector::from_element(y.dim(), f64::NAN), |m| m.0)
    };
    let fd = central_difference(f, &DVector::zeros(state.covariance.nrows()), h);
    relative_error(&jac, &fd, 1.0)
}

pub fn run_all(opts: &SelftestOptions, builder: CovarianceBuilder) -> Vec<SuiteReport> {
    vec![
        lie_suite(opts.lie_samples, opts.seed),
        discretization_suite(),
        covariance_suite(opts.covariance_samples, opts.seed, builder),
        preint_suite(opts.preint_windows, opts.seed),
        jacobian_suite(opts.jacobian_cases, opts.seed),
    ]
}
