//! Scenario orchestration: truth, sensors, the ranging schedule and
//! robot 0's estimator on one timeline.

use nalgebra::{DMatrix, DVector, SVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use relnav::clocks::{absolute_clock_noise, sample_clock_step, ClockNoiseModel, ClockState};
use relnav::estimator::{
    clock_ids, initialize_clocks, perturb_poses, state_dim, CorrectionOutcome, Delivery, Estimator, EstimatorError,
    FilterConfig, HeightMeasurement, NavState, PosePrior, StepInput,
};
use relnav::eval::{nees, pose_error, position_rmse};
use relnav::lie::{ExtendedPose, Tangent};
use relnav::motion::{ImuNoiseModel, ImuSample};
use relnav::preint::Rmi;
use relnav::ranging::{
    all_transceivers, synthesize_timestamps, LeverArms, Transaction, TransactionRecord, TransactionWorld,
    TransceiverId,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schedule::{build_schedule, Schedule};
use crate::trajectory::{synthesize_imu, Team, TrajectoryLimits, WorldFrame};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("numerical failure at step {step}: {reason}")]
    Numerical { step: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Passive listening on robot 0's idle transceivers.
    Proposed,
    /// Direct measurements of every transaction, including those between
    /// neighbours.
    Centralized,
    /// Direct measurements of robot 0's own transactions only.
    NoPassive,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Proposed, Mode::Centralized, Mode::NoPassive];

    pub fn name(&self) -> &'static str {
        match self {
            Mode::Proposed => "proposed",
            Mode::Centralized => "centralized",
            Mode::NoPassive => "no_passive",
        }
    }

    /// What robot 0's estimator receives from `tx`.
    pub fn delivery(&self, tx: &Transaction) -> Option<Delivery> {
        match self {
            Mode::Proposed => Some(Delivery::Listening),
            Mode::Centralized => Some(Delivery::Direct),
            Mode::NoPassive => tx.plan.involves_robot(0).then_some(Delivery::Direct),
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode {s:?} (expected proposed, centralized or no_passive)"))
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub robots: usize,
    pub duration_s: f64,
    pub imu_rate_hz: f64,
    /// Transactions per second; must divide the IMU rate.
    pub uwb_rate_hz: f64,
    pub mode: Mode,
    pub seed: u64,
    pub dt21_s: f64,
    pub dt31_s: f64,
    pub imu_noise: ImuNoiseModel,
    pub clock_noise: ClockNoiseModel,
    pub timestamp_std_ns: f64,
    /// Probability that a neighbour's RMI broadcast is lost.
    pub drop_prob: f64,
    /// Ranging before takeoff used to initialize the clocks.
    pub preflight_s: f64,
    /// Spread of the initial absolute clock offsets [ns] and skews [ppb].
    pub clock_offset_spread_ns: f64,
    pub clock_skew_spread_ppb: f64,
    pub levers: LeverArms,
    pub pose_prior: PosePrior,
    pub nis_alpha: Option<f64>,
    pub inflation: f64,
    /// Neighbour height measurements; off when `None`.
    pub height_rate_hz: Option<f64>,
    pub height_std_m: f64,
    pub limits: TrajectoryLimits,
    /// Full covariance health check after every step.
    pub health_check: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            robots: 3,
            duration_s: 30.0,
            imu_rate_hz: 250.0,
            uwb_rate_hz: 125.0,
            mode: Mode::Proposed,
            seed: 0,
            dt21_s: 300e-6,
            dt31_s: 600e-6,
            imu_noise: ImuNoiseModel::default(),
            clock_noise: ClockNoiseModel::default(),
            timestamp_std_ns: 0.33,
            drop_prob: 0.0,
            preflight_s: 0.5,
            clock_offset_spread_ns: 1e4,
            clock_skew_spread_ppb: 1e4,
            levers: LeverArms::default(),
            pose_prior: PosePrior::default(),
            nis_alpha: Some(0.01),
            inflation: 1.0,
            height_rate_hz: None,
            height_std_m: 0.05,
            limits: TrajectoryLimits::default(),
            health_check: false,
        }
    }
}

fn integer_ratio(num: f64, den: f64) -> Option<usize> {
    let r = num / den;
    let n = r.round();
    (n >= 1.0 && (r - n).abs() < 1e-9).then_some(n as usize)
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Config(m));
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if self.robots < 2 {
            return bad(format!("robots must be at least 2 (got {})", self.robots));
        }
        for (name, v) in [
            ("duration_s", self.duration_s),
            ("imu_rate_hz", self.imu_rate_hz),
            ("uwb_rate_hz", self.uwb_rate_hz),
            ("timestamp_std_ns", self.timestamp_std_ns),
            ("inflation", self.inflation),
            ("height_std_m", self.height_std_m),
            ("limits.max_speed", self.limits.max_speed),
            ("limits.max_rate", self.limits.max_rate),
        ] {
            if !positive(v) {
                return bad(format!("{name} must be positive (got {v})"));
            }
        }
        if integer_ratio(self.imu_rate_hz, self.uwb_rate_hz).is_none() {
            return bad(format!(
                "imu_rate_hz ({}) must be an integer multiple of uwb_rate_hz ({})",
                self.imu_rate_hz, self.uwb_rate_hz
            ));
        }
        if let Some(h) = self.height_rate_hz {
            if integer_ratio(self.imu_rate_hz, h).is_none() {
                return bad(format!("imu_rate_hz must be an integer multiple of height_rate_hz ({h})"));
            }
        }
        if !(self.dt21_s > 0.0 && self.dt31_s > self.dt21_s) {
            return bad(format!("need 0 < dt21_s < dt31_s (got {}, {})", self.dt21_s, self.dt31_s));
        }
        if self.dt31_s * 2.0 >= 1.0 / self.uwb_rate_hz {
            return bad("a transaction must fit in its UWB slot".into());
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return bad(format!("drop_prob must lie in [0, 1] (got {})", self.drop_prob));
        }
        if !(self.preflight_s >= 0.0 && self.preflight_s.is_finite()) {
            return bad(format!("preflight_s must be non-negative (got {})", self.preflight_s));
        }
        if !(self.clock_offset_spread_ns >= 0.0 && self.clock_skew_spread_ppb >= 0.0) {
            return bad("clock spreads must be non-negative".into());
        }
        if !self.clock_noise.is_valid() {
            return bad("clock noise PSDs must be non-negative".into());
        }
        if !(self.imu_noise.gyro_std >= 0.0 && self.imu_noise.accel_std >= 0.0) {
            return bad("IMU noise must be non-negative".into());
        }
        let p = &self.pose_prior;
        if !(positive(p.attitude) && positive(p.velocity) && positive(p.position)) {
            return bad("pose prior stds must be positive".into());
        }
        if let Some(a) = self.nis_alpha {
            if !(a > 0.0 && a < 1.0) {
                return bad(format!("nis_alpha must lie in (0, 1) (got {a})"));
            }
        }
        Ok(())
    }

    pub fn time_step(&self) -> f64 {
        1.0 / self.imu_rate_hz
    }

    pub fn steps(&self) -> usize {
        (self.duration_s * self.imu_rate_hz).round() as usize
    }

    /// IMU steps per transaction.
    pub fn uwb_stride(&self) -> usize {
        integer_ratio(self.imu_rate_hz, self.uwb_rate_hz).unwrap_or(1)
    }

    pub fn filter_config(&self) -> FilterConfig {
        FilterConfig {
            imu_noise: self.imu_noise,
            clock_noise: self.clock_noise,
            timestamp_std: self.timestamp_std_ns,
            levers: self.levers,
            nis_alpha: self.nis_alpha,
            inflation: self.inflation,
        }
    }
}

/// Independent random streams of one seed. Each stream is consumed the
/// same way in every mode, so paired seeds share all noise.
struct Streams {
    world: ChaCha20Rng,
    clocks: ChaCha20Rng,
    imu: ChaCha20Rng,
    timestamps: ChaCha20Rng,
    drops: ChaCha20Rng,
    prior: ChaCha20Rng,
    heights: ChaCha20Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let stream = |id: u64| {
            let mut r = ChaCha20Rng::seed_from_u64(seed);
            r.set_stream(id);
            r
        };
        Self {
            world: stream(1),
            clocks: stream(2),
            imu: stream(3),
            timestamps: stream(4),
            drops: stream(5),
            prior: stream(6),
            heights: stream(7),
        }
    }
}

struct SimWorld<'a> {
    poses: &'a [ExtendedPose],
    clocks: &'a [ClockState],
    levers: &'a LeverArms,
    ids: &'a [TransceiverId],
}

impl TransactionWorld for SimWorld<'_> {
    fn position(&self, id: TransceiverId) -> Vector3<f64> {
        let t = &self.poses[id.robot];
        t.position + t.rotation * self.levers.of(id.slot)
    }

    fn clock(&self, id: TransceiverId) -> ClockState {
        let k = self.ids.iter().position(|x| *x == id).expect("known transceiver");
        self.clocks[k]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub transactions: usize,
    /// Transactions that reached robot 0's estimator.
    pub delivered: usize,
    /// Scalar pseudomeasurements in accepted and rejected updates.
    pub measurements: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub skipped: usize,
    pub rmis: usize,
    pub drops: usize,
}

/// Truth-versus-estimate streams, one entry per step after the first.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub config: ScenarioConfig,
    pub times: Vec<f64>,
    /// `[step][neighbour]`, relative to robot 0.
    pub truth: Vec<Vec<ExtendedPose>>,
    pub estimates: Vec<Vec<ExtendedPose>>,
    /// `Log(T_est T_true^-1)`.
    pub pose_errors: Vec<Vec<Tangent>>,
    /// Marginal standard deviations of each pose block.
    pub pose_std: Vec<Vec<SVector<f64, 9>>>,
    /// Relative clocks in state order `[s0, f1, s1, ...]`.
    pub clock_truth: Vec<Vec<ClockState>>,
    pub clock_errors: Vec<Vec<ClockState>>,
    pub clock_std: Vec<Vec<ClockState>>,
    /// Full-state NEES.
    pub nees: Vec<f64>,
    pub counters: Counters,
}

impl ScenarioResult {
    pub fn neighbours(&self) -> usize {
        self.config.robots - 1
    }

    pub fn nees_dim(&self) -> usize {
        state_dim(self.config.robots)
    }

    pub fn neighbour_errors(&self, neighbour: usize) -> Vec<Tangent> {
        self.pose_errors.iter().map(|e| e[neighbour]).collect()
    }

    /// Position RMSE of each neighbour.
    pub fn position_rmse(&self) -> Vec<f64> {
        (0..self.neighbours())
            .map(|j| position_rmse(&self.neighbour_errors(j)).unwrap_or(f64::NAN))
            .collect()
    }

    /// Mean over neighbours of the position RMSE.
    pub fn mean_position_rmse(&self) -> f64 {
        let v = self.position_rmse();
        v.iter().sum::<f64>() / v.len() as f64
    }

    /// RMSE of the neighbour-transceiver clock offsets [ns].
    pub fn clock_offset_rmse(&self) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for step in &self.clock_errors {
            for c in &step[1..] {
                sum += c.tau * c.tau;
                n += 1;
            }
        }
        (sum / n.max(1) as f64).sqrt()
    }
}

/// A configured world ready to run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub team: Team,
    pub schedule: Schedule,
}

impl Scenario {
    pub fn new(config: ScenarioConfig) -> Result<Self, ScenarioError> {
        config.validate()?;
        let mut world = Streams::new(config.seed).world;
        let team = Team::random(&mut world, config.robots, &config.limits);
        let schedule = build_schedule(config.robots);
        Ok(Self { config, team, schedule })
    }

    /// Same team seen from a yawed and shifted world frame.
    pub fn transform_world(mut self, frame: WorldFrame) -> Self {
        self.team.frame = frame;
        self
    }

    fn transaction(
        &self,
        index: usize,
        time_s: f64,
        poses: &[ExtendedPose],
        clocks: &[ClockState],
        ids: &[TransceiverId],
        rng: &mut ChaCha20Rng,
    ) -> Transaction {
        let plan = self.schedule.plan(index, self.config.dt21_s, self.config.dt31_s);
        let world = SimWorld {
            poses,
            clocks,
            levers: &self.config.levers,
            ids,
        };
        synthesize_timestamps(&world, &plan, time_s * 1e9, ids, self.config.timestamp_std_ns, rng)
    }

    pub fn run(&self) -> Result<ScenarioResult, ScenarioError> {
        let cfg = &self.config;
        let mut rng = Streams::new(cfg.seed);
        let n = cfg.robots;
        let dt = cfg.time_step();
        let stride = cfg.uwb_stride();
        let ids = all_transceivers(n);
        let clock_q = absolute_clock_noise(dt, &cfg.clock_noise);

        let mut clocks: Vec<ClockState> = ids
            .iter()
            .map(|_| {
                ClockState::new(
                    rng.clocks.random_range(-1.0..=1.0) * cfg.clock_offset_spread_ns,
                    rng.clocks.random_range(-1.0..=1.0) * cfg.clock_skew_spread_ppb,
                )
            })
            .collect();
        let advance = |clocks: &mut Vec<ClockState>, rng: &mut ChaCha20Rng| {
            for c in clocks.iter_mut() {
                *c = sample_clock_step(c, dt, &clock_q, rng);
            }
        };

        // pre-flight ranging with the team parked at its takeoff poses
        let takeoff: Vec<ExtendedPose> = (0..n).map(|r| self.team.pose(r, 0.0)).collect();
        let pre_steps = ((cfg.preflight_s / dt).round() as usize / stride) * stride;
        let mut tx_index = 0usize;
        let mut records = Vec::new();
        for j in 0..pre_steps {
            advance(&mut clocks, &mut rng.clocks);
            if (j + 1) % stride == 0 {
                let t = (j + 1) as f64 * dt - pre_steps as f64 * dt;
                let tx = self.transaction(tx_index, t, &takeoff, &clocks, &ids, &mut rng.timestamps);
                tx_index += 1;
                records.push(TransactionRecord {
                    step: 0,
                    time_s: t,
                    tx,
                });
            }
        }
        let clock_prior = initialize_clocks(&records, n, 0.0, cfg.timestamp_std_ns);

        let truth0: Vec<ExtendedPose> = (1..n).map(|r| self.team.relative_pose(r, 0.0)).collect();
        let initial = perturb_poses(&truth0, &cfg.pose_prior, &mut rng.prior);
        let state = NavState::from_prior(&initial, &cfg.pose_prior, &clock_prior);
        let mut est = Estimator::new(cfg.filter_config(), state);
        let rmi_noise = cfg.imu_noise.scaled(cfg.inflation);
        let mut accumulators: Vec<Rmi> = (1..n).map(|_| Rmi::empty(0)).collect();
        let height_stride = cfg.height_rate_hz.and_then(|h| integer_ratio(cfg.imu_rate_hz, h));

        let steps = cfg.steps();
        let mut out = ScenarioResult {
            config: cfg.clone(),
            times: Vec::with_capacity(steps),
            truth: Vec::with_capacity(steps),
            estimates: Vec::with_capacity(steps),
            pose_errors: Vec::with_capacity(steps),
            pose_std: Vec::with_capacity(steps),
            clock_truth: Vec::with_capacity(steps),
            clock_errors: Vec::with_capacity(steps),
            clock_std: Vec::with_capacity(steps),
            nees: Vec::with_capacity(steps),
            counters: Counters::default(),
        };
        let state_ids = clock_ids(n);
        let clock_index: Vec<usize> = state_ids
            .iter()
            .map(|id| ids.iter().position(|x| x == id).expect("known transceiver"))
            .collect();

        for k in 0..steps {
            let t = k as f64 * dt;
            let t_next = (k + 1) as f64 * dt;
            let imu: Vec<ImuSample> = (0..n)
                .map(|r| synthesize_imu(&self.team, r, t, dt, &cfg.imu_noise, &mut rng.imu))
                .collect();
            advance(&mut clocks, &mut rng.clocks);
            for (acc, u) in accumulators.iter_mut().zip(&imu[1..]) {
                acc.update(u, &rmi_noise);
            }

            let poses: Vec<ExtendedPose> = (0..n).map(|r| self.team.pose(r, t_next)).collect();
            let mut input = StepInput::default();
            let tx = ((k + 1) % stride == 0).then(|| {
                let tx = self.transaction(tx_index, t_next, &poses, &clocks, &ids, &mut rng.timestamps);
                tx_index += 1;
                tx
            });
            if let Some(tx) = &tx {
                out.counters.transactions += 1;
                let mut active = vec![tx.plan.initiator.robot, tx.plan.target.robot];
                active.sort_unstable();
                for r in active.into_iter().filter(|&r| r != 0) {
                    let lost = rng.drops.random::<f64>() < cfg.drop_prob;
                    if lost {
                        out.counters.drops += 1;
                        continue;
                    }
                    out.counters.rmis += 1;
                    input.rmis.push((r, accumulators[r - 1]));
                    accumulators[r - 1] = Rmi::empty(k + 1);
                }
                if let Some(d) = cfg.mode.delivery(tx) {
                    out.counters.delivered += 1;
                    input.transaction = Some((tx, d));
                }
            }
            if let Some(hs) = height_stride {
                if (k + 1) % hs == 0 {
                    for r in 1..n {
                        let z = self.team.relative_pose(r, t_next).position.z
                            + cfg.height_std_m * rng.heights.sample::<f64, _>(StandardNormal);
                        input.heights.push((
                            r,
                            HeightMeasurement {
                                value: z,
                                std: cfg.height_std_m,
                            },
                        ));
                    }
                }
            }

            let report = est.step(&imu[0], &input)?;
            for c in &report.corrections {
                match c {
                    CorrectionOutcome::Accepted { dim, .. } => {
                        out.counters.accepted += 1;
                        out.counters.measurements += dim;
                    }
                    CorrectionOutcome::Rejected { dim, .. } => {
                        out.counters.rejected += 1;
                        out.counters.measurements += dim;
                    }
                    CorrectionOutcome::Skipped(_) => out.counters.skipped += 1,
                }
            }
            if cfg.health_check {
                est.state.check_health().map_err(|e| ScenarioError::Numerical {
                    step: k + 1,
                    reason: e.to_string(),
                })?;
            }

            let partial: Vec<(usize, Rmi)> = accumulators.iter().enumerate().map(|(j, a)| (j + 1, *a)).collect();
            let snap = est.snapshot(&partial)?;
            let truth: Vec<ExtendedPose> = (1..n).map(|r| poses[0].inverse() * poses[r]).collect();
            let clock_truth: Vec<ClockState> = clock_index
                .iter()
                .map(|&i| clocks[i].relative_to(&clocks[0]))
                .collect();
            let dim = snap.covariance.nrows();
            let mut e = DVector::zeros(dim);
            let mut pose_errors = Vec::with_capacity(n - 1);
            let mut pose_std = Vec::with_capacity(n - 1);
            for j in 0..n - 1 {
                let err = pose_error(&snap.poses[j], &truth[j]);
                let o = relnav::estimator::pose_offset(j + 1);
                e.rows_mut(o, 9).copy_from(&err);
                pose_errors.push(err);
                pose_std.push(SVector::<f64, 9>::from_fn(|i, _| snap.covariance[(o + i, o + i)].max(0.0).sqrt()));
            }
            let mut clock_errors = Vec::with_capacity(state_ids.len());
            let mut clock_std = Vec::with_capacity(state_ids.len());
            for (c, id) in state_ids.iter().enumerate() {
                let o = est.state.clock_offset(*id).expect("clock in state");
                let err = ClockState::new(
                    snap.clocks[c].tau - clock_truth[c].tau,
                    snap.clocks[c].gamma - clock_truth[c].gamma,
                );
                e[o] = err.tau;
                e[o + 1] = err.gamma;
                clock_errors.push(err);
                clock_std.push(ClockState::new(
                    snap.covariance[(o, o)].max(0.0).sqrt(),
                    snap.covariance[(o + 1, o + 1)].max(0.0).sqrt(),
                ));
            }
            let value = full_state_nees(&e, &snap.covariance).ok_or_else(|| ScenarioError::Numerical {
                step: k + 1,
                reason: "covariance not positive definite".into(),
            })?;

            out.times.push(t_next);
            out.truth.push(truth);
            out.estimates.push(snap.poses);
            out.pose_errors.push(pose_errors);
            out.pose_std.push(pose_std);
            out.clock_truth.push(clock_truth);
            out.clock_errors.push(clock_errors);
            out.clock_std.push(clock_std);
            out.nees.push(value);
        }
        Ok(out)
    }
}

fn full_state_nees(e: &DVector<f64>, p: &DMatrix<f64>) -> Option<f64> {
    nees(e, p).ok().filter(|v| v.is_finite())
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioResult, ScenarioError> {
    Scenario::new(config.clone())?.run()
}
