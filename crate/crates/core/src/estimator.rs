//! Robot 0's filter over relative poses and relative clocks.
//!
//! State layout, fixed:
//!
//! ```text
//! [ c_s0 | xi_1, c_f1, c_s1 | xi_2, c_f2, c_s2 | ... ]
//!   2       9     2     2
//! ```
//!
//! Clock blocks are (offset [ns], skew [ppb]) relative to f0. `xi_i` is
//! the left perturbation (attitude, velocity, position) of the pose of
//! robot i relative to robot 0. Between RMIs a neighbour's pose is an
//! intermediate DE_2(3) element; its perturbation is still left and 9-D.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::clocks::{clock_transition, joint_clock_noise, ClockNoiseModel, ClockState};
use crate::lie::{skew, ExtendedPose, Increment, LieError, Matrix9, Tangent};
use crate::motion::{build_increment, input_jacobian, ImuNoiseModel, ImuSample};
use crate::preint::{apply_neighbour_rmi, check_window, PreintError, Rmi, POSE_CLOSURE_TOL};
use crate::ranging::{
    form_direct_pseudomeasurements, form_pseudomeasurements, LeverArms, PseudoMeasurement, RangingError,
    Slot, StateView, Transaction, TransactionRecord, TransceiverId,
};

pub const NEIGHBOUR_BLOCK: usize = 13;

/// Dimension of the joint state for a team of `robots`.
pub fn state_dim(robots: usize) -> usize {
    2 + NEIGHBOUR_BLOCK * robots.saturating_sub(1)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error(transparent)]
    Preint(#[from] PreintError),
    #[error(transparent)]
    Ranging(#[from] RangingError),
    #[error(transparent)]
    Lie(#[from] LieError),
    #[error("robot {0} is not a neighbour")]
    UnknownRobot(usize),
    #[error("robot {0} is awaiting an RMI")]
    NotSynchronized(usize),
    #[error("covariance lost positive semidefiniteness (min eigenvalue {0})")]
    NotPsd(f64),
    #[error("non-finite value in the state")]
    NonFinite,
    #[error("{0}")]
    Dimension(String),
}

/// Prior standard deviations of the initial relative poses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosePrior {
    pub attitude: f64,
    pub velocity: f64,
    pub position: f64,
}

impl Default for PosePrior {
    fn default() -> Self {
        Self {
            attitude: 0.1,
            velocity: 0.1,
            position: 0.3,
        }
    }
}

impl PosePrior {
    pub fn covariance(&self) -> Matrix9 {
        let mut d = Tangent::zeros();
        for k in 0..3 {
            d[k] = self.attitude.powi(2);
            d[3 + k] = self.velocity.powi(2);
            d[6 + k] = self.position.powi(2);
        }
        Matrix9::from_diagonal(&d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub imu_noise: ImuNoiseModel,
    pub clock_noise: ClockNoiseModel,
    /// Timestamp noise [ns].
    pub timestamp_std: f64,
    pub levers: LeverArms,
    /// NIS gate false-rejection rate; `None` disables the gate.
    pub nis_alpha: Option<f64>,
    /// Factor on the IMU noise and measurement covariances.
    pub inflation: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            imu_noise: ImuNoiseModel::default(),
            clock_noise: ClockNoiseModel::default(),
            timestamp_std: 0.33,
            levers: LeverArms::default(),
            nis_alpha: Some(0.01),
            inflation: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeightMeasurement {
    /// z-component of the relative position resolved in robot 0's frame [m].
    pub value: f64,
    pub std: f64,
}

impl HeightMeasurement {
    pub fn new(value: f64) -> Self {
        Self { value, std: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighbourState {
    /// Relative pose, or an intermediate state while awaiting an RMI.
    pub pose: Increment,
    /// Step at which the pose was last an element of SE_2(3).
    pub synced_at: usize,
    /// Clocks of the neighbour's first and second transceivers.
    pub clocks: [ClockState; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct NavState {
    pub own_second: ClockState,
    pub neighbours: Vec<NeighbourState>,
    pub covariance: DMatrix<f64>,
    pub step: usize,
}

/// Initial clock estimates in state order `[s0, f1, s1, f2, s2, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClockPrior {
    pub states: Vec<ClockState>,
    pub covariance: DMatrix<f64>,
}

impl ClockPrior {
    pub fn uninformed(robots: usize) -> Self {
        let m = 2 * robots - 1;
        let mut cov = DMatrix::zeros(2 * m, 2 * m);
        for k in 0..m {
            cov[(2 * k, 2 * k)] = DEFAULT_OFFSET_STD.powi(2);
            cov[(2 * k + 1, 2 * k + 1)] = DEFAULT_SKEW_STD.powi(2);
        }
        Self {
            states: vec![ClockState::default(); m],
            covariance: cov,
        }
    }
}

/// Non-reference transceivers in state order.
pub fn clock_ids(robots: usize) -> Vec<TransceiverId> {
    let mut ids = vec![TransceiverId::second(0)];
    for r in 1..robots {
        ids.push(TransceiverId::first(r));
        ids.push(TransceiverId::second(r));
    }
    ids
}

impl NavState {
    /// Block-diagonal poses, full clock prior.
    pub fn from_prior(poses: &[ExtendedPose], pose_prior: &PosePrior, clocks: &ClockPrior) -> Self {
        let robots = poses.len() + 1;
        let dim = state_dim(robots);
        assert_eq!(clocks.states.len(), 2 * robots - 1);
        let mut state = NavState {
            own_second: clocks.states[0],
            neighbours: poses
                .iter()
                .enumerate()
                .map(|(k, p)| NeighbourState {
                    pose: Increment::from(*p),
                    synced_at: 0,
                    clocks: [clocks.states[1 + 2 * k], clocks.states[2 + 2 * k]],
                })
                .collect(),
            covariance: DMatrix::zeros(dim, dim),
            step: 0,
        };
        let idx: Vec<usize> = clock_ids(robots)
            .iter()
            .map(|id| state.clock_offset(*id).unwrap())
            .collect();
        for (a, &ia) in idx.iter().enumerate() {
            for (b, &ib) in idx.iter().enumerate() {
                let block = clocks.covariance.fixed_view::<2, 2>(2 * a, 2 * b);
                state.covariance.fixed_view_mut::<2, 2>(ia, ib).copy_from(&block);
            }
        }
        let pc = pose_prior.covariance();
        for r in 1..robots {
            let o = pose_offset(r);
            state.covariance.fixed_view_mut::<9, 9>(o, o).copy_from(&pc);
        }
        state
    }

    pub fn robots(&self) -> usize {
        self.neighbours.len() + 1
    }

    pub fn neighbour(&self, robot: usize) -> Result<&NeighbourState, EstimatorError> {
        if robot == 0 {
            return Err(EstimatorError::UnknownRobot(robot));
        }
        self.neighbours.get(robot - 1).ok_or(EstimatorError::UnknownRobot(robot))
    }

    pub fn clock_offset(&self, id: TransceiverId) -> Option<usize> {
        if id.is_reference() || id.robot >= self.robots() {
            return None;
        }
        if id.robot == 0 {
            return Some(0);
        }
        let base = pose_offset(id.robot) + 9;
        Some(match id.slot {
            Slot::First => base,
            Slot::Second => base + 2,
        })
    }

    pub fn is_synchronized(&self, robot: usize) -> bool {
        robot == 0 || self.neighbour(robot).is_ok_and(|n| n.pose.dt.abs() <= POSE_CLOSURE_TOL)
    }

    /// Symmetric, PSD within `1e-9 * trace`, finite.
    pub fn check_health(&self) -> Result<(), EstimatorError> {
        let p = &self.covariance;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(EstimatorError::NonFinite);
        }
        let min = p.clone().symmetric_eigenvalues().min();
        if min < -1e-9 * p.trace().abs() || (p - p.transpose()).abs().max() > 1e-9 * p.abs().max() {
            return Err(EstimatorError::NotPsd(min));
        }
        Ok(())
    }

    fn clock_mut(&mut self, id: TransceiverId) -> &mut ClockState {
        if id.robot == 0 {
            return &mut self.own_second;
        }
        let n = &mut self.neighbours[id.robot - 1];
        match id.slot {
            Slot::First => &mut n.clocks[0],
            Slot::Second => &mut n.clocks[1],
        }
    }

    /// Retracts a state correction: left on poses, additive on clocks.
    pub fn retract(&mut self, dx: &DVector<f64>) {
        for id in clock_ids(self.robots()) {
            let o = self.clock_offset(id).unwrap();
            let c = self.clock_mut(id);
            c.tau += dx[o];
            c.gamma += dx[o + 1];
        }
        for r in 1..self.robots() {
            let o = pose_offset(r);
            let xi = Tangent::from_iterator(dx.rows(o, 9).iter().copied());
            let n = &mut self.neighbours[r - 1];
            n.pose = n.pose.perturb_left(&xi);
        }
    }
}

/// Offset of robot `robot`'s pose block (`robot >= 1`).
pub fn pose_offset(robot: usize) -> usize {
    2 + NEIGHBOUR_BLOCK * (robot - 1)
}

impl StateView for NavState {
    fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    fn pose(&self, robot: usize) -> ExtendedPose {
        if robot == 0 {
            ExtendedPose::identity()
        } else {
            self.neighbours[robot - 1].pose.pose_part()
        }
    }

    fn pose_index(&self, robot: usize) -> Option<usize> {
        (robot > 0 && robot < self.robots()).then(|| pose_offset(robot))
    }

    fn clock(&self, id: TransceiverId) -> ClockState {
        if id.is_reference() {
            return ClockState::default();
        }
        if id.robot == 0 {
            return self.own_second;
        }
        let n = &self.neighbours[id.robot - 1];
        match id.slot {
            Slot::First => n.clocks[0],
            Slot::Second => n.clocks[1],
        }
    }

    fn clock_index(&self, id: TransceiverId) -> Option<usize> {
        self.clock_offset(id)
    }
}

/// Outcome of the NIS test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateDecision {
    pub accept: bool,
    pub nis: f64,
    pub threshold: f64,
}

/// Chi-squared quantile at `1 - alpha` with `dim` degrees of freedom.
pub fn chi2_threshold(dim: usize, alpha: f64) -> f64 {
    ChiSquared::new(dim as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(1.0 - alpha)
}

/// Accepts iff `nu^T S^-1 nu <= chi2_dim(1 - alpha)`. A singular `S`
/// rejects.
pub fn nis_gate(innovation: &DVector<f64>, s: &DMatrix<f64>, alpha: f64) -> GateDecision {
    let threshold = chi2_threshold(innovation.len(), alpha);
    let nis = match s.clone().cholesky() {
        Some(ch) => innovation.dot(&ch.solve(innovation)),
        None => f64::INFINITY,
    };
    GateDecision {
        accept: nis <= threshold,
        nis,
        threshold,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CorrectionOutcome {
    Accepted { dim: usize, nis: f64 },
    Rejected { dim: usize, nis: f64 },
    Skipped(String),
}

impl CorrectionOutcome {
    pub fn accepted(&self) -> bool {
        matches!(self, CorrectionOutcome::Accepted { .. })
    }
}

/// How robot 0 turns a transaction into pseudomeasurements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    /// Robot 0's idle transceivers listen: 5 or 8 values.
    Listening,
    /// Time of flight and offset only.
    Direct,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FilterEvent {
    OwnRmiPropagated { window: (usize, usize) },
    OwnRmiBroadcast { window: (usize, usize) },
    Formed { count: usize },
    Propagated { closed: Vec<usize> },
    Corrected { dim: usize, accepted: bool },
    CorrectionSkipped { reason: String },
    HeightCorrected { robot: usize, accepted: bool },
    OwnRmiReset { at: usize },
}

/// Everything robot 0 receives for one step.
#[derive(Debug, Clone, Default)]
pub struct StepInput<'a> {
    pub rmis: Vec<(usize, Rmi)>,
    pub transaction: Option<(&'a Transaction, Delivery)>,
    pub heights: Vec<(usize, HeightMeasurement)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    pub closed: Vec<usize>,
    /// Robot 0's own RMI, when it was broadcast this step.
    pub broadcast: Option<Rmi>,
    pub corrections: Vec<CorrectionOutcome>,
}

/// Estimate with every neighbour closed by its pending RMI.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub poses: Vec<ExtendedPose>,
    /// Clocks in state order `[s0, f1, s1, ...]`.
    pub clocks: Vec<ClockState>,
    pub covariance: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct Estimator {
    pub config: FilterConfig,
    pub state: NavState,
    pub own_rmi: Rmi,
    trace: Option<Vec<FilterEvent>>,
    thresholds: Vec<f64>,
}

impl Estimator {
    pub fn new(config: FilterConfig, state: NavState) -> Self {
        let thresholds = match config.nis_alpha {
            Some(alpha) => (1..=8).map(|d| chi2_threshold(d, alpha)).collect(),
            None => Vec::new(),
        };
        let own_rmi = Rmi::empty(state.step);
        Self {
            config,
            state,
            own_rmi,
            trace: None,
            thresholds,
        }
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn trace(&self) -> &[FilterEvent] {
        self.trace.as_deref().unwrap_or(&[])
    }

    fn log(&mut self, e: FilterEvent) {
        if let Some(t) = self.trace.as_mut() {
            t.push(e);
        }
    }

    fn threshold(&self, dim: usize) -> Option<f64> {
        let alpha = self.config.nis_alpha?;
        Some(
            self.thresholds
                .get(dim.wrapping_sub(1))
                .copied()
                .unwrap_or_else(|| chi2_threshold(dim, alpha)),
        )
    }

    /// Propagates every block by one IMU step of robot 0 and closes the
    /// neighbours whose RMIs arrived. All windows are validated before the
    /// state is touched.
    pub fn predict(&mut self, u0: &ImuSample, rmis: &[(usize, Rmi)]) -> Result<Vec<usize>, EstimatorError> {
        let next = self.state.step + 1;
        let big_u0 = build_increment(u0);
        let mut closed_poses = Vec::with_capacity(rmis.len());
        for (robot, rmi) in rmis {
            let n = self.state.neighbour(*robot)?;
            check_window(rmi, (n.synced_at, next))?;
            closed_poses.push((*robot, apply_neighbour_rmi(&n.pose, &big_u0, rmi)?, rmi.covariance));
        }

        let dim = self.state.covariance.nrows();
        let robots = self.state.robots();
        let inv = big_u0.inverse();
        let ad = inv.adjoint();
        let a = clock_transition(u0.dt);

        let mut f = DMatrix::zeros(dim, dim);
        let ids = clock_ids(robots);
        let cidx: Vec<usize> = ids.iter().map(|id| self.state.clock_offset(*id).unwrap()).collect();
        for &o in &cidx {
            f.fixed_view_mut::<2, 2>(o, o).copy_from(&a);
        }
        for r in 1..robots {
            let o = pose_offset(r);
            f.fixed_view_mut::<9, 9>(o, o).copy_from(&ad);
        }

        let mut q = DMatrix::zeros(dim, dim);
        let qc = joint_clock_noise(ids.len(), u0.dt, &self.config.clock_noise);
        for (i, &oi) in cidx.iter().enumerate() {
            for (j, &oj) in cidx.iter().enumerate() {
                q.fixed_view_mut::<2, 2>(oi, oj)
                    .copy_from(&qc.fixed_view::<2, 2>(2 * i, 2 * j));
            }
        }
        let l0 = input_jacobian(u0);
        let shared = l0 * self.imu_covariance() * l0.transpose();
        for r in 1..robots {
            for s in 1..robots {
                q.fixed_view_mut::<9, 9>(pose_offset(r), pose_offset(s)).copy_from(&shared);
            }
        }
        for (robot, closed, sigma_w) in &closed_poses {
            let o = pose_offset(*robot);
            let b = closed.rmi_jacobian;
            let mut block = q.fixed_view_mut::<9, 9>(o, o);
            block += b * sigma_w * b.transpose();
        }

        let p = &f * &self.state.covariance * f.transpose() + q;
        self.state.covariance = 0.5 * (&p + p.transpose());

        for c in ids.iter() {
            let s = self.state.clock_mut(*c);
            *s = ClockState::from_vector(&(a * s.as_vector()));
        }
        for n in self.state.neighbours.iter_mut() {
            n.pose = inv * n.pose;
        }
        let mut closed = Vec::with_capacity(closed_poses.len());
        for (robot, c, _) in closed_poses {
            let n = &mut self.state.neighbours[robot - 1];
            n.pose = Increment::from(c.pose);
            n.synced_at = next;
            closed.push(robot);
        }
        self.state.step = next;
        if self.state.covariance.iter().any(|v| !v.is_finite()) {
            return Err(EstimatorError::NonFinite);
        }
        Ok(closed)
    }

    fn imu_covariance(&self) -> crate::motion::Matrix6 {
        self.config.imu_noise.covariance() * self.config.inflation
    }

    /// Linear(ized) correction with the NIS gate and Joseph-form
    /// covariance update.
    fn update(&mut self, innovation: DVector<f64>, h: DMatrix<f64>, r: DMatrix<f64>) -> CorrectionOutcome {
        let dim = innovation.len();
        let p = &self.state.covariance;
        let pht = p * h.transpose();
        let s = &h * &pht + &r;
        let s = 0.5 * (&s + s.transpose());
        let Some(ch) = s.clone().cholesky() else {
            return CorrectionOutcome::Skipped("innovation covariance not positive definite".into());
        };
        let nis = innovation.dot(&ch.solve(&innovation));
        if let Some(th) = self.threshold(dim) {
            if nis > th {
                return CorrectionOutcome::Rejected { dim, nis };
            }
        }
        let k = ch.solve(&pht.transpose()).transpose();
        let dx = &k * innovation;
        let n = p.nrows();
        let ikh = DMatrix::identity(n, n) - &k * &h;
        let joseph = &ikh * p * ikh.transpose() + &k * r * k.transpose();
        self.state.covariance = 0.5 * (&joseph + joseph.transpose());
        self.state.retract(&dx);
        CorrectionOutcome::Accepted { dim, nis }
    }

    /// Requires every robot involved in `y` to hold a valid pose.
    pub fn correct(&mut self, y: &PseudoMeasurement) -> Result<CorrectionOutcome, EstimatorError> {
        for robot in involved_robots(y) {
            if robot >= self.state.robots() {
                return Err(EstimatorError::UnknownRobot(robot));
            }
            if !self.state.is_synchronized(robot) {
                return Err(EstimatorError::NotSynchronized(robot));
            }
        }
        let (h, jac) = crate::ranging::measurement_model(&self.state, y, &self.config.levers)?;
        let r = &y.covariance * self.config.inflation;
        Ok(self.update(&y.values - h, jac, r))
    }

    /// z-component of the relative position of `robot` in robot 0's frame.
    pub fn correct_height(
        &mut self,
        robot: usize,
        z: &HeightMeasurement,
    ) -> Result<CorrectionOutcome, EstimatorError> {
        let n = self.state.neighbour(robot)?;
        if !self.state.is_synchronized(robot) {
            return Err(EstimatorError::NotSynchronized(robot));
        }
        let (h, jac) = height_model(&n.pose.position, self.state.covariance.nrows(), robot);
        let innovation = DVector::from_element(1, z.value - h);
        let r = DMatrix::from_element(1, 1, z.std * z.std);
        Ok(self.update(innovation, jac, r))
    }

    /// One step in the order: own RMI, broadcast, pseudomeasurement
    /// formation, propagation, correction, own RMI reset.
    pub fn step(&mut self, u0: &ImuSample, input: &StepInput) -> Result<StepReport, EstimatorError> {
        let mut report = StepReport::default();
        let noise = self.config.imu_noise;
        self.own_rmi.update(u0, &noise);
        self.log(FilterEvent::OwnRmiPropagated {
            window: self.own_rmi.window,
        });
        let own_active = input.transaction.is_some_and(|(tx, _)| tx.plan.involves_robot(0));
        if own_active {
            report.broadcast = Some(self.own_rmi);
            self.log(FilterEvent::OwnRmiBroadcast {
                window: self.own_rmi.window,
            });
        }
        let y = match input.transaction {
            Some((tx, delivery)) => {
                let sigma = self.config.timestamp_std;
                let y = match delivery {
                    Delivery::Listening => form_pseudomeasurements(tx, 0, sigma)?,
                    Delivery::Direct => form_direct_pseudomeasurements(tx, sigma)?,
                };
                self.log(FilterEvent::Formed { count: y.dim() });
                Some(y)
            }
            None => None,
        };
        report.closed = self.predict(u0, &input.rmis)?;
        self.log(FilterEvent::Propagated {
            closed: report.closed.clone(),
        });
        if let Some(y) = y {
            let outcome = match self.correct(&y) {
                Err(EstimatorError::NotSynchronized(r)) => {
                    CorrectionOutcome::Skipped(format!("robot {r} awaiting an RMI"))
                }
                other => other?,
            };
            self.log(match &outcome {
                CorrectionOutcome::Skipped(reason) => FilterEvent::CorrectionSkipped { reason: reason.clone() },
                o => FilterEvent::Corrected {
                    dim: y.dim(),
                    accepted: o.accepted(),
                },
            });
            report.corrections.push(outcome);
        }
        for (robot, z) in &input.heights {
            let outcome = match self.correct_height(*robot, z) {
                Err(EstimatorError::NotSynchronized(r)) => {
                    CorrectionOutcome::Skipped(format!("robot {r} awaiting an RMI"))
                }
                other => other?,
            };
            self.log(FilterEvent::HeightCorrected {
                robot: *robot,
                accepted: outcome.accepted(),
            });
            report.corrections.push(outcome);
        }
        if own_active {
            self.own_rmi = Rmi::empty(self.state.step);
            self.log(FilterEvent::OwnRmiReset { at: self.state.step });
        }
        Ok(report)
    }

    /// Closes every pending intermediate state with the neighbour's
    /// partial RMI, keyed by robot. Synchronized neighbours need none.
    pub fn snapshot(&self, partial: &[(usize, Rmi)]) -> Result<Snapshot, EstimatorError> {
        let st = &self.state;
        let mut cov = st.covariance.clone();
        let mut poses = Vec::with_capacity(st.neighbours.len());
        for (k, n) in st.neighbours.iter().enumerate() {
            let robot = k + 1;
            let pending = partial.iter().find(|(r, _)| *r == robot).map(|(_, rmi)| rmi);
            let pose = match pending {
                Some(rmi) => {
                    check_window(rmi, (n.synced_at, st.step))?;
                    let pose = (n.pose * rmi.increment).to_pose(POSE_CLOSURE_TOL)?;
                    let b = pose.adjoint();
                    let o = pose_offset(robot);
                    let mut block = cov.fixed_view_mut::<9, 9>(o, o);
                    block += b * rmi.covariance * b.transpose();
                    pose
                }
                None => n.pose.to_pose(POSE_CLOSURE_TOL).map_err(|_| EstimatorError::NotSynchronized(robot))?,
            };
            poses.push(pose);
        }
        let clocks = clock_ids(st.robots()).iter().map(|id| st.clock(*id)).collect();
        Ok(Snapshot {
            poses,
            clocks,
            covariance: cov,
        })
    }
}

fn involved_robots(y: &PseudoMeasurement) -> Vec<usize> {
    let mut r = vec![y.initiator.robot, y.target.robot];
    for k in &y.kinds {
        if let crate::ranging::PseudoKind::Passive1(id) = k {
            r.push(id.robot);
        }
    }
    r.sort_unstable();
    r.dedup();
    r
}

/// `e_z^T r` and its Jacobian under a left perturbation of the pose.
pub fn height_model(position: &Vector3<f64>, dim: usize, robot: usize) -> (f64, DMatrix<f64>) {
    let ez = Vector3::<f64>::z();
    let mut jac = DMatrix::zeros(1, dim);
    let o = pose_offset(robot);
    let rot = -(ez.transpose() * skew(position));
    for k in 0..3 {
        jac[(0, o + k)] = rot[k];
        jac[(0, o + 6 + k)] = ez[k];
    }
    (position.z, jac)
}

pub const DEFAULT_OFFSET_STD: f64 = 1e5;
pub const DEFAULT_SKEW_STD: f64 = 2e4;
pub const MIN_OFFSET_STD: f64 = 1.0;
pub const MIN_SKEW_STD: f64 = 100.0;

/// Weighted least squares for the clocks at time `t_ref` [s] from
/// transactions involving robot 0, using the offset pseudomeasurement
/// (offset difference drifting with the skew difference) and the skew
/// pseudomeasurement. Falls back to [`ClockPrior::uninformed`] when some
/// clock is unobservable.
pub fn initialize_clocks(records: &[TransactionRecord], robots: usize, t_ref: f64, sigma: f64) -> ClockPrior {
    let ids = clock_ids(robots);
    let m = ids.len();
    let col = |id: TransceiverId| ids.iter().position(|x| *x == id);
    let mut rows: Vec<(Vec<(usize, f64)>, f64, f64)> = Vec::new();
    for rec in records.iter().filter(|r| r.tx.plan.involves_robot(0)) {
        let tx = &rec.tx;
        let (Ok(y), Ok(skew_ppb)) = (form_direct_pseudomeasurements(tx, sigma), tx.skew_pseudomeasurement()) else {
            continue;
        };
        let (a, b) = (col(tx.plan.initiator), col(tx.plan.target));
        let dt = rec.time_s - t_ref;
        let mut offset = Vec::new();
        let mut skew_row = Vec::new();
        for (c, s) in [(a, 1.0), (b, -1.0)] {
            if let Some(c) = c {
                offset.push((2 * c, s));
                offset.push((2 * c + 1, s * dt));
                skew_row.push((2 * c + 1, s));
            }
        }
        rows.push((offset, y.values[1], y.covariance[(1, 1)]));
        let spacing = tx.t3 - tx.t2;
        let skew_var = 4.0 * sigma * sigma / (spacing * spacing) * 1e18;
        rows.push((skew_row, skew_ppb, skew_var));
    }
    let n = 2 * m;
    let mut normal = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    for (row, y, var) in &rows {
        for &(i, ai) in row {
            rhs[i] += ai * y / var;
            for &(j, aj) in row {
                normal[(i, j)] += ai * aj / var;
            }
        }
    }
    // well-conditioned only when every clock is reachable from f0
    let observed = (0..n).all(|i| normal[(i, i)] > 0.0);
    let Some(ch) = observed.then(|| normal.clone().cholesky()).flatten() else {
        return ClockPrior::uninformed(robots);
    };
    let x = ch.solve(&rhs);
    let mut chi2 = 0.0;
    for (row, y, var) in &rows {
        let pred: f64 = row.iter().map(|&(i, a)| a * x[i]).sum();
        chi2 += (y - pred).powi(2) / var;
    }
    let dof = rows.len().saturating_sub(n);
    let scale = if dof > 0 { (chi2 / dof as f64).max(1.0) } else { 1.0 };
    let mut cov = ch.inverse() * scale;
    for k in 0..m {
        for (i, floor) in [(2 * k, MIN_OFFSET_STD), (2 * k + 1, MIN_SKEW_STD)] {
            let deficit = floor * floor - cov[(i, i)];
            if deficit > 0.0 {
                cov[(i, i)] += deficit;
            }
        }
    }
    ClockPrior {
        states: (0..m).map(|k| ClockState::new(x[2 * k], x[2 * k + 1])).collect(),
        covariance: 0.5 * (&cov + cov.transpose()),
    }
}

/// Truth-perturbed initial poses: `Exp(xi) T` with `xi ~ N(0, prior)`.
pub fn perturb_poses<R: rand::Rng + ?Sized>(
    truth: &[ExtendedPose],
    prior: &PosePrior,
    rng: &mut R,
) -> Vec<ExtendedPose> {
    use rand_distr::StandardNormal;
    truth
        .iter()
        .map(|t| {
            let mut xi = Tangent::zeros();
            for k in 0..3 {
                xi[k] = prior.attitude * rng.sample::<f64, _>(StandardNormal);
                xi[3 + k] = prior.velocity * rng.sample::<f64, _>(StandardNormal);
                xi[6 + k] = prior.position * rng.sample::<f64, _>(StandardNormal);
            }
            ExtendedPose::exp(&xi) * *t
        })
        .collect()
}
