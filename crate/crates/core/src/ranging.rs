//! Double-sided two-way ranging with passive listening.
//!
//! An initiating transceiver sends one message, the target answers twice
//! after fixed delays, and every other transceiver timestamps the three
//! messages as they fly past. All timestamps are in nanoseconds of the
//! recording transceiver's own clock.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector, RowSVector, Vector3, Vector5};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clocks::ClockState;
use crate::lie::{odot, ExtendedPose};

/// Speed of light in metres per nanosecond.
pub const SPEED_OF_LIGHT: f64 = 0.299_792_458;

/// Transactions whose target-side reply spacing is shorter than this are
/// rejected.
pub const MIN_REPLY_SPACING_NS: f64 = 1.0;

pub const DISTANCE_EPSILON: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RangingError {
    #[error("transceivers are coincident (distance {0:e} m)")]
    Coincident(f64),
    #[error("malformed transaction: {0}")]
    Malformed(String),
    #[error("transaction log: {0}")]
    Log(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Slot {
    First,
    Second,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TransceiverId {
    pub robot: usize,
    pub slot: Slot,
}

impl TransceiverId {
    pub fn new(robot: usize, slot: Slot) -> Self {
        Self { robot, slot }
    }

    pub fn first(robot: usize) -> Self {
        Self::new(robot, Slot::First)
    }

    pub fn second(robot: usize) -> Self {
        Self::new(robot, Slot::Second)
    }

    /// The clock every other clock is expressed against.
    pub fn is_reference(&self) -> bool {
        *self == Self::first(0)
    }

    pub fn label(&self) -> String {
        let s = match self.slot {
            Slot::First => 'f',
            Slot::Second => 's',
        };
        format!("{s}{}", self.robot)
    }
}

/// Both transceivers of every robot for a team of `robots`.
pub fn all_transceivers(robots: usize) -> Vec<TransceiverId> {
    (0..robots)
        .flat_map(|r| [TransceiverId::first(r), TransceiverId::second(r)])
        .collect()
}

/// Transceiver positions in each robot's body frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeverArms {
    pub first: [f64; 3],
    pub second: [f64; 3],
}

impl Default for LeverArms {
    fn default() -> Self {
        Self {
            first: [0.225, 0.0, 0.0],
            second: [-0.225, 0.0, 0.0],
        }
    }
}

impl LeverArms {
    pub fn zero() -> Self {
        Self {
            first: [0.0; 3],
            second: [0.0; 3],
        }
    }

    pub fn of(&self, slot: Slot) -> Vector3<f64> {
        match slot {
            Slot::First => Vector3::from(self.first),
            Slot::Second => Vector3::from(self.second),
        }
    }
}

fn homogeneous(r: &Vector3<f64>) -> Vector5<f64> {
    Vector5::new(r.x, r.y, r.z, 0.0, 1.0)
}

fn transceiver_position(t: &ExtendedPose, lever: &Vector3<f64>) -> Vector3<f64> {
    t.rotation * *lever + t.position
}

/// Distance [m] between two transceivers mounted on robots with relative
/// poses `t_a` and `t_b`.
pub fn transceiver_distance(
    t_a: &ExtendedPose,
    t_b: &ExtendedPose,
    lever_a: &Vector3<f64>,
    lever_b: &Vector3<f64>,
) -> f64 {
    (transceiver_position(t_b, lever_b) - transceiver_position(t_a, lever_a)).norm()
}

pub type Row9 = RowSVector<f64, 9>;

/// Derivatives of [`transceiver_distance`] with respect to left
/// perturbations of `t_a` and `t_b`.
pub fn distance_jacobian(
    t_a: &ExtendedPose,
    t_b: &ExtendedPose,
    lever_a: &Vector3<f64>,
    lever_b: &Vector3<f64>,
) -> Result<(Row9, Row9), RangingError> {
    let pa = t_a.act(&homogeneous(lever_a));
    let pb = t_b.act(&homogeneous(lever_b));
    let diff = Vector5::new(pb[0] - pa[0], pb[1] - pa[1], pb[2] - pa[2], 0.0, 0.0);
    let d = diff.norm();
    if d <= DISTANCE_EPSILON {
        return Err(RangingError::Coincident(d));
    }
    let ja = -(diff.transpose() * odot(&pa)) / d;
    let jb = (diff.transpose() * odot(&pb)) / d;
    Ok((ja, jb))
}

/// Scheduled roles and reply delays of one transaction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransactionPlan {
    pub initiator: TransceiverId,
    pub target: TransceiverId,
    /// Delay between the first reception and the first reply [s].
    pub dt21: f64,
    /// Delay between the first reception and the second reply [s].
    pub dt31: f64,
}

impl TransactionPlan {
    pub fn new(initiator: TransceiverId, target: TransceiverId) -> Self {
        Self {
            initiator,
            target,
            dt21: 300e-6,
            dt31: 600e-6,
        }
    }

    pub fn involves_robot(&self, robot: usize) -> bool {
        self.initiator.robot == robot || self.target.robot == robot
    }

    pub fn validate(&self) -> Result<(), RangingError> {
        if self.initiator.robot == self.target.robot {
            return Err(RangingError::Malformed("same-robot pair".into()));
        }
        if !(self.dt21 > 0.0 && self.dt31 > self.dt21) {
            return Err(RangingError::Malformed(format!(
                "delays must satisfy 0 < dt21 < dt31 (got {} and {})",
                self.dt21, self.dt31
            )));
        }
        Ok(())
    }

    /// `dt21 / (dt31 - dt21)`.
    pub fn delay_ratio(&self) -> f64 {
        self.dt21 / (self.dt31 - self.dt21)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassiveTimestamps {
    pub listener: TransceiverId,
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
}

/// One completed ranging transaction with every recorded timestamp [ns].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub plan: TransactionPlan,
    /// Initiator clock: first transmission, receptions of both replies.
    pub t1: f64,
    pub r2: f64,
    pub r3: f64,
    /// Target clock: first reception, both reply transmissions.
    pub r1: f64,
    pub t2: f64,
    pub t3: f64,
    pub passive: Vec<PassiveTimestamps>,
}

impl Transaction {
    pub fn passive_of(&self, id: TransceiverId) -> Option<&PassiveTimestamps> {
        self.passive.iter().find(|p| p.listener == id)
    }

    /// Clock-skew pseudomeasurement of initiator relative to target [ppb].
    pub fn skew_pseudomeasurement(&self) -> Result<f64, RangingError> {
        let spacing = self.t3 - self.t2;
        if spacing < MIN_REPLY_SPACING_NS {
            return Err(RangingError::Malformed(format!(
                "reply spacing {spacing} ns below {MIN_REPLY_SPACING_NS} ns"
            )));
        }
        Ok(((self.r3 - self.r2) / spacing - 1.0) * 1e9)
    }
}

/// Ground truth needed to synthesize a transaction.
pub trait TransactionWorld {
    /// Transceiver position in a common frame [m].
    fn position(&self, id: TransceiverId) -> Vector3<f64>;
    /// Absolute clock of the transceiver at the transaction start.
    fn clock(&self, id: TransceiverId) -> ClockState;
}

/// Produces all timestamps of a transaction starting at global time
/// `start_ns`, with clocks flowing linearly across the exchange and
/// i.i.d. `N(0, sigma^2)` noise on each timestamp.
pub fn synthesize_timestamps<W: TransactionWorld, R: Rng + ?Sized>(
    world: &W,
    plan: &TransactionPlan,
    start_ns: f64,
    listeners: &[TransceiverId],
    sigma: f64,
    rng: &mut R,
) -> Transaction {
    let pos = |id| world.position(id);
    let (a, b) = (plan.initiator, plan.target);
    let tof = |x: TransceiverId, y: TransceiverId| (pos(x) - pos(y)).norm() / SPEED_OF_LIGHT;
    let mut noise = || -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        sigma * z
    };
    // local reading of a global event time
    let stamp = |id: TransceiverId, global_ns: f64, eta: f64| {
        let c = world.clock(id);
        global_ns + c.tau + c.gamma * 1e-9 * (global_ns - start_ns) + eta
    };
    let d_ab = tof(a, b);
    let (d21, d31) = (plan.dt21 * 1e9, plan.dt31 * 1e9);
    let t1 = start_ns;
    let r1 = t1 + d_ab;
    let t2 = r1 + d21;
    let t3 = r1 + d31;
    let r2 = t2 + d_ab;
    let r3 = t3 + d_ab;
    let mut tx = Transaction {
        plan: *plan,
        t1: stamp(a, t1, noise()),
        r2: stamp(a, r2, noise()),
        r3: stamp(a, r3, noise()),
        r1: stamp(b, r1, noise()),
        t2: stamp(b, t2, noise()),
        t3: stamp(b, t3, noise()),
        passive: Vec::with_capacity(listeners.len()),
    };
    for &i in listeners {
        if i == a || i == b {
            continue;
        }
        let p1 = t1 + tof(a, i);
        let p2 = t2 + tof(b, i);
        let p3 = t3 + tof(b, i);
        tx.passive.push(PassiveTimestamps {
            listener: i,
            p1: stamp(i, p1, noise()),
            p2: stamp(i, p2, noise()),
            p3: stamp(i, p3, noise()),
        });
    }
    tx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PseudoKind {
    TimeOfFlight,
    Offset,
    Passive1(TransceiverId),
    Passive2(TransceiverId),
    Passive3(TransceiverId),
}

/// Which pseudomeasurements an observer extracts from a transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ListenerRole {
    /// Observer's transceivers only listen: 8 values.
    Passive,
    /// One of the observer's transceivers is active: 5 values.
    Active,
    /// Time of flight and offset only.
    Direct,
}

impl ListenerRole {
    pub fn listeners(&self) -> usize {
        match self {
            ListenerRole::Passive => 2,
            ListenerRole::Active => 1,
            ListenerRole::Direct => 0,
        }
    }

    pub fn dim(&self) -> usize {
        2 + 3 * self.listeners()
    }
}

/// Stacked pseudomeasurements `(tof, offset, [p1, p2, p3] per listener)`
/// with their joint covariance, in nanoseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoMeasurement {
    pub initiator: TransceiverId,
    pub target: TransceiverId,
    pub kinds: Vec<PseudoKind>,
    pub values: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// Target-clock intervals `T2 - R1` and `T3 - R1` [s].
    pub interval21: f64,
    pub interval31: f64,
}

impl PseudoMeasurement {
    pub fn dim(&self) -> usize {
        self.kinds.len()
    }
}

fn noise_map(kinds: &[PseudoKind], listeners: &[TransceiverId], ratio: f64) -> DMatrix<f64> {
    // columns: initiator (T1, R2, R3), target (R1, T2, T3), then 3 per listener
    let mut g = DMatrix::zeros(kinds.len(), 6 + 3 * listeners.len());
    let half = 0.5;
    let lcol = |id: &TransceiverId| 6 + 3 * listeners.iter().position(|l| l == id).unwrap();
    for (row, kind) in kinds.iter().enumerate() {
        match kind {
            PseudoKind::TimeOfFlight | PseudoKind::Offset => {
                let s = if matches!(kind, PseudoKind::TimeOfFlight) { -1.0 } else { 1.0 };
                g[(row, 0)] = s * half;
                g[(row, 1)] = half * (1.0 + ratio);
                g[(row, 2)] = -half * ratio;
                g[(row, 3)] = -s * half;
                g[(row, 4)] = -half * (1.0 + ratio);
                g[(row, 5)] = half * ratio;
            }
            PseudoKind::Passive1(id) => {
                g[(row, lcol(id))] = 1.0;
                g[(row, 0)] = -1.0;
            }
            PseudoKind::Passive2(id) => {
                g[(row, lcol(id) + 1)] = 1.0;
                g[(row, 4)] = -1.0;
            }
            PseudoKind::Passive3(id) => {
                g[(row, lcol(id) + 2)] = 1.0;
                g[(row, 5)] = -1.0;
            }
        }
    }
    g
}

fn kinds_for(listeners: &[TransceiverId]) -> Vec<PseudoKind> {
    let mut kinds = vec![PseudoKind::TimeOfFlight, PseudoKind::Offset];
    for &l in listeners {
        kinds.extend([
            PseudoKind::Passive1(l),
            PseudoKind::Passive2(l),
            PseudoKind::Passive3(l),
        ]);
    }
    kinds
}

/// Joint covariance of the stacked pseudomeasurements for i.i.d.
/// timestamp noise of standard deviation `sigma` [ns].
///
/// `delay_ratio` is `dt21 / (dt31 - dt21)`; it weighs the noise carried by
/// the skew-correction ratio. With `delay_ratio = 0` the time-of-flight and
/// offset rows are uncorrelated with variance `sigma^2`, and their
/// covariance with each listener's `(p1, p2, p3)` is `sigma^2 / 2 * D` with
/// `D = [[1, 1, 0], [-1, 1, 0]]`.
pub fn measurement_covariance(sigma: f64, role: ListenerRole, delay_ratio: f64) -> DMatrix<f64> {
    let listeners: Vec<TransceiverId> = (0..role.listeners())
        .map(|k| TransceiverId::new(usize::MAX, if k == 0 { Slot::First } else { Slot::Second }))
        .collect();
    let g = noise_map(&kinds_for(&listeners), &listeners, delay_ratio);
    &g * g.transpose() * (sigma * sigma)
}

/// Forms pseudomeasurements from `tx` using the given listening
/// transceivers, which must all have passive timestamps in `tx`.
pub fn form_pseudomeasurements_with(
    tx: &Transaction,
    listeners: &[TransceiverId],
    sigma: f64,
) -> Result<PseudoMeasurement, RangingError> {
    let spacing = tx.t3 - tx.t2;
    if spacing < MIN_REPLY_SPACING_NS {
        return Err(RangingError::Malformed(format!(
            "reply spacing {spacing} ns below {MIN_REPLY_SPACING_NS} ns"
        )));
    }
    let ratio = (tx.r3 - tx.r2) / spacing;
    let reply = ratio * (tx.t2 - tx.r1);
    let tof = 0.5 * ((tx.r2 - tx.t1) - reply);
    let offset = 0.5 * ((tx.r2 + tx.t1) - reply - 2.0 * tx.r1);
    let kinds = kinds_for(listeners);
    let mut values = Vec::with_capacity(kinds.len());
    values.extend([tof, offset]);
    for &l in listeners {
        let p = tx
            .passive_of(l)
            .ok_or_else(|| RangingError::Malformed(format!("no passive timestamps at {}", l.label())))?;
        values.extend([p.p1 - tx.t1, p.p2 - tx.t2, p.p3 - tx.t3]);
    }
    let g = noise_map(&kinds, listeners, tx.plan.delay_ratio());
    Ok(PseudoMeasurement {
        initiator: tx.plan.initiator,
        target: tx.plan.target,
        kinds,
        values: DVector::from_vec(values),
        covariance: &g * g.transpose() * (sigma * sigma),
        interval21: (tx.t2 - tx.r1) * 1e-9,
        interval31: (tx.t3 - tx.r1) * 1e-9,
    })
}

/// Pseudomeasurements available to `observer`: its non-active
/// transceivers act as listeners (8 values when it is not involved, 5 when
/// it is).
pub fn form_pseudomeasurements(
    tx: &Transaction,
    observer: usize,
    sigma: f64,
) -> Result<PseudoMeasurement, RangingError> {
    let listeners: Vec<TransceiverId> = [TransceiverId::first(observer), TransceiverId::second(observer)]
        .into_iter()
        .filter(|l| *l != tx.plan.initiator && *l != tx.plan.target)
        .collect();
    form_pseudomeasurements_with(tx, &listeners, sigma)
}

/// Time of flight and offset only.
pub fn form_direct_pseudomeasurements(
    tx: &Transaction,
    sigma: f64,
) -> Result<PseudoMeasurement, RangingError> {
    form_pseudomeasurements_with(tx, &[], sigma)
}

/// Read access to an estimate, used to evaluate measurement models.
pub trait StateView {
    fn dim(&self) -> usize;
    /// Pose of `robot` relative to robot 0 (identity for robot 0).
    fn pose(&self, robot: usize) -> ExtendedPose;
    /// Index of the robot's 9 pose coordinates, `None` for robot 0.
    fn pose_index(&self, robot: usize) -> Option<usize>;
    /// Clock relative to the reference clock (zero for the reference).
    fn clock(&self, id: TransceiverId) -> ClockState;
    /// Index of the offset coordinate; the skew follows it.
    fn clock_index(&self, id: TransceiverId) -> Option<usize>;
}

/// Predicted pseudomeasurements and their Jacobian with respect to the
/// state (left perturbations on poses, additive on clocks).
pub fn measurement_model<S: StateView + ?Sized>(
    state: &S,
    y: &PseudoMeasurement,
    levers: &LeverArms,
) -> Result<(DVector<f64>, DMatrix<f64>), RangingError> {
    let m = y.dim();
    let mut h = DVector::zeros(m);
    let mut jac = DMatrix::zeros(m, state.dim());

    let add_distance = |row: usize, a: TransceiverId, b: TransceiverId, jac: &mut DMatrix<f64>| -> Result<f64, RangingError> {
        let (ta, tb) = (state.pose(a.robot), state.pose(b.robot));
        let (la, lb) = (levers.of(a.slot), levers.of(b.slot));
        let (ja, jb) = distance_jacobian(&ta, &tb, &la, &lb)?;
        for (robot, j) in [(a.robot, ja), (b.robot, jb)] {
            if let Some(idx) = state.pose_index(robot) {
                let mut view = jac.view_mut((row, idx), (1, 9));
                view += j / SPEED_OF_LIGHT;
            }
        }
        Ok(transceiver_distance(&ta, &tb, &la, &lb) / SPEED_OF_LIGHT)
    };
    let add_clock = |row: usize, id: TransceiverId, sign: f64, interval: f64, jac: &mut DMatrix<f64>| -> f64 {
        let c = state.clock(id);
        if let Some(idx) = state.clock_index(id) {
            jac[(row, idx)] += sign;
            jac[(row, idx + 1)] += sign * interval;
        }
        sign * (c.tau + c.gamma * interval)
    };

    let (a, b) = (y.initiator, y.target);
    for (row, kind) in y.kinds.iter().enumerate() {
        h[row] = match *kind {
            PseudoKind::TimeOfFlight => add_distance(row, a, b, &mut jac)?,
            PseudoKind::Offset => add_clock(row, a, 1.0, 0.0, &mut jac) + add_clock(row, b, -1.0, 0.0, &mut jac),
            PseudoKind::Passive1(i) => {
                add_distance(row, a, i, &mut jac)?
                    + add_clock(row, i, 1.0, 0.0, &mut jac)
                    + add_clock(row, a, -1.0, 0.0, &mut jac)
            }
            PseudoKind::Passive2(i) | PseudoKind::Passive3(i) => {
                let interval = if matches!(kind, PseudoKind::Passive2(_)) {
                    y.interval21
                } else {
                    y.interval31
                };
                add_distance(row, b, i, &mut jac)?
                    + add_clock(row, i, 1.0, interval, &mut jac)
                    + add_clock(row, b, -1.0, interval, &mut jac)
            }
        };
    }
    Ok((h, jac))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementCounts {
    /// Fold increase when passive measurements of all robots are pooled.
    pub centralized_fold: f64,
    /// Fold increase seen by one robot listening in on its neighbours.
    pub individual_fold: f64,
    /// Unordered transceiver pairs on distinct robots.
    pub pairs: usize,
    /// Time-of-flight and offset measurements over all pairs.
    pub direct: usize,
    /// Passive measurements recorded by all robots over all pairs.
    pub passive: usize,
}

/// Closed-form counts for `n` neighbours (`n + 1` robots). Folds are 1
/// when there is nothing to range with.
pub fn measurement_counts(n: usize) -> MeasurementCounts {
    let pairs = 2 * n * (n + 1);
    let nf = n as f64;
    MeasurementCounts {
        centralized_fold: 1.0 + 3.0 * nf,
        individual_fold: if n == 0 { 1.0 } else { 0.5 + 2.0 * nf },
        pairs,
        direct: 2 * pairs,
        passive: 6 * n * pairs,
    }
}

/// Counts by explicit enumeration of pairs and listeners.
pub fn enumerate_measurement_counts(n: usize) -> MeasurementCounts {
    let all = all_transceivers(n + 1);
    let mut pairs = 0;
    let mut passive = 0;
    let (mut own_without, mut own_with) = (0usize, 0usize);
    for (i, a) in all.iter().enumerate() {
        for b in &all[i + 1..] {
            if a.robot == b.robot {
                continue;
            }
            pairs += 1;
            let listeners: Vec<_> = all.iter().filter(|t| *t != a && *t != b).collect();
            passive += 3 * listeners.len();
            if a.robot == 0 || b.robot == 0 {
                own_without += 2;
            }
            own_with += 2 + 3 * listeners.iter().filter(|t| t.robot == 0).count();
        }
    }
    let fold = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    MeasurementCounts {
        centralized_fold: fold(2 * pairs + passive, 2 * pairs),
        individual_fold: fold(own_with, own_without),
        pairs,
        direct: 2 * pairs,
        passive,
    }
}

/// A transaction tagged with the filter step and time at which it starts.
#[derive(Debug, Clone, PartialEq)]
pub struct TransactionRecord {
    pub step: usize,
    pub time_s: f64,
    pub tx: Transaction,
}

pub const TRANSACTION_LOG_COLUMNS: [&str; 20] = [
    "step", "time_s", "init_robot", "init_slot", "target_robot", "target_slot", "dt21", "dt31",
    "t1", "r2", "r3", "r1", "t2", "t3", "f0_p1", "f0_p2", "f0_p3", "s0_p1", "s0_p2", "s0_p3",
];

fn slot_label(s: Slot) -> &'static str {
    match s {
        Slot::First => "f",
        Slot::Second => "s",
    }
}

fn parse_slot(s: &str) -> Result<Slot, RangingError> {
    match s {
        "f" => Ok(Slot::First),
        "s" => Ok(Slot::Second),
        other => Err(RangingError::Log(format!("unknown slot {other:?}"))),
    }
}

/// Writes one row per transaction. Passive timestamps are those recorded
/// by robot 0; the columns are empty when a transceiver is active.
pub fn write_transaction_log<W: Write>(out: W, records: &[TransactionRecord]) -> Result<(), RangingError> {
    let err = |e: csv::Error| RangingError::Log(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRANSACTION_LOG_COLUMNS).map_err(err)?;
    for rec in records {
        let tx = &rec.tx;
        let mut row = vec![
            rec.step.to_string(),
            rec.time_s.to_string(),
            tx.plan.initiator.robot.to_string(),
            slot_label(tx.plan.initiator.slot).into(),
            tx.plan.target.robot.to_string(),
            slot_label(tx.plan.target.slot).into(),
            tx.plan.dt21.to_string(),
            tx.plan.dt31.to_string(),
        ];
        row.extend([tx.t1, tx.r2, tx.r3, tx.r1, tx.t2, tx.t3].iter().map(f64::to_string));
        for id in [TransceiverId::first(0), TransceiverId::second(0)] {
            match tx.passive_of(id) {
                Some(p) => row.extend([p.p1, p.p2, p.p3].iter().map(f64::to_string)),
                None => row.extend(std::iter::repeat_n(String::new(), 3)),
            }
        }
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|e| RangingError::Log(e.to_string()))
}

pub fn read_transaction_log<R: Read>(input: R) -> Result<Vec<TransactionRecord>, RangingError> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers().map_err(|e| RangingError::Log(e.to_string()))?.clone();
    if headers.iter().ne(TRANSACTION_LOG_COLUMNS.iter().copied()) {
        return Err(RangingError::Log("unexpected header".into()));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| RangingError::Log(e.to_string()))?;
        let num = |i: usize| -> Result<f64, RangingError> {
            row[i]
                .parse::<f64>()
                .map_err(|e| RangingError::Log(format!("column {}: {e}", TRANSACTION_LOG_COLUMNS[i])))
        };
        let int = |i: usize| -> Result<usize, RangingError> {
            row[i]
                .parse::<usize>()
                .map_err(|e| RangingError::Log(format!("column {}: {e}", TRANSACTION_LOG_COLUMNS[i])))
        };
        let plan = TransactionPlan {
            initiator: TransceiverId::new(int(2)?, parse_slot(&row[3])?),
            target: TransceiverId::new(int(4)?, parse_slot(&row[5])?),
            dt21: num(6)?,
            dt31: num(7)?,
        };
        let mut passive = Vec::new();
        for (k, id) in [TransceiverId::first(0), TransceiverId::second(0)].into_iter().enumerate() {
            let base = 14 + 3 * k;
            if !row[base].is_empty() {
                passive.push(PassiveTimestamps {
                    listener: id,
                    p1: num(base)?,
                    p2: num(base + 1)?,
                    p3: num(base + 2)?,
                });
            }
        }
        out.push(TransactionRecord {
            step: int(0)?,
            time_s: num(1)?,
            tx: Transaction {
                plan,
                t1: num(8)?,
                r2: num(9)?,
                r3: num(10)?,
                r1: num(11)?,
                t2: num(12)?,
                t3: num(13)?,
                passive,
            },
        });
    }
    Ok(out)
}
