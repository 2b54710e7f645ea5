//! Relative motion increments (RMIs).
//!
//! A neighbour accumulates the product of its input matrices over a window
//! of steps and broadcasts it with the covariance of its right
//! perturbation. Robot 0 propagates each relative pose with its own inputs
//! only; the pose leaves SE_2(3) (its time slot goes negative) until the
//! neighbour's RMI for exactly those steps arrives and closes it.

use nalgebra::{SymmetricEigen, Vector3};
use thiserror::Error;

use crate::lie::{ExtendedPose, Increment, LieError, Matrix9, Rotation};
use crate::motion::{build_increment, input_jacobian, ImuNoiseModel, ImuSample};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreintError {
    #[error("RMI window {got:?} does not match the pending window {expected:?}")]
    WindowMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error(transparent)]
    Lie(#[from] LieError),
    #[error("RMI payload truncated: {0} bytes")]
    Truncated(usize),
    #[error("RMI payload has bad magic {0:#06x}")]
    BadMagic(u16),
    #[error("unsupported RMI payload version {0}")]
    BadVersion(u8),
    #[error("RMI window index {0} does not fit the wire format")]
    WindowOverflow(usize),
}

/// Tolerance on the time slot when an intermediate state closes.
pub const POSE_CLOSURE_TOL: f64 = 1e-9;

/// Product of input matrices over the steps `window.0 .. window.1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rmi {
    pub increment: Increment,
    /// Covariance of the right perturbation of `increment`.
    pub covariance: Matrix9,
    pub window: (usize, usize),
}

impl Rmi {
    pub fn empty(start: usize) -> Self {
        Self {
            increment: Increment::identity(),
            covariance: Matrix9::zeros(),
            window: (start, start),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.window.0 == self.window.1
    }

    pub fn len(&self) -> usize {
        self.window.1 - self.window.0
    }

    /// Adds one IMU sample to the end of the window.
    pub fn update(&mut self, u: &ImuSample, noise: &ImuNoiseModel) {
        let step = build_increment(u);
        let ad = step.inverse().adjoint();
        let l = input_jacobian(u);
        self.covariance = ad * self.covariance * ad.transpose() + l * noise.covariance() * l.transpose();
        self.covariance = 0.5 * (self.covariance + self.covariance.transpose());
        self.increment = self.increment * step;
        self.window.1 += 1;
    }

    /// Concatenates `self` over `(l, k)` with `next` over `(k, m)`.
    pub fn concat(&self, next: &Rmi) -> Result<Rmi, PreintError> {
        if self.window.1 != next.window.0 {
            return Err(PreintError::WindowMismatch {
                expected: (self.window.1, next.window.1),
                got: next.window,
            });
        }
        let ad = next.increment.inverse().adjoint();
        Ok(Rmi {
            increment: self.increment * next.increment,
            covariance: ad * self.covariance * ad.transpose() + next.covariance,
            window: (self.window.0, next.window.1),
        })
    }
}

/// Functional form of [`Rmi::update`].
pub fn rmi_update(rmi: &Rmi, u: &ImuSample, noise: &ImuNoiseModel) -> Rmi {
    let mut out = *rmi;
    out.update(u, noise);
    out
}

/// `U0^-1 * state`, valid for poses and intermediate states alike. The
/// Jacobian with respect to a left perturbation is `Ad(U0^-1)`.
pub fn propagate_without_neighbour(state: &Increment, u0: &Increment) -> (Increment, Matrix9) {
    let inv = u0.inverse();
    (inv * *state, inv.adjoint())
}

/// Result of closing an intermediate state with a neighbour's RMI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedPose {
    pub pose: ExtendedPose,
    /// Jacobian with respect to the left perturbation of the intermediate
    /// state before this step's robot-0 input.
    pub state_jacobian: Matrix9,
    /// Jacobian with respect to the RMI's right perturbation.
    pub rmi_jacobian: Matrix9,
}

/// `U0^-1 * state * dT`.
pub fn apply_neighbour_rmi(
    state: &Increment,
    u0: &Increment,
    rmi: &Rmi,
) -> Result<ClosedPose, PreintError> {
    let inv = u0.inverse();
    let pose = (inv * *state * rmi.increment).to_pose(POSE_CLOSURE_TOL)?;
    Ok(ClosedPose {
        pose,
        state_jacobian: inv.adjoint(),
        rmi_jacobian: pose.adjoint(),
    })
}

/// Checks that an RMI spans exactly `expected`.
pub fn check_window(rmi: &Rmi, expected: (usize, usize)) -> Result<(), PreintError> {
    if rmi.window != expected {
        return Err(PreintError::WindowMismatch {
            expected,
            got: rmi.window,
        });
    }
    Ok(())
}

const MAGIC: u16 = 0x524D;
const VERSION: u8 = 1;
pub const RMI_HEADER_BYTES: usize = 12;
/// 10 increment values and 45 covariance values, 4 bytes each.
pub const RMI_FLOAT_BYTES: usize = 4 * (10 + 45);
pub const RMI_PAYLOAD_BYTES: usize = RMI_HEADER_BYTES + RMI_FLOAT_BYTES;
pub const RMI_FRAME_BUDGET: usize = 256;

/// An RMI as broadcast by robot `robot`.
///
/// Layout, little-endian: `u16` magic `0x524D`, `u8` version, `u8` robot,
/// `u32` window start, `u32` window end, then `f32` values: rotation vector
/// (3), velocity (3), position (3), time slot (1), and the covariance upper
/// triangle row by row (45).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmiMessage {
    pub robot: u8,
    pub rmi: Rmi,
}

impl RmiMessage {
    pub fn encode(&self) -> Result<Vec<u8>, PreintError> {
        let mut out = Vec::with_capacity(RMI_PAYLOAD_BYTES);
        out.extend_from_slice(&MAGIC.to_le_bytes());
        out.push(VERSION);
        out.push(self.robot);
        for w in [self.rmi.window.0, self.rmi.window.1] {
            let w32 = u32::try_from(w).map_err(|_| PreintError::WindowOverflow(w))?;
            out.extend_from_slice(&w32.to_le_bytes());
        }
        let inc = &self.rmi.increment;
        let phi = inc.rotation.log();
        let values = phi
            .iter()
            .chain(inc.velocity.iter())
            .chain(inc.position.iter())
            .copied()
            .chain(std::iter::once(inc.dt));
        for v in values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        for i in 0..9 {
            for j in i..9 {
                out.extend_from_slice(&(self.rmi.covariance[(i, j)] as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    /// The received RMI with the covariance made PSD again after rounding.
    pub fn psd_rmi(&self) -> Rmi {
        Rmi {
            covariance: floor_eigenvalues(self.rmi.covariance),
            ..self.rmi
        }
    }

    /// Exact inverse of [`RmiMessage::encode`]; the covariance may be
    /// slightly indefinite, see [`RmiMessage::psd_rmi`].
    pub fn decode(bytes: &[u8]) -> Result<Self, PreintError> {
        if bytes.len() < RMI_PAYLOAD_BYTES {
            return Err(PreintError::Truncated(bytes.len()));
        }
        let magic = u16::from_le_bytes([bytes[0], bytes[1]]);
        if magic != MAGIC {
            return Err(PreintError::BadMagic(magic));
        }
        if bytes[2] != VERSION {
            return Err(PreintError::BadVersion(bytes[2]));
        }
        let robot = bytes[3];
        let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let window = (word(4) as usize, word(8) as usize);
        let float = |k: usize| {
            let o = RMI_HEADER_BYTES + 4 * k;
            f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64
        };
        let vec3 = |k: usize| Vector3::new(float(k), float(k + 1), float(k + 2));
        let increment = Increment {
            rotation: Rotation::exp(&vec3(0)),
            velocity: vec3(3),
            position: vec3(6),
            dt: float(9),
        };
        let mut covariance = Matrix9::zeros();
        let mut k = 10;
        for i in 0..9 {
            for j in i..9 {
                covariance[(i, j)] = float(k);
                covariance[(j, i)] = float(k);
                k += 1;
            }
        }
        Ok(Self {
            robot,
            rmi: Rmi {
                increment,
                covariance,
                window,
            },
        })
    }
}

pub fn serialize_rmi(robot: u8, rmi: &Rmi) -> Result<Vec<u8>, PreintError> {
    RmiMessage { robot, rmi: *rmi }.encode()
}

pub fn deserialize_rmi(bytes: &[u8]) -> Result<RmiMessage, PreintError> {
    RmiMessage::decode(bytes)
}

/// Symmetrizes and clips negative eigenvalues to zero; PSD input is
/// returned unchanged.
pub fn floor_eigenvalues(m: Matrix9) -> Matrix9 {
    let sym = 0.5 * (m + m.transpose());
    let eig = SymmetricEigen::new(sym);
    if eig.eigenvalues.min() >= 0.0 {
        return sym;
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let out = eig.eigenvectors * Matrix9::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    0.5 * (out + out.transpose())
}
