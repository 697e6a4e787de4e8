//! Mode state vectors and the hybrid (mode, state) pair.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::params::{InverterParams, MeasuredPower};
use crate::scalar::Real;

/// Discrete operating mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Gfl,
    Gfm,
}

impl Mode {
    pub fn other(self) -> Mode {
        match self {
            Mode::Gfl => Mode::Gfm,
            Mode::Gfm => Mode::Gfl,
        }
    }

    /// Base (published) state dimension of the mode.
    pub fn base_dim(self) -> usize {
        match self {
            Mode::Gfl => GflState::<f64>::DIM,
            Mode::Gfm => GfmState::<f64>::DIM,
        }
    }

    /// State dimension including the optional power-filter states.
    pub fn dim<T: Real>(self, params: &InverterParams<T>) -> usize {
        self.base_dim()
            + match params.measured_power {
                MeasuredPower::Instantaneous => 0,
                MeasuredPower::Filtered => 2,
            }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Gfl => write!(f, "gfl"),
            Mode::Gfm => write!(f, "gfm"),
        }
    }
}

/// Grid-following state: `[gamma_d gamma_q i_d i_q eta_pll theta_pll sigma_p sigma_q]`.
///
/// The ordering is fixed; the saltation and filter matrices index by it.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GflState<T: Real> {
    pub gamma_d: T,
    pub gamma_q: T,
    pub i_d: T,
    pub i_q: T,
    pub eta_pll: T,
    pub theta_pll: T,
    pub sigma_p: T,
    pub sigma_q: T,
}

impl<T: Real> GflState<T> {
    pub const DIM: usize = 8;

    pub fn to_vector(&self) -> DVector<T> {
        DVector::from_row_slice(&[
            self.gamma_d,
            self.gamma_q,
            self.i_d,
            self.i_q,
            self.eta_pll,
            self.theta_pll,
            self.sigma_p,
            self.sigma_q,
        ])
    }

    pub fn from_slice(x: &[T]) -> Self {
        assert!(x.len() >= Self::DIM, "GFL state needs 8 components");
        Self {
            gamma_d: x[0],
            gamma_q: x[1],
            i_d: x[2],
            i_q: x[3],
            eta_pll: x[4],
            theta_pll: x[5],
            sigma_p: x[6],
            sigma_q: x[7],
        }
    }
}

/// Grid-forming state: `[gamma_d gamma_q i_d i_q theta xi_d xi_q]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GfmState<T: Real> {
    pub gamma_d: T,
    pub gamma_q: T,
    pub i_d: T,
    pub i_q: T,
    pub theta: T,
    pub xi_d: T,
    pub xi_q: T,
}

impl<T: Real> GfmState<T> {
    pub const DIM: usize = 7;

    pub fn to_vector(&self) -> DVector<T> {
        DVector::from_row_slice(&[
            self.gamma_d,
            self.gamma_q,
            self.i_d,
            self.i_q,
            self.theta,
            self.xi_d,
            self.xi_q,
        ])
    }

    pub fn from_slice(x: &[T]) -> Self {
        assert!(x.len() >= Self::DIM, "GFM state needs 7 components");
        Self {
            gamma_d: x[0],
            gamma_q: x[1],
            i_d: x[2],
            i_q: x[3],
            theta: x[4],
            xi_d: x[5],
            xi_q: x[6],
        }
    }
}

/// Discrete mode paired with its continuous state and the dwell clock used by
/// the reverse transition.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridState<T: Real> {
    pub mode: Mode,
    /// Mode state vector; length `mode.dim(params)` (the optional trailing two
    /// entries are the low-pass power states).
    pub x: DVector<T>,
    /// Seconds the re-entry conditions have held continuously (GFM only).
    pub dwell_clock: T,
}

impl<T: Real> HybridState<T> {
    pub fn new_gfl(x: GflState<T>) -> Self {
        Self { mode: Mode::Gfl, x: x.to_vector(), dwell_clock: T::zero() }
    }

    pub fn new_gfm(x: GfmState<T>) -> Self {
        Self { mode: Mode::Gfm, x: x.to_vector(), dwell_clock: T::zero() }
    }

    /// Shared filter/inner-loop currents (same slots in both modes).
    pub fn currents(&self) -> (T, T) {
        (self.x[2], self.x[3])
    }

    /// Angle state of the active mode (`theta_pll` or `theta`).
    pub fn angle(&self) -> T {
        match self.mode {
            Mode::Gfl => self.x[5],
            Mode::Gfm => self.x[4],
        }
    }
}
