//! Simulation and dynamic state estimation for an inverter that switches
//! between grid-following (GFL) and grid-forming (GFM) control.
//!
//! The plant is a hybrid automaton: two continuous modes, guard conditions on
//! grid voltage and frequency, and reset maps that keep phase, frequency, and
//! droop references consistent across switches. On top of it sit a fixed-step
//! event-located simulator, an extended Kalman filter whose covariance is
//! carried through mode transitions by the saltation matrix, and a smoothed
//! single-model EKF baseline for comparison.
//!
//! The numeric core is generic over the scalar type ([`scalar::Real`], any
//! nalgebra real field); `f64` aliases for the main types are exported below.

pub mod dynamics;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod hybrid;
pub mod saltation;
pub mod scalar;
pub mod sim;

pub use error::{Error, Result};
pub use scalar::Real;

/// f64 instantiations of the main domain types.
pub type Params64 = dynamics::InverterParams<f64>;
pub type GridSignal64 = dynamics::GridSignal<f64>;
pub type HybridState64 = dynamics::HybridState<f64>;
pub type Trajectory64 = sim::Trajectory<f64>;
pub type Belief64 = estimator::EstimatorBelief<f64>;
pub type Scenario64 = harness::Scenario;


