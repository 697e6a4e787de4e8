//! Scenario configuration, experiment execution, metrics, and CSV output.

pub mod csv_io;
pub mod metrics;
pub mod run;
mod scenario;

pub use metrics::{MetricsReport, RmseSet, CHANNELS};
pub use run::{run_ablation, run_experiment, simulate_truth, synthesize_measurements, AblationResult, ExperimentResult};
pub use scenario::{EstimatorSection, GridScript, NoiseSection, Scenario, SimSection};
