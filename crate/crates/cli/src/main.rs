//! `gridmode` command line: simulate the hybrid inverter, run the
//! estimators, and emit plot-ready CSV files.
//!
//! Exit codes: 0 success, 1 configuration error, 2 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gridmode::dynamics::gfl_equilibrium_vector;
use gridmode::error::Error;
use gridmode::harness::{self, csv_io, Scenario};
use gridmode::sim::simulate_continuous;

#[derive(Parser)]
#[command(name = "gridmode", version, about = "Hybrid GFL/GFM inverter simulation and state estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Model {
    Hybrid,
    Continuous,
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario file (TOML); defaults to the built-in sag scenario.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Output directory for the CSV files.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the integration step (s).
    #[arg(long)]
    dt: Option<f64>,
    /// Override the end time (s).
    #[arg(long, value_name = "T")]
    t_end: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the truth model and write truth.csv / events.csv.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Which underlying model to integrate.
        #[arg(long, value_enum, default_value_t = Model::Hybrid)]
        model: Model,
        /// Replace the consistency resets with naive state copying.
        #[arg(long)]
        no_reset_map: bool,
    },
    /// Run one estimator on synthesized measurements.
    Estimate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum, default_value_t = Model::Hybrid)]
        model: Model,
        /// Feed the truth switching times to the hybrid filter.
        #[arg(long)]
        oracle_mode_signal: bool,
    },
    /// Run both estimators on the same data and write all CSVs plus metrics.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        oracle_mode_signal: bool,
    },
    /// Compare post-switch current peaks with and without the reset maps.
    AblateReset {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn load_scenario(common: &CommonArgs) -> Result<Scenario, Error> {
    let mut scn = match &common.scenario {
        Some(path) => Scenario::from_file(path)?,
        None => Scenario::default_sag(),
    };
    if let Some(seed) = common.seed {
        scn.sim.seed = seed;
    }
    if let Some(dt) = common.dt {
        scn.sim.dt = dt;
        // keep the truth process noise matched to the per-step filter Q
        if scn.sim.integrator_noise > 0.0 {
            scn.sim.integrator_noise = (scn.noise.q / dt).sqrt();
        }
    }
    if let Some(t_end) = common.t_end {
        scn.sim.t_end = t_end;
    }
    scn.validate()?;
    Ok(scn)
}

fn ensure_out(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate { common, model, no_reset_map } => {
            let scn = load_scenario(&common)?;
            ensure_out(&common.out)?;
            match model {
                Model::Hybrid => {
                    let traj = harness::simulate_truth(&scn, no_reset_map)?;
                    csv_io::write_truth(&common.out.join("truth.csv"), &traj)?;
                    csv_io::write_events(&common.out.join("events.csv"), &traj.events)?;
                    for wmsg in &traj.warnings {
                        eprintln!("warning: {wmsg}");
                    }
                    println!("simulated {} samples, {} events -> {}", traj.samples.len(), traj.events.len(), common.out.display());
                }
                Model::Continuous => {
                    let grid = scn.build_grid()?;
                    let cfg = scn.sim_config();
                    let x0 = gfl_equilibrium_vector(&grid.sample(0.0), &scn.params)?;
                    let traj = simulate_continuous(&x0, &grid, &scn.params, &cfg, scn.estimator.k_gain)?;
                    if let Some(d) = &traj.diagnostic {
                        return Err(Error::Numerical(d.clone()));
                    }
                    csv_io::write_truth(&common.out.join("truth.csv"), &traj)?;
                    println!("simulated {} samples (continuous model) -> {}", traj.samples.len(), common.out.display());
                }
            }
        }
        Command::Estimate { common, model, oracle_mode_signal } => {
            let mut scn = load_scenario(&common)?;
            scn.estimator.oracle_mode_signal = oracle_mode_signal;
            ensure_out(&common.out)?;
            let result = harness::run_experiment(&scn)?;
            csv_io::write_truth(&common.out.join("truth.csv"), &result.truth)?;
            csv_io::write_measurements(&common.out.join("meas.csv"), &result.measurements)?;
            csv_io::write_events(&common.out.join("events.csv"), &result.truth.events)?;
            match model {
                Model::Hybrid => {
                    csv_io::write_estimates(&common.out.join("est_hybrid.csv"), &result.hybrid_records)?
                }
                Model::Continuous => {
                    let recs = result.continuous_records.as_ref().ok_or_else(|| {
                        Error::Config("continuous estimator needs measured_power = \"instantaneous\"".into())
                    })?;
                    csv_io::write_estimates(&common.out.join("est_continuous.csv"), recs)?;
                }
            }
            println!("estimated {} measurement steps -> {}", result.measurements.len(), common.out.display());
        }
        Command::Compare { common, oracle_mode_signal } => {
            let mut scn = load_scenario(&common)?;
            scn.estimator.oracle_mode_signal = oracle_mode_signal;
            ensure_out(&common.out)?;
            let result = harness::run_experiment(&scn)?;
            csv_io::write_truth(&common.out.join("truth.csv"), &result.truth)?;
            csv_io::write_measurements(&common.out.join("meas.csv"), &result.measurements)?;
            csv_io::write_events(&common.out.join("events.csv"), &result.truth.events)?;
            csv_io::write_estimates(&common.out.join("est_hybrid.csv"), &result.hybrid_records)?;
            if let Some(recs) = &result.continuous_records {
                csv_io::write_estimates(&common.out.join("est_continuous.csv"), recs)?;
            }
            csv_io::write_metrics(&common.out.join("metrics.csv"), &result.metrics)?;
            println!("compared estimators over {} events -> {}", result.truth.events.len(), common.out.display());
        }
        Command::AblateReset { common } => {
            let scn = load_scenario(&common)?;
            ensure_out(&common.out)?;
            let ab = harness::run_ablation(&scn)?;
            csv_io::write_truth(&common.out.join("truth_reset.csv"), &ab.with_reset)?;
            csv_io::write_truth(&common.out.join("truth_no_reset.csv"), &ab.without_reset)?;
            csv_io::write_events(&common.out.join("events.csv"), &ab.with_reset.events)?;
            let metrics = gridmode::harness::MetricsReport {
                hybrid: gridmode::harness::RmseSet { overall: [0.0; 4], near_switch: None },
                continuous: None,
                nis_coverage_hybrid: 0.0,
                nis_coverage_continuous: None,
                event_timing_errors: Vec::new(),
                peak_current_ratio: Some(ab.peak_current_ratio),
            };
            csv_io::write_metrics(&common.out.join("metrics.csv"), &metrics)?;
            println!("peak-current ratio (no reset / reset): {:.3}", ab.peak_current_ratio);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap prints help/version through the error path with status 0
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
