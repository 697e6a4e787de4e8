//! Experiment driver: truth generation, measurement synthesis, both
//! estimators on the same data, and the metric computation.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::dynamics::{gfl_equilibrium_vector, HybridState, Mode};
use crate::error::{Error, Result};
use crate::estimator::{belief_from_state, BeliefRecord, ContinuousEkf, EkfOptions, HybridEkf};
use crate::harness::metrics::{compute_rmse, event_timing_errors, nis_coverage, MetricsReport};
use crate::harness::scenario::Scenario;
use crate::hybrid::SwitchRecord;
use crate::sim::{simulate_hybrid, Trajectory};

/// Everything one comparison run produces.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub truth: Trajectory<f64>,
    /// `(t, z)` pairs on the measurement grid.
    pub measurements: Vec<(f64, DVector<f64>)>,
    pub hybrid_records: Vec<BeliefRecord<f64>>,
    pub hybrid_events: Vec<SwitchRecord<f64>>,
    pub continuous_records: Option<Vec<BeliefRecord<f64>>>,
    pub metrics: MetricsReport,
}

fn fail_on_diagnostic(traj: &Trajectory<f64>, what: &str, scn: &Scenario) -> Result<()> {
    if let Some(d) = &traj.diagnostic {
        return Err(Error::Numerical(format!("scenario '{}': {what}: {d}", scn.name)));
    }
    Ok(())
}

/// Truth trajectory of the scenario (with its scripted process noise).
pub fn simulate_truth(scn: &Scenario, no_reset_map: bool) -> Result<Trajectory<f64>> {
    let grid = scn.build_grid()?;
    let cfg = scn.sim_config();
    let x0 = gfl_equilibrium_vector(&grid.sample(0.0), &scn.params)?;
    let state0 = HybridState { mode: Mode::Gfl, x: x0, dwell_clock: 0.0 };
    let traj = simulate_hybrid(&state0, &grid, &scn.params, &cfg, no_reset_map)?;
    fail_on_diagnostic(&traj, "truth simulation", scn)?;
    Ok(traj)
}

/// Draws noisy measurements from the truth at every `measurement_every`-th
/// grid step. The noise stream is independent of the process-noise stream.
pub fn synthesize_measurements(
    scn: &Scenario,
    truth: &Trajectory<f64>,
) -> Result<Vec<(f64, DVector<f64>)>> {
    let noise = scn.noise_config();
    let stds: Vec<f64> = (0..4).map(|k| noise.sigma[(k, k)].sqrt()).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(scn.sim.seed.wrapping_add(0x6d65_6173));

    let every = scn.estimator.measurement_every;
    let n_steps = (scn.sim.t_end / scn.sim.dt).round() as u64;
    let mut out = Vec::new();
    let mut cursor = 0usize;
    let mut k = every;
    while k <= n_steps {
        // samples are time-ordered; advance a cursor instead of rescanning
        while cursor < truth.samples.len() && truth.samples[cursor].grid_index != Some(k) {
            cursor += 1;
        }
        let s = truth
            .samples
            .get(cursor)
            .ok_or_else(|| Error::Numerical(format!("truth trajectory missing grid step {k}")))?;
        let mut z = DVector::from_row_slice(&s.z_true);
        for c in 0..4 {
            let w: f64 = rng.sample(StandardNormal);
            z[c] += stds[c] * w;
        }
        out.push((s.t, z));
        k += every;
    }
    Ok(out)
}

/// Runs truth, both filters, and the metrics of one scenario.
pub fn run_experiment(scn: &Scenario) -> Result<ExperimentResult> {
    scn.validate()?;
    let grid = scn.build_grid()?;
    let truth = simulate_truth(scn, false)?;
    let measurements = synthesize_measurements(scn, &truth)?;
    let zs: Vec<DVector<f64>> = measurements.iter().map(|(_, z)| z.clone()).collect();

    let x0 = gfl_equilibrium_vector(&grid.sample(0.0), &scn.params)?;
    let state0 = HybridState { mode: Mode::Gfl, x: x0.clone(), dwell_clock: 0.0 };

    // hybrid EKF
    let opts = EkfOptions {
        oracle_events: scn
            .estimator
            .oracle_mode_signal
            .then(|| truth.events.iter().map(|e| (e.t_s, e.from_mode)).collect()),
        ..Default::default()
    };
    let mut hekf = HybridEkf::new(
        belief_from_state(&state0, scn.estimator.p0),
        &grid,
        scn.params,
        scn.noise_config(),
        opts,
    )?;
    let hybrid_records = hekf
        .run(scn.sim.dt, scn.estimator.measurement_every, &zs)
        .map_err(|e| Error::Numerical(format!("scenario '{}': hybrid EKF: {e}", scn.name)))?;
    let hybrid_events = hekf.events.clone();

    // continuous-model EKF
    let continuous_records = if scn.supports_continuous_baseline() {
        let mut cekf = ContinuousEkf::new(
            x0.clone(),
            nalgebra::DMatrix::identity(8, 8) * scn.estimator.p0,
            &grid,
            scn.params,
            scn.noise_config(),
            EkfOptions::default(),
            scn.estimator.k_gain,
        )?;
        Some(
            cekf.run(scn.sim.dt, scn.estimator.measurement_every, &zs)
                .map_err(|e| Error::Numerical(format!("scenario '{}': continuous EKF: {e}", scn.name)))?,
        )
    } else {
        None
    };

    let metrics = compute_metrics(scn, &truth, &hybrid_records, &hybrid_events, continuous_records.as_deref())?;
    Ok(ExperimentResult { truth, measurements, hybrid_records, hybrid_events, continuous_records, metrics })
}

fn channels_at_measurements(truth: &Trajectory<f64>, records: &[BeliefRecord<f64>]) -> Result<(Vec<f64>, Vec<[f64; 4]>)> {
    let mut times = Vec::with_capacity(records.len());
    let mut truth_ch = Vec::with_capacity(records.len());
    let mut cursor = 0usize;
    for r in records {
        while cursor < truth.samples.len() && truth.samples[cursor].grid_index != Some(r.grid_index) {
            cursor += 1;
        }
        let s = truth
            .samples
            .get(cursor)
            .ok_or_else(|| Error::Numerical(format!("no truth sample at grid step {}", r.grid_index)))?;
        times.push(s.t);
        truth_ch.push(s.z_true);
    }
    Ok((times, truth_ch))
}

pub fn compute_metrics(
    scn: &Scenario,
    truth: &Trajectory<f64>,
    hybrid_records: &[BeliefRecord<f64>],
    hybrid_events: &[SwitchRecord<f64>],
    continuous_records: Option<&[BeliefRecord<f64>]>,
) -> Result<MetricsReport> {
    let (times, truth_ch) = channels_at_measurements(truth, hybrid_records)?;
    let event_times: Vec<f64> = truth.events.iter().map(|e| e.t_s).collect();

    let est_ch: Vec<[f64; 4]> = hybrid_records.iter().map(|r| r.channels).collect();
    let hybrid = compute_rmse(&times, &truth_ch, &est_ch, &event_times, scn.near_switch_window)?;
    let nis_h: Vec<f64> = hybrid_records.iter().map(|r| r.nis).collect();

    let (continuous, nis_cov_c) = match continuous_records {
        Some(recs) => {
            let est_c: Vec<[f64; 4]> = recs.iter().map(|r| r.channels).collect();
            let rmse = compute_rmse(&times, &truth_ch, &est_c, &event_times, scn.near_switch_window)?;
            let nis_c: Vec<f64> = recs.iter().map(|r| r.nis).collect();
            (Some(rmse), Some(nis_coverage(&nis_c)))
        }
        None => (None, None),
    };

    let truth_ev: Vec<(f64, bool)> = truth.events.iter().map(|e| (e.t_s, e.from_mode == Mode::Gfl)).collect();
    let filt_ev: Vec<(f64, bool)> = hybrid_events.iter().map(|e| (e.t_s, e.from_mode == Mode::Gfl)).collect();

    Ok(MetricsReport {
        hybrid,
        continuous,
        nis_coverage_hybrid: nis_coverage(&nis_h),
        nis_coverage_continuous: nis_cov_c,
        event_timing_errors: event_timing_errors(&truth_ev, &filt_ev),
        peak_current_ratio: None,
    })
}

/// Result of the reset-map ablation.
#[derive(Debug, Clone)]
pub struct AblationResult {
    pub with_reset: Trajectory<f64>,
    pub without_reset: Trajectory<f64>,
    /// Peak |i| after the first switch, no-reset over reset.
    pub peak_current_ratio: f64,
}

/// Post-switch current-peak comparison with and without the reset maps.
/// Runs both truths noise-free so the surge is attributable to the reset.
pub fn run_ablation(scn: &Scenario) -> Result<AblationResult> {
    let mut quiet = scn.clone();
    quiet.sim.integrator_noise = 0.0;
    let with_reset = simulate_truth(&quiet, false)?;
    let without_reset = simulate_truth(&quiet, true)?;

    let t_s = with_reset
        .events
        .first()
        .map(|e| e.t_s)
        .ok_or_else(|| Error::Numerical(format!("scenario '{}' produced no switch", scn.name)))?;
    let window = 0.1;
    let peak = |traj: &Trajectory<f64>| {
        traj.samples
            .iter()
            .filter(|s| s.t >= t_s && s.t <= t_s + window)
            .map(|s| (s.x[2] * s.x[2] + s.x[3] * s.x[3]).sqrt())
            .fold(0.0_f64, f64::max)
    };
    let p_with = peak(&with_reset);
    let p_without = peak(&without_reset);
    if p_with <= 0.0 {
        return Err(Error::Numerical("reset-map run has zero post-switch current".into()));
    }
    Ok(AblationResult { with_reset, without_reset, peak_current_ratio: p_without / p_with })
}
