//! Fixed-step integration with guard monitoring and event location.
//!
//! Flow is classical RK4. Each base step is checked for a guard sign change;
//! on a crossing the step is split by bisection on sub-steps integrated from
//! the step anchor, the reset map is applied at the located instant, and a
//! partial step re-aligns the trajectory to the global step grid, so
//! measurement instants stay at exact multiples of `dt` across events.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    mode_field, smoothed_field, AlgebraicOutputs, GflState, GfmState, GridSignal, HybridState, InverterParams, Mode,
};
use crate::error::{Error, Result};
use crate::hybrid::{apply_reset_vector, GuardTracker, SubGuard, SwitchRecord};
use crate::scalar::{real, Real};

/// Integration and truth-generation settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig<T: Real> {
    /// Base step size (s).
    pub dt: T,
    pub t_end: T,
    /// Guard-residual tolerance accepted by the event locator.
    pub event_tol: T,
    pub max_bisections: usize,
    /// Per-state process-noise intensities for truth generation (pu/sqrt(s));
    /// applied as `sigma * sqrt(dt)` increments at each base step.
    pub process_noise_gfl: Vec<T>,
    pub process_noise_gfm: Vec<T>,
    pub seed: u64,
}

impl<T: Real> Default for SimConfig<T> {
    fn default() -> Self {
        Self {
            dt: real(1e-4),
            t_end: T::one(),
            event_tol: real(1e-12),
            max_bisections: 64,
            process_noise_gfl: vec![T::zero(); GflState::<T>::DIM],
            process_noise_gfm: vec![T::zero(); GfmState::<T>::DIM],
            seed: 0,
        }
    }
}

impl<T: Real> SimConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > T::zero()) {
            return Err(Error::Config("dt must be > 0".into()));
        }
        if !(self.event_tol > T::zero()) {
            return Err(Error::Config("event_tol must be > 0".into()));
        }
        if self.max_bisections < 1 {
            return Err(Error::Config("max_bisections must be >= 1".into()));
        }
        if self.process_noise_gfl.len() != GflState::<T>::DIM || self.process_noise_gfm.len() != GfmState::<T>::DIM {
            return Err(Error::Config("process noise vectors must match the base state dimensions".into()));
        }
        Ok(())
    }

    /// Places a common noise intensity on the controller integrator states
    /// (gamma, PLL and outer-loop integrators; never on angles or currents).
    pub fn with_integrator_noise(mut self, intensity: T) -> Self {
        self.process_noise_gfl = vec![T::zero(); GflState::<T>::DIM];
        for k in [0usize, 1, 4, 6, 7] {
            self.process_noise_gfl[k] = intensity;
        }
        self.process_noise_gfm = vec![T::zero(); GfmState::<T>::DIM];
        for k in [0usize, 1, 5, 6] {
            self.process_noise_gfm[k] = intensity;
        }
        self
    }
}

/// One stored integration point.
#[derive(Debug, Clone)]
pub struct Sample<T: Real> {
    pub t: T,
    /// Index on the global step grid; `None` for event-boundary samples.
    pub grid_index: Option<u64>,
    pub mode: Mode,
    pub x: DVector<T>,
    pub dwell_clock: T,
    pub outputs: AlgebraicOutputs<T>,
    /// Noise-free measurement `[i_d, i_q, v_d, v_q]`.
    pub z_true: [T; 4],
}

/// Simulated trajectory: samples at every base step (plus event boundaries)
/// and the switch log.
#[derive(Debug, Clone)]
pub struct Trajectory<T: Real> {
    pub samples: Vec<Sample<T>>,
    pub events: Vec<SwitchRecord<T>>,
    /// Set when integration stopped early; the samples up to the failure are
    /// kept.
    pub diagnostic: Option<String>,
    pub warnings: Vec<String>,
}

impl<T: Real> Default for Trajectory<T> {
    fn default() -> Self {
        Self { samples: Vec::new(), events: Vec::new(), diagnostic: None, warnings: Vec::new() }
    }
}

impl<T: Real> Trajectory<T> {
    /// Final inverter parameter values (after any resets).
    pub fn sample_at_grid(&self, grid_index: u64) -> Option<&Sample<T>> {
        // samples are ordered; grid indices are strictly increasing
        self.samples.iter().find(|s| s.grid_index == Some(grid_index))
    }
}

/// One classical Runge-Kutta step of size `dt` from `(t, x)`.
pub fn step_rk4<T, F>(x: &DVector<T>, t: T, dt: T, field: &F) -> Result<DVector<T>>
where
    T: Real,
    F: Fn(T, &DVector<T>) -> Result<DVector<T>>,
{
    let half: T = real(0.5);
    let sixth: T = real(1.0 / 6.0);
    let two: T = real(2.0);

    let k1 = field(t, x)?;
    let k2 = field(t + half * dt, &(x + &k1 * (half * dt)))?;
    let k3 = field(t + half * dt, &(x + &k2 * (half * dt)))?;
    let k4 = field(t + dt, &(x + &k3 * dt))?;

    let x_next = x + (k1 + k2 * two + k3 * two + k4) * (dt * sixth);
    if x_next.iter().all(|v| v.is_finite()) {
        Ok(x_next)
    } else {
        Err(Error::StepFailed { t: crate::scalar::to_f64(t) })
    }
}

/// Where a guard crossing was located inside a step.
#[derive(Debug, Clone)]
pub struct EventLocation<T: Real> {
    /// Offset from the step anchor (s).
    pub h: T,
    pub x_minus: DVector<T>,
    pub residual: T,
    pub converged: bool,
}

/// Bisection on the sub-step length. `flow(h)` integrates one RK4 step of
/// size `h` from the anchor; `guard(t, x)` is the signed residual, negative
/// before the event. Requires a sign change across `(0, dt]`.
pub fn locate_event<T, FL, G>(
    t_anchor: T,
    dt: T,
    r_pre: T,
    flow: &FL,
    guard: &G,
    event_tol: T,
    max_bisections: usize,
) -> Result<EventLocation<T>>
where
    T: Real,
    FL: Fn(T) -> Result<DVector<T>>,
    G: Fn(T, &DVector<T>) -> T,
{
    if !(r_pre < T::zero()) {
        return Err(Error::NoSignChange);
    }
    let mut lo = T::zero();
    let mut hi = dt;
    let mut best: Option<EventLocation<T>> = None;

    for _ in 0..max_bisections {
        let half: T = real(0.5);
        let mid = (lo + hi) * half;
        if mid <= lo || mid >= hi {
            break; // bracket collapsed to float resolution
        }
        let x_mid = flow(mid)?;
        let r = guard(t_anchor + mid, &x_mid);
        if r >= T::zero() {
            if r <= event_tol {
                return Ok(EventLocation { h: mid, x_minus: x_mid, residual: r, converged: true });
            }
            hi = mid;
            let better = best.as_ref().map_or(true, |b| r.abs() < b.residual.abs());
            if better {
                best = Some(EventLocation { h: mid, x_minus: x_mid, residual: r, converged: false });
            }
        } else {
            lo = mid;
        }
    }

    // fall back to the best firing-side point seen (the original step end if
    // bisection never improved on it)
    match best {
        Some(mut loc) => {
            loc.converged = loc.residual.abs() <= event_tol;
            Ok(loc)
        }
        None => {
            let x_hi = flow(hi)?;
            let r = guard(t_anchor + hi, &x_hi);
            Ok(EventLocation { h: hi, x_minus: x_hi, residual: r, converged: r.abs() <= event_tol })
        }
    }
}

enum StepOutcome<T: Real> {
    Completed(DVector<T>),
    Event { location: EventLocation<T>, sub_guard: SubGuard },
}

struct HybridRun<'a, T: Real> {
    grid: &'a GridSignal<T>,
    cfg: &'a SimConfig<T>,
    no_reset_map: bool,
    tracker: GuardTracker<T>,
}

impl<T: Real> HybridRun<'_, T> {
    fn mode(&self) -> Mode {
        self.tracker.mode
    }

    fn field(&self, mode: Mode, t: T, x: &DVector<T>) -> Result<DVector<T>> {
        let g = self.grid.sample(t);
        mode_field(mode, x, &g, &self.tracker.params).map(|(dx, _)| dx)
    }

    fn guard(&self, t: T, x: &DVector<T>) -> (T, SubGuard) {
        self.tracker.residual(t, x, &self.grid.sample(t))
    }

    fn update_dwell(&mut self, t0: T, x0: &DVector<T>, t1: T, x1: &DVector<T>) -> Result<()> {
        let mode = self.mode();
        let params = self.tracker.params;
        let grid = self.grid;
        let flow = |s: T| {
            step_rk4(x0, t0, s, &|tt, xx: &DVector<T>| {
                mode_field(mode, xx, &grid.sample(tt), &params).map(|(dx, _)| dx)
            })
        };
        let sample = |t: T| grid.sample(t);
        self.tracker.update_dwell(t0, x0, t1, x1, &flow, &sample, self.cfg.max_bisections)
    }

    /// Flows from `(t, x)` over `h`, watching the active guard.
    fn flow_segment(&self, t: T, x: &DVector<T>, h: T) -> Result<StepOutcome<T>> {
        let mode = self.mode();
        let field = |tt: T, xx: &DVector<T>| self.field(mode, tt, xx);
        let x_trial = step_rk4(x, t, h, &field)?;
        let (r_pre, _) = self.guard(t, x);
        let (r_post, sub_post) = self.guard(t + h, &x_trial);
        if r_pre < T::zero() && r_post >= T::zero() {
            let flow = |s: T| step_rk4(x, t, s, &field);
            let guard = |tt: T, xx: &DVector<T>| self.guard(tt, xx).0;
            let location = locate_event(t, h, r_pre, &flow, &guard, self.cfg.event_tol, self.cfg.max_bisections)?;
            let (_, sub) = self.guard(t + location.h, &location.x_minus);
            // the sub-guard at the located instant; fall back to the step end
            let sub_guard = if location.residual >= T::zero() { sub } else { sub_post };
            Ok(StepOutcome::Event { location, sub_guard })
        } else {
            Ok(StepOutcome::Completed(x_trial))
        }
    }
}

/// Runs the hybrid automaton from `x0` (GFL per the initial set) to `t_end`.
///
/// With `no_reset_map` the forward switch copies shared states and zeros the
/// GFM-specific ones instead of applying the consistency resets.
pub fn simulate_hybrid<T: Real>(
    x0: &HybridState<T>,
    grid: &GridSignal<T>,
    params: &InverterParams<T>,
    cfg: &SimConfig<T>,
    no_reset_map: bool,
) -> Result<Trajectory<T>> {
    params.validate()?;
    cfg.validate()?;

    let mut run = HybridRun { grid, cfg, no_reset_map, tracker: GuardTracker::new(x0.mode, *params) };
    let mut traj = Trajectory::default();
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);

    let mut x = x0.x.clone();
    let dt = cfg.dt;
    let n_steps = {
        let steps: f64 = crate::scalar::to_f64(cfg.t_end / dt);
        steps.round() as u64
    };

    let record = |traj: &mut Trajectory<T>, run: &HybridRun<T>, t: T, gi: Option<u64>, x: &DVector<T>| -> Result<()> {
        let g = grid.sample(t);
        let (_, out) = mode_field(run.mode(), x, &g, &run.tracker.params)?;
        traj.samples.push(Sample {
            t,
            grid_index: gi,
            mode: run.mode(),
            x: x.clone(),
            dwell_clock: run.tracker.dwell_clock(t),
            outputs: out,
            z_true: [x[2], x[3], out.v_d_filt, out.v_q_filt],
        });
        Ok(())
    };

    record(&mut traj, &run, T::zero(), Some(0), &x)?;

    'outer: for n in 0..n_steps {
        let t_step = T::from_u64(n).unwrap() * dt;
        let t_next = T::from_u64(n + 1).unwrap() * dt;

        // truth process noise: one sqrt(dt)-scaled increment per base step
        let noise = match run.mode() {
            Mode::Gfl => &cfg.process_noise_gfl,
            Mode::Gfm => &cfg.process_noise_gfm,
        };
        let sqrt_dt = dt.sqrt();
        for (k, sigma) in noise.iter().enumerate() {
            if *sigma > T::zero() {
                let w: f64 = rng.sample(StandardNormal);
                x[k] += *sigma * sqrt_dt * real(w);
            }
        }

        let mut t = t_step;
        let mut events_this_step = 0usize;
        while t < t_next {
            let h = t_next - t;
            if h <= T::zero() {
                break;
            }
            let outcome = match run.flow_segment(t, &x, h) {
                Ok(o) => o,
                Err(e) => {
                    traj.diagnostic = Some(format!("integration stopped at t = {}: {e}", crate::scalar::to_f64(t)));
                    break 'outer;
                }
            };
            match outcome {
                StepOutcome::Completed(x_new) => {
                    if let Err(e) = run.update_dwell(t, &x, t + h, &x_new) {
                        traj.diagnostic = Some(format!("dwell tracking failed: {e}"));
                        break 'outer;
                    }
                    x = x_new;
                    t = t_next;
                }
                StepOutcome::Event { location, sub_guard } => {
                    events_this_step += 1;
                    if events_this_step > 4 {
                        traj.diagnostic = Some("more than 4 events in one base step".into());
                        break 'outer;
                    }
                    if !location.converged && location.residual.abs() > cfg.event_tol {
                        traj.warnings.push(format!(
                            "event location did not converge (residual {})",
                            crate::scalar::to_f64(location.residual)
                        ));
                    }
                    let t_s = t + location.h;
                    let g = grid.sample(t_s);
                    let x_minus = location.x_minus;
                    if let Err(e) = run.update_dwell(t, &x, t_s, &x_minus) {
                        traj.diagnostic = Some(format!("dwell tracking failed: {e}"));
                        break 'outer;
                    }
                    record(&mut traj, &run, t_s, None, &x_minus)?;

                    let ablate = run.no_reset_map && run.mode() == Mode::Gfl;
                    match apply_reset_vector(run.mode(), &x_minus, &g, &run.tracker.params, t_s, sub_guard, ablate) {
                        Ok((x_plus, p_plus, rec)) => {
                            run.tracker.params = p_plus;
                            run.tracker.mode = run.tracker.mode.other();
                            run.tracker.cond_start = None;
                            traj.events.push(rec);
                            x = x_plus;
                        }
                        Err(e) => {
                            traj.diagnostic = Some(format!("reset failed: {e}"));
                            break 'outer;
                        }
                    }
                    t = t_s;
                }
            }
        }

        if traj.diagnostic.is_some() {
            break;
        }
        if let Err(e) = record(&mut traj, &run, t_next, Some(n + 1), &x) {
            traj.diagnostic = Some(format!("output evaluation failed: {e}"));
            break;
        }
    }

    Ok(traj)
}

/// Integrates the smoothed single-model dynamics: pure flow, no guards.
pub fn simulate_continuous<T: Real>(
    x0: &DVector<T>,
    grid: &GridSignal<T>,
    params: &InverterParams<T>,
    cfg: &SimConfig<T>,
    k_gain: T,
) -> Result<Trajectory<T>> {
    params.validate()?;
    cfg.validate()?;
    let mut traj = Trajectory::default();
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);

    let field = |t: T, x: &DVector<T>| {
        let g = grid.sample(t);
        smoothed_field(x, &g, params, k_gain).map(|(dx, _)| dx)
    };
    let record = |traj: &mut Trajectory<T>, t: T, gi: Option<u64>, x: &DVector<T>| -> Result<()> {
        let g = grid.sample(t);
        let (_, out) = smoothed_field(x, &g, params, k_gain)?;
        traj.samples.push(Sample {
            t,
            grid_index: gi,
            mode: Mode::Gfl,
            x: x.clone(),
            dwell_clock: T::zero(),
            outputs: out,
            z_true: [x[2], x[3], out.v_d_filt, out.v_q_filt],
        });
        Ok(())
    };

    let mut x = x0.clone();
    let dt = cfg.dt;
    let n_steps = crate::scalar::to_f64(cfg.t_end / dt).round() as u64;
    record(&mut traj, T::zero(), Some(0), &x)?;
    for n in 0..n_steps {
        let t = T::from_u64(n).unwrap() * dt;
        let sqrt_dt = dt.sqrt();
        for (k, sigma) in cfg.process_noise_gfl.iter().enumerate() {
            if *sigma > T::zero() {
                let w: f64 = rng.sample(StandardNormal);
                x[k] += *sigma * sqrt_dt * real(w);
            }
        }
        match step_rk4(&x, t, dt, &field) {
            Ok(next) => x = next,
            Err(e) => {
                traj.diagnostic = Some(format!("integration stopped at t = {}: {e}", crate::scalar::to_f64(t)));
                break;
            }
        }
        record(&mut traj, T::from_u64(n + 1).unwrap() * dt, Some(n + 1), &x)?;
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk4_fixed_point_of_zero_field() {
        let x = DVector::from_row_slice(&[1.0, -2.0]);
        let f = |_t: f64, x: &DVector<f64>| Ok(DVector::zeros(x.len()));
        let x1 = step_rk4(&x, 0.0, 0.1, &f).unwrap();
        assert_eq!(x1, x);
    }

    #[test]
    fn rk4_matches_exponential_decay() {
        let x = DVector::from_row_slice(&[1.0]);
        let f = |_t: f64, x: &DVector<f64>| Ok(-x.clone());
        let x1 = step_rk4(&x, 0.0, 0.1, &f).unwrap();
        assert!((x1[0] - (-0.1f64).exp()).abs() < 1e-7);
    }

    #[test]
    fn rk4_rejects_non_finite_stage() {
        let x = DVector::from_row_slice(&[1.0]);
        let f = |_t: f64, x: &DVector<f64>| Ok(x * f64::INFINITY);
        assert!(step_rk4(&x, 0.0, 0.1, &f).is_err());
    }

    #[test]
    fn bisection_finds_linear_crossing_at_midstep() {
        // guard linear in t, crossing exactly at dt/2; trivial flow
        let x0 = DVector::from_row_slice(&[0.0]);
        let flow = |h: f64| {
            let mut x = x0.clone();
            x[0] = h;
            Ok(x)
        };
        let guard = |t: f64, _x: &DVector<f64>| t - 0.05;
        let loc = locate_event(0.0, 0.1, -0.05, &flow, &guard, 1e-12, 64).unwrap();
        assert!((loc.h - 0.05).abs() < 1e-12);
        assert!(loc.converged);
        assert!(loc.residual.abs() <= 1e-12);
    }

    #[test]
    fn locate_event_requires_sign_change() {
        let flow = |_h: f64| Ok(DVector::from_row_slice(&[0.0]));
        let guard = |_t: f64, _x: &DVector<f64>| 1.0;
        assert!(matches!(locate_event(0.0, 0.1, 1.0, &flow, &guard, 1e-12, 16), Err(Error::NoSignChange)));
    }
}
