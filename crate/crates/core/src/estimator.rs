//! Extended Kalman filtering for the hybrid inverter.
//!
//! The low-level predict/correct steps are model-agnostic (closures for the
//! one-step flow and the measurement function, finite-difference Jacobians
//! with optional analytic overrides, Joseph-form covariance update). The
//! hybrid driver layers mode bookkeeping on top: guards are monitored on the
//! estimate, a crossing splits the prediction step, the state is pushed
//! through the reset map, and the covariance through the saltation matrix.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{
    measure, mode_field, smoothed_field, smoothed_measure, GridSignal, HybridState, InverterParams, Mode,
    MEASUREMENT_DIM,
};
use crate::error::{Error, Result};
use crate::hybrid::{apply_reset_vector, GuardTracker, SubGuard, SwitchRecord};
use crate::saltation::{covariance_jump, event_saltation, symmetrize, SaltationMatrix};
use crate::scalar::{real, Real};
use crate::sim::{locate_event, step_rk4};

/// Process, measurement, and reset noise settings.
#[derive(Debug, Clone)]
pub struct NoiseConfig<T: Real> {
    /// Per-step process noise, GFL dimension.
    pub q_gfl: DMatrix<T>,
    /// Per-step process noise, GFM dimension.
    pub q_gfm: DMatrix<T>,
    /// Measurement noise (4x4).
    pub sigma: DMatrix<T>,
    /// Reset-noise intensity; `W_R = w_r * I` in the post-mode dimension.
    pub w_r: T,
}

impl<T: Real> NoiseConfig<T> {
    /// `Q = q_intensity * I` per mode, `Sigma` diagonal linearly spaced over
    /// `sigma_span`, `W_R = w_r * I`.
    pub fn diagonal(params: &InverterParams<T>, q_intensity: T, sigma_span: (T, T), w_r: T) -> Self {
        let (lo, hi) = sigma_span;
        let m = real::<T>(MEASUREMENT_DIM as f64 - 1.0);
        let sigma = DMatrix::from_fn(MEASUREMENT_DIM, MEASUREMENT_DIM, |i, j| {
            if i == j {
                lo + (hi - lo) * real(i as f64) / m
            } else {
                T::zero()
            }
        });
        Self {
            q_gfl: DMatrix::identity(Mode::Gfl.dim(params), Mode::Gfl.dim(params)) * q_intensity,
            q_gfm: DMatrix::identity(Mode::Gfm.dim(params), Mode::Gfm.dim(params)) * q_intensity,
            sigma,
            w_r,
        }
    }

    pub fn defaults(params: &InverterParams<T>) -> Self {
        Self::diagonal(params, real(1e-6), (real(1e-5), real(1e-4)), real(1e-8))
    }

    pub fn q_for(&self, mode: Mode) -> &DMatrix<T> {
        match mode {
            Mode::Gfl => &self.q_gfl,
            Mode::Gfm => &self.q_gfm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        crate::saltation::check_psd(&self.q_gfl, "Q_gfl")?;
        crate::saltation::check_psd(&self.q_gfm, "Q_gfm")?;
        if self.sigma.nrows() != MEASUREMENT_DIM || self.sigma.ncols() != MEASUREMENT_DIM {
            return Err(Error::Config("Sigma must be 4x4".into()));
        }
        if self.sigma.clone().cholesky().is_none() {
            return Err(Error::Config("Sigma must be positive definite".into()));
        }
        if self.w_r < T::zero() {
            return Err(Error::Config("w_r must be >= 0".into()));
        }
        Ok(())
    }
}

/// Mode tag, estimate, covariance, and the latest innovation statistics.
#[derive(Debug, Clone)]
pub struct EstimatorBelief<T: Real> {
    pub mode: Mode,
    pub x_hat: DVector<T>,
    pub p: DMatrix<T>,
    pub last_innovation: Option<DVector<T>>,
    pub last_nis: Option<T>,
}

impl<T: Real> EstimatorBelief<T> {
    pub fn new(mode: Mode, x_hat: DVector<T>, p: DMatrix<T>) -> Self {
        Self { mode, x_hat, p, last_innovation: None, last_nis: None }
    }
}

/// Central finite-difference Jacobian of `f` at `x` with absolute step `h`.
pub fn fd_jacobian<T, F>(f: &F, x: &DVector<T>, h: T) -> Result<DMatrix<T>>
where
    T: Real,
    F: Fn(&DVector<T>) -> Result<DVector<T>>,
{
    let n = x.len();
    let two_h = h * real(2.0);
    let mut jac: Option<DMatrix<T>> = None;
    for j in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let col = (f(&xp)? - f(&xm)?) / two_h;
        let jac = jac.get_or_insert_with(|| DMatrix::zeros(col.len(), n));
        jac.set_column(j, &col);
    }
    jac.ok_or(Error::Config("cannot differentiate a zero-dimensional map".into()))
}

/// EKF prediction: `x <- flow(x)`, `P <- F P F^T + Q` with `F` the Jacobian
/// of the one-step flow map (finite differences unless supplied).
pub fn ekf_predict<T, F>(
    x: &mut DVector<T>,
    p: &mut DMatrix<T>,
    flow: &F,
    jacobian: Option<&DMatrix<T>>,
    q: &DMatrix<T>,
    fd_step: T,
) -> Result<()>
where
    T: Real,
    F: Fn(&DVector<T>) -> Result<DVector<T>>,
{
    let f_mat = match jacobian {
        Some(j) => j.clone(),
        None => fd_jacobian(flow, x, fd_step)?,
    };
    *x = flow(x)?;
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("EKF prediction"));
    }
    *p = &f_mat * &*p * f_mat.transpose() + q;
    symmetrize(p);
    Ok(())
}

/// What a correction step produced.
#[derive(Debug, Clone)]
pub struct CorrectionInfo<T: Real> {
    pub innovation: DVector<T>,
    pub s: DMatrix<T>,
    pub nis: T,
    /// True when the innovation covariance had to be regularized.
    pub regularized: bool,
}

/// EKF correction with the Joseph-form covariance update.
pub fn ekf_correct<T, H>(
    x: &mut DVector<T>,
    p: &mut DMatrix<T>,
    z: &DVector<T>,
    h_fn: &H,
    h_jacobian: Option<&DMatrix<T>>,
    sigma: &DMatrix<T>,
    fd_step: T,
) -> Result<CorrectionInfo<T>>
where
    T: Real,
    H: Fn(&DVector<T>) -> Result<DVector<T>>,
{
    let h_mat = match h_jacobian {
        Some(j) => j.clone(),
        None => fd_jacobian(h_fn, x, fd_step)?,
    };
    let n = x.len();
    let mut s = &h_mat * &*p * h_mat.transpose() + sigma;
    symmetrize(&mut s);

    let mut regularized = false;
    let chol = match s.clone().cholesky() {
        Some(c) => c,
        None => {
            regularized = true;
            let bump = s.trace() * real::<T>(1e-12) + real::<T>(1e-300);
            let m = s.nrows();
            let reg = &s + DMatrix::identity(m, m) * bump;
            reg.cholesky().ok_or(Error::NotPsd("innovation covariance"))?
        }
    };
    let s_inv = chol.inverse();

    let innovation = z - h_fn(x)?;
    let gain = &*p * h_mat.transpose() * &s_inv;
    *x += &gain * &innovation;

    let i_kh = DMatrix::<T>::identity(n, n) - &gain * &h_mat;
    *p = &i_kh * &*p * i_kh.transpose() + &gain * sigma * gain.transpose();
    symmetrize(p);

    let nis = (innovation.transpose() * &s_inv * &innovation)[(0, 0)];
    if !nis.is_finite() || !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("EKF correction"));
    }
    Ok(CorrectionInfo { innovation, s, nis, regularized })
}

/// Normalized innovation squared `nu^T S^-1 nu`.
pub fn nis<T: Real>(innovation: &DVector<T>, s: &DMatrix<T>) -> Result<T> {
    let chol = s.clone().cholesky().ok_or(Error::NotPsd("innovation covariance"))?;
    let solved = chol.solve(innovation);
    Ok(innovation.dot(&solved))
}

/// Two-sided 95% chi-square band for 4 degrees of freedom.
pub const CHI2_4_BAND: (f64, f64) = (0.484, 11.143);

/// Applies a located mode switch to a belief: reset map on the estimate,
/// saltation transport plus reset noise on the covariance.
pub fn apply_jump<T: Real>(
    belief: &EstimatorBelief<T>,
    salt: &SaltationMatrix<T>,
    grid: &GridSignal<T>,
    params: &InverterParams<T>,
    t_s: T,
    sub_guard: SubGuard,
    w_r: T,
) -> Result<(EstimatorBelief<T>, InverterParams<T>, SwitchRecord<T>)> {
    let g = grid.sample(t_s);
    let (x_plus, params_plus, record) =
        apply_reset_vector(belief.mode, &belief.x_hat, &g, params, t_s, sub_guard, false)?;
    let n2 = x_plus.len();
    let w = DMatrix::identity(n2, n2) * w_r;
    let p_plus = covariance_jump(&belief.p, &salt.xi, &w)?;
    let new_belief = EstimatorBelief {
        mode: belief.mode.other(),
        x_hat: x_plus,
        p: p_plus,
        last_innovation: belief.last_innovation.clone(),
        last_nis: belief.last_nis,
    };
    Ok((new_belief, params_plus, record))
}

/// Filter-side knobs.
#[derive(Debug, Clone)]
pub struct EkfOptions<T: Real> {
    /// FD step for the flow Jacobian.
    pub fd_flow_step: T,
    /// FD step for the measurement Jacobian.
    pub fd_meas_step: T,
    /// When set, mode switches are taken from this event log instead of the
    /// filter's own guard evaluation.
    pub oracle_events: Option<Vec<(T, Mode)>>,
}

impl<T: Real> Default for EkfOptions<T> {
    fn default() -> Self {
        Self { fd_flow_step: real(1e-4), fd_meas_step: real(1e-6), oracle_events: None }
    }
}

/// One posterior per correction instant.
#[derive(Debug, Clone)]
pub struct BeliefRecord<T: Real> {
    pub t: T,
    pub grid_index: u64,
    pub mode: Mode,
    pub x_hat: DVector<T>,
    /// Estimated measurement channels `[i_d, i_q, v_d, v_q]` at the posterior.
    pub channels: [T; 4],
    pub theta: T,
    pub omega: T,
    pub p: T,
    pub q: T,
    pub nis: T,
    pub trace_p: T,
}

/// Hybrid EKF: mode-dependent prediction with guard-triggered saltation
/// jumps, plus Joseph-form corrections.
pub struct HybridEkf<'a, T: Real> {
    pub belief: EstimatorBelief<T>,
    pub tracker: GuardTracker<T>,
    grid: &'a GridSignal<T>,
    noise: NoiseConfig<T>,
    opts: EkfOptions<T>,
    pub events: Vec<SwitchRecord<T>>,
    pub degraded_jumps: usize,
    t: T,
    oracle_cursor: usize,
}

impl<'a, T: Real> HybridEkf<'a, T> {
    pub fn new(
        belief: EstimatorBelief<T>,
        grid: &'a GridSignal<T>,
        params: InverterParams<T>,
        noise: NoiseConfig<T>,
        opts: EkfOptions<T>,
    ) -> Result<Self> {
        noise.validate()?;
        let mode = belief.mode;
        Ok(Self {
            belief,
            tracker: GuardTracker::new(mode, params),
            grid,
            noise,
            opts,
            events: Vec::new(),
            degraded_jumps: 0,
            t: T::zero(),
            oracle_cursor: 0,
        })
    }

    pub fn time(&self) -> T {
        self.t
    }

    pub fn params(&self) -> &InverterParams<T> {
        &self.tracker.params
    }

    /// Transports mean and covariance over `(t, t+h)` without guard checks.
    fn transport(&mut self, t: T, h: T, dt_base: T) -> Result<()> {
        let mode = self.tracker.mode;
        let params = self.tracker.params;
        let grid = self.grid;
        let flow = move |x0: &DVector<T>| {
            step_rk4(x0, t, h, &|tt, xx: &DVector<T>| {
                mode_field(mode, xx, &grid.sample(tt), &params).map(|(dx, _)| dx)
            })
        };
        let q_scale = h / dt_base;
        let q = self.noise.q_for(mode) * q_scale;
        ekf_predict(&mut self.belief.x_hat, &mut self.belief.p, &flow, None, &q, self.opts.fd_flow_step)
    }

    fn fire_jump(&mut self, t_s: T, sub_guard: SubGuard) -> Result<()> {
        let salt = event_saltation(self.tracker.mode, &self.belief.x_hat, t_s, sub_guard, self.grid, &self.tracker.params)?;
        if salt.degraded {
            self.degraded_jumps += 1;
        }
        let (belief, params_plus, record) =
            apply_jump(&self.belief, &salt, self.grid, &self.tracker.params, t_s, sub_guard, self.noise.w_r)?;
        self.belief = belief;
        self.tracker.params = params_plus;
        self.tracker.mode = self.tracker.mode.other();
        self.tracker.cond_start = None;
        self.events.push(record);
        Ok(())
    }

    /// Whether the oracle log schedules a switch inside `(t, t + h]`.
    fn oracle_event_in(&self, t: T, h: T) -> Option<(T, SubGuard)> {
        let events = self.opts.oracle_events.as_ref()?;
        let (t_s, from_mode) = *events.get(self.oracle_cursor)?;
        if from_mode == self.tracker.mode && t_s > t && t_s <= t + h {
            // the sub-guard is not part of the oracle signal; the forward
            // direction defaults to the voltage guard, the reverse to dwell
            let sub = match from_mode {
                Mode::Gfl => SubGuard::VoltageLow,
                Mode::Gfm => SubGuard::Dwell,
            };
            Some((t_s, sub))
        } else {
            None
        }
    }

    /// One base prediction step of size `dt`, splitting at mode switches.
    pub fn predict_step(&mut self, dt: T) -> Result<()> {
        let t_target = self.t + dt;
        let mut guard_budget = 4usize;
        while self.t < t_target {
            let t = self.t;
            let h = t_target - t;

            if let Some((t_s, sub)) = self.oracle_event_in(t, h) {
                let h_pre = t_s - t;
                if h_pre > T::zero() {
                    self.transport(t, h_pre, dt)?;
                }
                self.t = t_s;
                self.fire_jump(t_s, sub)?;
                self.oracle_cursor += 1;
                continue;
            }

            let x_pre = self.belief.x_hat.clone();
            let mode = self.tracker.mode;
            let params = self.tracker.params;
            let grid = self.grid;
            let field = move |tt: T, xx: &DVector<T>| {
                mode_field(mode, xx, &grid.sample(tt), &params).map(|(dx, _)| dx)
            };
            // flow by sub-step length from the segment anchor
            let flow_h = {
                let x_anchor = x_pre.clone();
                move |s: T| step_rk4(&x_anchor, t, s, &field)
            };
            let x_trial = flow_h(h)?;
            let g_pre = self.tracker.residual(t, &x_pre, &grid.sample(t)).0;
            let (g_post, sub_post) = self.tracker.residual(t + h, &x_trial, &grid.sample(t + h));
            let sample = |tt: T| grid.sample(tt);

            if self.opts.oracle_events.is_none() && g_pre < T::zero() && g_post >= T::zero() {
                guard_budget = guard_budget.checked_sub(1).ok_or_else(|| {
                    Error::Config("estimator: more than 4 mode switches in one base step".into())
                })?;
                let tracker = self.tracker.clone();
                let guard = |tt: T, xx: &DVector<T>| tracker.residual(tt, xx, &grid.sample(tt)).0;
                let loc = locate_event(t, h, g_pre, &flow_h, &guard, real(1e-12), 64)?;
                let t_s = t + loc.h;
                let (_, sub_loc) = self.tracker.residual(t_s, &loc.x_minus, &grid.sample(t_s));
                let sub = if loc.residual >= T::zero() { sub_loc } else { sub_post };

                self.tracker.update_dwell(t, &x_pre, t_s, &loc.x_minus, &flow_h, &sample, 64)?;
                if loc.h > T::zero() {
                    self.transport(t, loc.h, dt)?;
                }
                self.t = t_s;
                self.fire_jump(t_s, sub)?;
                continue;
            }

            self.tracker.update_dwell(t, &x_pre, t + h, &x_trial, &flow_h, &sample, 64)?;
            self.transport(t, h, dt)?;
            self.t = t_target;
        }
        Ok(())
    }

    /// Measurement update at the current time; a guard satisfied by the
    /// posterior triggers an immediate jump.
    pub fn correct(&mut self, z: &DVector<T>) -> Result<CorrectionInfo<T>> {
        let g = self.grid.sample(self.t);
        let mode = self.tracker.mode;
        let params = self.tracker.params;
        let h_fn = move |x: &DVector<T>| measure(mode, x, &g, &params);
        let info = ekf_correct(
            &mut self.belief.x_hat,
            &mut self.belief.p,
            z,
            &h_fn,
            None,
            &self.noise.sigma,
            self.opts.fd_meas_step,
        )?;
        self.belief.last_innovation = Some(info.innovation.clone());
        self.belief.last_nis = Some(info.nis);

        if self.opts.oracle_events.is_none() {
            let (res, sub) = self.tracker.residual(self.t, &self.belief.x_hat, &g);
            if res >= T::zero() {
                self.fire_jump(self.t, sub)?;
            }
        }
        Ok(info)
    }

    /// Runs the filter over a measurement stream: `measurements[k]` arrives at
    /// step grid index `(k + 1) * every`. Returns one record per correction.
    pub fn run(
        &mut self,
        dt: T,
        every: u64,
        measurements: &[DVector<T>],
    ) -> Result<Vec<BeliefRecord<T>>> {
        let mut records = Vec::with_capacity(measurements.len());
        for (k, z) in measurements.iter().enumerate() {
            for _ in 0..every {
                self.predict_step(dt)?;
            }
            let info = self.correct(z)?;
            let grid_index = (k as u64 + 1) * every;
            let g = self.grid.sample(self.t);
            let (_, out) = mode_field(self.tracker.mode, &self.belief.x_hat, &g, &self.tracker.params)?;
            let theta = match self.tracker.mode {
                Mode::Gfl => self.belief.x_hat[5],
                Mode::Gfm => self.belief.x_hat[4],
            };
            records.push(BeliefRecord {
                t: self.t,
                grid_index,
                mode: self.tracker.mode,
                x_hat: self.belief.x_hat.clone(),
                channels: [self.belief.x_hat[2], self.belief.x_hat[3], out.v_d_filt, out.v_q_filt],
                theta,
                omega: out.omega,
                p: out.p,
                q: out.q,
                nis: info.nis,
                trace_p: self.belief.p.trace(),
            });
        }
        Ok(records)
    }
}

/// EKF on the smoothed single-model dynamics: no guards, no jumps.
pub struct ContinuousEkf<'a, T: Real> {
    pub x_hat: DVector<T>,
    pub p: DMatrix<T>,
    grid: &'a GridSignal<T>,
    params: InverterParams<T>,
    noise: NoiseConfig<T>,
    opts: EkfOptions<T>,
    k_gain: T,
    t: T,
}

impl<'a, T: Real> ContinuousEkf<'a, T> {
    pub fn new(
        x0: DVector<T>,
        p0: DMatrix<T>,
        grid: &'a GridSignal<T>,
        params: InverterParams<T>,
        noise: NoiseConfig<T>,
        opts: EkfOptions<T>,
        k_gain: T,
    ) -> Result<Self> {
        noise.validate()?;
        Ok(Self { x_hat: x0, p: p0, grid, params, noise, opts, k_gain, t: T::zero() })
    }

    pub fn predict_step(&mut self, dt: T) -> Result<()> {
        let t = self.t;
        let grid = self.grid;
        let params = self.params;
        let k_gain = self.k_gain;
        let flow = move |x0: &DVector<T>| {
            step_rk4(x0, t, dt, &|tt, xx: &DVector<T>| {
                smoothed_field(xx, &grid.sample(tt), &params, k_gain).map(|(dx, _)| dx)
            })
        };
        ekf_predict(&mut self.x_hat, &mut self.p, &flow, None, &self.noise.q_gfl, self.opts.fd_flow_step)?;
        self.t = t + dt;
        Ok(())
    }

    pub fn correct(&mut self, z: &DVector<T>) -> Result<CorrectionInfo<T>> {
        let g = self.grid.sample(self.t);
        let params = self.params;
        let k_gain = self.k_gain;
        let h_fn = move |x: &DVector<T>| smoothed_measure(x, &g, &params, k_gain);
        ekf_correct(&mut self.x_hat, &mut self.p, z, &h_fn, None, &self.noise.sigma, self.opts.fd_meas_step)
    }

    pub fn run(&mut self, dt: T, every: u64, measurements: &[DVector<T>]) -> Result<Vec<BeliefRecord<T>>> {
        let mut records = Vec::with_capacity(measurements.len());
        for (k, z) in measurements.iter().enumerate() {
            for _ in 0..every {
                self.predict_step(dt)?;
            }
            let info = self.correct(z)?;
            let g = self.grid.sample(self.t);
            let (_, out) = smoothed_field(&self.x_hat, &g, &self.params, self.k_gain)?;
            records.push(BeliefRecord {
                t: self.t,
                grid_index: (k as u64 + 1) * every,
                mode: Mode::Gfl,
                x_hat: self.x_hat.clone(),
                channels: [self.x_hat[2], self.x_hat[3], out.v_d_filt, out.v_q_filt],
                theta: self.x_hat[5],
                omega: out.omega,
                p: out.p,
                q: out.q,
                nis: info.nis,
                trace_p: self.p.trace(),
            });
        }
        Ok(records)
    }
}

/// Starting belief centered on a hybrid state with `P = p0 * I`.
pub fn belief_from_state<T: Real>(x0: &HybridState<T>, p0: T) -> EstimatorBelief<T> {
    let n = x0.x.len();
    EstimatorBelief::new(x0.mode, x0.x.clone(), DMatrix::identity(n, n) * p0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_dynamics_prediction_adds_q() {
        let mut x = DVector::from_row_slice(&[1.0, -2.0]);
        let mut p = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3]);
        let q = DMatrix::identity(2, 2) * 0.01;
        let flow = |x0: &DVector<f64>| Ok(x0.clone());
        ekf_predict(&mut x, &mut p, &flow, None, &q, 1e-4).unwrap();
        assert_eq!(x, DVector::from_row_slice(&[1.0, -2.0]));
        let expect = DMatrix::from_row_slice(2, 2, &[0.51, 0.1, 0.1, 0.31]);
        assert_relative_eq!(p, expect, epsilon = 1e-10);
    }

    #[test]
    fn linear_prediction_is_pure_congruence() {
        // x' = A x with Q = 0: P evolves by congruence
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 0.8]);
        let flow = {
            let a = a.clone();
            move |x0: &DVector<f64>| Ok(&a * x0)
        };
        let mut x = DVector::from_row_slice(&[0.3, -0.4]);
        let mut p = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 2.0]);
        let q = DMatrix::zeros(2, 2);
        let p_expect = &a * &p * a.transpose();
        ekf_predict(&mut x, &mut p, &flow, None, &q, 1e-4).unwrap();
        assert_relative_eq!(p, p_expect, epsilon = 1e-10);
    }

    #[test]
    fn zero_innovation_keeps_state_and_shrinks_p() {
        let mut x = DVector::from_row_slice(&[1.0, 2.0]);
        let mut p = DMatrix::identity(2, 2);
        let sigma = DMatrix::identity(1, 1);
        let h = |x0: &DVector<f64>| Ok(DVector::from_row_slice(&[x0[0]]));
        let z = DVector::from_row_slice(&[1.0]);
        let trace_before = p.trace();
        let info = ekf_correct(&mut x, &mut p, &z, &h, None, &sigma, 1e-6).unwrap();
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(x[1], 2.0, epsilon = 1e-12);
        assert!(p.trace() < trace_before);
        assert_relative_eq!(info.nis, 0.0, epsilon = 1e-20);
    }

    #[test]
    fn scalar_textbook_update() {
        // h(x) = x, P = 1, Sigma = 1 -> K = 0.5, P+ = 0.5
        let mut x = DVector::from_row_slice(&[0.0]);
        let mut p = DMatrix::identity(1, 1);
        let sigma = DMatrix::identity(1, 1);
        let h = |x0: &DVector<f64>| Ok(x0.clone());
        let z = DVector::from_row_slice(&[1.0]);
        ekf_correct(&mut x, &mut p, &z, &h, None, &sigma, 1e-6).unwrap();
        assert_relative_eq!(x[0], 0.5, epsilon = 1e-10);
        assert_relative_eq!(p[(0, 0)], 0.5, epsilon = 1e-10);
    }

    #[test]
    fn joseph_form_matches_simple_form_at_optimal_gain() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        for _ in 0..25 {
            let a = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
            let p0 = &a * a.transpose() + DMatrix::identity(3, 3) * 0.1;
            let h_mat = DMatrix::from_fn(2, 3, |_, _| rng.gen_range(-1.0..1.0));
            let sigma = DMatrix::identity(2, 2) * rng.gen_range(0.1..1.0);

            let s = &h_mat * &p0 * h_mat.transpose() + &sigma;
            let s_inv = s.clone().try_inverse().unwrap();
            let k = &p0 * h_mat.transpose() * &s_inv;
            let joseph = {
                let i_kh = DMatrix::<f64>::identity(3, 3) - &k * &h_mat;
                &i_kh * &p0 * i_kh.transpose() + &k * &sigma * k.transpose()
            };
            let simple = (DMatrix::<f64>::identity(3, 3) - &k * &h_mat) * &p0;
            assert_relative_eq!(joseph, simple, epsilon = 1e-9);
        }
    }

    #[test]
    fn nis_trivial_values() {
        let s = DMatrix::identity(4, 4);
        let zero = DVector::zeros(4);
        assert_eq!(nis(&zero, &s).unwrap(), 0.0);
        let e1 = DVector::from_row_slice(&[1.0, 0.0, 0.0, 0.0]);
        assert_relative_eq!(nis(&e1, &s).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn fd_jacobian_exact_on_linear_map() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, -0.5, 0.0, 3.0, 1.5]);
        let f = {
            let a = a.clone();
            move |x: &DVector<f64>| Ok(&a * x)
        };
        let x = DVector::from_row_slice(&[0.3, -0.2, 0.9]);
        let j = fd_jacobian(&f, &x, 1e-3).unwrap();
        assert_relative_eq!(j, a, epsilon = 1e-10);
    }
}
