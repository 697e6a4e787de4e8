//! Saltation matrix: first-order transport of state perturbations across a
//! guard crossing,
//!
//! `Xi = DR + (f_post - DR f_pre) grad_g^T / alpha`,
//!
//! with `alpha` the guard crossing rate. The guards here may depend on time
//! explicitly (the scripted grid voltage, the dwell timer), so
//! `alpha = dg/dt + grad_g^T f_pre`; for a purely exogenous guard the state
//! gradient is zero and the saltation matrix reduces to the reset Jacobian,
//! because every perturbed trajectory switches at the same instant.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{gfl_omega, GflState, GridSample, GridSignal, InverterParams, Mode};
use crate::error::{Error, Result};
use crate::hybrid::{apply_reset_vector, mode_omega, SubGuard};
use crate::scalar::{real, Real};

/// Transversality floor for the crossing rate (pu/s units).
pub const ALPHA_MIN: f64 = 1e-8;

/// Default finite-difference step for the reset Jacobian (pu-scaled states).
pub const RESET_FD_STEP: f64 = 1e-6;

/// Ingredients of one saltation evaluation.
#[derive(Debug, Clone)]
pub struct SaltationInputs<T: Real> {
    /// Pre-jump flow value (n1).
    pub f_pre: DVector<T>,
    /// Post-jump flow value (n2).
    pub f_post: DVector<T>,
    /// Reset Jacobian (n2 x n1).
    pub dr: DMatrix<T>,
    /// Guard state-gradient (n1).
    pub grad_g: DVector<T>,
    /// Crossing rate `dg/dt + grad_g^T f_pre`.
    pub alpha: T,
}

/// The assembled matrix plus event metadata.
#[derive(Debug, Clone)]
pub struct SaltationMatrix<T: Real> {
    pub xi: DMatrix<T>,
    pub sub_guard: Option<SubGuard>,
    pub t_s: Option<T>,
    /// True when a grazing crossing forced the `Xi = DR` fallback.
    pub degraded: bool,
}

/// Evaluates the saltation formula. Errors on a grazing crossing
/// (`|alpha| <= ALPHA_MIN`); callers that must proceed fall back to `DR`.
pub fn saltation_matrix<T: Real>(inp: &SaltationInputs<T>) -> Result<SaltationMatrix<T>> {
    let n2 = inp.dr.nrows();
    let n1 = inp.dr.ncols();
    if inp.f_pre.len() != n1 || inp.f_post.len() != n2 || inp.grad_g.len() != n1 {
        return Err(Error::Config("saltation input dimensions disagree".into()));
    }
    if inp.alpha.abs() <= real(ALPHA_MIN) {
        return Err(Error::GrazingTransition { alpha: inp.alpha.to_subset().unwrap_or(0.0) });
    }
    let mismatch = &inp.f_post - &inp.dr * &inp.f_pre;
    let xi = &inp.dr + mismatch * inp.grad_g.transpose() / inp.alpha;
    if !xi.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("saltation matrix"));
    }
    Ok(SaltationMatrix { xi, sub_guard: None, t_s: None, degraded: false })
}

/// Covariance transport across a reset: `P+ = Xi P- Xi^T + W_R`, symmetrized.
pub fn covariance_jump<T: Real>(p_minus: &DMatrix<T>, xi: &DMatrix<T>, w_r: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n1 = xi.ncols();
    if p_minus.nrows() != n1 || p_minus.ncols() != n1 {
        return Err(Error::Config("covariance dimension does not match the saltation matrix".into()));
    }
    check_psd(p_minus, "pre-jump covariance")?;
    let mut p_plus = xi * p_minus * xi.transpose() + w_r;
    symmetrize(&mut p_plus);
    Ok(p_plus)
}

/// Fails when the (symmetrized) matrix has an eigenvalue below `-1e-8 * scale`.
pub fn check_psd<T: Real>(m: &DMatrix<T>, ctx: &'static str) -> Result<()> {
    let mut s = m.clone();
    symmetrize(&mut s);
    let scale = s.diagonal().iter().fold(T::one(), |a, b| a.max(b.abs()));
    let eig = s.symmetric_eigenvalues();
    if eig.iter().any(|l| *l < -real::<T>(1e-8) * scale) {
        return Err(Error::NotPsd(ctx));
    }
    Ok(())
}

pub fn symmetrize<T: Real>(m: &mut DMatrix<T>) {
    let half: T = real(0.5);
    let mt = m.transpose();
    *m = (&*m + mt) * half;
}

/// Paper-form guard gradient.
///
/// Voltage sub-guards: the unit phasor direction of the grid voltage in the
/// local frame, carried on the current coordinates. This is the formal
/// gradient of `|v| - v_th` with respect to the voltage phasor; in this model
/// the scripted `|v_grid|` does not depend on the state, so event handling
/// uses [`guard_sensitivity`] instead, which reports a zero state-gradient
/// and a nonzero explicit time derivative for these sub-guards.
///
/// Frequency sub-guard: gradient of `|omega(x) - omega_0| - omega_th` through
/// the PLL law, supported on `(eta_pll, theta_pll)`.
pub fn guard_gradient<T: Real>(
    x_minus: &DVector<T>,
    sub_guard: SubGuard,
    mode: Mode,
    grid: &GridSample<T>,
    params: &InverterParams<T>,
) -> Result<DVector<T>> {
    let n = x_minus.len();
    let mut g = DVector::zeros(n);
    match sub_guard {
        SubGuard::VoltageLow | SubGuard::VoltageHigh => {
            if !(grid.v_mag > T::zero()) {
                return Err(Error::Config("voltage guard gradient is singular at |v_grid| = 0".into()));
            }
            let frame = match mode {
                Mode::Gfl => x_minus[5],
                Mode::Gfm => x_minus[4],
            };
            let (v_d, v_q) = crate::dynamics::local_grid_voltage(grid, frame);
            g[2] = v_d / grid.v_mag;
            g[3] = v_q / grid.v_mag;
        }
        SubGuard::Frequency => {
            if mode != Mode::Gfl {
                return Err(Error::Config("frequency guard gradient is defined on the GFL state".into()));
            }
            let x = GflState::from_slice(x_minus.as_slice());
            let delta = gfl_omega(&x, grid, params) - params.omega_0;
            let sign = if delta >= T::zero() { T::one() } else { -T::one() };
            // d(omega)/d(eta) = 1; d(omega)/d(theta) through the PLL error
            let de_dtheta = -grid.v_mag * (x.theta_pll - grid.theta).cos();
            g[4] = sign;
            g[5] = sign * params.k_p_pll * de_dtheta;
        }
        SubGuard::Dwell => {}
    }
    Ok(g)
}

/// True guard sensitivity used by event handling: state gradient plus the
/// explicit time derivative of the residual.
#[derive(Debug, Clone)]
pub struct GuardSensitivity<T: Real> {
    pub grad_x: DVector<T>,
    pub dg_dt: T,
}

pub fn guard_sensitivity<T: Real>(
    x_minus: &DVector<T>,
    sub_guard: SubGuard,
    mode: Mode,
    grid: &GridSample<T>,
    params: &InverterParams<T>,
) -> Result<GuardSensitivity<T>> {
    let n = x_minus.len();
    match sub_guard {
        // residual v_th_lo - |v(t)| resp. |v(t)| - v_th_hi: exogenous
        SubGuard::VoltageLow => Ok(GuardSensitivity { grad_x: DVector::zeros(n), dg_dt: -grid.dv_mag_dt }),
        SubGuard::VoltageHigh => Ok(GuardSensitivity { grad_x: DVector::zeros(n), dg_dt: grid.dv_mag_dt }),
        SubGuard::Frequency => {
            let grad_x = guard_gradient(x_minus, sub_guard, mode, grid, params)?;
            // the PLL error also moves with the grid phase and magnitude
            let x = GflState::from_slice(x_minus.as_slice());
            let delta = gfl_omega(&x, grid, params) - params.omega_0;
            let sign = if delta >= T::zero() { T::one() } else { -T::one() };
            let de_dt = grid.v_mag * (x.theta_pll - grid.theta).cos() * grid.omega
                - grid.dv_mag_dt * (x.theta_pll - grid.theta).sin();
            Ok(GuardSensitivity { grad_x, dg_dt: sign * params.k_p_pll * de_dt })
        }
        // residual (t - t_cond) - T_hold: a clock
        SubGuard::Dwell => Ok(GuardSensitivity { grad_x: DVector::zeros(n), dg_dt: T::one() }),
    }
}

/// Finite-difference Jacobian of the reset map at `x_minus` (central, step
/// `h`); switches to one-sided differences and flags it when the pre-switch
/// current magnitude sits within `2h` of a virtual-impedance kink.
pub fn reset_jacobian<T: Real>(
    x_minus: &DVector<T>,
    from_mode: Mode,
    grid: &GridSample<T>,
    params: &InverterParams<T>,
    t_s: T,
    sub_guard: SubGuard,
    h: T,
) -> Result<(DMatrix<T>, bool)> {
    let n1 = x_minus.len();
    let reset = |x: &DVector<T>| -> Result<DVector<T>> {
        apply_reset_vector(from_mode, x, grid, params, t_s, sub_guard, false).map(|(xp, _, _)| xp)
    };

    let i_s = (x_minus[2] * x_minus[2] + x_minus[3] * x_minus[3]).sqrt();
    let two_h = h * real(2.0);
    let kink = from_mode == Mode::Gfl
        && ((i_s - params.i_th).abs() < two_h || (i_s - params.i_max).abs() < two_h);

    let base = reset(x_minus)?;
    let n2 = base.len();
    let mut dr = DMatrix::zeros(n2, n1);
    for j in 0..n1 {
        let mut xp = x_minus.clone();
        xp[j] += h;
        let fp = reset(&xp)?;
        let col = if kink {
            (fp - &base) / h
        } else {
            let mut xm = x_minus.clone();
            xm[j] -= h;
            let fm = reset(&xm)?;
            (fp - fm) / two_h
        };
        dr.set_column(j, &col);
    }
    Ok((dr, kink))
}

/// Assembles the saltation matrix for a located event. Falls back to
/// `Xi = DR` (flagged `degraded`) at a grazing crossing.
pub fn event_saltation<T: Real>(
    from_mode: Mode,
    x_minus: &DVector<T>,
    t_s: T,
    sub_guard: SubGuard,
    grid: &GridSignal<T>,
    params: &InverterParams<T>,
) -> Result<SaltationMatrix<T>> {
    let g = grid.sample(t_s);
    let (f_pre, _) = crate::dynamics::mode_field(from_mode, x_minus, &g, params)?;
    let (x_plus, params_plus, _) = apply_reset_vector(from_mode, x_minus, &g, params, t_s, sub_guard, false)?;
    let (f_post, _) = crate::dynamics::mode_field(from_mode.other(), &x_plus, &g, &params_plus)?;
    let (dr, _) = reset_jacobian(x_minus, from_mode, &g, params, t_s, sub_guard, real(RESET_FD_STEP))?;
    let sens = guard_sensitivity(x_minus, sub_guard, from_mode, &g, params)?;
    let alpha = sens.dg_dt + sens.grad_x.dot(&f_pre);

    let inputs = SaltationInputs { f_pre, f_post, dr: dr.clone(), grad_g: sens.grad_x, alpha };
    match saltation_matrix(&inputs) {
        Ok(mut s) => {
            s.sub_guard = Some(sub_guard);
            s.t_s = Some(t_s);
            Ok(s)
        }
        Err(Error::GrazingTransition { .. }) => {
            Ok(SaltationMatrix { xi: dr, sub_guard: Some(sub_guard), t_s: Some(t_s), degraded: true })
        }
        Err(e) => Err(e),
    }
}

/// Frequency of the active mode; re-exported here for gradient cross-checks.
pub fn omega_of<T: Real>(mode: Mode, x: &DVector<T>, grid: &GridSample<T>, params: &InverterParams<T>) -> T {
    mode_omega(mode, x.as_slice(), grid, params)
}
