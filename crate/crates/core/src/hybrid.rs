//! The hybrid automaton: guards, dwell logic, and the reset maps.
//!
//! Forward transition (GFL -> GFM) fires when the grid voltage magnitude
//! leaves the admissible band or the frequency deviation exceeds its
//! threshold. The reverse transition fires after the re-entry conditions have
//! held for the dwell time. Both guards are exposed as signed residuals whose
//! negative-to-nonnegative crossing is the event, so the integrator can
//! bisect on them.
//!
//! The resets are designed for bumpless transfer: the droop biases are
//! recomputed so the post-switch droop reproduces the pre-switch frequency
//! and grid voltage exactly, and the loop integrators are seeded so the
//! current commands are continuous across the switch.

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    eval_gfm, gfl_omega, pll_error, AlgebraicOutputs, GflState, GfmState, GridSample, InverterParams, MeasuredPower,
    Mode, OuterPairing,
};
use crate::scalar::{real, Real};

/// Which scalar condition fired a transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubGuard {
    /// `|v_grid|` fell below the band.
    VoltageLow,
    /// `|v_grid|` rose above the band.
    VoltageHigh,
    /// `|omega - omega_0|` exceeded the threshold.
    Frequency,
    /// The reverse dwell timer expired.
    Dwell,
}

impl std::fmt::Display for SubGuard {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SubGuard::VoltageLow => "voltage_low",
            SubGuard::VoltageHigh => "voltage_high",
            SubGuard::Frequency => "frequency",
            SubGuard::Dwell => "dwell",
        };
        write!(f, "{s}")
    }
}

/// Signed violation of the voltage band: negative inside `[v_th_lo, v_th_hi]`.
#[inline]
pub fn voltage_band_residual<T: Real>(v_mag: T, params: &InverterParams<T>) -> T {
    (params.v_th_lo - v_mag).max(v_mag - params.v_th_hi)
}

/// Forward guard (GFL -> GFM): max of the voltage and frequency sub-guards.
/// Returns the residual and the sub-guard currently closest to firing; the
/// voltage sub-guard wins ties.
pub fn guard_gfl_to_gfm<T: Real>(
    x: &GflState<T>,
    grid: &GridSample<T>,
    params: &InverterParams<T>,
) -> (T, SubGuard) {
    let g_v = voltage_band_residual(grid.v_mag, params);
    let delta = gfl_omega(x, grid, params) - params.omega_0;
    let g_w = delta.abs() - params.omega_th;
    if g_v >= g_w {
        let sub = if grid.v_mag > params.v_th_hi { SubGuard::VoltageHigh } else { SubGuard::VoltageLow };
        (g_v, sub)
    } else {
        (g_w, SubGuard::Frequency)
    }
}

/// Re-entry conditions for the reverse transition: positive while the grid
/// voltage sits inside the band and the GFM frequency tracks the grid.
pub fn reentry_residual<T: Real>(omega_gfm: T, grid: &GridSample<T>, params: &InverterParams<T>) -> T {
    let band = -voltage_band_residual(grid.v_mag, params);
    let freq = params.omega_th - (omega_gfm - grid.omega).abs();
    band.min(freq)
}

/// Reverse guard (GFM -> GFL): fires once the dwell clock reaches `t_hold`.
/// `dwell_clock` is the time the re-entry conditions have held continuously;
/// the caller maintains it (see the simulator).
pub fn guard_gfm_to_gfl<T: Real>(
    omega_gfm: T,
    grid: &GridSample<T>,
    params: &InverterParams<T>,
    dwell_clock: T,
) -> (T, SubGuard) {
    let residual = if reentry_residual(omega_gfm, grid, params) > T::zero() {
        dwell_clock - params.t_hold
    } else {
        -params.t_hold
    };
    (residual, SubGuard::Dwell)
}

/// Virtual-impedance activation: 0 below `i_th`, linear ramp to 1 at `i_max`.
pub fn virtual_impedance_activation<T: Real>(i_s: T, params: &InverterParams<T>) -> T {
    if i_s <= params.i_th {
        T::zero()
    } else if i_s >= params.i_max {
        T::one()
    } else {
        (i_s - params.i_th) / (params.i_max - params.i_th)
    }
}

/// Everything sampled and recomputed at a switching instant.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SwitchRecord<T: Real> {
    pub t_s: T,
    pub from_mode: Mode,
    pub to_mode: Mode,
    pub sub_guard: SubGuard,
    /// Pre-switch angle and frequency.
    pub theta_minus: T,
    pub omega_minus: T,
    /// Powers sampled just before the switch.
    pub p_s: T,
    pub q_s: T,
    /// Grid voltage magnitude just before the switch.
    pub v_grid_minus: T,
    /// Current magnitude feeding the virtual-impedance activation.
    pub i_s: T,
    pub psi: T,
    /// Recomputed droop biases.
    pub p0_plus: T,
    pub q0_plus: T,
    /// Effective impedance after the switch.
    pub r_plus: T,
    pub l_plus: T,
}

/// GFL -> GFM reset map.
///
/// Transfers angle and frequency, recomputes the droop biases so the droop
/// rows reproduce `omega_minus` and `|v_grid|` exactly, inserts the virtual
/// impedance scaled by `psi`, and seeds the voltage-loop integrators so the
/// current commands are continuous across the switch.
pub fn reset_gfl_to_gfm<T: Real>(
    x: &GflState<T>,
    outputs: &AlgebraicOutputs<T>,
    grid: &GridSample<T>,
    params: &InverterParams<T>,
    t_s: T,
    sub_guard: SubGuard,
) -> (GfmState<T>, InverterParams<T>, SwitchRecord<T>) {
    let omega_minus = outputs.omega;
    let p_s = outputs.p;
    let q_s = outputs.q;
    let i_s = (x.i_d * x.i_d + x.i_q * x.i_q).sqrt();
    let psi = virtual_impedance_activation(i_s, params);

    // the droop reads (p_m, q_m); in the instantaneous variant those equal
    // the sampled (p_s, q_s)
    let mut new_params = *params;
    new_params.p_0 = outputs.p_m - (params.omega_0 - omega_minus) / params.m_p;
    new_params.q_0 = outputs.q_m - (params.v_0 - grid.v_mag) / params.n_q;
    new_params.r_eff = params.r_f + params.r_g + psi * params.r_vi;
    new_params.l_eff = params.l_f + params.l_g + psi * params.l_vi;

    // v_ref right after the switch equals |v_grid| by construction
    let v_ref_plus = params.v_0 - params.n_q * (outputs.q_m - new_params.q_0);
    let x_plus = GfmState {
        gamma_d: x.gamma_d,
        gamma_q: x.gamma_q,
        i_d: x.i_d,
        i_q: x.i_q,
        theta: x.theta_pll,
        // command continuity: i_ref(+) = i_ref(-) given v(+) = v(-)
        xi_d: outputs.i_d_ref - params.k_p_v * (v_ref_plus - outputs.v_d),
        xi_q: outputs.i_q_ref + params.k_p_v * outputs.v_q,
    };

    let record = SwitchRecord {
        t_s,
        from_mode: Mode::Gfl,
        to_mode: Mode::Gfm,
        sub_guard,
        theta_minus: x.theta_pll,
        omega_minus,
        p_s,
        q_s,
        v_grid_minus: grid.v_mag,
        i_s,
        psi,
        p0_plus: new_params.p_0,
        q0_plus: new_params.q_0,
        r_plus: new_params.r_eff,
        l_plus: new_params.l_eff,
    };
    (x_plus, new_params, record)
}

/// GFM -> GFL reset map.
///
/// Shared states copy over, the PLL is seeded so the post-switch frequency
/// equals the pre-switch droop frequency, the outer-loop integrators are
/// chosen so the current commands equal the pre-switch currents, and the
/// effective impedance returns to the GFL filter-row values.
pub fn reset_gfm_to_gfl<T: Real>(
    x: &GfmState<T>,
    outputs: &AlgebraicOutputs<T>,
    grid: &GridSample<T>,
    params: &InverterParams<T>,
    t_s: T,
) -> (GflState<T>, InverterParams<T>, SwitchRecord<T>) {
    let omega_minus = outputs.omega;
    let theta = x.theta;
    let e_pll = pll_error(theta, grid);

    // with i_ref(+) = i(-), the commanded voltage right after the switch is
    // known in closed form, and so are the powers the outer loop will see
    let v_d_plus = x.gamma_d + omega_minus * params.l_f * x.i_q;
    let v_q_plus = x.gamma_q - omega_minus * params.l_f * x.i_d;
    let (p_plus, q_plus) = match params.measured_power {
        MeasuredPower::Instantaneous => {
            (v_d_plus * x.i_d + v_q_plus * x.i_q, v_q_plus * x.i_d - v_d_plus * x.i_q)
        }
        // the low-pass states carry over unchanged
        MeasuredPower::Filtered => (outputs.p_m, outputs.q_m),
    };

    let (sigma_p, sigma_q) = match params.outer_pairing {
        OuterPairing::CrossCoupled => (
            (x.i_q - params.k_p_q * (params.p_ref - p_plus)) / params.k_i_q,
            (x.i_d - params.k_p_p * (params.q_ref - q_plus)) / params.k_i_p,
        ),
        OuterPairing::Conventional => (
            (x.i_d - params.k_p_p * (params.p_ref - p_plus)) / params.k_i_p,
            (x.i_q - params.k_p_q * (params.q_ref - q_plus)) / params.k_i_q,
        ),
    };

    let x_plus = GflState {
        gamma_d: x.gamma_d,
        gamma_q: x.gamma_q,
        i_d: x.i_d,
        i_q: x.i_q,
        eta_pll: omega_minus - params.omega_0 - params.k_p_pll * e_pll,
        theta_pll: theta,
        sigma_p,
        sigma_q,
    };

    let mut new_params = *params;
    new_params.clear_virtual_impedance();

    let i_s = (x.i_d * x.i_d + x.i_q * x.i_q).sqrt();
    let record = SwitchRecord {
        t_s,
        from_mode: Mode::Gfm,
        to_mode: Mode::Gfl,
        sub_guard: SubGuard::Dwell,
        theta_minus: theta,
        omega_minus,
        p_s: outputs.p,
        q_s: outputs.q,
        v_grid_minus: grid.v_mag,
        i_s,
        psi: T::zero(),
        p0_plus: new_params.p_0,
        q0_plus: new_params.q_0,
        r_plus: new_params.r_eff,
        l_plus: new_params.l_eff,
    };
    (x_plus, new_params, record)
}

/// Ablation variant of the forward reset: copies the shared states, zeros the
/// GFM-specific ones, and leaves the droop biases and effective impedance at
/// their defaults.
pub fn reset_gfl_to_gfm_ablated<T: Real>(
    x: &GflState<T>,
    outputs: &AlgebraicOutputs<T>,
    grid: &GridSample<T>,
    params: &InverterParams<T>,
    t_s: T,
    sub_guard: SubGuard,
) -> (GfmState<T>, InverterParams<T>, SwitchRecord<T>) {
    let x_plus = GfmState {
        gamma_d: x.gamma_d,
        gamma_q: x.gamma_q,
        i_d: x.i_d,
        i_q: x.i_q,
        theta: T::zero(),
        xi_d: T::zero(),
        xi_q: T::zero(),
    };
    let i_s = (x.i_d * x.i_d + x.i_q * x.i_q).sqrt();
    let record = SwitchRecord {
        t_s,
        from_mode: Mode::Gfl,
        to_mode: Mode::Gfm,
        sub_guard,
        theta_minus: x.theta_pll,
        omega_minus: outputs.omega,
        p_s: outputs.p,
        q_s: outputs.q,
        v_grid_minus: grid.v_mag,
        i_s,
        psi: T::zero(),
        p0_plus: params.p_0,
        q0_plus: params.q_0,
        r_plus: params.r_eff,
        l_plus: params.l_eff,
    };
    (x_plus, *params, record)
}

/// Applies the reset map of `from_mode` to a raw state vector (including the
/// optional power-filter states, which carry over unchanged). Computes the
/// pre-switch algebraic outputs internally.
pub fn apply_reset_vector<T: Real>(
    from_mode: Mode,
    x: &nalgebra::DVector<T>,
    grid: &GridSample<T>,
    params: &InverterParams<T>,
    t_s: T,
    sub_guard: SubGuard,
    ablated: bool,
) -> crate::error::Result<(nalgebra::DVector<T>, InverterParams<T>, SwitchRecord<T>)> {
    let (_, outputs) = crate::dynamics::mode_field(from_mode, x, grid, params)?;
    let (mut x_plus, params_plus, record) = match from_mode {
        Mode::Gfl => {
            let gfl = GflState::from_slice(x.as_slice());
            let (xp, pp, rec) = if ablated {
                reset_gfl_to_gfm_ablated(&gfl, &outputs, grid, params, t_s, sub_guard)
            } else {
                reset_gfl_to_gfm(&gfl, &outputs, grid, params, t_s, sub_guard)
            };
            (xp.to_vector(), pp, rec)
        }
        Mode::Gfm => {
            let gfm = GfmState::from_slice(x.as_slice());
            let (xp, pp, rec) = reset_gfm_to_gfl(&gfm, &outputs, grid, params, t_s);
            (xp.to_vector(), pp, rec)
        }
    };
    if params.measured_power == MeasuredPower::Filtered {
        let base = from_mode.base_dim();
        let n = x_plus.len();
        x_plus = x_plus.push(x[base]);
        x_plus = x_plus.push(x[base + 1]);
        debug_assert_eq!(x_plus.len(), n + 2);
    }
    Ok((x_plus, params_plus, record))
}

/// Frequency of the active mode at a raw state vector, used by guard checks.
pub fn mode_omega<T: Real>(mode: Mode, x: &[T], grid: &GridSample<T>, params: &InverterParams<T>) -> T {
    match mode {
        Mode::Gfl => gfl_omega(&GflState::from_slice(x), grid, params),
        Mode::Gfm => {
            let s = GfmState::from_slice(x);
            match params.measured_power {
                MeasuredPower::Filtered => params.omega_0 - params.m_p * (x[GfmState::<T>::DIM] - params.p_0),
                MeasuredPower::Instantaneous => {
                    // the droop frequency needs the resolved instantaneous power
                    match eval_gfm(&s, None, grid, params) {
                        Ok((_, _, out)) => out.omega,
                        Err(_) => real(f64::NAN),
                    }
                }
            }
        }
    }
}

/// Mode tag, active parameter values, and dwell bookkeeping threaded through
/// a hybrid execution (simulator or estimator).
#[derive(Debug, Clone)]
pub struct GuardTracker<T: Real> {
    pub mode: Mode,
    pub params: InverterParams<T>,
    /// Instant the reverse-transition conditions started holding.
    pub cond_start: Option<T>,
}

impl<T: Real> GuardTracker<T> {
    pub fn new(mode: Mode, params: InverterParams<T>) -> Self {
        Self { mode, params, cond_start: None }
    }

    pub fn dwell_clock(&self, t: T) -> T {
        self.cond_start.map_or(T::zero(), |s| t - s)
    }

    /// Signed residual of the active mode's guard at `(t, x)`.
    pub fn residual(&self, t: T, x: &nalgebra::DVector<T>, grid: &GridSample<T>) -> (T, SubGuard) {
        match self.mode {
            Mode::Gfl => guard_gfl_to_gfm(&GflState::from_slice(x.as_slice()), grid, &self.params),
            Mode::Gfm => {
                let omega = mode_omega(Mode::Gfm, x.as_slice(), grid, &self.params);
                guard_gfm_to_gfl(omega, grid, &self.params, self.dwell_clock(t))
            }
        }
    }

    fn reentry(&self, x: &nalgebra::DVector<T>, grid: &GridSample<T>) -> T {
        let omega = mode_omega(Mode::Gfm, x.as_slice(), grid, &self.params);
        reentry_residual(omega, grid, &self.params)
    }

    /// Advances the dwell clock across a completed flow segment
    /// `(t0, x0) -> (t1, x1)`. `flow(h)` integrates from the segment anchor,
    /// `sample(t)` reads the grid; a condition flip inside the segment is
    /// located by bisection so the dwell clock starts at the right instant.
    #[allow(clippy::too_many_arguments)]
    pub fn update_dwell<FL, GS>(
        &mut self,
        t0: T,
        x0: &nalgebra::DVector<T>,
        t1: T,
        x1: &nalgebra::DVector<T>,
        flow: &FL,
        sample: &GS,
        max_bisections: usize,
    ) -> crate::error::Result<()>
    where
        FL: Fn(T) -> crate::error::Result<nalgebra::DVector<T>>,
        GS: Fn(T) -> GridSample<T>,
    {
        if self.mode != Mode::Gfm {
            self.cond_start = None;
            return Ok(());
        }
        let holding0 = self.reentry(x0, &sample(t0)) > T::zero();
        let holding1 = self.reentry(x1, &sample(t1)) > T::zero();
        match (holding0, holding1) {
            (true, true) => {
                if self.cond_start.is_none() {
                    self.cond_start = Some(t0);
                }
            }
            (false, true) => {
                // locate the flip instant
                let mut lo = T::zero();
                let mut hi = t1 - t0;
                for _ in 0..max_bisections {
                    let mid = (lo + hi) * real(0.5);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    let xm = flow(mid)?;
                    if self.reentry(&xm, &sample(t0 + mid)) > T::zero() {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                self.cond_start = Some(t0 + hi);
            }
            _ => self.cond_start = None,
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::eval_gfl;
    use approx::assert_relative_eq;

    fn params() -> InverterParams<f64> {
        InverterParams::default()
    }

    fn grid_at(v: f64) -> GridSample<f64> {
        GridSample { v_mag: v, theta: 0.0, omega: params().omega_0, dv_mag_dt: 0.0 }
    }

    #[test]
    fn nominal_point_is_inside_invariant() {
        let p = params();
        let x = GflState::default();
        let (res, _) = guard_gfl_to_gfm(&x, &grid_at(1.0), &p);
        assert!(res < 0.0);
    }

    #[test]
    fn band_edge_is_the_zero_level_set() {
        let p = params();
        let x = GflState::default();
        let (res, sub) = guard_gfl_to_gfm(&x, &grid_at(0.90), &p);
        assert_eq!(res, 0.0);
        assert_eq!(sub, SubGuard::VoltageLow);
    }

    #[test]
    fn frequency_subguard_fires_past_threshold() {
        let p = params();
        // eta_pll puts omega at omega_0 + 2*pi*0.06 with zero PLL error
        let x = GflState { eta_pll: 2.0 * std::f64::consts::PI * 0.06, ..Default::default() };
        let (res, sub) = guard_gfl_to_gfm(&x, &grid_at(1.0), &p);
        assert!(res > 0.0);
        assert_eq!(sub, SubGuard::Frequency);
    }

    #[test]
    fn dwell_guard_triggers_only_at_t_hold() {
        let p = params();
        let g = grid_at(1.0);
        let omega = p.omega_0;
        let (at_hold, _) = guard_gfm_to_gfl(omega, &g, &p, p.t_hold);
        assert!(at_hold >= 0.0);
        let (half, _) = guard_gfm_to_gfl(omega, &g, &p, 0.5 * p.t_hold);
        assert!(half < 0.0);
        // conditions lapsed: residual pinned negative regardless of the clock
        let (lapsed, _) = guard_gfm_to_gfl(omega, &grid_at(0.85), &p, 10.0);
        assert!(lapsed < 0.0);
    }

    #[test]
    fn psi_matches_thresholds() {
        let p = params();
        assert_eq!(virtual_impedance_activation(0.40, &p), 0.0);
        assert_eq!(virtual_impedance_activation(1.20, &p), 1.0);
        // midpoint of the ramp, up to the representation of 0.8 - 0.4
        assert_relative_eq!(virtual_impedance_activation(0.80, &p), 0.5, epsilon = 1e-15);
        assert_eq!(virtual_impedance_activation(0.1, &p), 0.0);
        assert_eq!(virtual_impedance_activation(2.0, &p), 1.0);
    }

    #[test]
    fn psi_is_monotone_and_continuous() {
        let p = params();
        let mut prev = -1.0;
        for k in 0..=240 {
            let i = 0.01 * k as f64;
            let v = virtual_impedance_activation(i, &p);
            assert!(v >= prev);
            prev = v;
        }
        let eps = 1e-9;
        assert!(virtual_impedance_activation(p.i_th + eps, &p) < 1e-8);
        assert!(virtual_impedance_activation(p.i_max - eps, &p) > 1.0 - 1e-8);
    }

    /// A mildly disturbed GFL state with its outputs, for reset tests.
    fn sample_pre_switch(v_grid: f64) -> (GflState<f64>, AlgebraicOutputs<f64>, GridSample<f64>) {
        let p = params();
        let g = grid_at(v_grid);
        let mut x = crate::dynamics::gfl_equilibrium(&grid_at(1.0), &p).unwrap();
        x.eta_pll = -0.02;
        x.i_d += 0.05;
        let (_, _, out) = eval_gfl(&x, None, &g, &p).unwrap();
        (x, out, g)
    }

    #[test]
    fn droop_bias_corrections_vanish_at_nominal() {
        let p = params();
        let (mut x, _, g) = sample_pre_switch(1.0);
        // force omega = omega_0 exactly
        x.eta_pll = -p.k_p_pll * pll_error(x.theta_pll, &g);
        let (_, _, out) = eval_gfl(&x, None, &g, &p).unwrap();
        let mut g0 = g;
        g0.v_mag = p.v_0;
        let (_, _, rec) = reset_gfl_to_gfm(&x, &out, &g0, &p, 0.0, SubGuard::VoltageLow);
        assert_relative_eq!(rec.omega_minus, p.omega_0, epsilon = 1e-12);
        assert_relative_eq!(rec.p0_plus, rec.p_s, epsilon = 1e-12);
        assert_relative_eq!(rec.q0_plus, rec.q_s, epsilon = 1e-12);
    }

    #[test]
    fn droop_bias_direct_substitution() {
        // omega 0.02 rad/s below nominal with m_p = 0.02 shifts p_0 by -1
        let p = params();
        let (mut x, _, g) = sample_pre_switch(0.89);
        x.eta_pll = -p.k_p_pll * pll_error(x.theta_pll, &g) - 0.02;
        let (_, _, out) = eval_gfl(&x, None, &g, &p).unwrap();
        let (_, _, rec) = reset_gfl_to_gfm(&x, &out, &g, &p, 0.0, SubGuard::VoltageLow);
        assert_relative_eq!(rec.omega_minus, p.omega_0 - 0.02, epsilon = 1e-12);
        assert_relative_eq!(rec.p0_plus, rec.p_s - 1.0, epsilon = 1e-10);
    }

    #[test]
    fn forward_reset_is_bumpless() {
        let p = params();
        let (x, out, g) = sample_pre_switch(0.89);
        let (x_plus, p_plus, rec) = reset_gfl_to_gfm(&x, &out, &g, &p, 0.0, SubGuard::VoltageLow);

        // recomputed droop rows reproduce the sampled values exactly
        let omega_chk = p.omega_0 - p.m_p * (rec.p_s - rec.p0_plus);
        let vref_chk = p.v_0 - p.n_q * (rec.q_s - rec.q0_plus);
        assert_relative_eq!(omega_chk, rec.omega_minus, epsilon = 1e-12);
        assert_relative_eq!(vref_chk, rec.v_grid_minus, epsilon = 1e-12);

        // the post-switch algebra reproduces frequency, voltage, and commands
        let (_, _, out_plus) = eval_gfm(&x_plus, None, &g, &p_plus).unwrap();
        assert_relative_eq!(out_plus.omega, out.omega, epsilon = 1e-10);
        assert_relative_eq!(out_plus.v_d, out.v_d, epsilon = 1e-10);
        assert_relative_eq!(out_plus.v_q, out.v_q, epsilon = 1e-10);
        assert_relative_eq!(out_plus.i_d_ref, out.i_d_ref, epsilon = 1e-10);
        assert_relative_eq!(out_plus.i_q_ref, out.i_q_ref, epsilon = 1e-10);
        assert_eq!(x_plus.theta, x.theta_pll);
    }

    #[test]
    fn reverse_reset_preserves_angle_and_frequency() {
        let p0 = params();
        let (x, out, g) = sample_pre_switch(0.89);
        let (x_gfm, p_gfm, _) = reset_gfl_to_gfm(&x, &out, &g, &p0, 0.0, SubGuard::VoltageLow);
        // let the grid recover, then switch back
        let g_back = grid_at(1.0);
        let (_, _, out_gfm) = eval_gfm(&x_gfm, None, &g_back, &p_gfm).unwrap();
        let (x_gfl, p_back, rec) = reset_gfm_to_gfl(&x_gfm, &out_gfm, &g_back, &p_gfm, 1.0);

        let (_, _, out_back) = eval_gfl(&x_gfl, None, &g_back, &p_back).unwrap();
        assert_relative_eq!(out_back.omega, rec.omega_minus, epsilon = 1e-12);
        assert_eq!(x_gfl.theta_pll, x_gfm.theta);
        // current commands seeded to the pre-switch currents
        assert_relative_eq!(out_back.i_d_ref, x_gfm.i_d, epsilon = 1e-10);
        assert_relative_eq!(out_back.i_q_ref, x_gfm.i_q, epsilon = 1e-10);
        // effective impedance back to the GFL filter row
        assert_eq!(p_back.r_eff, p0.r_g);
        assert_eq!(p_back.l_eff, p0.l_g);
    }

    #[test]
    fn nominal_reentry_seeds_zero_pll_integrator() {
        let p = params();
        let g = grid_at(1.0);
        // GFM state whose droop frequency is exactly omega_0 and theta aligned
        let mut pf = p;
        pf.measured_power = MeasuredPower::Filtered;
        let x = GfmState { theta: g.theta, ..Default::default() };
        let (_, _, out) = eval_gfm(&x, Some((pf.p_0, pf.q_0)), &g, &pf).unwrap();
        let (x_gfl, _, _) = reset_gfm_to_gfl(&x, &out, &g, &pf, 0.0);
        assert_relative_eq!(x_gfl.eta_pll, 0.0, epsilon = 1e-12);
    }
}
