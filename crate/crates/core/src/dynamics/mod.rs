//! Continuous-time inverter dynamics.
//!
//! `eval_common` is the filter + inner current loop shared by both control
//! schemes. `eval_gfl` adds the PLL and the outer power loops, `eval_gfm` the
//! droop and voltage loops. With instantaneous power measurement the commanded
//! voltages appear on both sides of the loop equations; that algebraic loop is
//! linear in `(v_d, v_q)` and is solved in closed form, so every evaluation
//! stays an exact, smooth function of the state.

mod grid;
mod params;
mod state;

pub use grid::{GridSample, GridSegment, GridSignal};
pub use params::{InverterParams, MeasuredPower, OuterPairing};
pub use state::{GflState, GfmState, HybridState, Mode};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::scalar::{real, Real};

/// Algebraic quantities produced alongside a field evaluation.
#[derive(Debug, Clone, Copy)]
pub struct AlgebraicOutputs<T: Real> {
    /// Inner-loop commanded voltages (pu).
    pub v_d: T,
    pub v_q: T,
    /// Filter-side voltages; ideal averaged modulation, equal to `(v_d, v_q)`.
    pub v_d_filt: T,
    pub v_q_filt: T,
    /// Current commands (pu).
    pub i_d_ref: T,
    pub i_q_ref: T,
    /// Instantaneous powers (pu).
    pub p: T,
    pub q: T,
    /// Powers seen by the outer/droop loops.
    pub p_m: T,
    pub q_m: T,
    /// Instantaneous frequency (rad/s).
    pub omega: T,
    /// GFM voltage reference; absent in GFL mode.
    pub v_ref: Option<T>,
}

/// Derivatives of the shared block `[gamma_d gamma_q i_d i_q]`.
#[derive(Debug, Clone, Copy)]
pub struct CommonDerivs<T: Real> {
    pub d_gamma_d: T,
    pub d_gamma_q: T,
    pub d_i_d: T,
    pub d_i_q: T,
}

/// Grid voltage rotated into the local dq frame at `frame_angle`.
#[inline]
pub fn local_grid_voltage<T: Real>(grid: &GridSample<T>, frame_angle: T) -> (T, T) {
    let delta = grid.theta - frame_angle;
    (grid.v_mag * delta.cos(), grid.v_mag * delta.sin())
}

fn check_finite<T: Real>(vals: &[T], ctx: &'static str) -> Result<()> {
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(ctx))
    }
}

/// Shared filter and inner current loop.
///
/// The filter row uses the effective impedance `(r_eff, l_eff)`, which equals
/// `(r_g, l_g)` in GFL operation and is replaced by the virtual-impedance
/// composition after a GFL -> GFM reset.
#[allow(clippy::too_many_arguments)]
pub fn eval_common<T: Real>(
    gamma_d: T,
    gamma_q: T,
    i_d: T,
    i_q: T,
    i_d_ref: T,
    i_q_ref: T,
    omega: T,
    grid: &GridSample<T>,
    frame_angle: T,
    params: &InverterParams<T>,
) -> Result<(CommonDerivs<T>, AlgebraicOutputs<T>)> {
    check_finite(
        &[gamma_d, gamma_q, i_d, i_q, i_d_ref, i_q_ref, omega, frame_angle, grid.v_mag, grid.theta],
        "eval_common input",
    )?;

    let (v_grid_d, v_grid_q) = local_grid_voltage(grid, frame_angle);

    let d_gamma_d = params.k_i_c * (i_d_ref - i_d);
    let d_gamma_q = params.k_i_c * (i_q_ref - i_q);

    let v_d = params.k_p_c * (i_d_ref - i_d) + gamma_d + omega * params.l_f * i_q;
    let v_q = params.k_p_c * (i_q_ref - i_q) + gamma_q - omega * params.l_f * i_d;

    let (r, l) = (params.r_eff, params.l_eff);
    let scale = params.omega_b / l;
    let d_i_d = scale * (v_d - v_grid_d - r * i_d + omega * l * i_q);
    let d_i_q = scale * (v_q - v_grid_q - r * i_q - omega * l * i_d);

    let p = v_d * i_d + v_q * i_q;
    let q = v_q * i_d - v_d * i_q;

    let derivs = CommonDerivs { d_gamma_d, d_gamma_q, d_i_d, d_i_q };
    let outputs = AlgebraicOutputs {
        v_d,
        v_q,
        v_d_filt: v_d,
        v_q_filt: v_q,
        i_d_ref,
        i_q_ref,
        p,
        q,
        p_m: p,
        q_m: q,
        omega,
        v_ref: None,
    };
    check_finite(&[d_i_d, d_i_q, p, q], "eval_common output")?;
    Ok((derivs, outputs))
}

/// Linear map from `(p, q)` to the current commands:
/// `i_ref = g0 - gp * p - gq * q` per axis.
struct OuterLoopGains<T> {
    g_d0: T,
    g_dp: T,
    g_dq: T,
    g_q0: T,
    g_qp: T,
    g_qq: T,
}

fn outer_gains<T: Real>(x: &GflState<T>, params: &InverterParams<T>) -> OuterLoopGains<T> {
    match params.outer_pairing {
        OuterPairing::CrossCoupled => OuterLoopGains {
            g_d0: params.k_p_p * params.q_ref + params.k_i_p * x.sigma_q,
            g_dp: T::zero(),
            g_dq: params.k_p_p,
            g_q0: params.k_p_q * params.p_ref + params.k_i_q * x.sigma_p,
            g_qp: params.k_p_q,
            g_qq: T::zero(),
        },
        OuterPairing::Conventional => OuterLoopGains {
            g_d0: params.k_p_p * params.p_ref + params.k_i_p * x.sigma_p,
            g_dp: params.k_p_p,
            g_dq: T::zero(),
            g_q0: params.k_p_q * params.q_ref + params.k_i_q * x.sigma_q,
            g_qp: T::zero(),
            g_qq: params.k_p_q,
        },
    }
}

const DET_FLOOR: f64 = 1e-9;

fn solve2<T: Real>(a11: T, a12: T, a21: T, a22: T, b1: T, b2: T) -> Result<(T, T)> {
    let det = a11 * a22 - a12 * a21;
    if det.abs() < real(DET_FLOOR) {
        return Err(Error::SingularAlgebra { det: det.to_subset().unwrap_or(0.0) });
    }
    Ok(((b1 * a22 - b2 * a12) / det, (b2 * a11 - b1 * a21) / det))
}

/// PLL error signal: grid voltage q-component in the PLL frame.
#[inline]
pub fn pll_error<T: Real>(theta_pll: T, grid: &GridSample<T>) -> T {
    -grid.v_mag * (theta_pll - grid.theta).sin()
}

/// Instantaneous GFL frequency.
#[inline]
pub fn gfl_omega<T: Real>(x: &GflState<T>, grid: &GridSample<T>, params: &InverterParams<T>) -> T {
    params.omega_0 + params.k_p_pll * pll_error(x.theta_pll, grid) + x.eta_pll
}

/// Grid-following vector field. Returns the 8 state derivatives, the optional
/// power-filter derivatives, and the algebraic outputs.
pub fn eval_gfl<T: Real>(
    x: &GflState<T>,
    power_state: Option<(T, T)>,
    grid: &GridSample<T>,
    params: &InverterParams<T>,
) -> Result<(DVector<T>, Option<(T, T)>, AlgebraicOutputs<T>)> {
    let e_pll = pll_error(x.theta_pll, grid);
    let omega = params.omega_0 + params.k_p_pll * e_pll + x.eta_pll;

    let g = outer_gains(x, params);
    let (p_m, q_m, i_d_ref, i_q_ref) = match (params.measured_power, power_state) {
        (MeasuredPower::Filtered, Some((p_m, q_m))) => {
            let i_d_ref = g.g_d0 - g.g_dp * p_m - g.g_dq * q_m;
            let i_q_ref = g.g_q0 - g.g_qp * p_m - g.g_qq * q_m;
            (p_m, q_m, i_d_ref, i_q_ref)
        }
        (MeasuredPower::Filtered, None) => {
            return Err(Error::Config("filtered power measurement needs the two filter states".into()))
        }
        (MeasuredPower::Instantaneous, _) => {
            // Close the loop through (v_d, v_q): with p = v_d i_d + v_q i_q and
            // q = v_q i_d - v_d i_q, the inner-loop equations are linear in v.
            let kp = params.k_p_c;
            let b_d = kp * (g.g_d0 - x.i_d) + x.gamma_d + omega * params.l_f * x.i_q;
            let b_q = kp * (g.g_q0 - x.i_q) + x.gamma_q - omega * params.l_f * x.i_d;
            let a11 = T::one() + kp * (g.g_dp * x.i_d - g.g_dq * x.i_q);
            let a12 = kp * (g.g_dp * x.i_q + g.g_dq * x.i_d);
            let a21 = kp * (g.g_qp * x.i_d - g.g_qq * x.i_q);
            let a22 = T::one() + kp * (g.g_qp * x.i_q + g.g_qq * x.i_d);
            let (v_d, v_q) = solve2(a11, a12, a21, a22, b_d, b_q)?;
            let p = v_d * x.i_d + v_q * x.i_q;
            let q = v_q * x.i_d - v_d * x.i_q;
            let i_d_ref = g.g_d0 - g.g_dp * p - g.g_dq * q;
            let i_q_ref = g.g_q0 - g.g_qp * p - g.g_qq * q;
            (p, q, i_d_ref, i_q_ref)
        }
    };

    let (common, mut out) =
        eval_common(x.gamma_d, x.gamma_q, x.i_d, x.i_q, i_d_ref, i_q_ref, omega, grid, x.theta_pll, params)?;
    out.p_m = p_m;
    out.q_m = q_m;

    let dx = DVector::from_row_slice(&[
        common.d_gamma_d,
        common.d_gamma_q,
        common.d_i_d,
        common.d_i_q,
        params.k_i_pll * e_pll,
        omega,
        params.p_ref - p_m,
        params.q_ref - q_m,
    ]);
    let d_power = power_state.map(|(p_m, q_m)| (params.omega_f * (out.p - p_m), params.omega_f * (out.q - q_m)));
    Ok((dx, d_power, out))
}

/// Grid-forming vector field (droop + voltage loop + common block).
pub fn eval_gfm<T: Real>(
    x: &GfmState<T>,
    power_state: Option<(T, T)>,
    grid: &GridSample<T>,
    params: &InverterParams<T>,
) -> Result<(DVector<T>, Option<(T, T)>, AlgebraicOutputs<T>)> {
    let kappa = params.k_p_c * params.k_p_v;
    let c_d = params.k_p_c * (x.xi_d - x.i_d) + x.gamma_d;
    let c_q = params.k_p_c * (x.xi_q - x.i_q) + x.gamma_q;

    let (v_d, v_q, omega, v_ref, p_m, q_m) = match (params.measured_power, power_state) {
        (MeasuredPower::Filtered, Some((p_m, q_m))) => {
            let omega = params.omega_0 - params.m_p * (p_m - params.p_0);
            let v_ref = params.v_0 - params.n_q * (q_m - params.q_0);
            // only the voltage-loop proportional path remains in the loop
            let one_k = T::one() + kappa;
            let v_d = (kappa * v_ref + c_d + omega * params.l_f * x.i_q) / one_k;
            let v_q = (c_q - omega * params.l_f * x.i_d) / one_k;
            (v_d, v_q, omega, v_ref, p_m, q_m)
        }
        (MeasuredPower::Filtered, None) => {
            return Err(Error::Config("filtered power measurement needs the two filter states".into()))
        }
        (MeasuredPower::Instantaneous, _) => {
            // droop and voltage references depend on (p, q), which are linear
            // in (v_d, v_q); assemble and solve the 2x2 system
            let omega_bias = params.omega_0 + params.m_p * params.p_0;
            let v_bias = params.v_0 + params.n_q * params.q_0;
            let ml = params.m_p * params.l_f;
            let a11 = T::one() + kappa - kappa * params.n_q * x.i_q + ml * x.i_d * x.i_q;
            let a12 = kappa * params.n_q * x.i_d + ml * x.i_q * x.i_q;
            let a21 = -ml * x.i_d * x.i_d;
            let a22 = T::one() + kappa - ml * x.i_d * x.i_q;
            let b_d = kappa * v_bias + c_d + omega_bias * params.l_f * x.i_q;
            let b_q = c_q - omega_bias * params.l_f * x.i_d;
            let (v_d, v_q) = solve2(a11, a12, a21, a22, b_d, b_q)?;
            let p = v_d * x.i_d + v_q * x.i_q;
            let q = v_q * x.i_d - v_d * x.i_q;
            let omega = params.omega_0 - params.m_p * (p - params.p_0);
            let v_ref = params.v_0 - params.n_q * (q - params.q_0);
            (v_d, v_q, omega, v_ref, p, q)
        }
    };

    let i_d_ref = params.k_p_v * (v_ref - v_d) + x.xi_d;
    let i_q_ref = -params.k_p_v * v_q + x.xi_q;

    let (common, mut out) =
        eval_common(x.gamma_d, x.gamma_q, x.i_d, x.i_q, i_d_ref, i_q_ref, omega, grid, x.theta, params)?;
    out.p_m = p_m;
    out.q_m = q_m;
    out.v_ref = Some(v_ref);

    let dx = DVector::from_row_slice(&[
        common.d_gamma_d,
        common.d_gamma_q,
        common.d_i_d,
        common.d_i_q,
        omega,
        params.k_i_v * (v_ref - out.v_d),
        -params.k_i_v * out.v_q,
    ]);
    let d_power = power_state.map(|(p_m, q_m)| (params.omega_f * (out.p - p_m), params.omega_f * (out.q - q_m)));
    Ok((dx, d_power, out))
}

/// Evaluates the active mode's field on a raw state vector (base states plus
/// the optional trailing power-filter pair). Returns the stacked derivative.
pub fn mode_field<T: Real>(
    mode: Mode,
    x: &DVector<T>,
    grid: &GridSample<T>,
    params: &InverterParams<T>,
) -> Result<(DVector<T>, AlgebraicOutputs<T>)> {
    let base = mode.base_dim();
    let want = mode.dim(params);
    if x.len() != want {
        return Err(Error::Config(format!("{mode} state has dim {}, expected {want}", x.len())));
    }
    let power_state = match params.measured_power {
        MeasuredPower::Instantaneous => None,
        MeasuredPower::Filtered => Some((x[base], x[base + 1])),
    };
    let (dx, d_power, out) = match mode {
        Mode::Gfl => eval_gfl(&GflState::from_slice(x.as_slice()), power_state, grid, params)?,
        Mode::Gfm => eval_gfm(&GfmState::from_slice(x.as_slice()), power_state, grid, params)?,
    };
    let mut full = DVector::zeros(want);
    full.rows_mut(0, base).copy_from(&dx);
    if let Some((dp, dq)) = d_power {
        full[base] = dp;
        full[base + 1] = dq;
    }
    Ok((full, out))
}

/// Algebraic outputs of the active mode at a state (no derivatives needed).
pub fn mode_outputs<T: Real>(
    mode: Mode,
    x: &DVector<T>,
    grid: &GridSample<T>,
    params: &InverterParams<T>,
) -> Result<AlgebraicOutputs<T>> {
    mode_field(mode, x, grid, params).map(|(_, out)| out)
}

/// Measurement function: `z = [i_d, i_q, v_d_filt, v_q_filt]`.
pub const MEASUREMENT_DIM: usize = 4;

pub fn measure<T: Real>(
    mode: Mode,
    x: &DVector<T>,
    grid: &GridSample<T>,
    params: &InverterParams<T>,
) -> Result<DVector<T>> {
    let out = mode_outputs(mode, x, grid, params)?;
    Ok(DVector::from_row_slice(&[x[2], x[3], out.v_d_filt, out.v_q_filt]))
}

/// Logistic weight of the GFL field in the smoothed model; exponent clamped
/// against overflow.
pub fn blend_weight<T: Real>(v_mag: T, params: &InverterParams<T>, k_gain: T) -> T {
    let cap: T = real(60.0);
    let arg = (-k_gain * (v_mag - params.v_th_lo)).clamp(-cap, cap);
    T::one() / (T::one() + arg.exp())
}

/// Maps the 8-dim GFL coordinates onto a GFM state: `theta <- theta_pll`,
/// `xi_d <- sigma_p`, `xi_q <- sigma_q`.
pub fn embed_gfm<T: Real>(x: &GflState<T>) -> GfmState<T> {
    GfmState {
        gamma_d: x.gamma_d,
        gamma_q: x.gamma_q,
        i_d: x.i_d,
        i_q: x.i_q,
        theta: x.theta_pll,
        xi_d: x.sigma_p,
        xi_q: x.sigma_q,
    }
}

/// Smooth convex interpolation between the GFL field and the GFM field
/// evaluated on the shared-state embedding. Runs on the 8-dim GFL coordinates;
/// the embedding has no PLL integrator, so the GFM contribution to that row
/// is zero.
pub fn smoothed_field<T: Real>(
    x: &DVector<T>,
    grid: &GridSample<T>,
    params: &InverterParams<T>,
    k_gain: T,
) -> Result<(DVector<T>, AlgebraicOutputs<T>)> {
    if params.measured_power == MeasuredPower::Filtered {
        return Err(Error::Config("smoothed model runs on the 8-dim instantaneous-power coordinates".into()));
    }
    if x.len() != GflState::<T>::DIM {
        return Err(Error::Config(format!("smoothed model state has dim {}, expected 8", x.len())));
    }
    if !(k_gain > T::zero()) {
        return Err(Error::Config("k_gain must be > 0".into()));
    }
    let gfl = GflState::from_slice(x.as_slice());
    let (f_gfl, _, out_gfl) = eval_gfl(&gfl, None, grid, params)?;
    let (f_gfm7, _, out_gfm) = eval_gfm(&embed_gfm(&gfl), None, grid, params)?;
    let f_gfm = DVector::from_row_slice(&[
        f_gfm7[0],
        f_gfm7[1],
        f_gfm7[2],
        f_gfm7[3],
        T::zero(),
        f_gfm7[4],
        f_gfm7[5],
        f_gfm7[6],
    ]);

    let sigma = blend_weight(grid.v_mag, params, k_gain);
    let one_m = T::one() - sigma;
    let dx = &f_gfl * sigma + &f_gfm * one_m;

    let blend = |a: T, b: T| sigma * a + one_m * b;
    let out = AlgebraicOutputs {
        v_d: blend(out_gfl.v_d, out_gfm.v_d),
        v_q: blend(out_gfl.v_q, out_gfm.v_q),
        v_d_filt: blend(out_gfl.v_d_filt, out_gfm.v_d_filt),
        v_q_filt: blend(out_gfl.v_q_filt, out_gfm.v_q_filt),
        i_d_ref: blend(out_gfl.i_d_ref, out_gfm.i_d_ref),
        i_q_ref: blend(out_gfl.i_q_ref, out_gfm.i_q_ref),
        p: blend(out_gfl.p, out_gfm.p),
        q: blend(out_gfl.q, out_gfm.q),
        p_m: blend(out_gfl.p_m, out_gfm.p_m),
        q_m: blend(out_gfl.q_m, out_gfm.q_m),
        omega: blend(out_gfl.omega, out_gfm.omega),
        v_ref: out_gfm.v_ref,
    };
    Ok((dx, out))
}

/// Measurement function of the smoothed model (same blend as the field).
pub fn smoothed_measure<T: Real>(
    x: &DVector<T>,
    grid: &GridSample<T>,
    params: &InverterParams<T>,
    k_gain: T,
) -> Result<DVector<T>> {
    let (_, out) = smoothed_field(x, grid, params, k_gain)?;
    Ok(DVector::from_row_slice(&[x[2], x[3], out.v_d_filt, out.v_q_filt]))
}

/// GFL operating point with the PLL locked to the sampled grid phasor and the
/// powers at their setpoints. Newton iteration on the two current unknowns.
pub fn gfl_equilibrium<T: Real>(grid: &GridSample<T>, params: &InverterParams<T>) -> Result<GflState<T>> {
    let v = grid.v_mag;
    if !(v > T::zero()) {
        return Err(Error::Config("equilibrium needs |v_grid| > 0".into()));
    }
    let omega = grid.omega;
    let (r, l) = (params.r_eff, params.l_eff);
    let wl = omega * l;

    // aligned frame: v_grid = (v, 0); filter rows at zero give
    //   p(i) = v i_d + r |i|^2,  q(i) = wl |i|^2 - v i_q
    let mut i_d = params.p_ref / v;
    let mut i_q = -params.q_ref / v;
    for _ in 0..50 {
        let ii = i_d * i_d + i_q * i_q;
        let f1 = v * i_d + r * ii - params.p_ref;
        let f2 = wl * ii - v * i_q - params.q_ref;
        let two = real::<T>(2.0);
        let (j11, j12) = (v + two * r * i_d, two * r * i_q);
        let (j21, j22) = (two * wl * i_d, two * wl * i_q - v);
        let (dd, dq) = solve2(j11, j12, j21, j22, f1, f2)?;
        i_d -= dd;
        i_q -= dq;
        if dd.abs() + dq.abs() < real(1e-15) {
            break;
        }
    }

    let v_d = v + r * i_d - wl * i_q;
    let v_q = r * i_q + wl * i_d;
    let (sigma_p, sigma_q) = match params.outer_pairing {
        OuterPairing::CrossCoupled => (i_q / params.k_i_q, i_d / params.k_i_p),
        OuterPairing::Conventional => (i_d / params.k_i_p, i_q / params.k_i_q),
    };
    Ok(GflState {
        gamma_d: v_d - omega * params.l_f * i_q,
        gamma_q: v_q + omega * params.l_f * i_d,
        i_d,
        i_q,
        eta_pll: omega - params.omega_0,
        theta_pll: grid.theta,
        sigma_p,
        sigma_q,
    })
}

/// Full state vector (with power-filter states when configured) at the GFL
/// equilibrium.
pub fn gfl_equilibrium_vector<T: Real>(grid: &GridSample<T>, params: &InverterParams<T>) -> Result<DVector<T>> {
    let eq = gfl_equilibrium(grid, params)?;
    let mut x = DVector::zeros(Mode::Gfl.dim(params));
    x.rows_mut(0, GflState::<T>::DIM).copy_from(&eq.to_vector());
    if params.measured_power == MeasuredPower::Filtered {
        x[8] = params.p_ref;
        x[9] = params.q_ref;
    }
    Ok(x)
}
