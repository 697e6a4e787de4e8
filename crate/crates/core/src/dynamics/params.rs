//! Physical and control parameters of the switching inverter model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{real, Real};

/// How the measured powers `(p_m, q_m)` that feed the outer/droop loops are
/// obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasuredPower {
    /// `p_m := p`, `q_m := q`. Keeps the published 8/7 state dimensions; the
    /// resulting algebraic loop through the inner-loop voltages is solved
    /// exactly (it is linear in `(v_d, v_q)`).
    #[default]
    Instantaneous,
    /// First-order low-pass states appended to the mode state vector,
    /// `dp_m/dt = omega_f (p - p_m)`.
    Filtered,
}

/// Which power error drives which current command in the GFL outer loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterPairing {
    /// `i_d_ref` from the reactive error, `i_q_ref` from the active error.
    #[default]
    CrossCoupled,
    /// `i_d_ref` from the active error, `i_q_ref` from the reactive error.
    Conventional,
}

/// All constants of the inverter model, plus the handful of values mutated by
/// the reset maps (`p_0`, `q_0`, `r_eff`, `l_eff`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InverterParams<T: Real> {
    /// Filter resistance (pu).
    pub r_f: T,
    /// Filter inductance (pu).
    pub l_f: T,
    /// Grid resistance (pu).
    pub r_g: T,
    /// Grid inductance (pu).
    pub l_g: T,
    /// PLL PI gains.
    pub k_p_pll: T,
    pub k_i_pll: T,
    /// PLL damping gain. Stored for completeness; the PLL law does not use it.
    pub k_pd: T,
    /// Inner current-loop PI gains.
    pub k_p_c: T,
    pub k_i_c: T,
    /// GFL outer-loop PI gains (active / reactive channels).
    pub k_p_p: T,
    pub k_i_p: T,
    pub k_p_q: T,
    pub k_i_q: T,
    /// GFM voltage-loop PI gains.
    pub k_p_v: T,
    pub k_i_v: T,
    /// Active-power droop coefficient (rad/s per pu).
    pub m_p: T,
    /// Reactive-power droop coefficient (pu per pu).
    pub n_q: T,
    /// Nominal voltage reference (pu).
    pub v_0: T,
    /// Virtual resistance / inductance (pu).
    pub r_vi: T,
    pub l_vi: T,
    /// Current thresholds for the virtual-impedance activation (pu).
    pub i_th: T,
    pub i_max: T,
    /// Admissible grid-voltage band (pu).
    pub v_th_lo: T,
    pub v_th_hi: T,
    /// Frequency-deviation threshold (rad/s).
    pub omega_th: T,
    /// Nominal angular frequency (rad/s).
    pub omega_0: T,
    /// Base frequency (rad/s).
    pub omega_b: T,
    /// Dwell time before the GFM -> GFL transition is allowed (s).
    pub t_hold: T,
    /// Power setpoints (pu).
    pub p_ref: T,
    pub q_ref: T,
    /// Droop biases (pu); recomputed by the GFL -> GFM reset map.
    pub p_0: T,
    pub q_0: T,
    /// Effective filter-row impedance; mutated by the reset maps.
    pub r_eff: T,
    pub l_eff: T,
    /// Cutoff of the optional power low-pass (rad/s).
    pub omega_f: T,
    /// Power-measurement variant.
    pub measured_power: MeasuredPower,
    /// Outer-loop pairing variant.
    pub outer_pairing: OuterPairing,
}

impl<T: Real> Default for InverterParams<T> {
    fn default() -> Self {
        let omega_0 = T::two_pi() * real(30.0);
        let r_g = real(0.02);
        let l_g = real(0.01);
        Self {
            r_f: real(1.89),
            l_f: real(0.02),
            r_g,
            l_g,
            k_p_pll: real(0.02),
            k_i_pll: real(0.10),
            k_pd: real(0.10),
            k_p_c: real(1.2),
            k_i_c: real(40.0),
            k_p_p: real(0.2),
            k_i_p: real(20.0),
            k_p_q: real(0.2),
            k_i_q: real(20.0),
            k_p_v: real(1.0),
            k_i_v: real(20.0),
            m_p: real(0.02),
            n_q: real(0.012),
            v_0: real(1.0),
            r_vi: real(0.05),
            l_vi: real(0.05),
            i_th: real(0.40),
            i_max: real(1.20),
            v_th_lo: real(0.90),
            v_th_hi: real(1.10),
            omega_th: T::two_pi() * real(0.05),
            omega_0,
            omega_b: omega_0,
            t_hold: real(0.2),
            p_ref: real(0.25),
            q_ref: real(0.05),
            p_0: real(0.25),
            q_0: real(0.05),
            r_eff: r_g,
            l_eff: l_g,
            omega_f: T::two_pi() * real(10.0),
            measured_power: MeasuredPower::default(),
            outer_pairing: OuterPairing::default(),
        }
    }
}

impl<T: Real> InverterParams<T> {
    /// Checks the structural invariants of the parameter set.
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("r_f", self.r_f),
            ("l_f", self.l_f),
            ("r_g", self.r_g),
            ("l_g", self.l_g),
            ("m_p", self.m_p),
            ("n_q", self.n_q),
            ("l_eff", self.l_eff),
            ("omega_b", self.omega_b),
            ("omega_th", self.omega_th),
            ("t_hold", self.t_hold),
        ];
        for (name, v) in pos {
            if !(v > T::zero()) {
                return Err(Error::Config(format!("{name} must be > 0")));
            }
        }
        if !(self.i_th < self.i_max) {
            return Err(Error::Config("i_th must be < i_max".into()));
        }
        if !(self.v_th_lo < self.v_0 && self.v_0 < self.v_th_hi) {
            return Err(Error::Config("need v_th_lo < v_0 < v_th_hi".into()));
        }
        Ok(())
    }

    /// Restores the effective filter impedance of GFL operation.
    pub fn clear_virtual_impedance(&mut self) {
        self.r_eff = self.r_g;
        self.l_eff = self.l_g;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        InverterParams::<f64>::default().validate().unwrap();
    }

    #[test]
    fn band_order_is_enforced() {
        let mut p = InverterParams::<f64>::default();
        p.v_th_lo = 1.05;
        assert!(p.validate().is_err());
    }

    #[test]
    fn current_thresholds_ordered() {
        let mut p = InverterParams::<f64>::default();
        p.i_max = p.i_th;
        assert!(p.validate().is_err());
    }
}
