//! Scripted exogenous grid voltage driving the scenario.
//!
//! The grid is a phasor timeline: per segment a magnitude and an angular
//! frequency, optionally reached through a linear ramp from the previous
//! segment. The phase angle is integrated analytically, so guard-crossing
//! times of scripted ramps have closed forms the tests can use.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{real, Real};

/// One segment of the grid script. Values ramp linearly from the previous
/// segment's values over `ramp` seconds, then hold.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSegment<T: Real> {
    pub t_start: T,
    /// Voltage magnitude to hold (pu).
    pub v_mag: T,
    /// Angular frequency to hold (rad/s).
    pub omega: T,
    /// Ramp duration from the previous segment's values (s); 0 = step.
    pub ramp: T,
    /// Phase discontinuity added at `t_start` (rad).
    pub phase_jump: T,
}

impl<T: Real> Default for GridSegment<T> {
    fn default() -> Self {
        Self {
            t_start: T::zero(),
            v_mag: T::one(),
            omega: T::two_pi() * real(30.0),
            ramp: T::zero(),
            phase_jump: T::zero(),
        }
    }
}

/// Grid voltage sampled at one instant, in the grid (global) frame.
#[derive(Debug, Clone, Copy)]
pub struct GridSample<T: Real> {
    pub v_mag: T,
    /// Accumulated phase angle (rad), unwrapped.
    pub theta: T,
    pub omega: T,
    /// Slope of the magnitude script (pu/s); nonzero only inside a ramp.
    pub dv_mag_dt: T,
}

/// Piecewise grid-voltage script.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSignal<T: Real> {
    segments: Vec<GridSegment<T>>,
    /// Phase angle at t = 0 (rad).
    #[serde(default)]
    pub theta_0: T,
    /// Phase accumulated up to each segment start (derived).
    #[serde(skip)]
    theta_at_start: Vec<T>,
}

impl<T: Real> GridSignal<T> {
    pub fn new(segments: Vec<GridSegment<T>>, theta_0: T) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Config("grid script needs at least one segment".into()));
        }
        if segments[0].t_start != T::zero() {
            return Err(Error::Config("first grid segment must start at t = 0".into()));
        }
        for w in segments.windows(2) {
            if !(w[1].t_start > w[0].t_start) {
                return Err(Error::Config("grid segments must be ordered in time".into()));
            }
            if w[1].ramp > w[1].t_start - w[0].t_start {
                return Err(Error::Config("grid ramp longer than its segment".into()));
            }
        }
        for s in &segments {
            if s.v_mag < T::zero() {
                return Err(Error::Config("grid |v| must be >= 0".into()));
            }
            if s.ramp < T::zero() {
                return Err(Error::Config("grid ramp must be >= 0".into()));
            }
        }
        let mut sig = Self { segments, theta_0, theta_at_start: Vec::new() };
        sig.rebuild_phase();
        Ok(sig)
    }

    /// Constant grid voltage.
    pub fn constant(v_mag: T, omega: T) -> Self {
        Self::new(
            vec![GridSegment { t_start: T::zero(), v_mag, omega, ramp: T::zero(), phase_jump: T::zero() }],
            T::zero(),
        )
        .expect("constant signal is valid")
    }

    /// Recomputes the accumulated phase at each segment start. Must be called
    /// after deserialization.
    pub fn rebuild_phase(&mut self) {
        let mut acc = self.theta_0;
        self.theta_at_start = Vec::with_capacity(self.segments.len());
        for k in 0..self.segments.len() {
            acc += self.segments[k].phase_jump;
            self.theta_at_start.push(acc);
            if k + 1 < self.segments.len() {
                let span = self.segments[k + 1].t_start - self.segments[k].t_start;
                acc += self.phase_advance(k, span);
            }
        }
    }

    pub fn segments(&self) -> &[GridSegment<T>] {
        &self.segments
    }

    /// Phase advance within segment `k`, `s` seconds past its start.
    fn phase_advance(&self, k: usize, s: T) -> T {
        let seg = self.segments[k];
        let omega_prev = if k == 0 { seg.omega } else { self.segments[k - 1].omega };
        if seg.ramp > T::zero() && s < seg.ramp {
            // omega is linear in s on [0, ramp]
            let slope = (seg.omega - omega_prev) / seg.ramp;
            omega_prev * s + slope * s * s / real(2.0)
        } else if seg.ramp > T::zero() {
            let ramp_part = (omega_prev + seg.omega) / real(2.0) * seg.ramp;
            ramp_part + seg.omega * (s - seg.ramp)
        } else {
            seg.omega * s
        }
    }

    fn segment_index(&self, t: T) -> usize {
        match self.segments.iter().rposition(|s| s.t_start <= t) {
            Some(k) => k,
            None => 0,
        }
    }

    /// Samples the script at time `t`.
    pub fn sample(&self, t: T) -> GridSample<T> {
        let k = self.segment_index(t);
        let seg = self.segments[k];
        let s = t - seg.t_start;
        let (v_prev, omega_prev) = if k == 0 {
            (seg.v_mag, seg.omega)
        } else {
            (self.segments[k - 1].v_mag, self.segments[k - 1].omega)
        };
        let (v_mag, omega, dv) = if seg.ramp > T::zero() && s < seg.ramp {
            let a = s / seg.ramp;
            (
                v_prev + (seg.v_mag - v_prev) * a,
                omega_prev + (seg.omega - omega_prev) * a,
                (seg.v_mag - v_prev) / seg.ramp,
            )
        } else {
            (seg.v_mag, seg.omega, T::zero())
        };
        GridSample { v_mag, theta: self.theta_at_start[k] + self.phase_advance(k, s), omega, dv_mag_dt: dv }
    }
}
