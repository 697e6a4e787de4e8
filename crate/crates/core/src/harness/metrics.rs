//! RMSE and filter-consistency metrics.

use crate::error::{Error, Result};
use crate::estimator::CHI2_4_BAND;

/// Metric channel names, in measurement order.
pub const CHANNELS: [&str; 4] = ["i_d", "i_q", "v_d", "v_q"];

/// Per-channel root-mean-square errors over the whole run and restricted to
/// the union of near-switch windows. `near_switch` is absent when the run had
/// no events.
#[derive(Debug, Clone)]
pub struct RmseSet {
    pub overall: [f64; 4],
    pub near_switch: Option<[f64; 4]>,
}

/// Everything the comparison harness reports.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub hybrid: RmseSet,
    pub continuous: Option<RmseSet>,
    pub nis_coverage_hybrid: f64,
    pub nis_coverage_continuous: Option<f64>,
    /// |t_s(filter) - t_s(truth)| per truth event, hybrid filter.
    pub event_timing_errors: Vec<f64>,
    /// Post-switch peak |i| of the no-reset run over the reset-map run.
    pub peak_current_ratio: Option<f64>,
}

/// RMSE of `estimate - truth` per channel, overall and inside
/// `union_k [t_k - window, t_k + window]`. Both series must share the time
/// grid.
pub fn compute_rmse(
    times: &[f64],
    truth: &[[f64; 4]],
    estimate: &[[f64; 4]],
    event_times: &[f64],
    window: f64,
) -> Result<RmseSet> {
    if times.len() != truth.len() || times.len() != estimate.len() {
        return Err(Error::Config("RMSE inputs must share one time grid".into()));
    }
    if times.is_empty() {
        return Err(Error::Config("RMSE needs at least one sample".into()));
    }
    let mut sum = [0.0; 4];
    let mut sum_near = [0.0; 4];
    let mut n_near = 0usize;
    for ((t, a), b) in times.iter().zip(truth).zip(estimate) {
        let near = event_times.iter().any(|ts| (t - ts).abs() <= window);
        for c in 0..4 {
            let e = estimate_err(a[c], b[c]);
            sum[c] += e;
            if near {
                sum_near[c] += e;
            }
        }
        if near {
            n_near += 1;
        }
    }
    let n = times.len() as f64;
    let overall = std::array::from_fn(|c| (sum[c] / n).sqrt());
    let near_switch = if event_times.is_empty() || n_near == 0 {
        None
    } else {
        Some(std::array::from_fn(|c| (sum_near[c] / n_near as f64).sqrt()))
    };
    Ok(RmseSet { overall, near_switch })
}

#[inline]
fn estimate_err(truth: f64, est: f64) -> f64 {
    let d = est - truth;
    d * d
}

/// Fraction of NIS samples inside the two-sided 95% chi-square(4) band.
pub fn nis_coverage(nis: &[f64]) -> f64 {
    if nis.is_empty() {
        return 0.0;
    }
    let (lo, hi) = CHI2_4_BAND;
    let inside = nis.iter().filter(|v| **v >= lo && **v <= hi).count();
    inside as f64 / nis.len() as f64
}

/// Pairs each truth event with the nearest filter event in the same
/// direction and returns the absolute timing errors.
pub fn event_timing_errors(truth_events: &[(f64, bool)], filter_events: &[(f64, bool)]) -> Vec<f64> {
    truth_events
        .iter()
        .filter_map(|(ts, fwd)| {
            filter_events
                .iter()
                .filter(|(_, f)| f == fwd)
                .map(|(tf, _)| (tf - ts).abs())
                .min_by(|a, b| a.partial_cmp(b).unwrap())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn perfect_estimate_has_zero_rmse() {
        let times = [0.0, 0.1, 0.2];
        let truth = [[1.0, 2.0, 3.0, 4.0]; 3];
        let r = compute_rmse(&times, &truth, &truth, &[0.1], 0.05).unwrap();
        assert_eq!(r.overall, [0.0; 4]);
        assert_eq!(r.near_switch.unwrap(), [0.0; 4]);
    }

    #[test]
    fn constant_offset_is_the_rmse() {
        let times: Vec<f64> = (0..10).map(|k| k as f64 * 0.1).collect();
        let truth: Vec<[f64; 4]> = times.iter().map(|_| [0.0; 4]).collect();
        let est: Vec<[f64; 4]> = times.iter().map(|_| [0.1, 0.0, 0.0, 0.0]).collect();
        let r = compute_rmse(&times, &truth, &est, &[], 0.05).unwrap();
        assert_relative_eq!(r.overall[0], 0.1, epsilon = 1e-15);
        assert_eq!(r.overall[1], 0.0);
        assert!(r.near_switch.is_none());
    }

    #[test]
    fn hand_computed_ten_sample_series() {
        // errors on channel 0: 3 inside the window, 4 outside
        let times: Vec<f64> = (0..10).map(|k| k as f64).collect();
        let truth: Vec<[f64; 4]> = times.iter().map(|_| [0.0; 4]).collect();
        let mut est = vec![[0.0; 4]; 10];
        // window [4, 6] around the event at t = 5 holds samples 4, 5, 6
        est[4][0] = 3.0;
        est[5][0] = 4.0;
        est[6][0] = 5.0;
        est[0][0] = 1.0;
        est[9][0] = 2.0;
        let r = compute_rmse(&times, &truth, &est, &[5.0], 1.0).unwrap();
        // overall: sqrt((9 + 16 + 25 + 1 + 4) / 10) = sqrt(5.5)
        assert_relative_eq!(r.overall[0], 5.5f64.sqrt(), epsilon = 1e-12);
        // near-switch: sqrt((9 + 16 + 25) / 3) = sqrt(50/3)
        assert_relative_eq!(r.near_switch.unwrap()[0], (50.0f64 / 3.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn coverage_counts_the_band() {
        let vals = [0.5, 1.0, 11.0, 12.0, 0.4];
        assert_relative_eq!(nis_coverage(&vals), 3.0 / 5.0, epsilon = 1e-15);
    }

    #[test]
    fn timing_errors_match_directions() {
        let truth = [(1.0, true), (2.0, false)];
        let filt = [(1.01, true), (2.05, false), (0.5, true)];
        let errs = event_timing_errors(&truth, &filt);
        assert_relative_eq!(errs[0], 0.01, epsilon = 1e-12);
        assert_relative_eq!(errs[1], 0.05, epsilon = 1e-12);
    }
}
