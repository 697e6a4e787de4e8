//! CSV emission. All numeric cells carry 17 significant digits so runs are
//! byte-reproducible and exactly re-parsable.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;
use crate::estimator::BeliefRecord;
use crate::harness::metrics::{MetricsReport, CHANNELS};
use crate::hybrid::SwitchRecord;
use crate::sim::Trajectory;

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// `truth.csv`: one row per stored sample.
pub fn write_truth(path: &Path, traj: &Trajectory<f64>) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "t,mode,theta,omega,i_d,i_q,v_d,v_q,p,q,dwell")?;
    for s in &traj.samples {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            fmt(s.t),
            s.mode,
            fmt(match s.mode {
                crate::dynamics::Mode::Gfl => s.x[5],
                crate::dynamics::Mode::Gfm => s.x[4],
            }),
            fmt(s.outputs.omega),
            fmt(s.x[2]),
            fmt(s.x[3]),
            fmt(s.outputs.v_d),
            fmt(s.outputs.v_q),
            fmt(s.outputs.p),
            fmt(s.outputs.q),
            fmt(s.dwell_clock),
        )?;
    }
    Ok(())
}

/// `meas.csv`: noisy measurement channels.
pub fn write_measurements(path: &Path, meas: &[(f64, nalgebra::DVector<f64>)]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "t,z_i_d,z_i_q,z_v_d,z_v_q")?;
    for (t, z) in meas {
        writeln!(w, "{},{},{},{},{}", fmt(*t), fmt(z[0]), fmt(z[1]), fmt(z[2]), fmt(z[3]))?;
    }
    Ok(())
}

/// `est_*.csv`: one row per correction.
pub fn write_estimates(path: &Path, records: &[BeliefRecord<f64>]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "t,mode,theta,omega,i_d,i_q,v_d,v_q,p,q,nis,trace_p")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            fmt(r.t),
            r.mode,
            fmt(r.theta),
            fmt(r.omega),
            fmt(r.channels[0]),
            fmt(r.channels[1]),
            fmt(r.channels[2]),
            fmt(r.channels[3]),
            fmt(r.p),
            fmt(r.q),
            fmt(r.nis),
            fmt(r.trace_p),
        )?;
    }
    Ok(())
}

/// `events.csv`: the switch log.
pub fn write_events(path: &Path, events: &[SwitchRecord<f64>]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(
        w,
        "t_s,from_mode,to_mode,sub_guard,theta_minus,omega_minus,p_s,q_s,v_grid_minus,i_s,psi,p0_plus,q0_plus,r_plus,l_plus"
    )?;
    for e in events {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            fmt(e.t_s),
            e.from_mode,
            e.to_mode,
            e.sub_guard,
            fmt(e.theta_minus),
            fmt(e.omega_minus),
            fmt(e.p_s),
            fmt(e.q_s),
            fmt(e.v_grid_minus),
            fmt(e.i_s),
            fmt(e.psi),
            fmt(e.p0_plus),
            fmt(e.q0_plus),
            fmt(e.r_plus),
            fmt(e.l_plus),
        )?;
    }
    Ok(())
}

/// `metrics.csv`: long format, `estimator,metric,channel,value`. Absent
/// values (no events, no continuous baseline) leave the cell empty.
pub fn write_metrics(path: &Path, m: &MetricsReport) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "estimator,metric,channel,value")?;
    let rmse_rows = |w: &mut BufWriter<File>, name: &str, set: &crate::harness::metrics::RmseSet| -> Result<()> {
        for (c, ch) in CHANNELS.iter().enumerate() {
            writeln!(w, "{name},rmse_overall,{ch},{}", fmt(set.overall[c]))?;
        }
        for (c, ch) in CHANNELS.iter().enumerate() {
            match &set.near_switch {
                Some(ns) => writeln!(w, "{name},rmse_near_switch,{ch},{}", fmt(ns[c]))?,
                None => writeln!(w, "{name},rmse_near_switch,{ch},")?,
            }
        }
        Ok(())
    };
    rmse_rows(&mut w, "hybrid", &m.hybrid)?;
    if let Some(c) = &m.continuous {
        rmse_rows(&mut w, "continuous", c)?;
    }
    writeln!(w, "hybrid,nis_coverage,,{}", fmt(m.nis_coverage_hybrid))?;
    if let Some(c) = m.nis_coverage_continuous {
        writeln!(w, "continuous,nis_coverage,,{}", fmt(c))?;
    }
    for (k, e) in m.event_timing_errors.iter().enumerate() {
        writeln!(w, "hybrid,event_timing_error_{k},,{}", fmt(*e))?;
    }
    if let Some(r) = m.peak_current_ratio {
        writeln!(w, "truth,peak_current_ratio,,{}", fmt(r))?;
    }
    Ok(())
}
