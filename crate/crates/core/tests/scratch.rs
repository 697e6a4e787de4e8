use gridmode::dynamics::*;
use nalgebra::{DMatrix, DVector};

#[test]
fn probe_filtered_spectrum() {
    let mut p = InverterParams::<f64>::default();
    p.measured_power = MeasuredPower::Filtered;
    let g = GridSample { v_mag: 1.0, theta: 0.0, omega: p.omega_0, dv_mag_dt: 0.0 };
    let x0 = gfl_equilibrium_vector(&g, &p).unwrap();
    let n = x0.len();
    let h = 1e-6;
    let mut j = DMatrix::zeros(n, n);
    for c in 0..n {
        let mut xp = x0.clone(); xp[c] += h;
        let mut xm = x0.clone(); xm[c] -= h;
        let fp = mode_field(Mode::Gfl, &xp, &g, &p).unwrap().0;
        let fm = mode_field(Mode::Gfl, &xm, &g, &p).unwrap().0;
        j.set_column(c, &((fp - fm) / (2.0 * h)));
    }
    let eig = j.complex_eigenvalues();
    let mut evs: Vec<_> = eig.iter().map(|c| (c.re, c.im)).collect();
    evs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    for (re, im) in &evs { println!("  {re:14.4} {im:+14.4} i"); }

    // cross-check: propagate the linearized system and compare with the
    // nonlinear deviation growth for a small perturbation
    let mut dx = DVector::zeros(n);
    dx[8] = -1e-6;
    let mut x = x0.clone();
    x[8] -= 1e-6;
    let field = |_t: f64, xv: &DVector<f64>| mode_field(Mode::Gfl, xv, &g, &p).map(|(d, _)| d);
    let lin = |_t: f64, dv: &DVector<f64>| Ok(&j * dv);
    let dt = 1e-5;
    for k in 0..20_000 {
        let t = k as f64 * dt;
        x = gridmode::sim::step_rk4(&x, t, dt, &field).unwrap();
        dx = gridmode::sim::step_rk4(&dx, t, dt, &lin).unwrap();
        if k % 5_000 == 4999 {
            let nonlin = ((x[2]-x0[2]).powi(2) + (x[3]-x0[3]).powi(2)).sqrt();
            let linear = (dx[2]*dx[2] + dx[3]*dx[3]).sqrt();
            println!("t={:.2}: |di| nonlinear={:.3e} linearized={:.3e}", t, nonlin, linear);
        }
    }
}
