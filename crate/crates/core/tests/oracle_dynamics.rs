//! Cross-checks of the vector fields against independent re-derivations.
//!
//! The oracle implementations below resolve the instantaneous-power loop in
//! the `(p, q)` unknowns (the library solves in the commanded voltages) and
//! assemble every derivative row directly from the printed control laws, so
//! they share no code path with the library.

use gridmode::dynamics::*;
use nalgebra::{DVector, Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn nominal_grid(p: &InverterParams<f64>) -> GridSample<f64> {
    GridSample { v_mag: 1.0, theta: 0.0, omega: p.omega_0, dv_mag_dt: 0.0 }
}

/// Oracle for the GFL field, cross-coupled pairing, instantaneous powers.
fn oracle_gfl(x: &GflState<f64>, g: &GridSample<f64>, p: &InverterParams<f64>) -> DVector<f64> {
    let e = -g.v_mag * (x.theta_pll - g.theta).sin();
    let omega = p.omega_0 + p.k_p_pll * e + x.eta_pll;

    // solve for (p, q): i_d_ref = c1 - k_p_p q, i_q_ref = c2 - k_p_q p
    let c1 = p.k_p_p * p.q_ref + p.k_i_p * x.sigma_q;
    let c2 = p.k_p_q * p.p_ref + p.k_i_q * x.sigma_p;
    let beta_p = p.k_p_c * p.k_p_p;
    let beta_q = p.k_p_c * p.k_p_q;
    let a_d = p.k_p_c * (c1 - x.i_d) + x.gamma_d + omega * p.l_f * x.i_q;
    let a_q = p.k_p_c * (c2 - x.i_q) + x.gamma_q - omega * p.l_f * x.i_d;
    let m = Matrix2::new(
        1.0 + beta_q * x.i_q,
        beta_p * x.i_d,
        beta_q * x.i_d,
        1.0 - beta_p * x.i_q,
    );
    let rhs = Vector2::new(a_d * x.i_d + a_q * x.i_q, a_q * x.i_d - a_d * x.i_q);
    let pq = m.try_inverse().expect("oracle loop solvable") * rhs;
    let (pw, qw) = (pq[0], pq[1]);

    let i_d_ref = c1 - p.k_p_p * qw;
    let i_q_ref = c2 - p.k_p_q * pw;
    let v_d = p.k_p_c * (i_d_ref - x.i_d) + x.gamma_d + omega * p.l_f * x.i_q;
    let v_q = p.k_p_c * (i_q_ref - x.i_q) + x.gamma_q - omega * p.l_f * x.i_d;

    let v_grid_d = g.v_mag * (g.theta - x.theta_pll).cos();
    let v_grid_q = g.v_mag * (g.theta - x.theta_pll).sin();
    let s = p.omega_b / p.l_eff;
    DVector::from_row_slice(&[
        p.k_i_c * (i_d_ref - x.i_d),
        p.k_i_c * (i_q_ref - x.i_q),
        s * (v_d - v_grid_d - p.r_eff * x.i_d + omega * p.l_eff * x.i_q),
        s * (v_q - v_grid_q - p.r_eff * x.i_q - omega * p.l_eff * x.i_d),
        p.k_i_pll * e,
        omega,
        p.p_ref - pw,
        p.q_ref - qw,
    ])
}

/// Oracle for the GFM field, instantaneous powers.
fn oracle_gfm(x: &GfmState<f64>, g: &GridSample<f64>, p: &InverterParams<f64>) -> DVector<f64> {
    let kappa = p.k_p_c * p.k_p_v;
    let c_d = p.k_p_c * (x.xi_d - x.i_d) + x.gamma_d;
    let c_q = p.k_p_c * (x.xi_q - x.i_q) + x.gamma_q;
    let omega_b = p.omega_0 + p.m_p * p.p_0;
    let v_b = p.v_0 + p.n_q * p.q_0;
    let e_d = kappa * v_b + c_d + omega_b * p.l_f * x.i_q;
    let e_q = c_q - omega_b * p.l_f * x.i_d;

    // (1+kappa) p = E_d i_d + E_q i_q - kappa n_q i_d q
    // (1+kappa - kappa n_q i_q) q - m_p l_f |i|^2 p = E_q i_d - E_d i_q
    let ii = x.i_d * x.i_d + x.i_q * x.i_q;
    let m = Matrix2::new(
        1.0 + kappa,
        kappa * p.n_q * x.i_d,
        -p.m_p * p.l_f * ii,
        1.0 + kappa - kappa * p.n_q * x.i_q,
    );
    let rhs = Vector2::new(e_d * x.i_d + e_q * x.i_q, e_q * x.i_d - e_d * x.i_q);
    let pq = m.try_inverse().expect("oracle loop solvable") * rhs;
    let (pw, qw) = (pq[0], pq[1]);

    let omega = p.omega_0 - p.m_p * (pw - p.p_0);
    let v_ref = p.v_0 - p.n_q * (qw - p.q_0);
    let v_d = (e_d - kappa * p.n_q * qw - p.m_p * p.l_f * x.i_q * pw) / (1.0 + kappa);
    let v_q = (e_q + p.m_p * p.l_f * x.i_d * pw) / (1.0 + kappa);
    let i_d_ref = p.k_p_v * (v_ref - v_d) + x.xi_d;
    let i_q_ref = -p.k_p_v * v_q + x.xi_q;

    let v_grid_d = g.v_mag * (g.theta - x.theta).cos();
    let v_grid_q = g.v_mag * (g.theta - x.theta).sin();
    let s = p.omega_b / p.l_eff;
    DVector::from_row_slice(&[
        p.k_i_c * (i_d_ref - x.i_d),
        p.k_i_c * (i_q_ref - x.i_q),
        s * (v_d - v_grid_d - p.r_eff * x.i_d + omega * p.l_eff * x.i_q),
        s * (v_q - v_grid_q - p.r_eff * x.i_q - omega * p.l_eff * x.i_d),
        omega,
        p.k_i_v * (v_ref - v_d),
        -p.k_i_v * v_q,
    ])
}

/// Mixed absolute/relative bound: rows as large as omega_b/l_g (~2e4) cannot
/// agree beyond machine precision in absolute terms.
fn assert_rows_match(lhs: &DVector<f64>, rhs: &DVector<f64>, tol: f64) {
    assert_eq!(lhs.len(), rhs.len());
    for k in 0..lhs.len() {
        let scale = 1.0f64.max(lhs[k].abs());
        assert!(
            (lhs[k] - rhs[k]).abs() <= tol * scale,
            "row {k}: {} vs {} (scale {scale})",
            lhs[k],
            rhs[k]
        );
    }
}

fn random_gfl(rng: &mut ChaCha12Rng) -> GflState<f64> {
    GflState {
        gamma_d: rng.gen_range(-1.0..1.0),
        gamma_q: rng.gen_range(-1.0..1.0),
        i_d: rng.gen_range(-1.0..1.0),
        i_q: rng.gen_range(-1.0..1.0),
        eta_pll: rng.gen_range(-1.0..1.0),
        theta_pll: rng.gen_range(-1.0..1.0),
        sigma_p: rng.gen_range(-1.0..1.0),
        sigma_q: rng.gen_range(-1.0..1.0),
    }
}

fn random_gfm(rng: &mut ChaCha12Rng) -> GfmState<f64> {
    GfmState {
        gamma_d: rng.gen_range(-1.0..1.0),
        gamma_q: rng.gen_range(-1.0..1.0),
        i_d: rng.gen_range(-1.0..1.0),
        i_q: rng.gen_range(-1.0..1.0),
        theta: rng.gen_range(-1.0..1.0),
        xi_d: rng.gen_range(-1.0..1.0),
        xi_q: rng.gen_range(-1.0..1.0),
    }
}

#[test]
fn gfl_field_matches_independent_oracle() {
    let p = InverterParams::<f64>::default();
    let g = nominal_grid(&p);
    let mut rng = ChaCha12Rng::seed_from_u64(101);
    for _ in 0..200 {
        let x = random_gfl(&mut rng);
        let (dx, _, _) = eval_gfl(&x, None, &g, &p).unwrap();
        let expect = oracle_gfl(&x, &g, &p);
        assert_rows_match(&dx, &expect, 1e-12);
    }
}

#[test]
fn gfm_field_matches_independent_oracle() {
    let p = InverterParams::<f64>::default();
    let g = nominal_grid(&p);
    let mut rng = ChaCha12Rng::seed_from_u64(102);
    for _ in 0..200 {
        let x = random_gfm(&mut rng);
        let (dx, _, _) = eval_gfm(&x, None, &g, &p).unwrap();
        let expect = oracle_gfm(&x, &g, &p);
        assert_rows_match(&dx, &expect, 1e-12);
    }
}

#[test]
fn common_block_matches_direct_transcription() {
    let p = InverterParams::<f64>::default();
    let g = GridSample { v_mag: 0.95, theta: 0.3, omega: p.omega_0, dv_mag_dt: 0.0 };
    let mut rng = ChaCha12Rng::seed_from_u64(103);
    for _ in 0..200 {
        let (gd, gq) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let (i_d, i_q) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let (rd, rq) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let omega = p.omega_0 * rng.gen_range(0.9..1.1);
        let frame = rng.gen_range(-1.0..1.0);
        let (d, out) = eval_common(gd, gq, i_d, i_q, rd, rq, omega, &g, frame, &p).unwrap();

        let v_d = p.k_p_c * (rd - i_d) + gd + omega * p.l_f * i_q;
        let v_q = p.k_p_c * (rq - i_q) + gq - omega * p.l_f * i_d;
        let vgd = g.v_mag * (g.theta - frame).cos();
        let vgq = g.v_mag * (g.theta - frame).sin();
        let s = p.omega_b / p.l_g;
        assert_rows_match(
            &DVector::from_row_slice(&[d.d_gamma_d, d.d_gamma_q, d.d_i_d, d.d_i_q, out.v_d, out.v_q]),
            &DVector::from_row_slice(&[
                p.k_i_c * (rd - i_d),
                p.k_i_c * (rq - i_q),
                s * (v_d - vgd - p.r_g * i_d + omega * p.l_g * i_q),
                s * (v_q - vgq - p.r_g * i_q - omega * p.l_g * i_d),
                v_d,
                v_q,
            ]),
            1e-12,
        );
    }
}

#[test]
fn common_block_is_homogeneous_in_electrical_variables() {
    // scaling (gamma, i, i_ref, v_grid) by c scales the derivative rows by c
    let p = InverterParams::<f64>::default();
    let mut rng = ChaCha12Rng::seed_from_u64(104);
    for _ in 0..100 {
        let g1 = GridSample { v_mag: rng.gen_range(0.1..1.2), theta: 0.2, omega: p.omega_0, dv_mag_dt: 0.0 };
        let (gd, gq) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let (i_d, i_q) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let (rd, rq) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let omega = p.omega_0;
        let c = rng.gen_range(0.2..3.0);

        let (d1, _) = eval_common(gd, gq, i_d, i_q, rd, rq, omega, &g1, 0.1, &p).unwrap();
        let g2 = GridSample { v_mag: c * g1.v_mag, ..g1 };
        let (d2, _) =
            eval_common(c * gd, c * gq, c * i_d, c * i_q, c * rd, c * rq, omega, &g2, 0.1, &p).unwrap();
        for (a, b) in [
            (d1.d_gamma_d, d2.d_gamma_d),
            (d1.d_gamma_q, d2.d_gamma_q),
            (d1.d_i_d, d2.d_i_d),
            (d1.d_i_q, d2.d_i_q),
        ] {
            let scale = 1.0f64.max((c * a).abs());
            assert!((c * a - b).abs() <= 1e-10 * scale, "{} vs {}", c * a, b);
        }
    }
}

#[test]
fn smoothed_field_matches_direct_blend() {
    let p = InverterParams::<f64>::default();
    let k = 100.0;
    // sigma at v = V_th - 0.05 with k = 100 is 1/(1 + e^5)
    let g = GridSample { v_mag: p.v_th_lo - 0.05, theta: 0.0, omega: p.omega_0, dv_mag_dt: 0.0 };
    let sigma_expect = 1.0 / (1.0 + 5.0f64.exp());
    assert!((blend_weight(g.v_mag, &p, k) - sigma_expect).abs() < 1e-15);

    let mut rng = ChaCha12Rng::seed_from_u64(105);
    for _ in 0..100 {
        let x = random_gfl(&mut rng);
        let x8 = x.to_vector();
        let (fc, _) = smoothed_field(&x8, &g, &p, k).unwrap();

        let f_gfl = oracle_gfl(&x, &g, &p);
        let f7 = oracle_gfm(&embed_gfm(&x), &g, &p);
        let f_gfm = DVector::from_row_slice(&[f7[0], f7[1], f7[2], f7[3], 0.0, f7[4], f7[5], f7[6]]);
        let expect = f_gfl * sigma_expect + f_gfm * (1.0 - sigma_expect);
        assert_rows_match(&fc, &expect, 1e-12);
    }
}

#[test]
fn smoothed_field_saturates_to_gfl() {
    let p = InverterParams::<f64>::default();
    let g = GridSample { v_mag: 2.0, theta: 0.0, omega: p.omega_0, dv_mag_dt: 0.0 };
    let x = GflState { i_d: 0.4, i_q: -0.2, gamma_d: 0.3, ..Default::default() };
    let (fc, _) = smoothed_field(&x.to_vector(), &g, &p, 100.0).unwrap();
    let (f_gfl, _, _) = eval_gfl(&x, None, &g, &p).unwrap();
    assert_rows_match(&fc, &f_gfl, 1e-10);
}

#[test]
fn artificial_fixed_point_has_zero_field() {
    // a true equilibrium of every row requires omega = 0: freeze the grid
    // phasor and park the PLL integrator at -omega_0
    let p = InverterParams::<f64>::default();
    let g = GridSample { v_mag: 1.0, theta: 0.0, omega: 0.0, dv_mag_dt: 0.0 };

    // currents solving p(i) = p_ref, q(i) = q_ref at omega = 0:
    //   p = i_d + r |i|^2, q = -i_q  (aligned frame, wl = 0)
    let i_q = -p.q_ref;
    // i_d + r (i_d^2 + i_q^2) = p_ref -> quadratic in i_d
    let r = p.r_g;
    let disc = 1.0 + 4.0 * r * (p.p_ref - r * i_q * i_q);
    let i_d = (-1.0 + disc.sqrt()) / (2.0 * r);
    let v_d = 1.0 + r * i_d;
    let v_q = r * i_q;
    let x = GflState {
        gamma_d: v_d,
        gamma_q: v_q,
        i_d,
        i_q,
        eta_pll: -p.omega_0,
        theta_pll: 0.0,
        sigma_p: i_q / p.k_i_q,
        sigma_q: i_d / p.k_i_p,
    };
    let (dx, _, out) = eval_gfl(&x, None, &g, &p).unwrap();
    assert!(out.omega.abs() < 1e-12);
    for (k, v) in dx.iter().enumerate() {
        assert!(v.abs() < 1e-12, "row {k} residual {v}");
    }

    // a fixed point of the field is a fixed point of the integrator
    let field = |_t: f64, xv: &DVector<f64>| {
        gridmode::dynamics::mode_field(Mode::Gfl, xv, &g, &p).map(|(d, _)| d)
    };
    let x1 = gridmode::sim::step_rk4(&x.to_vector(), 0.0, 1e-3, &field).unwrap();
    assert!((x1 - x.to_vector()).amax() < 1e-12);
}

#[test]
fn filtered_power_variant_tracks_instantaneous_power() {
    // with the low-pass states the dimensions grow by two and p_m -> p
    let mut p = InverterParams::<f64>::default();
    p.measured_power = MeasuredPower::Filtered;
    let g = nominal_grid(&p);
    let x0 = gfl_equilibrium_vector(&g, &p).unwrap();
    assert_eq!(x0.len(), 10);
    // start the filter states off target and integrate
    let mut x = x0.clone();
    x[8] = 0.0;
    x[9] = 0.0;
    let field = |_t: f64, xv: &DVector<f64>| mode_field(Mode::Gfl, xv, &g, &p).map(|(d, _)| d);
    let dt = 1e-5;
    for k in 0..40_000 {
        let t = k as f64 * dt;
        x = gridmode::sim::step_rk4(&x, t, dt, &field).unwrap();
    }
    let (_, out) = mode_field(Mode::Gfl, &x, &g, &p).unwrap();
    // omega_f = 2*pi*10 rad/s settles well within 0.4 s
    assert!((x[8] - out.p).abs() < 1e-3, "p_m={} p={}", x[8], out.p);
    assert!((x[9] - out.q).abs() < 1e-3, "q_m={} q={}", x[9], out.q);
}

#[test]
fn conventional_pairing_also_stabilizes_setpoints() {
    let mut p = InverterParams::<f64>::default();
    p.outer_pairing = OuterPairing::Conventional;
    let g = nominal_grid(&p);
    let eq = gfl_equilibrium(&g, &p).unwrap();
    let (dx, _, out) = eval_gfl(&eq, None, &g, &p).unwrap();
    assert!((out.p_m - p.p_ref).abs() < 1e-12);
    assert!((out.q_m - p.q_ref).abs() < 1e-12);
    for (k, v) in dx.iter().enumerate() {
        if k != 5 {
            assert!(v.abs() < 1e-10, "row {k} residual {v}");
        }
    }
}
