use bifluid_core::lagrangian::{self, LagrangianState, WindowConfig};
use bifluid_core::ModelParams;

/// Closure root for gamma = 1/2 in closed form: `sqrt(Z)` solves
/// `s^2 - Q s - R = 0`.
fn z_half(r: f64, q: f64) -> f64 {
    let s = 0.5 * (q + (q * q + 4.0 * r).sqrt());
    s * s
}

/// Classical RK4 on the two-marker system with state (r1, r2, q1, q2, c1, c2).
fn two_marker_reference(t_end: f64, dt: f64) -> [f64; 6] {
    let rhs = |y: &[f64; 6]| -> [f64; 6] {
        let p: Vec<f64> = (0..2).map(|i| z_half(y[i], y[2 + i]).powf(1.5)).collect();
        let avg = 0.5 * (p[0] * y[4].exp() + p[1] * y[5].exp());
        let s = [p[0] - avg, p[1] - avg];
        [-y[0] * s[0], -y[1] * s[1], -y[2] * s[0], -y[3] * s[1], s[0], s[1]]
    };
    let mut y = [1.0, 2.0, 1.0, 1.0, 0.0, 0.0];
    let steps = (t_end / dt).round() as usize;
    for _ in 0..steps {
        let k1 = rhs(&y);
        let y2: [f64; 6] = std::array::from_fn(|i| y[i] + 0.5 * dt * k1[i]);
        let k2 = rhs(&y2);
        let y3: [f64; 6] = std::array::from_fn(|i| y[i] + 0.5 * dt * k2[i]);
        let k3 = rhs(&y3);
        let y4: [f64; 6] = std::array::from_fn(|i| y[i] + dt * k3[i]);
        let k4 = rhs(&y4);
        y = std::array::from_fn(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    }
    y
}

#[test]
fn two_marker_matches_fine_rk4() {
    let p = ModelParams::new(1.5, 3.0, 1.0, 1.0, 1.0, 10.0).unwrap();
    let s0 = LagrangianState::new(vec![1.0, 2.0], vec![1.0, 1.0], &p).unwrap();
    let run = lagrangian::run(&s0, 0.1, &[], &p, &WindowConfig::default()).unwrap();
    let end = run.outputs.last().unwrap();
    let reference = two_marker_reference(0.1, 1e-5);
    let err = (0..2)
        .map(|i| {
            (end.r[i] - reference[i])
                .abs()
                .max((end.q[i] - reference[2 + i]).abs())
                .max((end.cum_sigma[i] - reference[4 + i]).abs())
        })
        .fold(0.0, f64::max);
    println!("two-marker error {err:e}, ratio {}", run.max_contraction_ratio());
    assert!(err < 1e-6, "error {err:e}");
}

#[test]
fn mass_is_conserved_exactly() {
    let p = ModelParams::new(1.5, 3.0, 1.0, 1.0, 1.0, 10.0).unwrap();
    let n = 64;
    let r0: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * (6.283 * i as f64 / n as f64).cos()).collect();
    let q0: Vec<f64> = (0..n).map(|i| 0.8 + 0.3 * (6.283 * i as f64 / n as f64).sin()).collect();
    let s0 = LagrangianState::new(r0, q0, &p).unwrap();
    let (m_r, m_q) = (s0.mass_r(), s0.mass_q());
    let run = lagrangian::run(&s0, 0.3, &[0.1, 0.2], &p, &WindowConfig::default()).unwrap();
    for st in &run.outputs {
        assert!((st.mass_r() - m_r).abs() <= 1e-12 * m_r);
        assert!((st.mass_q() - m_q).abs() <= 1e-12 * m_q);
    }
}

#[test]
fn forced_large_window_halves_and_succeeds() {
    let p = ModelParams::new(1.5, 3.0, 1.0, 1.0, 0.2, 10.0).unwrap();
    let s0 = LagrangianState::new(vec![0.5, 1.5, 1.0], vec![0.5, 1.0, 2.0], &p).unwrap();
    let cfg = WindowConfig {
        tau: 0.1,
        ..WindowConfig::default()
    };
    let run = lagrangian::run(&s0, 0.2, &[], &p, &cfg).unwrap();
    assert!(run.stats.iter().any(|s| s.halvings > 0));
    assert!(run.max_contraction_ratio() < cfg.contraction_target);
}
