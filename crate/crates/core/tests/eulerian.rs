use bifluid_core::diagnostics as diag;
use bifluid_core::eulerian::{self, PicardConfig, VelocityHistory};
use bifluid_core::grid::{self, interpolate_at, laplacian, mollify, GridSpec, Interp, Point, ScalarField};
use std::f64::consts::PI;

const EPS: f64 = 0.01;

/// `phi = -eps sin(2 pi x1) / (2 pi)`, so `u = (-eps cos(2 pi x1), 0)`.
fn shear_free_potential(g: GridSpec) -> ScalarField {
    ScalarField::from_fn(g, |x| -EPS * (2.0 * PI * x[0]).sin() / (2.0 * PI))
}

/// Fine-step RK4 on a velocity sampled the same way as the integrator
/// (bilinear samples of the spectral gradient, frozen in time).
fn fine_path(hist: &VelocityHistory, y: Point, t0: f64, t1: f64, dt: f64) -> Point {
    let v = |x: Point| hist.velocity(t0, x, Interp::Bilinear);
    let mut x = y;
    for _ in 0..((t1 - t0) / dt).round() as usize {
        let k1 = v(x);
        let k2 = v([x[0] + 0.5 * dt * k1[0], x[1] + 0.5 * dt * k1[1]]);
        let k3 = v([x[0] + 0.5 * dt * k2[0], x[1] + 0.5 * dt * k2[1]]);
        let k4 = v([x[0] + dt * k3[0], x[1] + dt * k3[1]]);
        for c in 0..2 {
            x[c] += dt / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
        }
    }
    x
}

#[test]
fn frozen_field_matches_fine_step_oracle() {
    let g = GridSpec::new(2, 64).unwrap();
    let hist = VelocityHistory::frozen(&shear_free_potential(g), 1e-3, 500);
    let markers: Vec<Point> = (0..16).map(|i| [(i as f64 + 0.3) / 16.0, 0.25 + 0.01 * i as f64]).collect();
    let fm = eulerian::integrate_forward(&hist, &markers, 0.0, 0.5, 100).unwrap();
    let worst = markers
        .iter()
        .zip(fm.final_positions())
        .map(|(&y, x)| {
            let r = fine_path(&hist, y, 0.0, 0.5, 1e-5);
            (r[0] - x[0]).abs().max((r[1] - x[1]).abs())
        })
        .fold(0.0, f64::max);
    assert!(worst < 1e-8, "deviation {worst:e}");
    assert!(fm.jac.iter().flatten().all(|&j| j > 0.0));
}

#[test]
fn forward_then_backward_returns_home() {
    let g = GridSpec::new(2, 64).unwrap();
    let hist = VelocityHistory::frozen(&shear_free_potential(g), 1e-3, 500);
    let nodes = g.nodes();
    let feet = eulerian::integrate_backward(&hist, 0.5, &nodes).unwrap();
    let fm = eulerian::integrate_forward(&hist, &feet, 0.0, 0.5, 500).unwrap();
    let worst = nodes
        .iter()
        .zip(fm.final_positions())
        .map(|(&a, &b)| grid::torus_distance(a, b, 2))
        .fold(0.0, f64::max);
    assert!(worst < 1e-6, "deviation {worst:e}");
}

#[test]
fn two_bump_recovery_solves_the_poisson_problem() {
    let g = GridSpec::new(2, 64).unwrap();
    let bump = |x: Point, c: Point, w: f64| {
        let d = grid::torus_distance(x, c, 2);
        (-d * d / (w * w)).exp()
    };
    let sigma = ScalarField::from_fn(g, |x| bump(x, [0.3, 0.3], 0.1) - 0.7 * bump(x, [0.7, 0.6], 0.15));
    let sigma_delta = mollify(&sigma, 0.05).unwrap();
    let y: Vec<Point> = g
        .nodes()
        .into_iter()
        .map(|x| [x[0] + 0.03 * (2.0 * PI * x[1]).sin(), x[1] - 0.02 * (2.0 * PI * x[0]).cos()])
        .collect();
    let (phi, defect) = eulerian::recover_potential(&sigma_delta, &y, Interp::Bicubic);
    let composed = ScalarField {
        grid: g,
        values: y.iter().map(|&p| interpolate_at(&sigma_delta, p, Interp::Bicubic)).collect(),
    };
    let mean = composed.mean();
    let target = composed.map(|v| v - mean);
    let residual = laplacian(&phi).sup_distance(&target);
    assert!(residual <= 1e-10, "residual {residual:e}");
    assert!((defect - mean.abs()).abs() < 1e-15);
}

#[test]
fn wide_mollifier_converges_quickly_to_rest() {
    let g = GridSpec::new(2, 32).unwrap();
    let steps = 20;
    let sigma: Vec<ScalarField> = (0..=steps)
        .map(|n| ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).cos() * (1.0 + 0.01 * n as f64)))
        .collect();
    let cfg = PicardConfig {
        delta: 1.0,
        ..PicardConfig::default()
    };
    let out = eulerian::picard_solve(&sigma, 1e-3, &cfg).unwrap();
    assert!(out.iterations <= 3, "{} iterations", out.iterations);
    let umax = out.history.u.iter().map(|u| u.sup_norm()).fold(0.0, f64::max);
    assert!(umax < 1e-8, "|u| = {umax:e}");
}

#[test]
fn weights_match_fine_characteristic_quadrature() {
    let g = GridSpec::new(2, 32).unwrap();
    let (dt, steps, theta) = (1e-3, 500, 2.0);
    let hist = VelocityHistory::frozen(&shear_free_potential(g), dt, steps);
    let d = ScalarField::from_fn(g, |x| 1.0 + 0.5 * (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).cos());
    let d_hist = vec![d.clone(); steps + 1];
    let w = diag::solve_weights(&hist, &d_hist, theta, &[0.5]).unwrap();

    // Backward path with a fine RK4 step and Simpson in time for the integral.
    let h = 1e-5f64;
    let v = |x: Point| hist.velocity(0.0, x, Interp::Bilinear);
    let dd = |x: Point| interpolate_at(&d, x, Interp::Bilinear);
    let worst = (0..g.len())
        .step_by(37)
        .map(|i| {
            let mut x = g.node(i);
            let mut acc = 0.0;
            for _ in 0..(0.5 / h).round() as usize {
                let k1 = v(x);
                let m1 = [x[0] - 0.5 * h * k1[0], x[1] - 0.5 * h * k1[1]];
                let k2 = v(m1);
                let m2 = [x[0] - 0.5 * h * k2[0], x[1] - 0.5 * h * k2[1]];
                let k3 = v(m2);
                let e = [x[0] - h * k3[0], x[1] - h * k3[1]];
                let k4 = v(e);
                let next = [
                    x[0] - h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
                    x[1] - h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
                ];
                acc += h / 6.0 * (dd(x) + 2.0 * dd(m1) + 2.0 * dd(m2) + dd(next));
                x = next;
            }
            ((-theta * acc).exp() - w[0].values[i]).abs()
        })
        .fold(0.0, f64::max);
    assert!(worst < 1e-6, "weight deviation {worst:e}");
}

#[test]
fn zero_damping_keeps_unit_weight() {
    let g = GridSpec::new(2, 16).unwrap();
    let hist = VelocityHistory::frozen(&shear_free_potential(g), 1e-2, 10);
    let d_hist = vec![ScalarField::zeros(g); 11];
    let w = diag::solve_weights(&hist, &d_hist, 5.0, &[0.1]).unwrap();
    assert!(w[0].values.iter().all(|&v| v == 1.0));
    let bad = vec![ScalarField::constant(g, -1.0); 11];
    assert!(diag::solve_weights(&hist, &bad, 5.0, &[0.1]).is_err());
}

#[test]
fn uncovered_time_range_is_rejected() {
    let g = GridSpec::new(2, 16).unwrap();
    let hist = VelocityHistory::zeros(g, 1e-2, 10);
    assert!(eulerian::integrate_forward(&hist, &[[0.5, 0.5]], 0.0, 0.2, 1).is_err());
    assert!(eulerian::integrate_backward(&hist, 0.2, &[[0.5, 0.5]]).is_err());
}
