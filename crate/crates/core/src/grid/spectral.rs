//! FFT-based calculus on the torus.
//!
//! Odd-order derivative multipliers drop the Nyquist mode so that real
//! fields stay real; the Laplacian and the Poisson inverse keep it.

use super::{GridSpec, ScalarField, VectorField};
use crate::error::{Error, Result};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use std::cell::RefCell;
use std::f64::consts::PI;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn transpose(data: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            data.swap(i * n + j, j * n + i);
        }
    }
}

fn transform(data: &mut [Complex64], grid: GridSpec, inverse: bool) {
    let n = grid.n;
    let fft = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    });
    fft.process(data);
    if grid.d == 2 {
        transpose(data, n);
        fft.process(data);
        transpose(data, n);
    }
}

fn forward(f: &ScalarField) -> Vec<Complex64> {
    let mut data: Vec<Complex64> = f.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform(&mut data, f.grid, false);
    data
}

fn inverse(mut data: Vec<Complex64>, grid: GridSpec) -> ScalarField {
    transform(&mut data, grid, true);
    let scale = 1.0 / grid.len() as f64;
    ScalarField {
        grid,
        values: data.into_iter().map(|c| c.re * scale).collect(),
    }
}

/// Signed wavenumber of a DFT index.
#[inline]
fn wavenumber(i: usize, n: usize) -> f64 {
    if i <= n / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

/// Wavenumber vector of a flat spectral index, with a Nyquist flag per axis.
fn mode(grid: GridSpec, idx: usize) -> ([f64; 2], [bool; 2]) {
    let [i, j] = grid.multi_index(idx);
    let n = grid.n;
    let k = [wavenumber(i, n), if grid.d == 2 { wavenumber(j, n) } else { 0.0 }];
    let nyq = [i == n / 2, grid.d == 2 && j == n / 2];
    (k, nyq)
}

fn apply(spec: &[Complex64], grid: GridSpec, m: impl Fn([f64; 2], [bool; 2]) -> Complex64) -> Vec<Complex64> {
    spec.iter()
        .enumerate()
        .map(|(idx, &c)| {
            let (k, nyq) = mode(grid, idx);
            c * m(k, nyq)
        })
        .collect()
}

fn derivative_multiplier(axis: usize) -> impl Fn([f64; 2], [bool; 2]) -> Complex64 {
    move |k, nyq| {
        if nyq[axis] {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(0.0, 2.0 * PI * k[axis])
        }
    }
}

pub fn grad(f: &ScalarField) -> VectorField {
    let spec = forward(f);
    let components = (0..f.grid.d)
        .map(|a| inverse(apply(&spec, f.grid, derivative_multiplier(a)), f.grid))
        .collect();
    VectorField {
        grid: f.grid,
        components,
    }
}

pub fn div(v: &VectorField) -> ScalarField {
    let grid = v.grid;
    let mut acc = vec![Complex64::new(0.0, 0.0); grid.len()];
    for (a, c) in v.components.iter().enumerate() {
        let d = apply(&forward(c), grid, derivative_multiplier(a));
        for (s, x) in acc.iter_mut().zip(d) {
            *s += x;
        }
    }
    inverse(acc, grid)
}

/// `d x d` matrix of first derivatives, entry `[a * d + b] = d_a v_b`.
pub fn gradient_matrix(v: &VectorField) -> Vec<ScalarField> {
    let grid = v.grid;
    let specs: Vec<Vec<Complex64>> = v.components.iter().map(forward).collect();
    let mut out = Vec::with_capacity(grid.d * grid.d);
    for a in 0..grid.d {
        for spec in &specs {
            out.push(inverse(apply(spec, grid, derivative_multiplier(a)), grid));
        }
    }
    out
}

/// Scalar curl `d_0 v_1 - d_1 v_0`; identically zero in one dimension.
pub fn curl(v: &VectorField) -> ScalarField {
    let grid = v.grid;
    if grid.d == 1 {
        return ScalarField::zeros(grid);
    }
    let a = apply(&forward(&v.components[1]), grid, derivative_multiplier(0));
    let b = apply(&forward(&v.components[0]), grid, derivative_multiplier(1));
    inverse(a.into_iter().zip(b).map(|(x, y)| x - y).collect(), grid)
}

fn k2(k: [f64; 2]) -> f64 {
    4.0 * PI * PI * (k[0] * k[0] + k[1] * k[1])
}

pub fn laplacian(f: &ScalarField) -> ScalarField {
    let spec = forward(f);
    inverse(apply(&spec, f.grid, |k, _| Complex64::new(-k2(k), 0.0)), f.grid)
}

/// Zero-mean potential `phi` with `laplacian(phi) = f - mean(f)`.
pub fn poisson_solve(f: &ScalarField) -> ScalarField {
    let spec = forward(f);
    inverse(
        apply(&spec, f.grid, |k, _| {
            let s = k2(k);
            if s == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(-1.0 / s, 0.0)
            }
        }),
        f.grid,
    )
}

/// Per-axis multiplier of the sampled, normalized periodic Gaussian of
/// width `delta`. For `delta` well above the grid spacing this agrees with
/// `exp(-delta^2 (2 pi k)^2 / 2)` to roundoff.
pub fn mollifier_multiplier(n: usize, delta: f64) -> Vec<f64> {
    let h = 1.0 / n as f64;
    let images = (8.0 * delta).ceil() as i64 + 1;
    let mut kernel: Vec<f64> = (0..n)
        .map(|j| {
            let x = wavenumber(j, n) * h;
            (-images..=images)
                .map(|m| {
                    let y = x + m as f64;
                    (-(y * y) / (2.0 * delta * delta)).exp()
                })
                .sum()
        })
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|v| *v /= total);
    // The kernel is even, so its transform is real.
    let mut out: Vec<f64> = (0..n)
        .map(|k| {
            kernel
                .iter()
                .enumerate()
                .map(|(j, &g)| g * (2.0 * PI * (k * j % n) as f64 / n as f64).cos())
                .sum()
        })
        .collect();
    out[0] = 1.0;
    out
}

/// Convolution with a normalized periodic Gaussian of width `delta`.
pub fn mollify(f: &ScalarField, delta: f64) -> Result<ScalarField> {
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::domain(format!("mollifier width must be >= 0, got {delta}")));
    }
    if delta == 0.0 {
        return Ok(f.clone());
    }
    let grid = f.grid;
    let m = mollifier_multiplier(grid.n, delta);
    let spec = forward(f);
    let out = spec
        .iter()
        .enumerate()
        .map(|(idx, &c)| {
            let [i, j] = grid.multi_index(idx);
            let w = if grid.d == 2 { m[i] * m[j] } else { m[i] };
            c * w
        })
        .collect();
    Ok(inverse(out, grid))
}

/// Keeps the modes with `max(|k_1|, |k_2|) <= cutoff`.
pub fn low_pass(f: &ScalarField, cutoff: usize) -> ScalarField {
    let spec = forward(f);
    let c = cutoff as f64;
    inverse(
        apply(&spec, f.grid, |k, _| {
            if k[0].abs().max(k[1].abs()) <= c {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        }),
        f.grid,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn g2(n: usize) -> GridSpec {
        GridSpec::new(2, n).unwrap()
    }

    fn band_limited(grid: GridSpec, seed: u64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let modes: Vec<(f64, f64, f64, f64)> = (0..6)
            .map(|_| {
                (
                    rng.gen_range(-5..=5) as f64,
                    rng.gen_range(-5..=5) as f64,
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(0.0..6.28),
                )
            })
            .collect();
        ScalarField::from_fn(grid, |x| {
            modes
                .iter()
                .map(|&(a, b, c, ph)| c * (2.0 * PI * (a * x[0] + b * x[1]) + ph).cos())
                .sum()
        })
    }

    #[test]
    fn grad_of_constant_is_zero() {
        let g = grad(&ScalarField::constant(g2(16), 3.0));
        assert!(g.sup_norm() < 1e-14);
    }

    #[test]
    fn div_grad_single_mode() {
        let grid = g2(32);
        let f = ScalarField::from_fn(grid, |x| (2.0 * PI * x[0]).sin());
        let lap = div(&grad(&f));
        let expect = f.map(|v| -4.0 * PI * PI * v);
        assert!(lap.sup_distance(&expect) < 1e-10);
    }

    #[test]
    fn div_grad_equals_laplacian() {
        for grid in [g2(32), GridSpec::new(1, 64).unwrap()] {
            let f = band_limited(grid, 3);
            assert!(div(&grad(&f)).sup_distance(&laplacian(&f)) < 1e-12 * 1e3);
        }
    }

    #[test]
    fn poisson_single_mode_and_zero() {
        let grid = g2(16);
        let f = ScalarField::from_fn(grid, |x| (2.0 * PI * x[0]).sin());
        let phi = poisson_solve(&f);
        let expect = f.map(|v| -v / (4.0 * PI * PI));
        assert!(phi.sup_distance(&expect) < 1e-14);
        assert!(poisson_solve(&ScalarField::zeros(grid)).max_abs() == 0.0);
    }

    #[test]
    fn poisson_residual() {
        let grid = g2(32);
        let f = band_limited(grid, 9);
        let f0 = f.map(|v| v - f.mean());
        let phi = poisson_solve(&f);
        assert!(laplacian(&phi).sup_distance(&f0) < 1e-10);
        assert!(phi.mean().abs() < 1e-15);
    }

    #[test]
    fn gradient_structure() {
        let grid = g2(32);
        let u = grad(&band_limited(grid, 11));
        for c in &u.components {
            assert!(c.mean().abs() < 1e-14);
        }
        // Roundoff scales with the size of the derivatives.
        let scale = gradient_matrix(&u).iter().fold(0.0f64, |m, f| m.max(f.max_abs()));
        let c = curl(&u).max_abs();
        assert!(c < 1e-15 * scale.max(1.0), "curl {c:e} at scale {scale:e}");
    }

    #[test]
    fn mollify_single_mode_factor() {
        let grid = GridSpec::new(1, 64).unwrap();
        let f = ScalarField::from_fn(grid, |x| (2.0 * PI * x[0]).sin());
        let m = mollify(&f, 0.1).unwrap();
        let factor = (-0.01 * 4.0 * PI * PI / 2.0f64).exp();
        assert!((factor - 0.820_868_717_4).abs() < 1e-10);
        assert!(m.sup_distance(&f.map(|v| v * factor)) < 1e-14);
    }

    #[test]
    fn mollify_matches_direct_quadrature() {
        // Direct periodic convolution with the continuous Gaussian.
        let grid = GridSpec::new(1, 64).unwrap();
        let delta = 0.05;
        let f = ScalarField::from_fn(grid, |x| (2.0 * PI * x[0]).sin() + 0.3 * (6.0 * PI * x[0]).cos());
        let m = mollify(&f, delta).unwrap();
        let n = 4000;
        for idx in [0usize, 7, 33] {
            let x = grid.node(idx)[0];
            let mut acc = 0.0;
            for s in 0..n {
                let y = (s as f64 + 0.5) / n as f64 - 0.5;
                let w = (-(y * y) / (2.0 * delta * delta)).exp() / (delta * (2.0 * PI).sqrt());
                let fx = (2.0 * PI * (x - y)).sin() + 0.3 * (6.0 * PI * (x - y)).cos();
                acc += w * fx / n as f64;
            }
            assert!((acc - m.values[idx]).abs() < 1e-9, "{acc} vs {}", m.values[idx]);
        }
    }

    #[test]
    fn mollify_properties() {
        let grid = g2(16);
        let f = band_limited(grid, 5);
        assert_eq!(mollify(&f, 0.0).unwrap(), f);
        assert!(mollify(&f, -1.0).is_err());
        let c = mollify(&ScalarField::constant(grid, 2.0), 0.3).unwrap();
        assert!(c.values.iter().all(|v| (v - 2.0).abs() < 1e-14));
        for delta in [0.01, 0.05, 0.2] {
            let m = mollify(&f, delta).unwrap();
            assert!((m.mean() - f.mean()).abs() < 1e-14);
            assert!(m.max() <= f.max() + 1e-12 && m.min() >= f.min() - 1e-12);
        }
    }
}
