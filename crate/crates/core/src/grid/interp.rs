use super::{wrap, Point, ScalarField};
use crate::error::{Error, Result};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    #[default]
    Bilinear,
    /// Tensor-product four-point Lagrange interpolation.
    Bicubic,
}

#[inline]
fn locate(x: f64, n: usize) -> (usize, f64) {
    let s = wrap(x) * n as f64;
    let i = s.floor();
    let t = s - i;
    ((i as usize) % n, t)
}

#[inline]
fn cubic_weights(t: f64) -> [f64; 4] {
    [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ]
}

/// Value of `f` at one point; the point is wrapped onto the torus.
#[inline]
pub fn interpolate_at(f: &ScalarField, p: Point, mode: Interp) -> f64 {
    let n = f.grid.n;
    let v = &f.values;
    let (i, ti) = locate(p[0], n);
    if f.grid.d == 1 {
        return match mode {
            Interp::Bilinear => {
                let i1 = (i + 1) % n;
                v[i] * (1.0 - ti) + v[i1] * ti
            }
            Interp::Bicubic => {
                let w = cubic_weights(ti);
                (0..4).map(|a| w[a] * v[(i + n + a - 1) % n]).sum()
            }
        };
    }
    let (j, tj) = locate(p[1], n);
    match mode {
        Interp::Bilinear => {
            let i1 = (i + 1) % n;
            let j1 = (j + 1) % n;
            let a = v[i * n + j] * (1.0 - tj) + v[i * n + j1] * tj;
            let b = v[i1 * n + j] * (1.0 - tj) + v[i1 * n + j1] * tj;
            a * (1.0 - ti) + b * ti
        }
        Interp::Bicubic => {
            let wi = cubic_weights(ti);
            let wj = cubic_weights(tj);
            let mut acc = 0.0;
            for a in 0..4 {
                let row = ((i + n + a - 1) % n) * n;
                let mut r = 0.0;
                for b in 0..4 {
                    r += wj[b] * v[row + (j + n + b - 1) % n];
                }
                acc += wi[a] * r;
            }
            acc
        }
    }
}

/// Values of `f` at many points.
pub fn interpolate(f: &ScalarField, points: &[Point], mode: Interp) -> Result<Vec<f64>> {
    if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::domain("non-finite interpolation point"));
    }
    Ok(points.par_iter().map(|&p| interpolate_at(f, p, mode)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use std::f64::consts::PI;

    #[test]
    fn exact_at_nodes_and_constants() {
        let g = GridSpec::new(2, 16).unwrap();
        let f = ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).sin() * (x[1] + 0.3));
        for mode in [Interp::Bilinear, Interp::Bicubic] {
            for idx in [0, 5, 100, 255] {
                assert_eq!(interpolate_at(&f, g.node(idx), mode), f.values[idx]);
            }
            let c = ScalarField::constant(g, 1.75);
            let v = interpolate(&c, &[[0.123, 0.987], [0.5, 0.01]], mode).unwrap();
            assert!(v.iter().all(|x| (x - 1.75).abs() < 1e-14));
        }
        assert!(interpolate(&f, &[[f64::NAN, 0.0]], Interp::Bilinear).is_err());
    }

    #[test]
    fn bilinear_off_grid_sine() {
        let g = GridSpec::new(1, 16).unwrap();
        let f = ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).sin());
        // 0.3125 = 5/16 sits on a node at this resolution.
        assert_eq!(interpolate_at(&f, [0.3125, 0.0], Interp::Bilinear), f.values[5]);
        let x = 0.28125;
        let m = interpolate_at(&f, [x, 0.0], Interp::Bilinear);
        assert!((m - 0.5 * (f.values[4] + f.values[5])).abs() < 1e-15);
        let h = 1.0 / 16.0;
        let bound = h * h / 8.0 * 4.0 * PI * PI;
        assert!((m - (2.0 * PI * x).sin()).abs() <= bound);
    }

    #[test]
    fn bilinear_exact_on_affine_cells() {
        let g = GridSpec::new(2, 8).unwrap();
        // Affine in each variable inside every cell: the tensor product x*y
        // sampled away from the wrap seam.
        let f = ScalarField::from_fn(g, |x| 1.0 + 2.0 * x[0] + 3.0 * x[1] + x[0] * x[1]);
        let v = interpolate_at(&f, [0.3, 0.45], Interp::Bilinear);
        assert!((v - (1.0 + 0.6 + 1.35 + 0.135)).abs() < 1e-14);
    }

    #[test]
    fn bicubic_fourth_order() {
        let err = |n: usize| {
            let g = GridSpec::new(1, n).unwrap();
            let f = ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).sin());
            (0..50)
                .map(|s| {
                    let x = (s as f64 + 0.37) / 50.0;
                    (interpolate_at(&f, [x, 0.0], Interp::Bicubic) - (2.0 * PI * x).sin()).abs()
                })
                .fold(0.0, f64::max)
        };
        let order = (err(16) / err(32)).log2();
        assert!(order > 3.5, "order {order}");
    }
}
