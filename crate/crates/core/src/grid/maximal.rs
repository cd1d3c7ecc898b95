//! Discrete centred maximal function over a dyadic radius ladder.

use super::{GridSpec, ScalarField};
use crate::error::{Error, Result};
use rayon::prelude::*;

/// Ball radii in grid units: `0` (the node itself) and `2^j` up to `n/2`.
pub fn radius_ladder(n: usize) -> Vec<usize> {
    let mut out = vec![0];
    let mut m = 1;
    while m <= n / 2 {
        out.push(m);
        m *= 2;
    }
    out
}

fn isqrt(v: usize) -> usize {
    let mut w = (v as f64).sqrt() as usize;
    while w * w > v {
        w -= 1;
    }
    while (w + 1) * (w + 1) <= v {
        w += 1;
    }
    w
}

/// Lowest admissible offset along one axis: offsets live in `(-n/2, n/2]`
/// so that antipodal nodes are counted once.
fn lowest(m: usize, n: usize) -> i64 {
    -(m.min(n / 2 - 1) as i64)
}

/// Offsets of the discrete ball of radius `m` grid units, as
/// `(row offset, column lo, column hi)` runs.
pub fn ball_offsets(grid: GridSpec, m: usize) -> Vec<(i64, i64, i64)> {
    let n = grid.n;
    if grid.d == 1 {
        return vec![(0, lowest(m, n), m.min(n / 2) as i64)];
    }
    let mut runs = Vec::new();
    for di in lowest(m, n)..=(m.min(n / 2) as i64) {
        let w = isqrt(m * m - (di * di) as usize);
        runs.push((di, lowest(w, n), w.min(n / 2) as i64));
    }
    runs
}

/// Pointwise supremum of ball averages over [`radius_ladder`].
pub fn maximal(g: &ScalarField) -> Result<ScalarField> {
    if g.values.iter().any(|&v| v < 0.0) {
        return Err(Error::domain("maximal operator needs a nonnegative field"));
    }
    let grid = g.grid;
    let n = grid.n;
    let rows = if grid.d == 1 { 1 } else { n };
    // Cyclic prefix sums of every row over two periods.
    let prefix: Vec<Vec<f64>> = (0..rows)
        .map(|i| {
            let row = &g.values[i * n..(i + 1) * n];
            let mut p = vec![0.0; 2 * n + 1];
            for k in 0..2 * n {
                p[k + 1] = p[k] + row[k % n];
            }
            p
        })
        .collect();
    let runs: Vec<(Vec<(i64, i64, i64)>, f64)> = radius_ladder(n)
        .into_iter()
        .map(|m| {
            let r = ball_offsets(grid, m);
            let count: i64 = r.iter().map(|&(_, lo, hi)| hi - lo + 1).sum();
            (r, count as f64)
        })
        .collect();
    let ni = n as i64;
    let values = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let [i, j] = grid.multi_index(idx);
            let (row0, col) = if grid.d == 1 { (0, i as i64) } else { (i as i64, j as i64) };
            let mut best = g.values[idx];
            for (ball, count) in &runs {
                let mut s = 0.0;
                for &(di, lo, hi) in ball {
                    let r = if grid.d == 1 { 0 } else { (row0 + di).rem_euclid(ni) as usize };
                    let start = (col + lo).rem_euclid(ni) as usize;
                    let len = (hi - lo + 1) as usize;
                    s += prefix[r][start + len] - prefix[r][start];
                }
                best = best.max(s / count);
            }
            best
        })
        .collect();
    Ok(ScalarField { grid, values })
}
