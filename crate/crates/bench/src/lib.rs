//! Shared inputs for the benchmarks in `benches/`.

use bifluid_core::grid::{GridSpec, ScalarField};
use std::f64::consts::PI;

/// Smooth positive field with a few modes, `n x n`.
pub fn smooth_field(n: usize) -> ScalarField {
    let g = GridSpec::new(2, n).expect("valid grid");
    ScalarField::from_fn(g, |x| {
        1.0 + 0.4 * (2.0 * PI * x[0]).cos() * (2.0 * PI * x[1]).cos() + 0.1 * (6.0 * PI * x[1]).sin()
    })
}
