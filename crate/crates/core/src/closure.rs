//! Algebraic pressure closure.
//!
//! Given partial densities `(R, Q)` the pressure argument `Z` is the unique
//! root `Z >= R` of
//!
//! ```text
//!     Z^g - R Z^(g-1) - Q' = 0,      g = gamma_plus / gamma_minus,
//! ```
//!
//! with `Q' = (a_minus / a_plus)^(1/gamma_minus) Q`. The common pressure is
//! `a_plus Z^gamma_plus`. Phases are oriented at construction so that `g <= 1`.

use crate::error::{Error, Result};

/// Residual tolerance of the root, relative to `max(Q', 1)`.
pub const RTOL: f64 = 1e-12;
/// Iteration budget of the safeguarded Newton solve.
pub const MAX_ITER: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub gamma_plus: f64,
    pub gamma_minus: f64,
    pub a_plus: f64,
    pub a_minus: f64,
    pub nu: f64,
    /// Truncation level, `f64::INFINITY` disables truncation.
    pub k: f64,
    /// `gamma_plus / gamma_minus` after orientation, always `<= 1`.
    pub gamma: f64,
    /// `(a_minus / a_plus)^(1/gamma_minus)`, the factor folded into `Q`.
    pub q_scale: f64,
    pub phases_swapped: bool,
}

impl ModelParams {
    pub fn new(gamma_plus: f64, gamma_minus: f64, a_plus: f64, a_minus: f64, nu: f64, k: f64) -> Result<Self> {
        Self::build(gamma_plus, gamma_minus, a_plus, a_minus, nu, k, false)
    }

    /// Like [`ModelParams::new`] but accepts equal exponents (linear closure).
    pub fn new_test_only(gamma_plus: f64, gamma_minus: f64, a_plus: f64, a_minus: f64, nu: f64, k: f64) -> Result<Self> {
        Self::build(gamma_plus, gamma_minus, a_plus, a_minus, nu, k, true)
    }

    /// Shorthand with unit coefficients, `nu = 1` and no truncation.
    pub fn simple(gamma_plus: f64, gamma_minus: f64) -> Result<Self> {
        Self::new(gamma_plus, gamma_minus, 1.0, 1.0, 1.0, f64::INFINITY)
    }

    fn build(
        gamma_plus: f64,
        gamma_minus: f64,
        a_plus: f64,
        a_minus: f64,
        nu: f64,
        k: f64,
        allow_equal: bool,
    ) -> Result<Self> {
        let positive = |key: &str, v: f64, lower: f64| {
            if v.is_nan() || v <= lower || (v.is_infinite() && key != "k") {
                Err(Error::config(key, format!("must be finite and > {lower}, got {v}")))
            } else {
                Ok(())
            }
        };
        positive("gamma_plus", gamma_plus, 1.0)?;
        positive("gamma_minus", gamma_minus, 1.0)?;
        positive("a_plus", a_plus, 0.0)?;
        positive("a_minus", a_minus, 0.0)?;
        positive("nu", nu, 0.0)?;
        if k.is_nan() || k <= 0.0 {
            return Err(Error::config("k", format!("must be > 0 (or inf), got {k}")));
        }
        if gamma_plus == gamma_minus && !allow_equal {
            return Err(Error::config(
                "gamma_minus",
                "equal exponents are only accepted for analytic tests",
            ));
        }
        let swapped = gamma_plus > gamma_minus;
        let (gp, gm, ap, am) = if swapped {
            (gamma_minus, gamma_plus, a_minus, a_plus)
        } else {
            (gamma_plus, gamma_minus, a_plus, a_minus)
        };
        Ok(ModelParams {
            gamma_plus: gp,
            gamma_minus: gm,
            a_plus: ap,
            a_minus: am,
            nu,
            k,
            gamma: gp / gm,
            q_scale: (am / ap).powf(1.0 / gm),
            phases_swapped: swapped,
        })
    }

    pub fn with_k(mut self, k: f64) -> Self {
        self.k = k;
        self
    }

    /// Maps user-labelled partial densities to the oriented labelling.
    pub fn orient(&self, r: f64, q: f64) -> (f64, f64) {
        if self.phases_swapped {
            (q, r)
        } else {
            (r, q)
        }
    }
}

fn check_input(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() || v < 0.0 {
        return Err(Error::domain(format!("{name} must be finite and nonnegative, got {v}")));
    }
    Ok(())
}

/// Pressure argument `Z(R, Q)` for oriented inputs.
pub fn solve_z(r: f64, q: f64, p: &ModelParams) -> Result<f64> {
    solve_z_from(r, q, None, p)
}

/// Same as [`solve_z`] but starts Newton at `guess` when it lies inside the
/// bracket. Used for warm starts inside time stepping loops.
pub fn solve_z_from(r: f64, q: f64, guess: Option<f64>, p: &ModelParams) -> Result<f64> {
    check_input("R", r)?;
    check_input("Q", q)?;
    root(r, p.q_scale * q, p.gamma, guess)
}

/// Root of `Z^(g-1) (Z - r) = qs` on `[r, inf)`.
pub(crate) fn root(r: f64, qs: f64, g: f64, guess: Option<f64>) -> Result<f64> {
    if qs == 0.0 {
        return Ok(r);
    }
    if g == 1.0 {
        return Ok(r + qs);
    }
    let inv_g = 1.0 / g;
    if r == 0.0 {
        return Ok(qs.powf(inv_g));
    }
    let tol = RTOL * qs.max(1.0);
    let f = |z: f64| z.powf(g - 1.0) * (z - r) - qs;

    let mut lo = r;
    let mut hi = r.max(1.0).max(qs.powf(inv_g));
    let mut f_hi = f(hi);
    while f_hi < 0.0 {
        lo = hi;
        hi *= 2.0;
        f_hi = f(hi);
    }
    // Both r + qs^(1/g) and r + qs r^(1-g) lie left of the root.
    let left = r + (qs.powf(inv_g)).max(qs * r.powf(1.0 - g));
    if left > lo && left < hi {
        lo = left;
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }

    let mut z = match guess {
        Some(z0) if z0 > lo && z0 < hi => z0,
        _ => lo,
    };
    let mut last = f64::INFINITY;
    for _ in 0..MAX_ITER {
        let zg1 = z.powf(g - 1.0);
        let fz = zg1 * (z - r) - qs;
        last = fz;
        if fz.abs() <= tol {
            return Ok(z);
        }
        if fz < 0.0 {
            lo = lo.max(z);
        } else {
            hi = hi.min(z);
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            return Ok(z);
        }
        let dfz = zg1 * (g * z + (1.0 - g) * r) / z;
        let mut next = z - fz / dfz;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        z = next;
    }
    Err(Error::NonConvergence {
        what: format!("closure root for R={r:e}, Q'={qs:e}"),
        residual: last,
        lo,
        hi,
    })
}

/// `a_plus Z^gamma_plus`.
pub fn pressure(z: f64, p: &ModelParams) -> Result<f64> {
    check_input("Z", z)?;
    Ok(p.a_plus * z.powf(p.gamma_plus))
}

/// `(dZ/dR, dZ/dQ)` at a consistent state; `dZ/dQ` is taken with respect to
/// the unscaled `Q`.
pub fn partials(r: f64, q: f64, z: f64, p: &ModelParams) -> Result<(f64, f64)> {
    check_input("R", r)?;
    check_input("Q", q)?;
    check_input("Z", z)?;
    if z == 0.0 {
        return Err(Error::domain("partials are undefined at vacuum (Z = 0)"));
    }
    if r > z * (1.0 + 1e-12) {
        return Err(Error::domain(format!("R = {r} exceeds Z = {z}")));
    }
    let g = p.gamma;
    let qs = p.q_scale * q;
    let zg1 = z.powf(g - 1.0);
    let mismatch = (zg1 * (z - r) - qs).abs();
    if mismatch > 1e-8 * qs.max(1.0).max(z.powf(g)) {
        return Err(Error::domain(format!(
            "(R, Q, Z) = ({r}, {q}, {z}) is not consistent with the closure"
        )));
    }
    let den = g * zg1 - r * (g - 1.0) * z.powf(g - 2.0);
    Ok((zg1 / den, p.q_scale / den))
}

/// Friction coefficient `c = (1-g)(Z-R)Z / (g(Z-R) + R)` of the Z equation.
pub fn friction_coeff(r: f64, z: f64, p: &ModelParams) -> Result<f64> {
    check_input("R", r)?;
    check_input("Z", z)?;
    if r > z * (1.0 + 1e-12) {
        return Err(Error::domain(format!("R = {r} exceeds Z = {z}")));
    }
    let gap = (z - r).max(0.0);
    if z == 0.0 || gap == 0.0 {
        return Ok(0.0);
    }
    let g = p.gamma;
    Ok((1.0 - g) * gap * z / (g * gap + r))
}

/// Inverts the closure: the `Q` for which `Z(R, Q) = Z`.
pub fn recover_q(r: f64, z: f64, p: &ModelParams) -> Result<f64> {
    check_input("R", r)?;
    check_input("Z", z)?;
    if r > z * (1.0 + 1e-12) {
        return Err(Error::domain(format!("R = {r} exceeds Z = {z}")));
    }
    if z == 0.0 {
        return Ok(0.0);
    }
    Ok((1.0 - r / z).max(0.0) * z.powf(p.gamma) / p.q_scale)
}

/// `T_k(Z) = min(Z, k)`.
pub fn truncate(z: f64, k: f64) -> f64 {
    z.min(k)
}

/// Volume fraction of the `+` phase, `1/2` at vacuum.
pub fn volume_fraction(r: f64, z: f64) -> f64 {
    if z > 0.0 {
        r / z
    } else {
        0.5
    }
}

/// A solved closure state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosureState {
    pub r: f64,
    pub q: f64,
    pub z: f64,
    pub alpha: f64,
}

impl ClosureState {
    pub fn solve(r: f64, q: f64, p: &ModelParams) -> Result<Self> {
        let z = solve_z(r, q, p)?;
        Ok(ClosureState {
            r,
            q,
            z,
            alpha: volume_fraction(r, z),
        })
    }
}
