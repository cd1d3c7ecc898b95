//! Estimates and functionals evaluated on simulation output.

use crate::closure::{self, ModelParams};
use crate::error::{Error, Result};
use crate::eulerian::{char_step, VelocityHistory};
use crate::grid::{self, det_mean, det_sum, div, gradient_matrix, maximal, GridSpec, Interp, ScalarField, VectorField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub fn mass(f: &ScalarField) -> f64 {
    f.mean()
}

/// Marker form of the mass, `sum r_i J_i / N`.
pub fn marker_mass(density: &[f64], jac: &[f64]) -> f64 {
    let v: Vec<f64> = density.iter().zip(jac).map(|(a, b)| a * b).collect();
    det_mean(&v)
}

fn check_triplet(r: f64, q: f64, z: f64, p: &ModelParams) -> Result<()> {
    if !(r >= 0.0 && q >= 0.0 && z >= 0.0) || !z.is_finite() {
        return Err(Error::domain(format!("negative or non-finite state ({r}, {q}, {z})")));
    }
    if r > z * (1.0 + 1e-10) + 1e-300 {
        return Err(Error::domain(format!("R = {r} exceeds Z = {z}")));
    }
    if z > 0.0 {
        let mismatch = (z.powf(p.gamma - 1.0) * (z - r) - p.q_scale * q).abs();
        if mismatch > 1e-8 * (p.q_scale * q).max(1.0).max(z.powf(p.gamma)) {
            return Err(Error::domain(format!("({r}, {q}, {z}) is not consistent with the closure")));
        }
    } else if r > 0.0 || q > 0.0 {
        return Err(Error::domain("vacuum Z with positive densities"));
    }
    Ok(())
}

/// Energy density at one point with the pressure argument capped at `k`.
pub fn energy_density(r: f64, q: f64, z: f64, k: f64, p: &ModelParams) -> Result<f64> {
    check_triplet(r, q, z, p)?;
    let tz = closure::truncate(z, k);
    if tz == 0.0 {
        return Ok(0.0);
    }
    let gp = p.gamma_plus;
    let gm = p.gamma_minus;
    let plus = r * tz.powf(gp - 1.0) / (gp - 1.0);
    let minus = p.q_scale * q * tz.powf(gp - p.gamma) / (gm - 1.0);
    // Pointwise lower bound: (T_k Z)^gp <= R (T_k Z)^(gp-1) + Q' (T_k Z)^(gp-g).
    let lower = tz.powf(gp);
    let upper = r * tz.powf(gp - 1.0) + p.q_scale * q * tz.powf(gp - p.gamma);
    if lower > upper * (1.0 + 1e-10) + 1e-300 {
        return Err(Error::Invariant(format!(
            "truncated pressure bound fails: {lower} > {upper}"
        )));
    }
    Ok(p.a_plus * (plus + minus))
}

fn energy_values(r: &[f64], q: &[f64], z: &[f64], k: f64, p: &ModelParams) -> Result<Vec<f64>> {
    if r.len() != q.len() || r.len() != z.len() {
        return Err(Error::domain("energy inputs differ in length"));
    }
    r.par_iter()
        .zip(q.par_iter())
        .zip(z.par_iter())
        .map(|((&a, &b), &c)| energy_density(a, b, c, k, p))
        .collect()
}

pub fn energy(r: &ScalarField, q: &ScalarField, z: &ScalarField, p: &ModelParams) -> Result<f64> {
    truncated_energy(r, q, z, f64::INFINITY, p)
}

pub fn truncated_energy(r: &ScalarField, q: &ScalarField, z: &ScalarField, k: f64, p: &ModelParams) -> Result<f64> {
    if r.grid != q.grid || r.grid != z.grid {
        return Err(Error::domain("energy fields live on different grids"));
    }
    Ok(det_mean(&energy_values(&r.values, &q.values, &z.values, k, p)?))
}

/// Marker form `sum e(r_i, q_i, z_i) J_i / N`.
pub fn marker_energy(r: &[f64], q: &[f64], z: &[f64], jac: &[f64], k: f64, p: &ModelParams) -> Result<f64> {
    let e = energy_values(r, q, z, k, p)?;
    Ok(marker_mass(&e, jac))
}

/// `mean((div u)^2)`.
pub fn dissipation(u: &VectorField) -> f64 {
    let dv = div(u);
    let sq: Vec<f64> = dv.values.iter().map(|v| v * v).collect();
    det_mean(&sq)
}

/// `mean(|grad u|^2)` with the Frobenius norm.
pub fn gradient_dissipation(u: &VectorField) -> f64 {
    let g = gradient_matrix(u);
    let sq: Vec<f64> = (0..u.grid.len())
        .map(|i| g.iter().map(|c| c.values[i] * c.values[i]).sum())
        .collect();
    det_mean(&sq)
}

/// `(mean f^p)^(1/p)` for nonnegative `f`.
pub fn lp_norm(f: &ScalarField, p: f64) -> Result<f64> {
    lp_norm_values(&f.values, p)
}

pub fn lp_norm_values(f: &[f64], p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::domain(format!("L^p norm needs p >= 1, got {p}")));
    }
    if f.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::domain("L^p norm needs a finite nonnegative field"));
    }
    let pw: Vec<f64> = f.iter().map(|v| v.powf(p)).collect();
    Ok(det_mean(&pw).powf(1.0 / p))
}

/// Marker form of the `L^p` norm, `(sum f_i^p J_i / N)^(1/p)`.
pub fn marker_lp_norm(f: &[f64], jac: &[f64], p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::domain(format!("L^p norm needs p >= 1, got {p}")));
    }
    let pw: Vec<f64> = f.iter().map(|v| v.max(0.0).powf(p)).collect();
    Ok(marker_mass(&pw, jac).powf(1.0 / p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    /// Kernel exponent, `d + 1` when unset.
    pub exponent: Option<f64>,
    /// Number of dyadic levels; the finest width is `2^-levels`.
    pub levels: usize,
    pub blend_start: f64,
    pub blend_end: f64,
    /// Pair count above which the oscillation functional is sampled.
    pub exact_limit: usize,
    /// Partners drawn per node in sampled mode.
    pub samples_per_node: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            exponent: None,
            levels: 8,
            blend_start: 0.5,
            blend_end: 2.0 / 3.0,
            exact_limit: 4096 * 4096,
            samples_per_node: 256,
        }
    }
}

impl KernelConfig {
    pub fn exponent_for(&self, d: usize) -> f64 {
        self.exponent.unwrap_or(d as f64 + 1.0)
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        let a = self.exponent_for(d);
        if !(a > d as f64) || !a.is_finite() {
            return Err(Error::config("kernel.exponent", format!("must exceed the dimension {d}")));
        }
        if self.levels == 0 || self.levels > 40 {
            return Err(Error::config("kernel.levels", "must lie in 1..=40"));
        }
        if !(0.0 < self.blend_start && self.blend_start < self.blend_end && self.blend_end <= 0.75) {
            return Err(Error::config(
                "kernel.blend_start",
                "blend window must satisfy 0 < start < end <= 3/4",
            ));
        }
        if self.samples_per_node == 0 {
            return Err(Error::config("kernel.samples_per_node", "must be >= 1"));
        }
        Ok(())
    }

    /// Widths `2^-j`, `j = 0..=levels`, decreasing.
    pub fn ladder(&self) -> Vec<f64> {
        (0..=self.levels).map(|j| 0.5f64.powi(j as i32)).collect()
    }

    pub fn h0(&self) -> f64 {
        0.5f64.powi(self.levels as i32)
    }
}

/// Smooth step: 1 below `s0`, 0 above `s1`, `C^inf` in between.
pub fn cutoff(s: f64, s0: f64, s1: f64) -> f64 {
    if s <= s0 {
        return 1.0;
    }
    if s >= s1 {
        return 0.0;
    }
    let t = (s - s0) / (s1 - s0);
    let psi = |x: f64| if x > 0.0 { (-1.0 / x).exp() } else { 0.0 };
    let a = psi(1.0 - t);
    a / (a + psi(t))
}

/// Torus distance from a node to the origin.
fn node_radius(grid: GridSpec, idx: usize) -> f64 {
    grid::torus_distance(grid.node(idx), [0.0, 0.0], grid.d)
}

/// `K_h` sampled at the nodes, read as offsets from the origin.
pub fn build_kernel(h: f64, cfg: &KernelConfig, grid: GridSpec) -> Result<ScalarField> {
    cfg.validate(grid.d)?;
    if !(h > 0.0) {
        return Err(Error::domain("kernel width must be positive"));
    }
    let a = cfg.exponent_for(grid.d);
    let far = (2.0f64 / 3.0).powf(-a);
    Ok(ScalarField {
        grid,
        values: (0..grid.len())
            .map(|i| {
                let s = node_radius(grid, i);
                let c = cutoff(s, cfg.blend_start, cfg.blend_end);
                c * (s + h).powf(-a) + (1.0 - c) * far
            })
            .collect(),
    })
}

/// `K_h0 = int_{h0}^1 K_h / |K_h|_1 dh/h` by the trapezoid rule in `log h`
/// over the dyadic ladder.
pub fn build_k_h0(cfg: &KernelConfig, grid: GridSpec) -> Result<ScalarField> {
    let ladder = cfg.ladder();
    let step = std::f64::consts::LN_2;
    let mut acc = ScalarField::zeros(grid);
    for (j, &h) in ladder.iter().enumerate() {
        let k = build_kernel(h, cfg, grid)?;
        let norm = k.mean();
        let w = if j == 0 || j + 1 == ladder.len() { 0.5 * step } else { step };
        for (a, v) in acc.values.iter_mut().zip(&k.values) {
            *a += w * v / norm;
        }
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightConfig {
    pub theta: f64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        WeightConfig { theta: 10.0 }
    }
}

impl WeightConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0) || !self.theta.is_finite() {
            return Err(Error::config("weight.theta", "must be > 0"));
        }
        Ok(())
    }
}

/// `M|grad u| + |div u| + T_k(Z)^gp + mean(T_k(Z)^gp)`.
pub fn damping_d(u: &VectorField, z: &ScalarField, k: f64, p: &ModelParams) -> Result<ScalarField> {
    if u.grid != z.grid {
        return Err(Error::domain("velocity and Z live on different grids"));
    }
    let grid = z.grid;
    let g = gradient_matrix(u);
    let gnorm = ScalarField {
        grid,
        values: (0..grid.len())
            .map(|i| g.iter().map(|c| c.values[i] * c.values[i]).sum::<f64>().sqrt())
            .collect(),
    };
    let mg = maximal(&gnorm)?;
    let dv = div(u);
    let pz = z.map(|v| closure::truncate(v.max(0.0), k).powf(p.gamma_plus));
    let mean_pz = pz.mean();
    Ok(ScalarField {
        grid,
        values: (0..grid.len())
            .map(|i| mg.values[i] + dv.values[i].abs() + pz.values[i] + mean_pz)
            .collect(),
    })
}

/// `log w(t, x) = -theta int_0^t D` along the backward characteristic, for
/// each requested time. `d_hist` is aligned with the history's time grid.
pub fn solve_log_weights(
    hist: &VelocityHistory,
    d_hist: &[ScalarField],
    theta: f64,
    times: &[f64],
) -> Result<Vec<ScalarField>> {
    if d_hist.len() != hist.phi.len() {
        return Err(Error::domain("damping history is not aligned with the velocity history"));
    }
    if d_hist.iter().any(|d| d.values.iter().any(|&v| v < 0.0)) {
        return Err(Error::domain("damping field must be nonnegative"));
    }
    if !(theta > 0.0) {
        return Err(Error::config("weight.theta", "must be > 0"));
    }
    let grid = hist.grid();
    let dt = hist.dt;
    times
        .iter()
        .map(|&t| {
            hist.check_covers(0.0, t)?;
            let steps = (t / dt).round() as usize;
            let values: Vec<f64> = (0..grid.len())
                .into_par_iter()
                .map(|i| {
                    let mut x = grid.node(i);
                    let mut acc = 0.0;
                    for s in (1..=steps).rev() {
                        let c = char_step(hist, x, s as f64 * dt, -dt, Interp::Bilinear, Some(d_hist));
                        x = c.x;
                        acc += c.extra_integral;
                    }
                    -theta * acc
                })
                .collect();
            Ok(ScalarField { grid, values })
        })
        .collect()
}

pub fn solve_weights(
    hist: &VelocityHistory,
    d_hist: &[ScalarField],
    theta: f64,
    times: &[f64],
) -> Result<Vec<ScalarField>> {
    Ok(solve_log_weights(hist, d_hist, theta, times)?
        .into_iter()
        .map(|lw| lw.map(f64::exp))
        .collect())
}

/// `mean((R + Z) |log w|)`.
pub fn log_weight_budget(r: &ScalarField, z: &ScalarField, w: &ScalarField) -> Result<f64> {
    let lw: Vec<f64> = w.values.iter().map(|v| v.ln()).collect();
    log_weight_budget_from_log(r, z, &ScalarField { grid: w.grid, values: lw })
}

pub fn log_weight_budget_from_log(r: &ScalarField, z: &ScalarField, log_w: &ScalarField) -> Result<f64> {
    let mut terms = Vec::with_capacity(r.values.len());
    for i in 0..r.values.len() {
        let m = r.values[i] + z.values[i];
        let lw = log_w.values[i];
        if lw > 1e-12 {
            return Err(Error::Invariant(format!("weight above one: log w = {lw}")));
        }
        if m > 0.0 && lw == f64::NEG_INFINITY {
            return Err(Error::NonConvergence {
                what: "mass sits on a zero-weight cell; theta or dt too aggressive".into(),
                residual: f64::INFINITY,
                lo: 0.0,
                hi: 0.0,
            });
        }
        terms.push(if m > 0.0 { m * lw.abs() } else { 0.0 });
    }
    Ok(det_mean(&terms))
}

/// Weighted and unweighted oscillation functionals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Oscillation {
    pub weighted: f64,
    pub unweighted: f64,
    /// Standard error of the weighted value (zero in exact mode).
    pub std_error: f64,
    pub sampled: bool,
}

#[inline]
fn offset_index(grid: GridSpec, i: usize, j: usize) -> usize {
    let n = grid.n;
    if grid.d == 1 {
        (i + n - j) % n
    } else {
        let (a, b) = (grid.multi_index(i), grid.multi_index(j));
        grid.flat((a[0] + n - b[0]) % n, (a[1] + n - b[1]) % n)
    }
}

/// `sum_x sum_y K(x - y) (|R_x - R_y| + |Z_x - Z_y|) (w_x + w_y) / N^2`, and
/// the same sum without the weight factor.
pub fn oscillation_functional(
    r: &ScalarField,
    z: &ScalarField,
    w: &ScalarField,
    kernel: &ScalarField,
    cfg: &KernelConfig,
    seed: u64,
) -> Result<Oscillation> {
    let grid = r.grid;
    if z.grid != grid || w.grid != grid || kernel.grid != grid {
        return Err(Error::domain("oscillation inputs live on different grids"));
    }
    let n = grid.len();
    if n * n <= cfg.exact_limit {
        let rows: Vec<(f64, f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut tw = Vec::with_capacity(n);
                let mut tu = Vec::with_capacity(n);
                for j in 0..n {
                    let o = (r.values[i] - r.values[j]).abs() + (z.values[i] - z.values[j]).abs();
                    let ko = kernel.values[offset_index(grid, i, j)] * o;
                    tu.push(ko);
                    tw.push(ko * (w.values[i] + w.values[j]));
                }
                (det_sum(&tw), det_sum(&tu))
            })
            .collect();
        let nn = (n * n) as f64;
        let sw: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let su: Vec<f64> = rows.iter().map(|r| r.1).collect();
        return Ok(Oscillation {
            weighted: det_sum(&sw) / nn,
            unweighted: det_sum(&su) / nn,
            std_error: 0.0,
            sampled: false,
        });
    }
    // Each node draws its partners from its own stream, so the estimate does
    // not depend on scheduling.
    let m = cfg.samples_per_node;
    let rows: Vec<(f64, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut tw = Vec::with_capacity(m);
            let mut tu = Vec::with_capacity(m);
            for _ in 0..m {
                let j = rng.gen_range(0..n);
                let o = (r.values[i] - r.values[j]).abs() + (z.values[i] - z.values[j]).abs();
                let ko = kernel.values[offset_index(grid, i, j)] * o;
                tu.push(ko);
                tw.push(ko * (w.values[i] + w.values[j]));
            }
            let mw = det_mean(&tw);
            let var: Vec<f64> = tw.iter().map(|v| (v - mw) * (v - mw)).collect();
            (mw, det_mean(&tu), det_sum(&var) / (m.max(2) - 1) as f64 / m as f64)
        })
        .collect();
    let sw: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let su: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let var: Vec<f64> = rows.iter().map(|r| r.2).collect();
    Ok(Oscillation {
        weighted: det_mean(&sw),
        unweighted: det_mean(&su),
        std_error: det_sum(&var).sqrt() / n as f64,
        sampled: true,
    })
}

/// One diagnostics row, in CSV column order.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub time: f64,
    pub mass_r: f64,
    pub mass_q: f64,
    pub energy: f64,
    pub energy_k: f64,
    pub dissipation: f64,
    pub lp_z_gp: f64,
    pub lp_r_gp: f64,
    pub lp_q_gm: f64,
    pub lp_tkz_gp: f64,
    pub sigma_max: f64,
    pub s_h0_weighted: f64,
    pub s_h0_unweighted: f64,
    pub log_h0_norm: f64,
    pub logw_budget: f64,
    pub picard_iters: usize,
    pub contraction_ratio: f64,
    pub mean_defect: f64,
}

pub const CSV_HEADER: [&str; 18] = [
    "time",
    "mass_R",
    "mass_Q",
    "energy",
    "energy_k",
    "dissipation",
    "lp_Z_gp",
    "lp_R_gp",
    "lp_Q_gm",
    "lp_TkZ_gp",
    "sigma_max",
    "S_h0_weighted",
    "S_h0_unweighted",
    "log_h0_norm",
    "logw_budget",
    "picard_iters",
    "contraction_ratio",
    "mean_defect",
];

/// Float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    format!("{v:.16e}")
}

impl DiagnosticsRecord {
    pub fn csv_row(&self) -> String {
        let f = [
            self.time,
            self.mass_r,
            self.mass_q,
            self.energy,
            self.energy_k,
            self.dissipation,
            self.lp_z_gp,
            self.lp_r_gp,
            self.lp_q_gm,
            self.lp_tkz_gp,
            self.sigma_max,
            self.s_h0_weighted,
            self.s_h0_unweighted,
            self.log_h0_norm,
            self.logw_budget,
        ];
        let mut cells: Vec<String> = f.iter().map(|&v| fmt_f64(v)).collect();
        cells.push(self.picard_iters.to_string());
        cells.push(fmt_f64(self.contraction_ratio));
        cells.push(fmt_f64(self.mean_defect));
        cells.join(",")
    }

    pub fn parse_row(line: &str) -> Result<Self> {
        let c: Vec<&str> = line.trim().split(',').collect();
        if c.len() != CSV_HEADER.len() {
            return Err(Error::Io(format!("diagnostics row has {} cells", c.len())));
        }
        let f = |i: usize| -> Result<f64> {
            c[i].parse::<f64>()
                .map_err(|e| Error::Io(format!("column {}: {e}", CSV_HEADER[i])))
        };
        Ok(DiagnosticsRecord {
            time: f(0)?,
            mass_r: f(1)?,
            mass_q: f(2)?,
            energy: f(3)?,
            energy_k: f(4)?,
            dissipation: f(5)?,
            lp_z_gp: f(6)?,
            lp_r_gp: f(7)?,
            lp_q_gm: f(8)?,
            lp_tkz_gp: f(9)?,
            sigma_max: f(10)?,
            s_h0_weighted: f(11)?,
            s_h0_unweighted: f(12)?,
            log_h0_norm: f(13)?,
            logw_budget: f(14)?,
            picard_iters: c[15]
                .parse()
                .map_err(|e| Error::Io(format!("column picard_iters: {e}")))?,
            contraction_ratio: f(16)?,
            mean_defect: f(17)?,
        })
    }
}
