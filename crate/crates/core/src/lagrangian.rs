//! Marker system in Lagrangian coordinates.
//!
//! Each marker carries partial densities `(r, q)` that evolve by
//! `r' = -r sigma`, `q' = -q sigma`, where
//!
//! ```text
//!     nu sigma = a_plus T_k(z)^gamma_plus - { a_plus T_k(z)^gamma_plus }_L
//! ```
//!
//! and `{f}_L = (1/N) sum f_i exp(int sigma_i)` is the Jacobian-weighted
//! average. The only coupling between markers is that average, so time is
//! advanced in windows: inside a window the divergence history is found by
//! Picard iteration on `M_SUB + 1` sub-nodes, and densities are updated
//! through the exact exponential `r = r_0 exp(-int sigma)`.

use crate::closure::{self, ModelParams};
use crate::error::{Error, Result};
use crate::grid::det_sum;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Sub-intervals per window.
pub const M_SUB: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    pub tau: f64,
    pub fp_tol: f64,
    pub max_iter: usize,
    pub contraction_target: f64,
    pub tau_min: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            tau: 0.01,
            fp_tol: 1e-10,
            max_iter: 50,
            contraction_target: 0.9,
            tau_min: 1e-5,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::config("window.tau", "must be > 0"));
        }
        if !(self.fp_tol > 0.0) {
            return Err(Error::config("window.fp_tol", "must be > 0"));
        }
        if self.max_iter == 0 {
            return Err(Error::config("window.max_iter", "must be >= 1"));
        }
        if !(self.contraction_target > 0.0 && self.contraction_target < 1.0) {
            return Err(Error::config("window.contraction_target", "must lie in (0, 1)"));
        }
        if !(self.tau_min > 0.0 && self.tau_min <= self.tau) {
            return Err(Error::config("window.tau_min", "must lie in (0, tau]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianState {
    pub t: f64,
    /// Initial partial densities, kept so that updates stay exact exponentials.
    pub r0: Vec<f64>,
    pub q0: Vec<f64>,
    pub r: Vec<f64>,
    pub q: Vec<f64>,
    pub z: Vec<f64>,
    pub sigma: Vec<f64>,
    pub cum_sigma: Vec<f64>,
}

/// `(1/N) sum f_i exp(cum_i)`.
pub fn weighted_mean(f: &[f64], cum_sigma: &[f64]) -> Result<f64> {
    if f.len() != cum_sigma.len() {
        return Err(Error::domain(format!(
            "weighted mean length mismatch: {} vs {}",
            f.len(),
            cum_sigma.len()
        )));
    }
    if f.is_empty() {
        return Err(Error::domain("weighted mean of no markers"));
    }
    let terms: Vec<f64> = f.iter().zip(cum_sigma).map(|(a, c)| a * c.exp()).collect();
    Ok(det_sum(&terms) / f.len() as f64)
}

/// Truncated pressure `a_plus T_k(z)^gamma_plus` per marker.
fn truncated_pressure(z: &[f64], p: &ModelParams) -> Vec<f64> {
    z.iter()
        .map(|&v| p.a_plus * closure::truncate(v, p.k).powf(p.gamma_plus))
        .collect()
}

fn sigma_from(z: &[f64], cum: &[f64], p: &ModelParams) -> Result<Vec<f64>> {
    let pr = truncated_pressure(z, p);
    let avg = weighted_mean(&pr, cum)?;
    Ok(pr.into_iter().map(|v| (v - avg) / p.nu).collect())
}

/// Divergence seen by each marker for the state's `z` and `cum_sigma`.
pub fn sigma_of(state: &LagrangianState, p: &ModelParams) -> Result<Vec<f64>> {
    sigma_from(&state.z, &state.cum_sigma, p)
}

fn solve_all(r: &[f64], q: &[f64], guess: Option<&[f64]>, p: &ModelParams) -> Result<Vec<f64>> {
    (0..r.len())
        .into_par_iter()
        .map(|i| closure::solve_z_from(r[i], q[i], guess.map(|g| g[i]), p))
        .collect()
}

impl LagrangianState {
    /// Markers at `t = 0` with `cum_sigma = 0`; inputs use the oriented
    /// phase labelling.
    pub fn new(r0: Vec<f64>, q0: Vec<f64>, p: &ModelParams) -> Result<Self> {
        if r0.len() != q0.len() || r0.is_empty() {
            return Err(Error::domain("marker arrays must be nonempty and of equal length"));
        }
        let z = solve_all(&r0, &q0, None, p)?;
        let cum = vec![0.0; r0.len()];
        let sigma = sigma_from(&z, &cum, p)?;
        Ok(LagrangianState {
            t: 0.0,
            r: r0.clone(),
            q: q0.clone(),
            r0,
            q0,
            z,
            sigma,
            cum_sigma: cum,
        })
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn jacobian(&self) -> Vec<f64> {
        self.cum_sigma.iter().map(|c| c.exp()).collect()
    }

    /// `(1/N) sum r_i J_i`.
    pub fn mass_r(&self) -> f64 {
        weighted_mean(&self.r, &self.cum_sigma).unwrap_or(f64::NAN)
    }

    pub fn mass_q(&self) -> f64 {
        weighted_mean(&self.q, &self.cum_sigma).unwrap_or(f64::NAN)
    }

    /// Rebuilds the state at time `t` from cumulative divergences.
    fn from_cum(&self, t: f64, cum: Vec<f64>, guess: Option<&[f64]>, p: &ModelParams) -> Result<Self> {
        let r: Vec<f64> = self.r0.iter().zip(&cum).map(|(a, c)| a * (-c).exp()).collect();
        let q: Vec<f64> = self.q0.iter().zip(&cum).map(|(a, c)| a * (-c).exp()).collect();
        let z = solve_all(&r, &q, guess, p)?;
        let sigma = sigma_from(&z, &cum, p)?;
        Ok(LagrangianState {
            t,
            r0: self.r0.clone(),
            q0: self.q0.clone(),
            r,
            q,
            z,
            sigma,
            cum_sigma: cum,
        })
    }

    /// `max(r, q, 1/r, 1/q)` over markers.
    pub fn spread(&self) -> f64 {
        self.r
            .iter()
            .chain(&self.q)
            .filter(|&&v| v > 0.0)
            .fold(0.0f64, |m, &v| m.max(v).max(1.0 / v))
    }
}

/// Bound on `|sigma|` from the truncation level.
pub fn sigma_bound(p: &ModelParams) -> f64 {
    p.a_plus * p.k.powf(p.gamma_plus) / p.nu
}

/// Checks the divergence bound and the exponential growth bound.
pub fn check_bounds(state: &LagrangianState, initial_spread: f64, p: &ModelParams) -> Result<()> {
    let bound = sigma_bound(p);
    if bound.is_finite() {
        let smax = state.sigma.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        if smax > bound * (1.0 + 1e-9) {
            return Err(Error::Invariant(format!(
                "|sigma| = {smax:e} exceeds {bound:e} at t = {}",
                state.t
            )));
        }
        let growth = initial_spread * (state.t * bound).exp();
        let spread = state.spread();
        if spread > growth * (1.0 + 1e-9) {
            return Err(Error::Invariant(format!(
                "density spread {spread:e} exceeds growth bound {growth:e} at t = {}",
                state.t
            )));
        }
    }
    for (i, (&r, &z)) in state.r.iter().zip(&state.z).enumerate() {
        if r > z * (1.0 + 1e-12) {
            return Err(Error::Invariant(format!("marker {i}: r = {r} exceeds z = {z}")));
        }
    }
    Ok(())
}

/// Integration weights (times the sub-step) of one sub-interval from a
/// four-node cubic stencil: `(stencil start, weights)`.
fn interval_rule(j: usize) -> (usize, [f64; 4]) {
    const INTERIOR: [f64; 4] = [-1.0 / 24.0, 13.0 / 24.0, 13.0 / 24.0, -1.0 / 24.0];
    const FIRST: [f64; 4] = [9.0 / 24.0, 19.0 / 24.0, -5.0 / 24.0, 1.0 / 24.0];
    const LAST: [f64; 4] = [1.0 / 24.0, -5.0 / 24.0, 19.0 / 24.0, 9.0 / 24.0];
    if j == 0 {
        (0, FIRST)
    } else if j == M_SUB - 1 {
        (M_SUB - 3, LAST)
    } else {
        (j - 1, INTERIOR)
    }
}

/// Stored divergence history of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowRecord {
    pub t0: f64,
    pub tau: f64,
    /// `[node][marker]`, nodes `0..=M_SUB`.
    pub sigma: Vec<Vec<f64>>,
    pub cum: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
}

impl WindowRecord {
    fn locate(&self, t: f64) -> (usize, f64) {
        let s = ((t - self.t0) / self.tau * M_SUB as f64).clamp(0.0, M_SUB as f64);
        let j = (s.floor() as usize).min(M_SUB - 1);
        (j, s - j as f64)
    }

    /// Cumulative divergence at `t` inside the window, integrating the same
    /// cubic pieces used for the node values.
    pub fn cum_at(&self, t: f64) -> Vec<f64> {
        let (j, theta) = self.locate(t);
        let (s0, _) = interval_rule(j);
        let h = self.tau / M_SUB as f64;
        // Two-point Gauss on [j, j + theta] is exact for cubics.
        let g = 0.5 / 3f64.sqrt();
        let xs = [j as f64 + theta * (0.5 - g), j as f64 + theta * (0.5 + g)];
        let mut w = [0.0; 4];
        for &x in &xs {
            let b = lagrange4(x - s0 as f64);
            for k in 0..4 {
                w[k] += 0.5 * theta * b[k];
            }
        }
        let n = self.cum[0].len();
        (0..n)
            .map(|i| {
                let mut acc = self.cum[j][i];
                for k in 0..4 {
                    acc += h * w[k] * self.sigma[s0 + k][i];
                }
                acc
            })
            .collect()
    }

    /// Nearest stored closure root, used as a Newton warm start.
    pub fn z_near(&self, t: f64) -> &[f64] {
        let (j, theta) = self.locate(t);
        if theta < 0.5 {
            &self.z[j]
        } else {
            &self.z[j + 1]
        }
    }
}

/// Lagrange basis on nodes 0, 1, 2, 3.
fn lagrange4(x: f64) -> [f64; 4] {
    [
        -(x - 1.0) * (x - 2.0) * (x - 3.0) / 6.0,
        x * (x - 2.0) * (x - 3.0) / 2.0,
        -x * (x - 1.0) * (x - 3.0) / 2.0,
        x * (x - 1.0) * (x - 2.0) / 6.0,
    ]
}

/// Result of one accepted window.
#[derive(Debug, Clone)]
pub struct WindowOutcome {
    pub state: LagrangianState,
    pub record: WindowRecord,
    pub tau: f64,
    pub iterations: usize,
    /// Largest successive-difference ratio seen in the accepted attempt.
    pub contraction_ratio: f64,
    pub halvings: usize,
}

enum Attempt {
    Accepted(Box<WindowOutcome>),
    Rejected { ratio: f64, history: Vec<f64> },
}

fn attempt_window(
    state: &LagrangianState,
    tau: f64,
    cfg: &WindowConfig,
    initial_spread: f64,
    p: &ModelParams,
) -> Result<Attempt> {
    let n = state.len();
    let h = tau / M_SUB as f64;
    let mut sigma: Vec<Vec<f64>> = vec![state.sigma.clone(); M_SUB + 1];
    let mut z: Vec<Vec<f64>> = vec![state.z.clone(); M_SUB + 1];
    let mut prev_r: Option<Vec<Vec<f64>>> = None;
    let mut prev_q: Option<Vec<Vec<f64>>> = None;
    let mut history = Vec::new();
    let mut ratio = 0.0f64;

    for it in 1..=cfg.max_iter {
        // Cumulative divergence on the sub-nodes.
        let mut cum = vec![state.cum_sigma.clone(); M_SUB + 1];
        for j in 0..M_SUB {
            let (s0, w) = interval_rule(j);
            let (head, tail) = cum.split_at_mut(j + 1);
            let next = &mut tail[0];
            for i in 0..n {
                let mut acc = head[j][i];
                for k in 0..4 {
                    acc += h * w[k] * sigma[s0 + k][i];
                }
                next[i] = acc;
            }
        }
        let r: Vec<Vec<f64>> = cum
            .iter()
            .map(|c| state.r0.iter().zip(c).map(|(a, c)| a * (-c).exp()).collect())
            .collect();
        let q: Vec<Vec<f64>> = cum
            .iter()
            .map(|c| state.q0.iter().zip(c).map(|(a, c)| a * (-c).exp()).collect())
            .collect();
        for j in 1..=M_SUB {
            z[j] = solve_all(&r[j], &q[j], Some(&z[j]), p)?;
        }
        let new_sigma: Vec<Vec<f64>> = (0..=M_SUB)
            .map(|j| {
                if j == 0 {
                    Ok(state.sigma.clone())
                } else {
                    sigma_from(&z[j], &cum[j], p)
                }
            })
            .collect::<Result<_>>()?;

        let diff = match (&prev_r, &prev_q) {
            (Some(pr), Some(pq)) => {
                let mut d = 0.0f64;
                for j in 1..=M_SUB {
                    for i in 0..n {
                        d = d.max((r[j][i] - pr[j][i]).abs()).max((q[j][i] - pq[j][i]).abs());
                    }
                }
                d
            }
            _ => f64::INFINITY,
        };
        if diff.is_finite() {
            if let Some(&last) = history.last() {
                if last > cfg.fp_tol {
                    let rho: f64 = diff / last;
                    ratio = ratio.max(rho);
                }
            }
            history.push(diff);
        }
        let converged = diff < cfg.fp_tol;
        if ratio >= cfg.contraction_target {
            return Ok(Attempt::Rejected { ratio, history });
        }
        if converged {
            let end = LagrangianState {
                t: state.t + tau,
                r0: state.r0.clone(),
                q0: state.q0.clone(),
                r: r[M_SUB].clone(),
                q: q[M_SUB].clone(),
                z: z[M_SUB].clone(),
                sigma: new_sigma[M_SUB].clone(),
                cum_sigma: cum[M_SUB].clone(),
            };
            for j in 1..=M_SUB {
                let sub = LagrangianState {
                    t: state.t + j as f64 * h,
                    r0: Vec::new(),
                    q0: Vec::new(),
                    r: r[j].clone(),
                    q: q[j].clone(),
                    z: z[j].clone(),
                    sigma: new_sigma[j].clone(),
                    cum_sigma: Vec::new(),
                };
                check_bounds(&sub, initial_spread, p)?;
            }
            let record = WindowRecord {
                t0: state.t,
                tau,
                sigma: new_sigma,
                cum,
                z,
            };
            return Ok(Attempt::Accepted(Box::new(WindowOutcome {
                state: end,
                record,
                tau,
                iterations: it,
                contraction_ratio: ratio,
                halvings: 0,
            })));
        }
        sigma = new_sigma;
        prev_r = Some(r);
        prev_q = Some(q);
    }
    Ok(Attempt::Rejected {
        ratio: ratio.max(1.0),
        history,
    })
}

/// Advances one window of length `tau`, halving it while the measured
/// contraction ratio is not below the target.
pub fn step_window(
    state: &LagrangianState,
    tau: f64,
    cfg: &WindowConfig,
    initial_spread: f64,
    p: &ModelParams,
) -> Result<WindowOutcome> {
    let mut tau = tau;
    let mut halvings = 0;
    loop {
        match attempt_window(state, tau, cfg, initial_spread, p)? {
            Attempt::Accepted(mut out) => {
                out.halvings = halvings;
                return Ok(*out);
            }
            Attempt::Rejected { ratio, history } => {
                tau *= 0.5;
                halvings += 1;
                if tau < cfg.tau_min {
                    return Err(Error::FixedPoint {
                        what: format!(
                            "window at t = {} does not contract (ratio {ratio:.3}) above tau_min = {:e}",
                            state.t, cfg.tau_min
                        ),
                        history,
                    });
                }
            }
        }
    }
}

/// Full marker history on `[0, T]`.
#[derive(Debug, Clone)]
pub struct LagrangianTrajectory {
    pub initial: LagrangianState,
    pub windows: Vec<WindowRecord>,
    pub params: ModelParams,
}

impl LagrangianTrajectory {
    pub fn t_final(&self) -> f64 {
        self.windows.last().map_or(self.initial.t, |w| w.t0 + w.tau)
    }

    fn window_for(&self, t: f64) -> Option<&WindowRecord> {
        if self.windows.is_empty() {
            return None;
        }
        let idx = self.windows.partition_point(|w| w.t0 <= t);
        Some(&self.windows[idx.saturating_sub(1)])
    }

    /// Marker state at any time in `[0, T]`, with `sigma` recomputed from the
    /// reconstructed `z` and `cum_sigma`.
    pub fn state_at(&self, t: f64) -> Result<LagrangianState> {
        match self.window_for(t) {
            None => Ok(self.initial.clone()),
            Some(w) => {
                if t > w.t0 + w.tau * (1.0 + 1e-9) + 1e-12 {
                    return Err(Error::domain(format!(
                        "time {t} is past the end of the trajectory ({})",
                        self.t_final()
                    )));
                }
                let cum = w.cum_at(t);
                let guess = w.z_near(t).to_vec();
                self.initial.from_cum(t, cum, Some(&guess), &self.params)
            }
        }
    }
}

/// Per-window bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowStats {
    pub t_end: f64,
    pub tau: f64,
    pub iterations: usize,
    pub contraction_ratio: f64,
    pub halvings: usize,
}

#[derive(Debug, Clone)]
pub struct LagrangianRun {
    pub trajectory: LagrangianTrajectory,
    /// States at the requested stop times (first entry is `t = 0`).
    pub outputs: Vec<LagrangianState>,
    pub stats: Vec<WindowStats>,
}

impl LagrangianRun {
    pub fn max_contraction_ratio(&self) -> f64 {
        self.stats.iter().fold(0.0, |m, s| m.max(s.contraction_ratio))
    }
}

/// Chains windows over `[0, t_final]`, ending a window exactly at each stop.
pub fn run(
    initial: &LagrangianState,
    t_final: f64,
    stops: &[f64],
    p: &ModelParams,
    cfg: &WindowConfig,
) -> Result<LagrangianRun> {
    cfg.validate()?;
    let mut targets: Vec<f64> = stops.iter().cloned().filter(|&s| s > 0.0 && s < t_final).collect();
    targets.push(t_final);
    targets.sort_by(|a, b| a.partial_cmp(b).unwrap());
    targets.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    let initial_spread = initial.spread();
    check_bounds(initial, initial_spread, p)?;
    let mut state = initial.clone();
    let mut windows = Vec::new();
    let mut stats = Vec::new();
    let mut outputs = vec![initial.clone()];
    let mut tau = cfg.tau;
    let mut calm = 0;
    if t_final <= 0.0 {
        return Ok(LagrangianRun {
            trajectory: LagrangianTrajectory {
                initial: initial.clone(),
                windows,
                params: *p,
            },
            outputs,
            stats,
        });
    }
    for &target in &targets {
        while target - state.t > 1e-12 * target.max(1.0) {
            let remaining = target - state.t;
            let len = if remaining <= tau * (1.0 + 1e-9) { remaining } else { tau };
            let out = step_window(&state, len, cfg, initial_spread, p)?;
            let mut next = out.state;
            if (target - next.t).abs() <= 1e-12 * target.max(1.0) {
                next.t = target;
            }
            if out.halvings > 0 {
                tau = out.tau;
                calm = 0;
            } else if out.contraction_ratio < 0.25 * cfg.contraction_target && tau < cfg.tau {
                calm += 1;
                if calm >= 4 {
                    tau = (2.0 * tau).min(cfg.tau);
                    calm = 0;
                }
            }
            stats.push(WindowStats {
                t_end: next.t,
                tau: out.tau,
                iterations: out.iterations,
                contraction_ratio: out.contraction_ratio,
                halvings: out.halvings,
            });
            let mut rec = out.record;
            rec.tau = next.t - rec.t0;
            windows.push(rec);
            state = next;
        }
        outputs.push(state.clone());
    }
    Ok(LagrangianRun {
        trajectory: LagrangianTrajectory {
            initial: initial.clone(),
            windows,
            params: *p,
        },
        outputs,
        stats,
    })
}
