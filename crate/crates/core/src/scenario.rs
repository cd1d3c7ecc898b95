//! Run configuration, initial data, orchestration of the Lagrangian and
//! Eulerian paths, sweeps, and on-disk artifacts.

use crate::closure::ModelParams;
use crate::diagnostics::{self as diag, DiagnosticsRecord, KernelConfig, WeightConfig};
use crate::error::{Error, Result};
use crate::eulerian::{
    self, eulerian_transport_step, picard_solve, pressure_potential, pushforward_fields, FieldState, LabelMap,
    PicardConfig, TransportMode, VelocityHistory,
};
use crate::grid::{self, low_pass, write_snapshot, GridSpec, Interp, Point, ScalarField};
use crate::lagrangian::{self, LagrangianState, WindowConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

fn one() -> f64 {
    1.0
}

fn infinite() -> f64 {
    f64::INFINITY
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub gamma_plus: f64,
    pub gamma_minus: f64,
    #[serde(default = "one")]
    pub a_plus: f64,
    #[serde(default = "one")]
    pub a_minus: f64,
    #[serde(default = "one")]
    pub nu: f64,
    /// Truncation level; `inf` disables it.
    #[serde(default = "infinite")]
    pub k: f64,
}

impl ModelSection {
    pub fn params(&self) -> Result<ModelParams> {
        ModelParams::new(self.gamma_plus, self.gamma_minus, self.a_plus, self.a_minus, self.nu, self.k).map_err(
            |e| match e {
                Error::Config { key, msg } => Error::Config {
                    key: format!("model.{key}"),
                    msg,
                },
                other => other,
            },
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub d: usize,
    pub n: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { d: 2, n: 64 }
    }
}

fn default_dt() -> f64 {
    1e-3
}

fn default_output_every() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub t_final: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Time between diagnostics rows and snapshots.
    #[serde(default = "default_output_every")]
    pub output_every: f64,
}

fn whole_steps(span: f64, dt: f64) -> Option<usize> {
    let s = span / dt;
    let r = s.round();
    ((s - r).abs() <= 1e-9 * r.max(1.0)).then_some(r as usize)
}

impl TimeSection {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_final >= 0.0) || !self.t_final.is_finite() {
            return Err(Error::config("time.t_final", "must be finite and >= 0"));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::config("time.dt", "must be > 0"));
        }
        if whole_steps(self.t_final, self.dt).is_none() {
            return Err(Error::config("time.dt", "t_final must be a whole number of steps"));
        }
        if !(self.output_every > 0.0) || whole_steps(self.output_every, self.dt).map_or(true, |s| s == 0) {
            return Err(Error::config(
                "time.output_every",
                "must be a positive whole number of steps",
            ));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        whole_steps(self.t_final, self.dt).unwrap_or(0)
    }

    /// Step indices of the output rows: `0`, every `output_every`, and the end.
    pub fn output_steps(&self) -> Vec<usize> {
        let every = whole_steps(self.output_every, self.dt).unwrap_or(1).max(1);
        let steps = self.steps();
        let mut out: Vec<usize> = (0..=steps).step_by(every).collect();
        if *out.last().unwrap() != steps {
            out.push(steps);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Lagrangian,
    Eulerian,
    Both,
    Sweep,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("bifluid_out")
}

fn yes() -> bool {
    true
}

fn default_transport() -> TransportMode {
    TransportMode::Continuity
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "yes")]
    pub snapshots: bool,
    /// Drops the second phase entirely (`Q = 0`).
    #[serde(default)]
    pub single_species: bool,
    /// Transport form of the Eulerian path.
    #[serde(default = "default_transport")]
    pub transport: TransportMode,
    /// Interpolation of marker values onto the grid.
    #[serde(default = "default_interp")]
    pub interp: Interp,
}

fn default_mode() -> Mode {
    Mode::Lagrangian
}

fn default_interp() -> Interp {
    Interp::Bicubic
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            mode: default_mode(),
            output_dir: default_output_dir(),
            seed: 0,
            snapshots: true,
            single_species: false,
            transport: default_transport(),
            interp: default_interp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    K,
    Delta,
    N,
    Dt,
    Theta,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::K => "k",
            SweepAxis::Delta => "delta",
            SweepAxis::N => "n",
            SweepAxis::Dt => "dt",
            SweepAxis::Theta => "theta",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "k" => Ok(SweepAxis::K),
            "delta" => Ok(SweepAxis::Delta),
            "n" => Ok(SweepAxis::N),
            "dt" => Ok(SweepAxis::Dt),
            "theta" => Ok(SweepAxis::Theta),
            other => Err(Error::config("sweep.axis", format!("unknown axis `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub axis: Option<SweepAxis>,
    pub values: Vec<f64>,
}

fn zero_shift() -> [f64; 2] {
    [0.0, 0.0]
}

fn unit_amplitude() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialKind {
    Uniform {
        c_r: f64,
        c_q: f64,
    },
    /// `base + amp * prod_i cos(2 pi m_i (x_i + shift_i))` for each phase.
    CosineBumps {
        r_base: f64,
        r_amp: f64,
        r_modes: [u32; 2],
        q_base: f64,
        q_amp: f64,
        q_modes: [u32; 2],
        #[serde(default = "zero_shift")]
        q_shift: [f64; 2],
    },
    /// Low-passed seeded noise rescaled to `[min_val, min_val + amplitude]`.
    RandomSmooth {
        cutoff_mode: usize,
        min_val: f64,
        #[serde(default = "unit_amplitude")]
        amplitude: f64,
    },
    /// Experimental rough data: a disc of density `inside` in a background.
    Indicator {
        inside: f64,
        outside: f64,
        radius: f64,
        q_value: f64,
    },
}

impl Default for InitialKind {
    fn default() -> Self {
        reference_initial()
    }
}

/// Cosine bumps used as the reference scenario.
pub fn reference_initial() -> InitialKind {
    InitialKind::CosineBumps {
        r_base: 0.5,
        r_amp: 0.45,
        r_modes: [1, 1],
        q_base: 0.5,
        q_amp: 0.45,
        q_modes: [1, 1],
        q_shift: [0.1, 0.0],
    }
}

impl InitialKind {
    pub fn validate(&self) -> Result<()> {
        let pos = |key: &str, v: f64| {
            if !(v > 0.0) || !v.is_finite() {
                Err(Error::config(key, format!("must be finite and > 0, got {v}")))
            } else {
                Ok(())
            }
        };
        match *self {
            InitialKind::Uniform { c_r, c_q } => {
                pos("initial.c_r", c_r)?;
                pos("initial.c_q", c_q)
            }
            InitialKind::CosineBumps {
                r_base,
                r_amp,
                q_base,
                q_amp,
                ..
            } => {
                pos("initial.r_base", r_base)?;
                pos("initial.q_base", q_base)?;
                if !(r_amp.abs() < r_base) {
                    return Err(Error::config("initial.r_amp", "amplitude must be below the base"));
                }
                if !(q_amp.abs() < q_base) {
                    return Err(Error::config("initial.q_amp", "amplitude must be below the base"));
                }
                Ok(())
            }
            InitialKind::RandomSmooth {
                cutoff_mode,
                min_val,
                amplitude,
            } => {
                if cutoff_mode == 0 {
                    return Err(Error::config("initial.cutoff_mode", "must be >= 1"));
                }
                pos("initial.min_val", min_val)?;
                if !(amplitude >= 0.0) || !amplitude.is_finite() {
                    return Err(Error::config("initial.amplitude", "must be >= 0"));
                }
                Ok(())
            }
            InitialKind::Indicator {
                inside,
                outside,
                radius,
                q_value,
            } => {
                pos("initial.inside", inside)?;
                pos("initial.outside", outside)?;
                pos("initial.q_value", q_value)?;
                if !(radius > 0.0 && radius < 0.5) {
                    return Err(Error::config("initial.radius", "must lie in (0, 1/2)"));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    #[serde(default)]
    pub grid: GridSection,
    pub time: TimeSection,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default)]
    pub picard: PicardConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub weight: WeightConfig,
    #[serde(default)]
    pub initial: InitialKind,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

impl RunConfig {
    /// Cosine-bump reference scenario on a 64^2 grid up to `T = 0.5`.
    pub fn reference() -> Self {
        RunConfig {
            model: ModelSection {
                gamma_plus: 1.5,
                gamma_minus: 3.0,
                a_plus: 1.0,
                a_minus: 1.0,
                nu: 0.05,
                k: 10.0,
            },
            grid: GridSection::default(),
            time: TimeSection {
                t_final: 0.5,
                dt: 1e-3,
                output_every: 0.1,
            },
            window: WindowConfig::default(),
            picard: PicardConfig::default(),
            kernel: KernelConfig::default(),
            weight: WeightConfig::default(),
            initial: reference_initial(),
            run: RunSection::default(),
            sweep: SweepSection::default(),
        }
    }

    pub fn params(&self) -> Result<ModelParams> {
        self.model.params()
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.grid.d, self.grid.n).map_err(|e| match e {
            Error::Config { key, msg } => Error::Config {
                key: format!("grid.{key}"),
                msg,
            },
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.params()?;
        let grid = self.grid()?;
        self.time.validate()?;
        self.window.validate()?;
        self.picard.validate()?;
        self.kernel.validate(grid.d)?;
        self.weight.validate()?;
        self.initial.validate()?;
        if let Some(axis) = self.sweep.axis {
            if self.sweep.values.is_empty() {
                return Err(Error::config("sweep.values", "an axis needs at least one value"));
            }
            for &v in &self.sweep.values {
                self.with_axis(axis, v)?;
            }
        } else if self.run.mode == Mode::Sweep {
            return Err(Error::config("sweep.axis", "mode = \"sweep\" needs an axis"));
        }
        Ok(())
    }

    /// Copy with one sweep axis set to `value`, validated.
    pub fn with_axis(&self, axis: SweepAxis, value: f64) -> Result<RunConfig> {
        let mut c = self.clone();
        match axis {
            SweepAxis::K => c.model.k = value,
            SweepAxis::Delta => c.picard.delta = value,
            SweepAxis::N => {
                if value.fract() != 0.0 || value < 0.0 {
                    return Err(Error::config("sweep.values", format!("grid size {value} is not an integer")));
                }
                c.grid.n = value as usize;
            }
            SweepAxis::Dt => c.time.dt = value,
            SweepAxis::Theta => c.weight.theta = value,
        }
        c.sweep = SweepSection::default();
        if c.run.mode == Mode::Sweep {
            c.run.mode = Mode::Lagrangian;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Io(format!("cannot serialize config: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config {
            key: toml_key(&e).unwrap_or_else(|| "<file>".into()),
            msg: e.message().trim().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Best-effort name of the offending key in a parse error.
fn toml_key(e: &toml::de::Error) -> Option<String> {
    let msg = e.message();
    let quoted = |prefix: &str| {
        msg.find(prefix).and_then(|i| {
            let rest = &msg[i + prefix.len()..];
            rest.find('`').map(|j| rest[..j].to_string())
        })
    };
    quoted("unknown field `")
        .or_else(|| quoted("missing field `"))
        .or_else(|| quoted("unknown variant `"))
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("<file>", format!("cannot read {}: {e}", path.display())))?;
    RunConfig::from_toml(&text)
}

/// Initial partial densities in the user's phase labelling, with `Z` in the
/// oriented labelling.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialData {
    pub r0: ScalarField,
    pub q0: ScalarField,
    pub z0: ScalarField,
}

fn noise(grid: GridSpec, seed: u64, stream: u64, cutoff: usize, min_val: f64, amplitude: f64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let raw = ScalarField {
        grid,
        values: (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    };
    let smooth = low_pass(&raw, cutoff);
    let (lo, hi) = (smooth.min(), smooth.max());
    let span = if hi > lo { hi - lo } else { 1.0 };
    smooth.map(|v| min_val + amplitude * (v - lo) / span)
}

pub fn make_initial_data(
    kind: &InitialKind,
    grid: GridSpec,
    params: &ModelParams,
    seed: u64,
    single_species: bool,
) -> Result<InitialData> {
    kind.validate()?;
    let bump = |x: Point, modes: [u32; 2], shift: [f64; 2]| {
        let mut v = (2.0 * PI * modes[0] as f64 * (x[0] + shift[0])).cos();
        if grid.d == 2 {
            v *= (2.0 * PI * modes[1] as f64 * (x[1] + shift[1])).cos();
        }
        v
    };
    let (r0, mut q0) = match *kind {
        InitialKind::Uniform { c_r, c_q } => (ScalarField::constant(grid, c_r), ScalarField::constant(grid, c_q)),
        InitialKind::CosineBumps {
            r_base,
            r_amp,
            r_modes,
            q_base,
            q_amp,
            q_modes,
            q_shift,
        } => (
            ScalarField::from_fn(grid, |x| r_base + r_amp * bump(x, r_modes, [0.0, 0.0])),
            ScalarField::from_fn(grid, |x| q_base + q_amp * bump(x, q_modes, q_shift)),
        ),
        InitialKind::RandomSmooth {
            cutoff_mode,
            min_val,
            amplitude,
        } => (
            noise(grid, seed, 0, cutoff_mode, min_val, amplitude),
            noise(grid, seed, 1, cutoff_mode, min_val, amplitude),
        ),
        InitialKind::Indicator {
            inside,
            outside,
            radius,
            q_value,
        } => (
            ScalarField::from_fn(grid, |x| {
                if grid::torus_distance(x, [0.5, 0.5], grid.d) < radius {
                    inside
                } else {
                    outside
                }
            }),
            ScalarField::constant(grid, q_value),
        ),
    };
    if single_species {
        q0 = ScalarField::zeros(grid);
    }
    if r0.min() <= 0.0 || (!single_species && q0.min() <= 0.0) {
        return Err(Error::config("initial", "initial densities must be positive"));
    }
    let (ro, qo) = orient_fields(params, &r0, &q0);
    let z0 = eulerian::closure_field(&ro, &qo, params)?;
    Ok(InitialData { r0, q0, z0 })
}

/// Switches between the user's and the oriented phase labelling.
fn orient_fields(p: &ModelParams, r: &ScalarField, q: &ScalarField) -> (ScalarField, ScalarField) {
    if p.phases_swapped {
        (q.clone(), r.clone())
    } else {
        (r.clone(), q.clone())
    }
}

/// Per-step energy bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRow {
    pub time: f64,
    pub mass_r: f64,
    pub mass_q: f64,
    pub energy: f64,
    pub energy_k: f64,
    pub dissipation: f64,
}

/// Two-path distances at an output time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalenceRow {
    pub time: f64,
    /// `|Z(R, Q) - Z_transported|_1` between the closure and Z-equation paths.
    pub l1_z_closure_vs_zeq: f64,
    /// Lagrangian push-forward against the Eulerian path (NaN if absent).
    pub l1_r_lagr_vs_eul: f64,
    pub l1_z_lagr_vs_eul: f64,
}

/// Grid fields at an output time, in the user's labelling (`Z` oriented).
#[derive(Debug, Clone)]
pub struct OutputFields {
    pub time: f64,
    pub r: ScalarField,
    pub q: ScalarField,
    pub z: ScalarField,
    pub log_w: ScalarField,
}

#[derive(Debug, Clone, Default)]
pub struct PicardSummary {
    pub iterations: usize,
    pub update_norms: Vec<f64>,
    pub damping: f64,
    pub convergence_factor: f64,
}

#[derive(Debug, Clone, Default)]
pub struct LagrangianSummary {
    pub windows: usize,
    pub substeps_checked: usize,
    pub halvings: usize,
    pub max_contraction_ratio: f64,
    pub min_tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Also integrate forward characteristics of the grid nodes.
    pub record_flow: bool,
    /// Keep the velocity history in the outcome.
    pub keep_velocity: bool,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub records: Vec<DiagnosticsRecord>,
    pub steps: Vec<StepRow>,
    pub equivalence: Vec<EquivalenceRow>,
    pub fields: Vec<OutputFields>,
    pub velocity: Option<VelocityHistory>,
    /// Forward positions of the grid nodes at the output times.
    pub flow: Option<Vec<Vec<Point>>>,
    pub picard: Option<PicardSummary>,
    pub lagrangian: Option<LagrangianSummary>,
    pub timings: Vec<(String, f64)>,
}

struct Clock(Instant, Vec<(String, f64)>);

impl Clock {
    fn lap(&mut self, what: &str) {
        let now = Instant::now();
        self.1.push((what.to_string(), (now - self.0).as_secs_f64()));
        self.0 = now;
    }
}

/// Runs the configured path(s) in memory.
pub fn simulate(cfg: &RunConfig, opts: RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut clock = Clock(Instant::now(), Vec::new());
    let p = cfg.params()?;
    let grid = cfg.grid()?;
    let init = make_initial_data(&cfg.initial, grid, &p, cfg.run.seed, cfg.run.single_species)?;
    let mode = if cfg.run.mode == Mode::Sweep {
        Mode::Lagrangian
    } else {
        cfg.run.mode
    };
    let mut outcome = RunOutcome::default();
    let kh0 = diag::build_k_h0(&cfg.kernel, grid)?;
    let mut eul_fields = None;
    if matches!(mode, Mode::Eulerian | Mode::Both) {
        let (out, fields) = eulerian_path(cfg, &p, grid, &init, &kh0, opts)?;
        clock.lap("eulerian");
        eul_fields = Some(fields);
        outcome = out;
    }
    if matches!(mode, Mode::Lagrangian | Mode::Both) {
        let mut out = lagrangian_path(cfg, &p, grid, &init, &kh0, opts, &mut clock)?;
        if let Some(ef) = eul_fields {
            out.equivalence = outcome
                .equivalence
                .iter()
                .zip(&out.fields)
                .zip(&ef)
                .map(|((row, lf), (er, ez))| EquivalenceRow {
                    l1_r_lagr_vs_eul: lf.r.l1_distance(er),
                    l1_z_lagr_vs_eul: lf.z.l1_distance(ez),
                    ..*row
                })
                .collect();
        }
        outcome = out;
    }
    clock.lap("diagnostics");
    outcome.timings = clock.1;
    Ok(outcome)
}

fn lagrangian_path(
    cfg: &RunConfig,
    p: &ModelParams,
    grid: GridSpec,
    init: &InitialData,
    kh0: &ScalarField,
    opts: RunOptions,
    clock: &mut Clock,
) -> Result<RunOutcome> {
    let dt = cfg.time.dt;
    let steps = cfg.time.steps();
    let out_steps = cfg.time.output_steps();
    let out_times: Vec<f64> = out_steps.iter().map(|&s| s as f64 * dt).collect();
    let (ro, qo) = orient_fields(p, &init.r0, &init.q0);
    let s0 = LagrangianState::new(ro.values.clone(), qo.values.clone(), p)?;
    let lrun = lagrangian::run(&s0, cfg.time.t_final, &out_times, p, &cfg.window)?;
    clock.lap("lagrangian");
    let traj = &lrun.trajectory;
    let summary = LagrangianSummary {
        windows: lrun.stats.len(),
        substeps_checked: lrun.stats.len() * lagrangian::M_SUB,
        halvings: lrun.stats.iter().map(|s| s.halvings).sum(),
        max_contraction_ratio: lrun.max_contraction_ratio(),
        min_tau: lrun.stats.iter().map(|s| s.tau).fold(f64::INFINITY, f64::min),
    };

    let sigma = eulerian::sigma_history(traj, grid, dt, steps)?;
    let picard = picard_solve(&sigma, dt, &cfg.picard)?;
    drop(sigma);
    clock.lap("picard");
    let hist = picard.history;

    let k = p.k;
    let mut labels = LabelMap::identity(grid, cfg.picard.interp);
    let mut d_hist = Vec::with_capacity(steps + 1);
    let mut step_rows = Vec::with_capacity(steps + 1);
    let mut partial = Vec::new();
    let mut ratio_at = Vec::new();
    for n in 0..=steps {
        if n > 0 {
            labels.advance(&hist);
        }
        let t = n as f64 * dt;
        let st = traj.state_at(t)?;
        let jac = st.jacobian();
        let energy = diag::marker_energy(&st.r, &st.q, &st.z, &jac, f64::INFINITY, p)?;
        let energy_k = diag::marker_energy(&st.r, &st.q, &st.z, &jac, k, p)?;
        let dissipation = diag::dissipation(&hist.u[n]);
        let (mr, mq) = swap_if(p, st.mass_r(), st.mass_q());
        step_rows.push(StepRow {
            time: t,
            mass_r: mr,
            mass_q: mq,
            energy,
            energy_k,
            dissipation,
        });
        let y = labels.points();
        let (rf, qf, zf) = pushforward_fields(&st.r, &st.q, &y, grid, p, cfg.run.interp)?;
        d_hist.push(diag::damping_d(&hist.u[n], &zf, k, p)?);
        if out_steps.contains(&n) {
            let tz: Vec<f64> = st.z.iter().map(|&z| crate::closure::truncate(z, k)).collect();
            let lp_r = diag::marker_lp_norm(&st.r, &jac, p.gamma_plus)?;
            let lp_q = diag::marker_lp_norm(&st.q, &jac, p.gamma_minus)?;
            let (lp_r, lp_q) = swap_if(p, lp_r, lp_q);
            let rec = DiagnosticsRecord {
                time: t,
                mass_r: mr,
                mass_q: mq,
                energy,
                energy_k,
                dissipation,
                lp_z_gp: diag::marker_lp_norm(&st.z, &jac, p.gamma_plus)?,
                lp_r_gp: lp_r,
                lp_q_gm: lp_q,
                lp_tkz_gp: diag::marker_lp_norm(&tz, &jac, p.gamma_plus)?,
                sigma_max: st.sigma.iter().fold(0.0, |m: f64, v| m.max(v.abs())),
                log_h0_norm: kh0.mean(),
                picard_iters: picard.iterations,
                mean_defect: picard.mean_defects[n],
                ..Default::default()
            };
            let ratio = lrun
                .stats
                .iter()
                .filter(|s| s.t_end <= t + 1e-12)
                .fold(0.0, |m: f64, s| m.max(s.contraction_ratio));
            ratio_at.push(ratio);
            partial.push((rec, rf, qf, zf));
        }
    }
    clock.lap("pushforward");
    let log_w = diag::solve_log_weights(&hist, &d_hist, cfg.weight.theta, &out_times)?;
    clock.lap("weights");
    let mut records = Vec::new();
    let mut fields = Vec::new();
    for (((mut rec, rf, qf, zf), lw), ratio) in partial.into_iter().zip(log_w).zip(ratio_at) {
        finish_record(&mut rec, &rf, &zf, &lw, kh0, cfg)?;
        rec.contraction_ratio = ratio;
        records.push(rec);
        let (r_user, q_user) = orient_fields(p, &rf, &qf);
        fields.push(OutputFields {
            time: rec.time,
            r: r_user,
            q: q_user,
            z: zf,
            log_w: lw,
        });
    }
    clock.lap("oscillation");
    let flow = if opts.record_flow {
        let stride = whole_steps(cfg.time.output_every, dt).unwrap_or(1);
        let fm = eulerian::integrate_forward(&hist, &grid.nodes(), 0.0, cfg.time.t_final, stride)?;
        Some(fm.x)
    } else {
        None
    };
    let ps = PicardSummary {
        iterations: picard.iterations,
        convergence_factor: eulerian::convergence_factor(&picard.update_norms),
        update_norms: picard.update_norms,
        damping: picard.damping,
    };
    Ok(RunOutcome {
        records,
        steps: step_rows,
        equivalence: Vec::new(),
        fields,
        velocity: opts.keep_velocity.then_some(hist),
        flow,
        picard: Some(ps),
        lagrangian: Some(summary),
        timings: Vec::new(),
    })
}

fn swap_if(p: &ModelParams, a: f64, b: f64) -> (f64, f64) {
    if p.phases_swapped {
        (b, a)
    } else {
        (a, b)
    }
}

/// Weight budget and oscillation functionals of one output row. `rf` is
/// in the oriented labelling.
fn finish_record(
    rec: &mut DiagnosticsRecord,
    rf: &ScalarField,
    zf: &ScalarField,
    log_w: &ScalarField,
    kh0: &ScalarField,
    cfg: &RunConfig,
) -> Result<()> {
    rec.logw_budget = diag::log_weight_budget_from_log(rf, zf, log_w)?;
    let w = log_w.map(f64::exp);
    let osc = diag::oscillation_functional(rf, zf, &w, kh0, &cfg.kernel, cfg.run.seed)?;
    rec.s_h0_weighted = osc.weighted;
    rec.s_h0_unweighted = osc.unweighted;
    Ok(())
}

/// Grid path: semi-Lagrangian transport driven by the pressure potential,
/// with a Z-equation companion sharing the same velocity.
fn eulerian_path(
    cfg: &RunConfig,
    p: &ModelParams,
    grid: GridSpec,
    init: &InitialData,
    kh0: &ScalarField,
    opts: RunOptions,
) -> Result<(RunOutcome, Vec<(ScalarField, ScalarField)>)> {
    let dt = cfg.time.dt;
    let steps = cfg.time.steps();
    let out_steps = cfg.time.output_steps();
    let interp = cfg.run.interp;
    let k = p.k;
    let (ro, qo) = orient_fields(p, &init.r0, &init.q0);
    let mut state = FieldState::from_rq(ro, qo, p)?;
    let mut companion = state.clone();
    let companion_mode = match cfg.run.transport {
        TransportMode::Continuity => TransportMode::ZEquation,
        TransportMode::ZEquation => TransportMode::Continuity,
    };
    let mut phis = vec![pressure_potential(&state.z, p)];
    let mut d_hist = Vec::with_capacity(steps + 1);
    let mut step_rows = Vec::with_capacity(steps + 1);
    let mut partial = Vec::new();
    let mut equivalence = Vec::new();
    let mut out_fields = Vec::new();
    for n in 0..=steps {
        let t = n as f64 * dt;
        let u = grid::grad(&phis[n]);
        let energy = diag::energy(&state.r, &state.q, &state.z, p)?;
        let energy_k = diag::truncated_energy(&state.r, &state.q, &state.z, k, p)?;
        let dissipation = diag::dissipation(&u);
        let (mr, mq) = swap_if(p, state.r.mean(), state.q.mean());
        step_rows.push(StepRow {
            time: t,
            mass_r: mr,
            mass_q: mq,
            energy,
            energy_k,
            dissipation,
        });
        d_hist.push(diag::damping_d(&u, &state.z, k, p)?);
        if out_steps.contains(&n) {
            let tz = state.z.map(|z| crate::closure::truncate(z, k));
            let (lp_r, lp_q) = swap_if(
                p,
                diag::lp_norm(&state.r, p.gamma_plus)?,
                diag::lp_norm(&state.q, p.gamma_minus)?,
            );
            let div_u = grid::laplacian(&phis[n]);
            partial.push((
                DiagnosticsRecord {
                    time: t,
                    mass_r: mr,
                    mass_q: mq,
                    energy,
                    energy_k,
                    dissipation,
                    lp_z_gp: diag::lp_norm(&state.z, p.gamma_plus)?,
                    lp_r_gp: lp_r,
                    lp_q_gm: lp_q,
                    lp_tkz_gp: diag::lp_norm(&tz, p.gamma_plus)?,
                    sigma_max: div_u.max_abs(),
                    log_h0_norm: kh0.mean(),
                    ..Default::default()
                },
                state.clone(),
            ));
            let (zc, zz) = match cfg.run.transport {
                TransportMode::Continuity => (&state.z, &companion.z),
                TransportMode::ZEquation => (&companion.z, &state.z),
            };
            equivalence.push(EquivalenceRow {
                time: t,
                l1_z_closure_vs_zeq: zc.l1_distance(zz),
                l1_r_lagr_vs_eul: f64::NAN,
                l1_z_lagr_vs_eul: f64::NAN,
            });
            out_fields.push((state.r.clone(), state.z.clone()));
        }
        if n == steps {
            break;
        }
        let next_phi = if n == 0 {
            phis[0].clone()
        } else {
            phis[n].zip_map(&phis[n - 1], |a, b| 2.0 * a - b)
        };
        state = eulerian_transport_step(&state, &phis[n], &next_phi, dt, p, cfg.run.transport, interp)?;
        companion = eulerian_transport_step(&companion, &phis[n], &next_phi, dt, p, companion_mode, interp)?;
        phis.push(pressure_potential(&state.z, p));
    }
    let hist = VelocityHistory::from_potentials(dt, phis);
    let out_times: Vec<f64> = out_steps.iter().map(|&s| s as f64 * dt).collect();
    let log_w = diag::solve_log_weights(&hist, &d_hist, cfg.weight.theta, &out_times)?;
    let mut records = Vec::new();
    let mut fields = Vec::new();
    for ((mut rec, st), lw) in partial.into_iter().zip(log_w) {
        finish_record(&mut rec, &st.r, &st.z, &lw, kh0, cfg)?;
        records.push(rec);
        let (r_user, q_user) = orient_fields(p, &st.r, &st.q);
        fields.push(OutputFields {
            time: rec.time,
            r: r_user,
            q: q_user,
            z: st.z,
            log_w: lw,
        });
    }
    let flow = if opts.record_flow {
        let stride = whole_steps(cfg.time.output_every, dt).unwrap_or(1);
        Some(eulerian::integrate_forward(&hist, &grid.nodes(), 0.0, cfg.time.t_final, stride)?.x)
    } else {
        None
    };
    Ok((
        RunOutcome {
            records,
            steps: step_rows,
            equivalence,
            fields,
            velocity: opts.keep_velocity.then_some(hist),
            flow,
            picard: None,
            lagrangian: None,
            timings: Vec::new(),
        },
        out_fields,
    ))
}

pub fn diagnostics_csv(records: &[DiagnosticsRecord]) -> String {
    let mut s = diag::CSV_HEADER.join(",");
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

pub fn steps_csv(rows: &[StepRow]) -> String {
    let mut s = String::from("time,mass_R,mass_Q,energy,energy_k,dissipation\n");
    for r in rows {
        let cells = [r.time, r.mass_r, r.mass_q, r.energy, r.energy_k, r.dissipation];
        let line: Vec<String> = cells.iter().map(|&v| diag::fmt_f64(v)).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

pub fn equivalence_csv(rows: &[EquivalenceRow]) -> String {
    let mut s = String::from("time,l1_Z_closure_vs_zeq,l1_R_lagr_vs_eul,l1_Z_lagr_vs_eul\n");
    for r in rows {
        let cells = [r.time, r.l1_z_closure_vs_zeq, r.l1_r_lagr_vs_eul, r.l1_z_lagr_vs_eul];
        let line: Vec<String> = cells.iter().map(|&v| diag::fmt_f64(v)).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, Serialize)]
struct Manifest<'a> {
    status: &'a str,
    error: Option<String>,
    exit_code: i32,
    version: &'a str,
    threads: usize,
    config: &'a RunConfig,
    wall_times: Vec<(String, f64)>,
    picard_iterations: Option<usize>,
    picard_update_norms: Option<Vec<f64>>,
    lagrangian_windows: Option<usize>,
    window_halvings: Option<usize>,
    max_contraction_ratio: Option<f64>,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io(format!("cannot write {}: {e}", path.display())))
}

fn write_manifest(dir: &Path, cfg: &RunConfig, outcome: Option<&RunOutcome>, err: Option<&Error>, wall: f64) -> Result<()> {
    let mut wall_times = outcome.map(|o| o.timings.clone()).unwrap_or_default();
    wall_times.push(("total".into(), wall));
    let m = Manifest {
        status: if err.is_some() { "FAILED" } else { "ok" },
        error: err.map(|e| e.to_string()),
        exit_code: err.map_or(0, |e| e.exit_code()),
        version: env!("CARGO_PKG_VERSION"),
        threads: rayon::current_num_threads(),
        config: cfg,
        wall_times,
        picard_iterations: outcome.and_then(|o| o.picard.as_ref().map(|p| p.iterations)),
        picard_update_norms: outcome.and_then(|o| o.picard.as_ref().map(|p| p.update_norms.clone())),
        lagrangian_windows: outcome.and_then(|o| o.lagrangian.as_ref().map(|l| l.windows)),
        window_halvings: outcome.and_then(|o| o.lagrangian.as_ref().map(|l| l.halvings)),
        max_contraction_ratio: outcome.and_then(|o| o.lagrangian.as_ref().map(|l| l.max_contraction_ratio)),
    };
    let text = serde_json::to_string_pretty(&m).map_err(|e| Error::Io(e.to_string()))?;
    write_text(&dir.join("run_manifest.json"), &text)
}

/// Writes every artifact of a finished run into `dir`.
pub fn write_artifacts(dir: &Path, cfg: &RunConfig, outcome: &RunOutcome) -> Result<()> {
    write_text(&dir.join("diagnostics.csv"), &diagnostics_csv(&outcome.records))?;
    write_text(&dir.join("steps.csv"), &steps_csv(&outcome.steps))?;
    if !outcome.equivalence.is_empty() {
        write_text(&dir.join("equivalence.csv"), &equivalence_csv(&outcome.equivalence))?;
    }
    if cfg.run.snapshots {
        for (i, f) in outcome.fields.iter().enumerate() {
            write_snapshot(dir, "R", i, f.time, &f.r)?;
            write_snapshot(dir, "Q", i, f.time, &f.q)?;
            write_snapshot(dir, "Z", i, f.time, &f.z)?;
            write_snapshot(dir, "W", i, f.time, &f.log_w.map(f64::exp))?;
        }
    }
    Ok(())
}

/// Runs `cfg` and writes its artifacts under `cfg.run.output_dir`. A failed
/// run keeps what was written and marks the manifest `FAILED`.
pub fn execute(cfg: &RunConfig) -> Result<RunOutcome> {
    if cfg.run.mode == Mode::Sweep {
        let axis = cfg
            .sweep
            .axis
            .ok_or_else(|| Error::config("sweep.axis", "mode = \"sweep\" needs an axis"))?;
        sweep(cfg, axis, &cfg.sweep.values)?;
        return Ok(RunOutcome::default());
    }
    execute_with(cfg, RunOptions::default())
}

/// [`execute`] with explicit run options; never sweeps.
pub fn execute_with(cfg: &RunConfig, opts: RunOptions) -> Result<RunOutcome> {
    let start = Instant::now();
    let dir = cfg.run.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io(format!("cannot create {}: {e}", dir.display())))?;
    let result = (|| {
        cfg.validate()?;
        if cfg.run.snapshots {
            let p = cfg.params()?;
            let init = make_initial_data(&cfg.initial, cfg.grid()?, &p, cfg.run.seed, cfg.run.single_species)?;
            write_snapshot(&dir, "R", 0, 0.0, &init.r0)?;
            write_snapshot(&dir, "Q", 0, 0.0, &init.q0)?;
            write_snapshot(&dir, "Z", 0, 0.0, &init.z0)?;
        }
        let out = simulate(cfg, opts)?;
        write_artifacts(&dir, cfg, &out)?;
        Ok(out)
    })();
    let wall = start.elapsed().as_secs_f64();
    match result {
        Ok(out) => {
            write_manifest(&dir, cfg, Some(&out), None, wall)?;
            Ok(out)
        }
        Err(e) => {
            let _ = write_manifest(&dir, cfg, None, Some(&e), wall);
            Err(e)
        }
    }
}

/// One row of `sweep_summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub status: String,
    pub sup_lp_tkz_gp: f64,
    pub sup_lp_z_gp: f64,
    pub sup_lp_r_gp: f64,
    pub sup_lp_q_gm: f64,
    pub int_dissipation: f64,
    pub final_energy_k: f64,
    pub picard_iters: usize,
    pub picard_factor: f64,
    /// `sup_t |u - u_prev|_1` against the previous entry (NaN if not comparable).
    pub u_gap_prev: f64,
    /// `sup_t` mean torus distance of forward positions against the previous entry.
    pub x_gap_prev: f64,
    pub final_s_weighted: f64,
    pub final_logw_budget: f64,
}

pub const SWEEP_HEADER: &str = "axis,value,status,sup_lp_TkZ_gp,sup_lp_Z_gp,sup_lp_R_gp,sup_lp_Q_gm,int_dissipation,final_energy_k,picard_iters,picard_factor,u_gap_prev,x_gap_prev,final_S_h0_weighted,final_logw_budget";

/// Trapezoid rule over the per-step dissipation.
pub fn integrated_dissipation(steps: &[StepRow]) -> f64 {
    let terms: Vec<f64> = steps
        .windows(2)
        .map(|w| 0.5 * (w[1].time - w[0].time) * (w[0].dissipation + w[1].dissipation))
        .collect();
    grid::det_sum(&terms)
}

fn summarize(value: f64, out: &RunOutcome) -> SweepRow {
    let sup = |f: fn(&DiagnosticsRecord) -> f64| out.records.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let last = out.records.last().copied().unwrap_or_default();
    SweepRow {
        value,
        status: "ok".into(),
        sup_lp_tkz_gp: sup(|r| r.lp_tkz_gp),
        sup_lp_z_gp: sup(|r| r.lp_z_gp),
        sup_lp_r_gp: sup(|r| r.lp_r_gp),
        sup_lp_q_gm: sup(|r| r.lp_q_gm),
        int_dissipation: integrated_dissipation(&out.steps),
        final_energy_k: last.energy_k,
        picard_iters: out.picard.as_ref().map_or(0, |p| p.iterations),
        picard_factor: out.picard.as_ref().map_or(f64::NAN, |p| p.convergence_factor),
        u_gap_prev: f64::NAN,
        x_gap_prev: f64::NAN,
        final_s_weighted: last.s_h0_weighted,
        final_logw_budget: last.logw_budget,
    }
}

/// `sup_n |u_n - v_n|_1` over matching histories.
pub fn velocity_gap(a: &VelocityHistory, b: &VelocityHistory) -> Option<f64> {
    if a.grid() != b.grid() || a.phi.len() != b.phi.len() || a.dt != b.dt {
        return None;
    }
    Some(a.u.iter().zip(&b.u).map(|(x, y)| x.l1_distance(y)).fold(0.0, f64::max))
}

/// `sup_t` mean torus distance between two sets of forward positions.
pub fn flow_gap(a: &[Vec<Point>], b: &[Vec<Point>], d: usize) -> Option<f64> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.len() != y.len()) {
        return None;
    }
    Some(
        a.iter()
            .zip(b)
            .map(|(x, y)| eulerian::mean_point_distance(x, y, d))
            .fold(0.0, f64::max),
    )
}

pub fn sweep_csv(axis: SweepAxis, rows: &[SweepRow]) -> String {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    let f = |v: f64| if v.is_nan() { String::new() } else { diag::fmt_f64(v) };
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            axis.name(),
            diag::fmt_f64(r.value),
            r.status,
            f(r.sup_lp_tkz_gp),
            f(r.sup_lp_z_gp),
            f(r.sup_lp_r_gp),
            f(r.sup_lp_q_gm),
            f(r.int_dissipation),
            f(r.final_energy_k),
            r.picard_iters,
            f(r.picard_factor),
            f(r.u_gap_prev),
            f(r.x_gap_prev),
            f(r.final_s_weighted),
            f(r.final_logw_budget),
        );
    }
    s
}

/// Subdirectory name of a sweep entry.
pub fn sweep_dir_name(axis: SweepAxis, value: f64) -> String {
    format!("{}_{}", axis.name(), value)
}

/// Runs `cfg` once per value of `axis`, each in its own subdirectory, and
/// writes `sweep_summary.csv`. Returns the first failure after all entries
/// have been attempted.
pub fn sweep(cfg: &RunConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::config("sweep.values", "need at least one value"));
    }
    let base = cfg.run.output_dir.clone();
    std::fs::create_dir_all(&base).map_err(|e| Error::Io(format!("cannot create {}: {e}", base.display())))?;
    let opts = RunOptions {
        record_flow: true,
        keep_velocity: true,
    };
    let mut rows = Vec::new();
    let mut first_err = None;
    let mut prev: Option<RunOutcome> = None;
    let d = cfg.grid.d;
    for &v in values {
        let mut c = match cfg.with_axis(axis, v) {
            Ok(c) => c,
            Err(e) => {
                first_err.get_or_insert(e);
                continue;
            }
        };
        c.run.output_dir = base.join(sweep_dir_name(axis, v));
        match execute_with(&c, opts) {
            Ok(out) => {
                let mut row = summarize(v, &out);
                if let Some(p) = &prev {
                    if let (Some(a), Some(b)) = (&p.velocity, &out.velocity) {
                        row.u_gap_prev = velocity_gap(a, b).unwrap_or(f64::NAN);
                    }
                    if let (Some(a), Some(b)) = (&p.flow, &out.flow) {
                        row.x_gap_prev = flow_gap(a, b, d).unwrap_or(f64::NAN);
                    }
                }
                rows.push(row);
                prev = Some(RunOutcome {
                    fields: Vec::new(),
                    ..out
                });
            }
            Err(e) => {
                rows.push(SweepRow {
                    value: v,
                    status: "FAILED".into(),
                    sup_lp_tkz_gp: f64::NAN,
                    sup_lp_z_gp: f64::NAN,
                    sup_lp_r_gp: f64::NAN,
                    sup_lp_q_gm: f64::NAN,
                    int_dissipation: f64::NAN,
                    final_energy_k: f64::NAN,
                    picard_iters: 0,
                    picard_factor: f64::NAN,
                    u_gap_prev: f64::NAN,
                    x_gap_prev: f64::NAN,
                    final_s_weighted: f64::NAN,
                    final_logw_budget: f64::NAN,
                });
                prev = None;
                first_err.get_or_insert(e);
            }
        }
    }
    write_text(&base.join("sweep_summary.csv"), &sweep_csv(axis, &rows))?;
    match first_err {
        Some(e) => Err(e),
        None => Ok(rows),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        "[model]\ngamma_plus = 1.5\ngamma_minus = 3.0\n[time]\nt_final = 0.5\n"
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = RunConfig::from_toml(minimal()).unwrap();
        assert_eq!(c.grid, GridSection { d: 2, n: 64 });
        assert_eq!(c.time.dt, 1e-3);
        assert_eq!(c.picard, PicardConfig::default());
        assert_eq!(c.model.k, f64::INFINITY);
        assert_eq!(c.run.mode, Mode::Lagrangian);
    }

    #[test]
    fn bad_keys_are_named() {
        let e = RunConfig::from_toml(&minimal().replace("1.5", "0.9")).unwrap_err();
        assert!(e.to_string().contains("gamma_plus"), "{e}");
        assert_eq!(e.exit_code(), 2);
        let e = RunConfig::from_toml(&format!("{}bogus = 1\n", minimal())).unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
        let e = RunConfig::from_toml("[model]\ngamma_plus = 1.5\ngamma_minus = 3.0\n").unwrap_err();
        assert!(e.to_string().contains("time"), "{e}");
        let e = RunConfig::from_toml(&format!("{}[picard]\ndamping = 2.0\n", minimal())).unwrap_err();
        assert!(e.to_string().contains("picard.damping"), "{e}");
    }

    #[test]
    fn reference_round_trips() {
        let c = RunConfig::reference();
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
        let mut inf = c.clone();
        inf.model.k = f64::INFINITY;
        assert_eq!(RunConfig::from_toml(&inf.to_toml().unwrap()).unwrap(), inf);
    }

    #[test]
    fn initial_data_kinds() {
        let g = GridSpec::new(2, 16).unwrap();
        let p = ModelParams::simple(1.5, 3.0).unwrap();
        let u = make_initial_data(&InitialKind::Uniform { c_r: 1.0, c_q: 1.0 }, g, &p, 0, false).unwrap();
        let golden_sq = (3.0 + 5f64.sqrt()) / 2.0;
        assert!(u.z0.values.iter().all(|&z| (z - golden_sq).abs() < 1e-12));
        let cb = InitialKind::CosineBumps {
            r_base: 1.0,
            r_amp: 0.5,
            r_modes: [1, 1],
            q_base: 1.0,
            q_amp: 0.5,
            q_modes: [1, 1],
            q_shift: [0.0, 0.0],
        };
        let d = make_initial_data(&cb, g, &p, 0, false).unwrap();
        assert!((d.r0.min() - 0.5).abs() < 1e-15);
        let rs = InitialKind::RandomSmooth {
            cutoff_mode: 3,
            min_val: 0.5,
            amplitude: 1.0,
        };
        let a = make_initial_data(&rs, g, &p, 42, false).unwrap();
        let b = make_initial_data(&rs, g, &p, 42, false).unwrap();
        assert_eq!(a, b);
        assert!((a.r0.min() - 0.5).abs() < 1e-14 && a.r0.min() > 0.0);
        let c = make_initial_data(&rs, g, &p, 43, false).unwrap();
        assert_ne!(a.r0, c.r0);
        let bad = InitialKind::CosineBumps {
            r_base: 1.0,
            r_amp: 1.0,
            r_modes: [1, 1],
            q_base: 1.0,
            q_amp: 0.5,
            q_modes: [1, 1],
            q_shift: [0.0, 0.0],
        };
        assert!(make_initial_data(&bad, g, &p, 0, false).is_err());
    }

    #[test]
    fn output_schedule() {
        let t = TimeSection {
            t_final: 0.25,
            dt: 1e-3,
            output_every: 0.1,
        };
        assert_eq!(t.output_steps(), vec![0, 100, 200, 250]);
        let z = TimeSection { t_final: 0.0, ..t };
        assert_eq!(z.output_steps(), vec![0]);
        assert!(TimeSection { dt: 0.3, ..t }.validate().is_err());
    }
}
