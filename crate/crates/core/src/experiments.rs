//! Config-driven runs and sweeps behind the `rte` binary.
//!
//! A run is described by a JSON [`RunConfig`]. Every command writes its
//! tables as CSV (header row, fixed column order, 17 significant digits) and
//! its metadata as JSON into the output directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RteError};
use crate::integrators::{
    integrate, Initial, Scheme, StepConfig, StepDiagnostics, SubstepSolver, SubstepTrace, DEFAULT_REFERENCE_CAP,
};
use crate::linalg::weighted::DEFAULT_MGS_SEED;
use crate::model::{ExpMethod, RteModel};
use crate::state::{error_report, ErrorReport, LowRankState};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "RTE_OUTPUT_DIR";

const DEFAULT_OUTPUT_DIR: &str = "out";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    pub fn values(&self) -> Vec<f64> {
        match self {
            OneOrMany::One(v) => vec![*v],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Trig {
    Sin,
    #[default]
    Cos,
}

/// `coeff · trig(k π x) · μ^p`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolyFourierTerm {
    pub coeff: f64,
    pub k: u32,
    pub p: u32,
    #[serde(default)]
    pub trig: Trig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    /// `((x−1)² + 1)(1 + μ²)`
    SeparableProduct,
    /// `1 + Σ_{k=1}^{10} 10^{−k} sin(kπx) μ^k`
    SineLadder,
    /// Sum of `coeff · trig(kπx) · μ^p` terms.
    CustomPolyFourier { terms: Vec<PolyFourierTerm> },
}

impl InitialCondition {
    pub fn evaluate(&self, x: f64, mu: f64) -> f64 {
        use std::f64::consts::PI;
        match self {
            InitialCondition::SeparableProduct => ((x - 1.0).powi(2) + 1.0) * (1.0 + mu * mu),
            InitialCondition::SineLadder => {
                1.0 + (1..=10).map(|k| 10f64.powi(-k) * (k as f64 * PI * x).sin() * mu.powi(k)).sum::<f64>()
            }
            InitialCondition::CustomPolyFourier { terms } => terms
                .iter()
                .map(|t| {
                    let arg = t.k as f64 * PI * x;
                    let trig = match t.trig {
                        Trig::Sin => arg.sin(),
                        Trig::Cos => arg.cos(),
                    };
                    t.coeff * trig * mu.powi(t.p as i32)
                })
                .sum(),
        }
    }

    pub fn sample(&self, model: &RteModel) -> DMatrix<f64> {
        DMatrix::from_fn(model.n_x(), model.n_mu(), |i, j| self.evaluate(model.grid.points[i], model.quad.nodes[j]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub domain: [f64; 2],
    pub n_x: usize,
    pub n_mu: usize,
    pub rank: usize,
    pub eps: OneOrMany,
    pub dt: OneOrMany,
    pub t_final: f64,
    pub integrator: Scheme,
    pub initial_condition: InitialCondition,
    pub substep_solver: SubstepSolver,
    pub exp_method: ExpMethod,
    pub expmv_tol: f64,
    pub linear_solve_tol: f64,
    pub output_dir: Option<String>,
    pub seed: u64,
    pub basis_pinning: bool,
    pub debug_trace: bool,
    pub coalesce_reference: bool,
    pub reference_cap: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            domain: [0.0, 2.0],
            n_x: 200,
            n_mu: 32,
            rank: 5,
            eps: OneOrMany::One(1.0),
            dt: OneOrMany::One(0.1),
            t_final: 1.0,
            integrator: Scheme::Gap,
            initial_condition: InitialCondition::SeparableProduct,
            substep_solver: SubstepSolver::Exponential,
            exp_method: ExpMethod::Auto,
            expmv_tol: 1e-10,
            linear_solve_tol: 1e-12,
            output_dir: None,
            seed: DEFAULT_MGS_SEED,
            basis_pinning: false,
            debug_trace: false,
            coalesce_reference: true,
            reference_cap: DEFAULT_REFERENCE_CAP,
        }
    }
}

fn parse_override_value(raw: &str) -> serde_json::Value {
    serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()))
}

impl RunConfig {
    /// Parses JSON; errors carry the offending field path.
    pub fn from_json_str(text: &str) -> Result<Self> {
        Self::from_value(serde_json::from_str(text).map_err(|e| RteError::config("<root>", e.to_string()))?)
    }

    fn from_value(value: serde_json::Value) -> Result<Self> {
        let cfg: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            RteError::config(if path == "." { "<root>".to_string() } else { path }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with_overrides(path, &[])
    }

    /// Loads `path`, then applies `key=value` overrides (dotted keys reach
    /// nested fields; values are parsed as JSON, falling back to strings).
    pub fn load_with_overrides(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| RteError::config(path.display().to_string(), format!("cannot read config: {e}")))?;
        let mut value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| RteError::config(path.display().to_string(), e.to_string()))?;
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        Self::from_value(value)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let [a, b] = self.domain;
        if !(a.is_finite() && b.is_finite() && b > a) {
            return Err(RteError::config("domain", format!("need a < b, got [{a}, {b}]")));
        }
        if self.n_x < 2 {
            return Err(RteError::config("n_x", format!("must be at least 2, got {}", self.n_x)));
        }
        if self.n_mu < 2 {
            return Err(RteError::config("n_mu", format!("must be at least 2, got {}", self.n_mu)));
        }
        if self.rank == 0 || self.rank > self.n_x.min(self.n_mu) {
            return Err(RteError::config("rank", format!("must lie in 1..={}, got {}", self.n_x.min(self.n_mu), self.rank)));
        }
        let eps = self.eps.values();
        if eps.is_empty() {
            return Err(RteError::config("eps", "list is empty"));
        }
        for (i, e) in eps.iter().enumerate() {
            if !(*e > 0.0 && *e <= 10.0) {
                return Err(RteError::config(format!("eps[{i}]"), format!("must lie in (0, 10], got {e}")));
            }
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return Err(RteError::config("t_final", format!("must be non-negative, got {}", self.t_final)));
        }
        let dts = self.dt.values();
        if dts.is_empty() {
            return Err(RteError::config("dt", "list is empty"));
        }
        for (i, dt) in dts.iter().enumerate() {
            if !(*dt > 0.0 && dt.is_finite()) {
                return Err(RteError::config(format!("dt[{i}]"), format!("must be positive, got {dt}")));
            }
            if self.t_final > 0.0 {
                self.n_steps(*dt).map_err(|e| match e {
                    RteError::Config { message, .. } => RteError::config(format!("dt[{i}]"), message),
                    other => other,
                })?;
            }
        }
        for (name, tol) in [("expmv_tol", self.expmv_tol), ("linear_solve_tol", self.linear_solve_tol)] {
            if !(tol > 0.0 && tol < 1e-2) {
                return Err(RteError::config(name, format!("must lie in (0, 1e-2), got {tol}")));
            }
        }
        if let InitialCondition::CustomPolyFourier { terms } = &self.initial_condition {
            if terms.is_empty() {
                return Err(RteError::config("initial_condition.custom_poly_fourier.terms", "no terms"));
            }
        }
        Ok(())
    }

    /// `round(t_final / dt)`, rejecting step sizes that do not divide `t_final`.
    pub fn n_steps(&self, dt: f64) -> Result<usize> {
        let n = (self.t_final / dt).round();
        if n < 1.0 || (n * dt - self.t_final).abs() > 1e-9 * self.t_final {
            return Err(RteError::config("dt", format!("{dt} does not divide t_final = {}", self.t_final)));
        }
        Ok(n as usize)
    }

    fn require_positive_time(&self) -> Result<()> {
        if self.t_final <= 0.0 {
            return Err(RteError::config("t_final", "must be positive for this command"));
        }
        Ok(())
    }

    fn single(&self, list: &OneOrMany, name: &str) -> Result<f64> {
        match list.values().as_slice() {
            [v] => Ok(*v),
            _ => Err(RteError::config(name, "this command takes a single value")),
        }
    }

    pub fn model(&self, eps: f64) -> Result<RteModel> {
        RteModel::build(self.domain[0], self.domain[1], self.n_x, self.n_mu, eps)
    }

    pub fn step_config(&self, dt: f64) -> StepConfig {
        StepConfig {
            dt,
            substep_solver: self.substep_solver,
            expmv_tol: self.expmv_tol,
            linear_solve_tol: self.linear_solve_tol,
            exp_method: self.exp_method,
            basis_pinning: self.basis_pinning,
            seed: self.seed,
            debug_trace: self.debug_trace,
            coalesce_reference: self.coalesce_reference,
            reference_cap: self.reference_cap,
        }
    }

    /// Output directory: explicit argument, then config, then
    /// `$RTE_OUTPUT_DIR`, then `./out`.
    pub fn resolve_output_dir(&self, explicit: Option<&Path>) -> PathBuf {
        if let Some(p) = explicit {
            return p.to_path_buf();
        }
        if let Some(p) = &self.output_dir {
            return PathBuf::from(p);
        }
        std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }
}

fn apply_override(root: &mut serde_json::Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| RteError::config(spec, "override must have the form key=value"))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(RteError::config(spec, "empty override key"));
    }
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| RteError::config(parts[..i].join("."), "cannot override inside a non-object"))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), parse_override_value(raw.trim()));
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    Ok(())
}

/// Result of one integration, written as `result.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: RunConfig,
    pub scheme: Scheme,
    pub eps: f64,
    pub dt: f64,
    pub n_steps: usize,
    /// Weighted norm of the part of `f₀` discarded by the rank-`r` projection.
    pub delta0: Option<f64>,
    /// Against the full-rank reference, when it fits the size cap.
    pub error_report: Option<ErrorReport>,
    /// `σ_{r+1}` of the reference, absolute and relative to its norm.
    pub sigma_tail: Option<f64>,
    pub sigma_tail_rel: Option<f64>,
    /// Relative density error against `exp((T/3) D_xx) ρ₀`.
    pub ap_limit_density_error: f64,
    pub initial_mass: f64,
    pub final_mass: f64,
    pub final_weighted_norm: f64,
    pub diagnostics: Vec<StepDiagnostics>,
    pub traces: Vec<SubstepTrace>,
    pub wall_time_seconds: f64,
}

struct Integrated {
    full: DMatrix<f64>,
    delta0: Option<f64>,
    diagnostics: Vec<StepDiagnostics>,
    traces: Vec<SubstepTrace>,
}

fn integrate_config(cfg: &RunConfig, model: &RteModel, scheme: Scheme, dt: f64) -> Result<Integrated> {
    let f0 = cfg.initial_condition.sample(model);
    let n_steps = cfg.n_steps(dt)?;
    let step_cfg = cfg.step_config(dt);
    let (initial, delta0) = if scheme == Scheme::Reference {
        (Initial::Full(f0), None)
    } else {
        let (st, d) = LowRankState::from_full(&f0, cfg.rank, model)?;
        (Initial::State(st), Some(d))
    };
    let out = integrate(model, initial, scheme, &step_cfg, n_steps)?;
    Ok(Integrated { full: out.full, delta0, diagnostics: out.diagnostics, traces: out.traces })
}

/// Reference solution at `t_final` (or `f₀` when `t_final = 0`).
pub fn reference_solution(cfg: &RunConfig, model: &RteModel) -> Result<DMatrix<f64>> {
    let f0 = cfg.initial_condition.sample(model);
    if cfg.t_final == 0.0 {
        return Ok(f0);
    }
    let step_cfg = StepConfig { coalesce_reference: true, ..cfg.step_config(cfg.t_final) };
    Ok(integrate(model, Initial::Full(f0), Scheme::Reference, &step_cfg, 1)?.full)
}

fn reference_fits(cfg: &RunConfig) -> bool {
    cfg.n_x * cfg.n_mu <= cfg.reference_cap
}

fn relative_tail(cfg: &RunConfig, report: &ErrorReport, model: &RteModel, reference: &DMatrix<f64>) -> (f64, f64) {
    let tail = report.sigma_spectrum.get(cfg.rank).copied().unwrap_or(0.0);
    (tail, tail / model.weighted_norm(reference))
}

fn ap_limit_error(model: &RteModel, cfg: &RunConfig, full: &DMatrix<f64>) -> Result<f64> {
    let rho0 = model.density(&cfg.initial_condition.sample(model))?;
    let limit = model.diffusion_limit_density(&rho0, cfg.t_final)?;
    let rho = model.density(full)?;
    let denom = limit.norm();
    if denom == 0.0 {
        return Err(RteError::DivisionGuard("diffusion-limit density is zero".into()));
    }
    Ok((rho - &limit).norm() / denom)
}

/// One integration with the configured scheme.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunResult> {
    cfg.require_positive_time()?;
    let eps = cfg.single(&cfg.eps, "eps")?;
    let dt = cfg.single(&cfg.dt, "dt")?;
    let model = cfg.model(eps)?;
    let start = Instant::now();
    if cfg.integrator == Scheme::Reference && !reference_fits(cfg) {
        return Err(RteError::SizeCap(format!(
            "reference on n_x·n_mu = {} exceeds reference_cap = {}; lower n_x or n_mu",
            cfg.n_x * cfg.n_mu,
            cfg.reference_cap
        )));
    }
    let run = integrate_config(cfg, &model, cfg.integrator, dt)?;
    let (error_report, sigma_tail, sigma_tail_rel) = if reference_fits(cfg) {
        let reference =
            if cfg.integrator == Scheme::Reference { run.full.clone() } else { reference_solution(cfg, &model)? };
        let report = error_report(&run.full, &reference, &model)?;
        let (t, r) = relative_tail(cfg, &report, &model, &reference);
        (Some(report), Some(t), Some(r))
    } else {
        (None, None, None)
    };
    let ap = ap_limit_error(&model, cfg, &run.full)?;
    let f0 = cfg.initial_condition.sample(&model);
    Ok(RunResult {
        config: cfg.clone(),
        scheme: cfg.integrator,
        eps,
        dt,
        n_steps: cfg.n_steps(dt)?,
        delta0: run.delta0,
        error_report,
        sigma_tail,
        sigma_tail_rel,
        ap_limit_density_error: ap,
        initial_mass: model.mass(&f0),
        final_mass: model.mass(&run.full),
        final_weighted_norm: model.weighted_norm(&run.full),
        diagnostics: run.diagnostics,
        traces: run.traces,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsRow {
    pub eps: f64,
    pub rel_l2_density: f64,
    pub wall_time_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsSweep {
    pub config: RunConfig,
    pub scheme: Scheme,
    pub rows: Vec<EpsRow>,
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| RteError::invalid(format!("cannot start worker pool: {e}")))
}

fn low_rank_scheme(cfg: &RunConfig) -> Result<Scheme> {
    match cfg.integrator {
        Scheme::Reference => Err(RteError::config("integrator", "this sweep needs a low-rank integrator")),
        s => Ok(s),
    }
}

/// One low-rank run per ε, density error against the diffusion limit.
pub fn cmd_sweep_eps(cfg: &RunConfig, workers: usize) -> Result<EpsSweep> {
    cfg.require_positive_time()?;
    let scheme = low_rank_scheme(cfg)?;
    let eps = cfg.eps.values();
    if eps.windows(2).any(|w| w[1] > w[0]) {
        return Err(RteError::config("eps", "sweep values must be in descending order"));
    }
    let dt = cfg.single(&cfg.dt, "dt")?;
    let base = cfg.model(eps[0])?;
    let rho0 = base.density(&cfg.initial_condition.sample(&base))?;
    let limit = base.diffusion_limit_density(&rho0, cfg.t_final)?;
    let rows: Result<Vec<EpsRow>> = pool(workers)?.install(|| {
        eps.par_iter()
            .map(|&e| {
                let start = Instant::now();
                let model = base.with_eps(e)?;
                let run = integrate_config(cfg, &model, scheme, dt)?;
                let rho = model.density(&run.full)?;
                Ok(EpsRow {
                    eps: e,
                    rel_l2_density: (rho - &limit).norm() / limit.norm(),
                    wall_time_seconds: start.elapsed().as_secs_f64(),
                })
            })
            .collect()
    });
    Ok(EpsSweep { config: cfg.clone(), scheme, rows: rows? })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtRow {
    pub dt: f64,
    pub n_steps: usize,
    pub rel_l2_full: f64,
    pub rel_l2_density: f64,
    pub sigma_tail: f64,
    pub sigma_tail_rel: f64,
    pub wall_time_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtSweep {
    pub config: RunConfig,
    pub scheme: Scheme,
    pub sigma_tail: f64,
    pub sigma_tail_rel: f64,
    /// Least-squares slope of `log err` against `log dt` over the rows with
    /// `err > 10 σ_{r+1}` (relative); `None` with fewer than two such rows.
    pub slope: Option<f64>,
    pub fit_rows: usize,
    pub rows: Vec<DtRow>,
}

/// OLS slope of `log y` against `log x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}

/// One coalesced reference solve, then one run per Δt.
pub fn cmd_sweep_dt(cfg: &RunConfig, workers: usize) -> Result<DtSweep> {
    cfg.require_positive_time()?;
    let eps = cfg.single(&cfg.eps, "eps")?;
    let model = cfg.model(eps)?;
    if !reference_fits(cfg) {
        return Err(RteError::SizeCap(format!(
            "Δt sweep needs a reference on n_x·n_mu = {} > reference_cap = {}",
            cfg.n_x * cfg.n_mu,
            cfg.reference_cap
        )));
    }
    let reference = reference_solution(cfg, &model)?;
    let base = error_report(&reference, &reference, &model)?;
    let (sigma_tail, sigma_tail_rel) = relative_tail(cfg, &base, &model, &reference);
    let dts = cfg.dt.values();
    let rows: Result<Vec<DtRow>> = pool(workers)?.install(|| {
        dts.par_iter()
            .map(|&dt| {
                let start = Instant::now();
                let run = integrate_config(cfg, &model, cfg.integrator, dt)?;
                let rep = error_report(&run.full, &reference, &model)?;
                Ok(DtRow {
                    dt,
                    n_steps: cfg.n_steps(dt)?,
                    rel_l2_full: rep.rel_l2_full,
                    rel_l2_density: rep.rel_l2_density,
                    sigma_tail,
                    sigma_tail_rel,
                    wall_time_seconds: start.elapsed().as_secs_f64(),
                })
            })
            .collect()
    });
    let rows = rows?;
    let fit: Vec<(f64, f64)> =
        rows.iter().filter(|r| r.rel_l2_full > 10.0 * sigma_tail_rel).map(|r| (r.dt, r.rel_l2_full)).collect();
    Ok(DtSweep {
        config: cfg.clone(),
        scheme: cfg.integrator,
        sigma_tail,
        sigma_tail_rel,
        slope: loglog_slope(&fit),
        fit_rows: fit.len(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularValues {
    pub config: RunConfig,
    pub t_final: f64,
    pub sigma: Vec<f64>,
}

/// Weighted singular values of the reference solution at `t_final`.
pub fn cmd_singvals(cfg: &RunConfig) -> Result<SingularValues> {
    let eps = cfg.single(&cfg.eps, "eps")?;
    let model = cfg.model(eps)?;
    if !reference_fits(cfg) {
        return Err(RteError::SizeCap(format!(
            "reference on n_x·n_mu = {} exceeds reference_cap = {}",
            cfg.n_x * cfg.n_mu,
            cfg.reference_cap
        )));
    }
    let reference = reference_solution(cfg, &model)?;
    let sigma = crate::linalg::weighted_singular_values(&reference, model.wx(), model.wmu())?;
    Ok(SingularValues { config: cfg.clone(), t_final: cfg.t_final, sigma })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub scheme: Scheme,
    /// `ok`, `diverged`, or `reference`.
    pub status: String,
    pub rel_l2_full: Option<f64>,
    pub rel_l2_density: Option<f64>,
    pub mass: Option<f64>,
    /// Failure message for diverged runs.
    pub detail: Option<String>,
    pub wall_time_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub config: RunConfig,
    pub eps: f64,
    pub dt: f64,
    pub rows: Vec<CompareRow>,
}

/// GAP, PSI and BUG against the reference at one `(ε, Δt)`.
pub fn cmd_compare(cfg: &RunConfig, workers: usize) -> Result<Comparison> {
    cfg.require_positive_time()?;
    let eps = cfg.single(&cfg.eps, "eps")?;
    let dt = cfg.single(&cfg.dt, "dt")?;
    let model = cfg.model(eps)?;
    if !reference_fits(cfg) {
        return Err(RteError::SizeCap(format!(
            "comparison needs a reference on n_x·n_mu = {} > reference_cap = {}",
            cfg.n_x * cfg.n_mu,
            cfg.reference_cap
        )));
    }
    let start = Instant::now();
    let reference = reference_solution(cfg, &model)?;
    let self_check = error_report(&reference, &reference, &model)?;
    let reference_row = CompareRow {
        scheme: Scheme::Reference,
        status: "reference".into(),
        rel_l2_full: Some(self_check.rel_l2_full),
        rel_l2_density: Some(self_check.rel_l2_density),
        mass: Some(self_check.mass),
        detail: None,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    };
    let schemes = [Scheme::Gap, Scheme::Psi, Scheme::Bug];
    let rows: Result<Vec<CompareRow>> = pool(workers)?.install(|| {
        schemes
            .par_iter()
            .map(|&scheme| {
                let start = Instant::now();
                match integrate_config(cfg, &model, scheme, dt) {
                    Ok(run) => {
                        let rep = error_report(&run.full, &reference, &model)?;
                        let finite = rep.rel_l2_full.is_finite();
                        Ok(CompareRow {
                            scheme,
                            status: if finite { "ok" } else { "diverged" }.into(),
                            rel_l2_full: finite.then_some(rep.rel_l2_full),
                            rel_l2_density: finite.then_some(rep.rel_l2_density),
                            mass: finite.then_some(rep.mass),
                            detail: None,
                            wall_time_seconds: start.elapsed().as_secs_f64(),
                        })
                    }
                    Err(e) if e.exit_code() == 3 => Ok(CompareRow {
                        scheme,
                        status: "diverged".into(),
                        rel_l2_full: None,
                        rel_l2_density: None,
                        mass: None,
                        detail: Some(e.to_string()),
                        wall_time_seconds: start.elapsed().as_secs_f64(),
                    }),
                    Err(e) => Err(e),
                }
            })
            .collect()
    });
    let mut all = rows?;
    all.push(reference_row);
    Ok(Comparison { config: cfg.clone(), eps, dt, rows: all })
}

/// `{:.16e}`: 17 significant digits.
pub fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.16e}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_else(|| "nan".into())
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| RteError::Io(std::io::Error::other(e)))?;
    let io = |e: csv::Error| RteError::Io(std::io::Error::other(e));
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(&r).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| RteError::Io(std::io::Error::other(e)))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub const ERRORS_HEADER: [&str; 9] = [
    "scheme",
    "eps",
    "dt",
    "n_steps",
    "rel_l2_density",
    "rel_l2_full",
    "mass",
    "sigma_tail",
    "ap_limit_density_error",
];
pub const SWEEP_EPS_HEADER: [&str; 3] = ["eps", "rel_l2_density", "wall_time_seconds"];
pub const SWEEP_DT_HEADER: [&str; 7] =
    ["dt", "n_steps", "rel_l2_full", "rel_l2_density", "sigma_tail", "sigma_tail_rel", "wall_time_seconds"];
pub const SINGVALS_HEADER: [&str; 3] = ["index", "sigma", "sigma_rel"];
pub const COMPARE_HEADER: [&str; 6] = ["scheme", "status", "rel_l2_full", "rel_l2_density", "mass", "wall_time_seconds"];

/// Writes `result.json` and, when a reference was available, `errors.csv`.
pub fn write_run(dir: &Path, res: &RunResult) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = vec![dir.join("result.json")];
    write_json(&written[0], res)?;
    if let Some(rep) = &res.error_report {
        let p = dir.join("errors.csv");
        write_csv(
            &p,
            &ERRORS_HEADER,
            vec![vec![
                res.scheme.name().to_string(),
                fmt_float(res.eps),
                fmt_float(res.dt),
                res.n_steps.to_string(),
                fmt_float(rep.rel_l2_density),
                fmt_float(rep.rel_l2_full),
                fmt_float(rep.mass),
                fmt_opt(res.sigma_tail),
                fmt_float(res.ap_limit_density_error),
            ]],
        )?;
        written.push(p);
    }
    Ok(written)
}

pub fn write_sweep_eps(dir: &Path, sweep: &EpsSweep) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join("sweep_eps.csv");
    let rows = sweep
        .rows
        .iter()
        .map(|r| vec![fmt_float(r.eps), fmt_float(r.rel_l2_density), fmt_float(r.wall_time_seconds)])
        .collect();
    write_csv(&csv_path, &SWEEP_EPS_HEADER, rows)?;
    let json_path = dir.join("sweep_eps.json");
    write_json(&json_path, sweep)?;
    Ok(vec![csv_path, json_path])
}

pub fn write_sweep_dt(dir: &Path, sweep: &DtSweep) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join("sweep_dt.csv");
    let rows = sweep
        .rows
        .iter()
        .map(|r| {
            vec![
                fmt_float(r.dt),
                r.n_steps.to_string(),
                fmt_float(r.rel_l2_full),
                fmt_float(r.rel_l2_density),
                fmt_float(r.sigma_tail),
                fmt_float(r.sigma_tail_rel),
                fmt_float(r.wall_time_seconds),
            ]
        })
        .collect();
    write_csv(&csv_path, &SWEEP_DT_HEADER, rows)?;
    let json_path = dir.join("sweep_dt.json");
    write_json(&json_path, sweep)?;
    Ok(vec![csv_path, json_path])
}

pub fn write_singvals(dir: &Path, sv: &SingularValues) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join("singvals.csv");
    let top = sv.sigma.first().copied().unwrap_or(0.0);
    let rows = sv
        .sigma
        .iter()
        .enumerate()
        .map(|(i, s)| vec![(i + 1).to_string(), fmt_float(*s), fmt_float(if top > 0.0 { s / top } else { 0.0 })])
        .collect();
    write_csv(&csv_path, &SINGVALS_HEADER, rows)?;
    let json_path = dir.join("singvals.json");
    write_json(&json_path, sv)?;
    Ok(vec![csv_path, json_path])
}

pub fn write_compare(dir: &Path, cmp: &Comparison) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join("compare.csv");
    let rows = cmp
        .rows
        .iter()
        .map(|r| {
            vec![
                r.scheme.name().to_string(),
                r.status.clone(),
                fmt_opt(r.rel_l2_full),
                fmt_opt(r.rel_l2_density),
                fmt_opt(r.mass),
                fmt_float(r.wall_time_seconds),
            ]
        })
        .collect();
    write_csv(&csv_path, &COMPARE_HEADER, rows)?;
    let json_path = dir.join("compare.json");
    write_json(&json_path, cmp)?;
    Ok(vec![csv_path, json_path])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        RunConfig { n_x: 16, n_mu: 8, rank: 3, dt: OneOrMany::One(0.05), t_final: 0.1, ..RunConfig::default() }
    }

    #[test]
    fn config_round_trips_through_json() {
        let mut cfg = tiny();
        cfg.initial_condition = InitialCondition::CustomPolyFourier {
            terms: vec![
                PolyFourierTerm { coeff: 1.0, k: 0, p: 0, trig: Trig::Cos },
                PolyFourierTerm { coeff: 0.1, k: 2, p: 1, trig: Trig::Sin },
            ],
        };
        cfg.eps = OneOrMany::Many(vec![1.0, 0.1]);
        let back = RunConfig::from_json_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn config_errors_name_the_field() {
        let err = RunConfig::from_json_str(r#"{"n_x": "many"}"#).unwrap_err();
        assert!(matches!(&err, RteError::Config { path, .. } if path == "n_x"), "{err}");
        let err = RunConfig::from_json_str(r#"{"eps": [1.0, -1.0]}"#).unwrap_err();
        assert!(matches!(&err, RteError::Config { path, .. } if path == "eps[1]"), "{err}");
        let err = RunConfig::from_json_str(r#"{"bogus": 1}"#).unwrap_err();
        assert!(matches!(err, RteError::Config { .. }));
        let err = RunConfig::from_json_str(r#"{"dt": 0.3, "t_final": 1.0}"#).unwrap_err();
        assert!(matches!(&err, RteError::Config { path, .. } if path == "dt[0]"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let mut v = serde_json::to_value(tiny()).unwrap();
        apply_override(&mut v, "n_x=32").unwrap();
        apply_override(&mut v, "eps=[1, 0.5]").unwrap();
        apply_override(&mut v, "integrator=bug").unwrap();
        apply_override(&mut v, "domain=[0, 1]").unwrap();
        let cfg = RunConfig::from_value(v).unwrap();
        assert_eq!(cfg.n_x, 32);
        assert_eq!(cfg.eps, OneOrMany::Many(vec![1.0, 0.5]));
        assert_eq!(cfg.integrator, Scheme::Bug);
        let mut v = serde_json::to_value(tiny()).unwrap();
        assert!(apply_override(&mut v, "novalue").is_err());
    }

    #[test]
    fn step_count_must_divide() {
        let cfg = RunConfig { t_final: 1.0, ..tiny() };
        assert_eq!(cfg.n_steps(0.1).unwrap(), 10);
        assert_eq!(cfg.n_steps(0.1 * 0.5f64.powi(9)).unwrap(), 5120);
        assert!(cfg.n_steps(0.3).is_err());
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [0.1, 0.05, 0.025].iter().map(|&d| (d, 3.0 * d * d)).collect();
        assert!((loglog_slope(&pts).unwrap() - 2.0).abs() <= 1e-12);
        assert_eq!(loglog_slope(&pts[..1]), None);
    }

    #[test]
    fn output_dir_precedence() {
        let mut cfg = tiny();
        assert_eq!(cfg.resolve_output_dir(Some(Path::new("x"))), PathBuf::from("x"));
        cfg.output_dir = Some("y".into());
        assert_eq!(cfg.resolve_output_dir(None), PathBuf::from("y"));
    }

    #[test]
    fn initial_conditions() {
        let m = RteModel::build(0.0, 2.0, 8, 4, 1.0).unwrap();
        let ap = InitialCondition::SeparableProduct.sample(&m);
        assert!((ap[(0, 0)] - 2.0 * (1.0 + m.quad.nodes[0].powi(2))).abs() <= 1e-15);
        let dt = InitialCondition::SineLadder.evaluate(0.5, 1.0);
        let want: f64 = 1.0 + (1..=10).map(|k| 10f64.powi(-k) * (k as f64 * std::f64::consts::PI * 0.5).sin()).sum::<f64>();
        assert_eq!(dt, want);
    }
}
