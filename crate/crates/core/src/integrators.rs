//! One-step maps (GAP, PSI, BUG, full-rank reference) and the time loop.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RteError};
use crate::linalg::expm::dense_expm;
use crate::linalg::weighted::{
    orthonormality_defect, weighted_inner, weighted_mgs_with, MgsOptions, QrResult, WeightVector,
    DEFAULT_MGS_SEED,
};
use crate::model::{ExpMethod, KronOperator, RteModel};
use crate::state::LowRankState;

/// Largest `n_x · n_mu` the full-rank reference accepts by default.
pub const DEFAULT_REFERENCE_CAP: usize = 200_000;

/// Orthonormality defect tolerated after each step when tracing.
pub const STEP_DEFECT_LIMIT: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SubstepSolver {
    #[default]
    Exponential,
    ImplicitEuler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Gap,
    Psi,
    Bug,
    Reference,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Gap => "gap",
            Scheme::Psi => "psi",
            Scheme::Bug => "bug",
            Scheme::Reference => "reference",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepConfig {
    pub dt: f64,
    pub substep_solver: SubstepSolver,
    pub expmv_tol: f64,
    pub linear_solve_tol: f64,
    pub exp_method: ExpMethod,
    /// Keep `V₁ ∝ 1` and `V₂ ∝ μ` after every L-step.
    pub basis_pinning: bool,
    /// Seed of the fill-in vectors used by the orthonormalizations.
    pub seed: u64,
    pub debug_trace: bool,
    /// Reference solver: one exponential over the whole interval.
    pub coalesce_reference: bool,
    pub reference_cap: usize,
}

impl StepConfig {
    pub fn new(dt: f64) -> Self {
        StepConfig {
            dt,
            substep_solver: SubstepSolver::Exponential,
            expmv_tol: 1e-10,
            linear_solve_tol: 1e-12,
            exp_method: ExpMethod::Auto,
            basis_pinning: false,
            seed: DEFAULT_MGS_SEED,
            debug_trace: false,
            coalesce_reference: true,
            reference_cap: DEFAULT_REFERENCE_CAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(RteError::invalid(format!("dt must be positive, got {}", self.dt)));
        }
        for (name, tol) in [("expmv_tol", self.expmv_tol), ("linear_solve_tol", self.linear_solve_tol)] {
            if !(tol > 0.0 && tol < 1e-2) {
                return Err(RteError::invalid(format!("{name} must lie in (0, 1e-2), got {tol}")));
            }
        }
        Ok(())
    }

    fn mgs(&self, salt: u64) -> MgsOptions {
        MgsOptions { seed: self.seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15), ..MgsOptions::default() }
    }
}

/// Per-substep diagnostics recorded when tracing is on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstepTrace {
    pub step: usize,
    pub substep: String,
    pub norm_before: f64,
    pub norm_after: f64,
    /// Orthonormality defect of the basis produced by the substep, if any.
    pub basis_defect: Option<f64>,
    pub replaced_columns: usize,
}

fn weighted_col_norm(m: &DMatrix<f64>, w: &WeightVector) -> f64 {
    let mut total = 0.0;
    for j in 0..m.ncols() {
        for (i, wi) in w.as_slice().iter().enumerate() {
            total += wi * m[(i, j)] * m[(i, j)];
        }
    }
    total.sqrt()
}

struct Tracer<'a> {
    step: usize,
    sink: Option<&'a mut Vec<SubstepTrace>>,
    replaced: usize,
}

impl Tracer<'_> {
    fn record(&mut self, substep: &str, before: f64, after: f64, qr: Option<(&QrResult, &WeightVector)>) -> Result<()> {
        let replaced = qr.map(|(q, _)| q.replaced_columns.len()).unwrap_or(0);
        self.replaced += replaced;
        if let Some(sink) = self.sink.as_deref_mut() {
            let basis_defect = match qr {
                Some((q, w)) => Some(orthonormality_defect(&q.q, w)?),
                None => None,
            };
            sink.push(SubstepTrace {
                step: self.step,
                substep: substep.to_string(),
                norm_before: before,
                norm_after: after,
                basis_defect,
                replaced_columns: replaced,
            });
        }
        Ok(())
    }
}

fn propagate(op: &KronOperator, v: &[f64], cfg: &StepConfig) -> Result<Vec<f64>> {
    match cfg.substep_solver {
        SubstepSolver::Exponential => op.exp_action(cfg.dt, v, cfg.expmv_tol, cfg.exp_method),
        SubstepSolver::ImplicitEuler => op.implicit_euler(cfg.dt, v, cfg.linear_solve_tol, cfg.exp_method),
    }
}

fn orthonormalize(m: &DMatrix<f64>, w: &WeightVector, opts: MgsOptions, what: &str) -> Result<QrResult> {
    let qr = weighted_mgs_with(m, w, opts)?;
    if qr.replaced_columns.len() == m.ncols() {
        return Err(RteError::DegenerateState(format!("{what}: every column collapsed during orthonormalization")));
    }
    Ok(qr)
}

/// `V = MGS([1, μ, L])` truncated to `r` columns.
fn pinned_basis(model: &RteModel, l: &DMatrix<f64>, opts: MgsOptions) -> Result<QrResult> {
    let r = l.ncols();
    let fixed = r.min(2);
    let mut aug = DMatrix::zeros(model.n_mu(), fixed + r);
    aug.column_mut(0).fill(1.0);
    if fixed == 2 {
        aug.set_column(1, &DVector::from_column_slice(&model.quad.nodes));
    }
    aug.columns_mut(fixed, r).copy_from(l);
    let qr = weighted_mgs_with(&aug, model.wmu(), opts)?;
    Ok(QrResult {
        q: qr.q.columns(0, r).into_owned(),
        r_factor: qr.r_factor.view((0, fixed), (r, r)).into_owned(),
        replaced_columns: qr.replaced_columns.into_iter().filter(|&c| c < r).collect(),
        seed: qr.seed,
        householder_prepass: qr.householder_prepass,
    })
}

/// L-step from `(X, S, V)`: returns the new angular basis and `L₁`.
fn l_step(
    model: &RteModel,
    x: &DMatrix<f64>,
    s: &DMatrix<f64>,
    v: &DMatrix<f64>,
    cfg: &StepConfig,
    tr: &mut Tracer,
) -> Result<(QrResult, DMatrix<f64>)> {
    let r = s.nrows();
    let l0 = v * s.transpose();
    let a_x = model.a_x_matrix(x)?;
    let op = model.operator_l(&a_x);
    let l1 = DMatrix::from_vec(model.n_mu(), r, propagate(&op, l0.as_slice(), cfg)?);
    let opts = cfg.mgs(1);
    let qr = if cfg.basis_pinning { pinned_basis(model, &l1, opts)? } else { orthonormalize(&l1, model.wmu(), opts, "L-step")? };
    tr.record("L", weighted_col_norm(&l0, model.wmu()), weighted_col_norm(&l1, model.wmu()), Some((&qr, model.wmu())))?;
    Ok((qr, l1))
}

/// K-step from `K₀` in the angular basis `v`: returns `MGS(K₁)`.
///
/// With `basis_only` the caller needs just the span of `K₁`, so the
/// exponential runs on `A − sI` with `s` the slowest collisional decay rate.
/// When `v` misses the isotropic direction every mode decays like
/// `exp(−c·dt/ε²)`, which underflows to zero for small ε; the shift keeps the
/// span without changing it.
fn k_step(
    model: &RteModel,
    k0: DMatrix<f64>,
    v: &DMatrix<f64>,
    basis_only: bool,
    cfg: &StepConfig,
    tr: &mut Tracer,
) -> Result<QrResult> {
    let r = k0.ncols();
    let (b, c) = model.angular_matrices(v)?;
    let mut op = model.operator_k(&b, &c);
    if basis_only && cfg.substep_solver == SubstepSolver::Exponential {
        op = op.shifted((c.trace() - 1.0) / (model.eps * model.eps));
    }
    let k1 = DMatrix::from_vec(model.n_x(), r, propagate(&op, k0.as_slice(), cfg)?);
    let qr = orthonormalize(&k1, model.wx(), cfg.mgs(2), "K-step")?;
    tr.record("K", weighted_col_norm(&k0, model.wx()), weighted_col_norm(&k1, model.wx()), Some((&qr, model.wx())))?;
    Ok(qr)
}

/// Galerkin coefficient flow `Ṡ = sign · G(S)`.
fn s_step(
    model: &RteModel,
    x: &DMatrix<f64>,
    v: &DMatrix<f64>,
    s0: &DMatrix<f64>,
    sign: f64,
    cfg: &StepConfig,
    tr: &mut Tracer,
) -> Result<DMatrix<f64>> {
    let r = s0.nrows();
    let sub = model.assemble_substeps(x, v)?;
    let g = model.galerkin_matrix(&sub) * (sign * cfg.dt);
    let label = if sign < 0.0 { "backward S-step" } else { "S-step" };
    let s_vec = DVector::from_column_slice(s0.as_slice());
    let out = match cfg.substep_solver {
        SubstepSolver::Exponential => {
            let e = dense_expm(&g).map_err(|e| match e {
                RteError::NumericalFailure { .. } => RteError::NumericalFailure {
                    operator: label.into(),
                    t: cfg.dt,
                    detail: format!(
                        "coefficient exponential overflowed (‖dt·G‖ ≈ {:.3e}); the backward substep is unstable for small ε",
                        g.norm()
                    ),
                },
                other => other,
            })?;
            e * s_vec
        }
        SubstepSolver::ImplicitEuler => {
            let m = DMatrix::identity(r * r, r * r) - g;
            m.lu().solve(&s_vec).ok_or_else(|| RteError::NumericalFailure {
                operator: label.into(),
                t: cfg.dt,
                detail: "singular implicit Euler system".into(),
            })?
        }
    };
    if out.iter().any(|v| !v.is_finite()) {
        return Err(RteError::NumericalFailure {
            operator: label.into(),
            t: cfg.dt,
            detail: "coefficients became non-finite".into(),
        });
    }
    let s1 = DMatrix::from_vec(r, r, out.as_slice().to_vec());
    tr.record(if sign < 0.0 { "S-" } else { "S+" }, s0.norm(), s1.norm(), None)?;
    Ok(s1)
}

fn gap_inner(model: &RteModel, st: &LowRankState, cfg: &StepConfig, tr: &mut Tracer) -> Result<LowRankState> {
    cfg.validate()?;
    let (vq, _) = l_step(model, &st.x, &st.s, &st.v, cfg, tr)?;
    let v1 = vq.q;
    let k0 = &st.x * &st.s * weighted_inner(&st.v, &v1, model.wmu())?;
    let kq = k_step(model, k0, &v1, false, cfg, tr)?;
    Ok(LowRankState { x: kq.q, s: kq.r_factor, v: v1 })
}

fn psi_inner(model: &RteModel, st: &LowRankState, cfg: &StepConfig, tr: &mut Tracer) -> Result<LowRankState> {
    cfg.validate()?;
    let (vq, l1) = l_step(model, &st.x, &st.s, &st.v, cfg, tr)?;
    let v1 = vq.q;
    let s_hat = weighted_inner(&v1, &l1, model.wmu())?.transpose();
    let s_tilde = s_step(model, &st.x, &v1, &s_hat, -1.0, cfg, tr)?;
    let kq = k_step(model, &st.x * s_tilde, &v1, false, cfg, tr)?;
    Ok(LowRankState { x: kq.q, s: kq.r_factor, v: v1 })
}

fn bug_inner(model: &RteModel, st: &LowRankState, cfg: &StepConfig, tr: &mut Tracer) -> Result<LowRankState> {
    cfg.validate()?;
    let (vq, _) = l_step(model, &st.x, &st.s, &st.v, cfg, tr)?;
    let v1 = vq.q;
    let kq = k_step(model, &st.x * &st.s, &st.v, true, cfg, tr)?;
    let x1 = kq.q;
    let s0 = weighted_inner(&x1, &st.x, model.wx())? * &st.s * weighted_inner(&st.v, &v1, model.wmu())?;
    let s1 = s_step(model, &x1, &v1, &s0, 1.0, cfg, tr)?;
    Ok(LowRankState { x: x1, s: s1, v: v1 })
}

fn untraced() -> Tracer<'static> {
    Tracer { step: 0, sink: None, replaced: 0 }
}

/// One GAP step: L-step for the angular basis, then a Galerkin K-step in it.
pub fn gap_step(model: &RteModel, state: &LowRankState, cfg: &StepConfig) -> Result<LowRankState> {
    gap_inner(model, state, cfg, &mut untraced())
}

/// One projector-splitting step: L-step, backward S-step, K-step.
pub fn psi_step(model: &RteModel, state: &LowRankState, cfg: &StepConfig) -> Result<LowRankState> {
    psi_inner(model, state, cfg, &mut untraced())
}

/// One basis-update & Galerkin step: independent L- and K-steps from the
/// initial factors, then a forward S-step in the new bases.
pub fn bug_step(model: &RteModel, state: &LowRankState, cfg: &StepConfig) -> Result<LowRankState> {
    bug_inner(model, state, cfg, &mut untraced())
}

fn check_reference_size(model: &RteModel, cap: usize) -> Result<()> {
    let n = model.n_x() * model.n_mu();
    if n > cap {
        return Err(RteError::SizeCap(format!(
            "full-rank reference needs n_x·n_mu = {}·{} = {n} unknowns, above the cap {cap}; \
             reduce n_x or n_mu, or raise reference_cap",
            model.n_x(),
            model.n_mu()
        )));
    }
    Ok(())
}

fn reference_over(model: &RteModel, f: &DMatrix<f64>, t: f64, cfg: &StepConfig) -> Result<DMatrix<f64>> {
    check_reference_size(model, cfg.reference_cap)?;
    if f.shape() != (model.n_x(), model.n_mu()) {
        return Err(RteError::invalid(format!("reference input is {}x{}", f.nrows(), f.ncols())));
    }
    let op = model.full_operator();
    let out = match cfg.substep_solver {
        SubstepSolver::Exponential => op.exp_action(t, f.as_slice(), cfg.expmv_tol, cfg.exp_method)?,
        SubstepSolver::ImplicitEuler => op.implicit_euler(t, f.as_slice(), cfg.linear_solve_tol, cfg.exp_method)?,
    };
    Ok(DMatrix::from_vec(model.n_x(), model.n_mu(), out))
}

/// Full-rank step `vec(F) ← exp(dt·𝒜) vec(F)`.
pub fn reference_step(model: &RteModel, f: &DMatrix<f64>, cfg: &StepConfig) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    reference_over(model, f, cfg.dt, cfg)
}

#[derive(Debug, Clone)]
pub enum Initial {
    State(LowRankState),
    Full(DMatrix<f64>),
}

/// Summary of one step of the time loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub time: f64,
    pub weighted_norm: f64,
    pub mass: f64,
    pub defect_x: f64,
    pub defect_v: f64,
    pub replaced_columns: usize,
}

#[derive(Debug, Clone)]
pub struct IntegrationOutput {
    /// Final factors for the low-rank schemes.
    pub state: Option<LowRankState>,
    /// Final full matrix for every scheme.
    pub full: DMatrix<f64>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub traces: Vec<SubstepTrace>,
}

/// Applies `scheme` for `n_steps` steps of `cfg.dt`. Step `k` uses the fill-in
/// seed `cfg.seed + k`; errors carry the 1-based step index.
pub fn integrate(
    model: &RteModel,
    initial: Initial,
    scheme: Scheme,
    cfg: &StepConfig,
    n_steps: usize,
) -> Result<IntegrationOutput> {
    cfg.validate()?;
    if n_steps == 0 {
        return Err(RteError::invalid("n_steps must be at least 1"));
    }
    let mut diagnostics = Vec::with_capacity(n_steps);
    let mut traces = Vec::new();

    if scheme == Scheme::Reference {
        let f0 = match initial {
            Initial::Full(f) => f,
            Initial::State(s) => s.reconstruct(),
        };
        check_reference_size(model, cfg.reference_cap)?;
        let full = if cfg.coalesce_reference {
            let f = reference_over(model, &f0, cfg.dt * n_steps as f64, cfg).map_err(|e| e.at_step(n_steps))?;
            diagnostics.push(StepDiagnostics {
                step: n_steps,
                time: cfg.dt * n_steps as f64,
                weighted_norm: model.weighted_norm(&f),
                mass: model.mass(&f),
                defect_x: 0.0,
                defect_v: 0.0,
                replaced_columns: 0,
            });
            f
        } else {
            let mut f = f0;
            for step in 1..=n_steps {
                f = reference_step(model, &f, cfg).map_err(|e| e.at_step(step))?;
                diagnostics.push(StepDiagnostics {
                    step,
                    time: cfg.dt * step as f64,
                    weighted_norm: model.weighted_norm(&f),
                    mass: model.mass(&f),
                    defect_x: 0.0,
                    defect_v: 0.0,
                    replaced_columns: 0,
                });
            }
            f
        };
        return Ok(IntegrationOutput { state: None, full, diagnostics, traces });
    }

    let mut state = match initial {
        Initial::State(s) => s,
        Initial::Full(_) => {
            return Err(RteError::invalid(format!(
                "scheme `{}` needs a low-rank initial state",
                scheme.name()
            )))
        }
    };
    for step in 1..=n_steps {
        let step_cfg = StepConfig { seed: cfg.seed.wrapping_add(step as u64), ..cfg.clone() };
        let mut tr = Tracer { step, sink: if cfg.debug_trace { Some(&mut traces) } else { None }, replaced: 0 };
        let next = match scheme {
            Scheme::Gap => gap_inner(model, &state, &step_cfg, &mut tr),
            Scheme::Psi => psi_inner(model, &state, &step_cfg, &mut tr),
            Scheme::Bug => bug_inner(model, &state, &step_cfg, &mut tr),
            Scheme::Reference => unreachable!(),
        }
        .map_err(|e| e.at_step(step))?;
        let replaced = tr.replaced;
        let (defect_x, defect_v) = next.orthonormality_defects(model)?;
        if cfg.debug_trace && defect_x.max(defect_v) > STEP_DEFECT_LIMIT {
            return Err(RteError::DegenerateState(format!(
                "orthonormality defects ({defect_x:e}, {defect_v:e}) exceed {STEP_DEFECT_LIMIT:e}"
            ))
            .at_step(step));
        }
        let f = next.reconstruct();
        diagnostics.push(StepDiagnostics {
            step,
            time: cfg.dt * step as f64,
            weighted_norm: next.weighted_norm(),
            mass: model.mass(&f),
            defect_x,
            defect_v,
            replaced_columns: replaced,
        });
        state = next;
    }
    let full = state.reconstruct();
    Ok(IntegrationOutput { state: Some(state), full, diagnostics, traces })
}
