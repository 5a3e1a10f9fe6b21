//! Maximization of a concave objective over a convex class by direct
//! gradient (DG) steps or accelerated projected gradient (APG), with a
//! projection onto the class after every step.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::classes::{project_ppt, repair_ppt, ClassSpec, OracleParams, PptParams};
use crate::error::{arg_err, Error, Result};
use crate::gilbert::{gilbert_project_warm, GilbertParams, GilbertResult};
use crate::qcore::{hs_norm, project_psd_trace1, CMatrix, DensityMatrix};
use crate::rng::derive_seed;

/// A concave, differentiable function of a state. Evaluations must be pure:
/// independent runs may share one objective across threads.
pub trait Objective: Sync {
    fn value(&self, rho: &CMatrix) -> f64;
    /// Hermitian gradient. Also queried at the non-PSD extrapolated points
    /// of APG, so it must stay finite there.
    fn gradient(&self, rho: &CMatrix) -> CMatrix;
}

/// `-|ρ - σ|²`, maximal at `σ`.
#[derive(Clone, Debug)]
pub struct NegSquaredDistance {
    pub target: CMatrix,
}

impl Objective for NegSquaredDistance {
    fn value(&self, rho: &CMatrix) -> f64 {
        let d = hs_norm(&rho.sub(&self.target));
        -d * d
    }

    fn gradient(&self, rho: &CMatrix) -> CMatrix {
        self.target.sub(rho).scale(2.0)
    }
}

/// The map onto the feasible set, applied after every step.
pub trait Projector {
    /// Projects a Hermitian matrix of any trace onto the class.
    fn project(&mut self, x: &CMatrix) -> Result<DensityMatrix>;
    fn describe(&self) -> String;
}

/// Moves `x` onto the trace-one hyperplane, which holds every class.
fn unit_trace(x: &CMatrix) -> CMatrix {
    let d = x.rows();
    let mut out = x.hermitian_part();
    let tr = out.trace().re;
    out.add_identity(-(tr - 1.0) / d as f64);
    out
}

/// The full state space.
#[derive(Clone, Copy, Debug, Default)]
pub struct StateSpaceProjector;

impl Projector for StateSpaceProjector {
    fn project(&mut self, x: &CMatrix) -> Result<DensityMatrix> {
        project_psd_trace1(&x.hermitian_part())
    }

    fn describe(&self) -> String {
        "state-space".into()
    }
}

#[derive(Clone, Debug)]
pub struct PptProjector {
    pub spec: ClassSpec,
    pub params: PptParams,
}

impl Projector for PptProjector {
    fn project(&mut self, x: &CMatrix) -> Result<DensityMatrix> {
        match project_ppt(&unit_trace(x), &self.spec, &self.params) {
            // The last Dykstra iterate is a state; mixing in white noise makes
            // it feasible.
            Err(Error::Convergence { last_iterate, .. }) => repair_ppt(&last_iterate, &self.spec).map(|(r, _)| r),
            other => other,
        }
    }

    fn describe(&self) -> String {
        self.spec.to_string()
    }
}

/// Gilbert projection, warm-started from the previous call.
#[derive(Clone, Debug)]
pub struct GilbertProjector {
    pub spec: ClassSpec,
    pub params: GilbertParams,
    last: Option<GilbertResult>,
    calls: u64,
}

impl GilbertProjector {
    pub fn new(spec: ClassSpec, params: GilbertParams) -> Self {
        GilbertProjector { spec, params, last: None, calls: 0 }
    }

    /// Inner budget used by the optimizers: 2000 iterations, accuracy 1e-4,
    /// and a cheap oracle (two restarts, screened after five sweeps).
    pub fn inner_params() -> GilbertParams {
        let base = GilbertParams::default();
        GilbertParams {
            max_iters: 2000,
            tol: 1e-4,
            oracle: OracleParams { restarts: 2, screen_sweeps: 5, ..base.oracle },
            ..base
        }
    }

    pub fn last_result(&self) -> Option<&GilbertResult> {
        self.last.as_ref()
    }
}

impl Projector for GilbertProjector {
    fn project(&mut self, x: &CMatrix) -> Result<DensityMatrix> {
        self.calls += 1;
        let mut params = self.params;
        params.oracle.seed = derive_seed(self.params.oracle.seed, self.calls);
        let res = gilbert_project_warm(&unit_trace(x), &self.spec, &params, self.last.as_ref())?;
        let out = res.projection.clone();
        self.last = Some(res);
        Ok(out)
    }

    fn describe(&self) -> String {
        self.spec.to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptParams {
    /// Initial step size.
    pub eps0: f64,
    /// Step shrink factor on a rejected step.
    pub beta: f64,
    pub max_iters: usize,
    /// Stop once `F` gains less than this over `stall_window` accepted steps.
    pub f_tol: f64,
    pub stall_window: usize,
    /// Stop once the step size falls below this.
    pub min_step: f64,
}

impl Default for OptParams {
    fn default() -> Self {
        OptParams {
            eps0: 0.2,
            beta: 0.5,
            max_iters: 2000,
            f_tol: 1e-9,
            stall_window: 20,
            min_step: 1e-12,
        }
    }
}

impl OptParams {
    fn validate(&self) -> Result<()> {
        if !(self.eps0 > 0.0) || !self.eps0.is_finite() {
            return arg_err(format!("initial step must be positive, got {}", self.eps0));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return arg_err(format!("step shrink must lie in (0, 1), got {}", self.beta));
        }
        if !(self.f_tol >= 0.0) || !(self.min_step > 0.0) {
            return arg_err("f_tol must be non-negative and min_step positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptStop {
    Stall,
    StepUnderflow,
    MaxIters,
}

/// One outer iteration. `f` is the objective at the kept iterate, so it never
/// decreases along the trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptRow {
    pub iter: usize,
    pub f: f64,
    pub epsilon: f64,
    /// The step was rejected (DG) or triggered a restart (APG).
    pub restarted: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptResult {
    pub rho_hat: DensityMatrix,
    pub f_hat: f64,
    pub trace: Vec<OptRow>,
    /// Optimality diagnostic at the final iterate; small when the projection
    /// is exact and the iterate is a fixed point.
    pub fixed_point_residual: f64,
    pub converged: bool,
    pub stop: OptStop,
    pub iterations: usize,
}

impl OptResult {
    /// `iter,F,lambda_over_N,epsilon,restarted`. The ratio column is
    /// `2 (f_ref - F)` and stays empty without a reference value.
    pub fn trace_csv(&self, f_ref: Option<f64>) -> String {
        let mut out = String::from("iter,F,lambda_over_N,epsilon,restarted\n");
        for r in &self.trace {
            let lam = f_ref.map(|f| format!("{:.12e}", (2.0 * (f - r.f)).max(0.0))).unwrap_or_default();
            let _ = writeln!(out, "{},{:.12e},{},{:.6e},{}", r.iter, r.f, lam, r.epsilon, r.restarted);
        }
        out
    }
}

fn check_gradient(g: &CMatrix, d: usize) -> Result<()> {
    if g.rows() != d || g.cols() != d {
        return Err(Error::Dimension(format!("{}x{} gradient for dimension {d}", g.rows(), g.cols())));
    }
    let defect = g.hermiticity_defect();
    if defect > 1e-10 * g.frobenius_norm().max(1.0) || !defect.is_finite() {
        return Err(Error::NotHermitian(defect));
    }
    Ok(())
}

/// `A ρ A / tr(A ρ A)` with `A = I + ε (G - tr(Gρ) I)`.
pub fn dg_step(rho: &DensityMatrix, g: &CMatrix, eps: f64) -> Result<DensityMatrix> {
    if !(eps > 0.0) || !eps.is_finite() {
        return arg_err(format!("step must be positive, got {eps}"));
    }
    let d = rho.dim();
    check_gradient(g, d)?;
    let m = rho.matrix();
    let shift = g.hs_inner_unchecked(m);
    let mut a = g.hermitian_part().scale(eps);
    a.add_identity(1.0 - eps * shift);
    let out = a.matmul(m).matmul(&a).hermitian_part();
    let norm = out.trace().re;
    if !(norm > 1e-300) || !norm.is_finite() {
        return Err(Error::DegenerateStep(norm));
    }
    Ok(DensityMatrix::from_trusted(out.scale(1.0 / norm)))
}

/// `|S(ρ + ε (G - tr(Gρ) I)) - ρ|` at the probe step `ε`.
pub fn fixed_point_residual(
    rho: &DensityMatrix,
    obj: &dyn Objective,
    projector: &mut dyn Projector,
    eps: f64,
) -> Result<f64> {
    let g = obj.gradient(rho.matrix());
    check_gradient(&g, rho.dim())?;
    let shift = g.hs_inner_unchecked(rho.matrix());
    let mut x = rho.matrix().clone();
    x.axpy(eps, &g);
    x.add_identity(-eps * shift);
    let p = projector.project(&x)?;
    Ok(hs_norm(&p.matrix().sub(rho.matrix())))
}

/// Shared bookkeeping for both schemes.
struct Progress {
    trace: Vec<OptRow>,
    /// `F` after each accepted step.
    accepted: Vec<f64>,
}

impl Progress {
    fn new(f0: f64, eps0: f64) -> Self {
        Progress {
            trace: vec![OptRow { iter: 0, f: f0, epsilon: eps0, restarted: false }],
            accepted: vec![f0],
        }
    }

    fn stalled(&self, p: &OptParams) -> bool {
        let n = self.accepted.len();
        p.stall_window > 0 && n > p.stall_window && self.accepted[n - 1] - self.accepted[n - 1 - p.stall_window] < p.f_tol
    }
}

fn start_point(projector: &mut dyn Projector, d: usize) -> Result<DensityMatrix> {
    projector.project(DensityMatrix::maximally_mixed(d).matrix())
}

fn finish(
    rho: DensityMatrix,
    f: f64,
    progress: Progress,
    stop: OptStop,
    iterations: usize,
    obj: &dyn Objective,
    projector: &mut dyn Projector,
    probe: f64,
) -> Result<OptResult> {
    let fixed_point_residual = fixed_point_residual(&rho, obj, projector, probe)?;
    Ok(OptResult {
        rho_hat: rho,
        f_hat: f,
        trace: progress.trace,
        fixed_point_residual,
        converged: stop != OptStop::MaxIters,
        stop,
        iterations,
    })
}

/// Direct-gradient scheme: DG step from the current class point, then
/// projection; a step that lowers `F` is discarded and the step size shrunk.
pub fn dg_maximize(
    obj: &dyn Objective,
    projector: &mut dyn Projector,
    dim: usize,
    params: &OptParams,
) -> Result<OptResult> {
    params.validate()?;
    let mut rho = start_point(projector, dim)?;
    let mut f = obj.value(rho.matrix());
    let mut eps = params.eps0;
    let mut progress = Progress::new(f, eps);
    let mut stop = OptStop::MaxIters;
    let mut iterations = 0;
    for k in 1..=params.max_iters {
        iterations = k;
        let g = obj.gradient(rho.matrix());
        let stepped = dg_step(&rho, &g, eps)?;
        let candidate = projector.project(stepped.matrix())?;
        let fc = obj.value(candidate.matrix());
        let rejected = !(fc >= f);
        if rejected {
            eps *= params.beta;
        } else {
            rho = candidate;
            f = fc;
            progress.accepted.push(f);
        }
        progress.trace.push(OptRow { iter: k, f, epsilon: eps, restarted: rejected });
        if eps < params.min_step {
            stop = OptStop::StepUnderflow;
            break;
        }
        if !rejected && progress.stalled(params) {
            stop = OptStop::Stall;
            break;
        }
    }
    finish(rho, f, progress, stop, iterations, obj, projector, params.eps0)
}

/// Next momentum weight: `(1 + √(1 + 4θ²))/2`.
pub fn next_theta(theta: f64) -> f64 {
    0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt())
}

/// Accelerated projected gradient with restart on any decrease of `F`.
pub fn apg_maximize(
    obj: &dyn Objective,
    projector: &mut dyn Projector,
    dim: usize,
    params: &OptParams,
) -> Result<OptResult> {
    params.validate()?;
    let mut rho = start_point(projector, dim)?;
    let mut f = obj.value(rho.matrix());
    let mut sigma = rho.matrix().clone();
    let mut theta = 1.0f64;
    let mut eps = params.eps0;
    let mut progress = Progress::new(f, eps);
    let mut stop = OptStop::MaxIters;
    let mut iterations = 0;
    for k in 1..=params.max_iters {
        iterations = k;
        let g = obj.gradient(&sigma);
        check_gradient(&g, dim)?;
        let mut x = sigma.clone();
        x.axpy(eps, &g);
        let candidate = projector.project(&x)?;
        let fc = obj.value(candidate.matrix());
        let restarted = !(fc >= f);
        if restarted {
            eps *= params.beta;
            sigma = rho.matrix().clone();
            theta = 1.0;
        } else {
            let next = next_theta(theta);
            let momentum = (theta - 1.0) / next;
            let mut s = candidate.matrix().scale(1.0 + momentum);
            s.axpy(-momentum, rho.matrix());
            sigma = s;
            theta = next;
            rho = candidate;
            f = fc;
            progress.accepted.push(f);
        }
        progress.trace.push(OptRow { iter: k, f, epsilon: eps, restarted });
        if eps < params.min_step {
            stop = OptStop::StepUnderflow;
            break;
        }
        if !restarted && progress.stalled(params) {
            stop = OptStop::Stall;
            break;
        }
    }
    finish(rho, f, progress, stop, iterations, obj, projector, params.eps0)
}
