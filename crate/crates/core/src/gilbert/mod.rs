//! Gilbert's algorithm with memory: approximate HS projection of a state onto
//! a convex class given only its extreme-point oracle.
//!
//! The simplex fit runs over the columns `[R, σ_1, ..., σ_m]` where `σ_i` are
//! the most recent oracle outputs and `R` is the normalized mixture of every
//! column evicted so far, weighted as in the fit at eviction time. The current
//! iterate therefore always lies in the hull being fitted, so the distance
//! never increases.

mod qp;

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::classes::{oracle_class, ClassSpec, ExtremePoint, OracleParams};
use crate::error::{arg_err, Error, Result};
use crate::qcore::{hs_distance, CMatrix, DensityMatrix};
use crate::rng::derive_seed;

use qp::{simplex_min_norm, Gram};

/// Seed stream of the confirming oracle calls.
const CONFIRM_STREAM: u64 = 0xC0F1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GilbertParams {
    /// Number of recent oracle outputs kept as separate columns.
    pub memory: usize,
    /// Additive accuracy goal on the distance.
    pub tol: f64,
    pub max_iters: usize,
    pub oracle: OracleParams,
    /// Iterations over which the average improvement is measured.
    pub stall_window: usize,
    /// Stop as soon as the distance is at most this value.
    #[serde(default)]
    pub target: Option<f64>,
    /// Stop once the oracle gap shows the distance exceeds `target`, or once
    /// the current rate of progress cannot reach it within `max_iters`.
    #[serde(default)]
    pub abort_above_target: bool,
    /// Oracle restarts used to re-check a gap before stopping on it. A weak
    /// oracle overestimates the gap, so stops are confirmed with a stronger one.
    #[serde(default = "default_confirm_restarts")]
    pub confirm_restarts: usize,
}

fn default_confirm_restarts() -> usize {
    20
}

impl Default for GilbertParams {
    fn default() -> Self {
        GilbertParams {
            memory: 50,
            tol: 1e-4,
            max_iters: 50_000,
            oracle: OracleParams::default(),
            stall_window: 50,
            target: None,
            abort_above_target: false,
            confirm_restarts: default_confirm_restarts(),
        }
    }
}

impl GilbertParams {
    fn validate(&self) -> Result<()> {
        if self.memory < 1 {
            return arg_err("Gilbert memory must be at least 1");
        }
        if !(self.tol > 0.0) {
            return arg_err(format!("Gilbert tolerance must be positive, got {}", self.tol));
        }
        if self.max_iters < 1 {
            return arg_err("Gilbert needs at least one iteration");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Distance minus the oracle gap fell below the tolerance.
    Gap,
    /// Distance reached the requested target.
    Target,
    /// The gap exceeded the requested target.
    GapAboveTarget,
    /// Average improvement over the stall window became negligible.
    Stall,
    /// At the current rate of improvement the target is out of reach within
    /// the iteration budget.
    OutOfReach,
    MaxIters,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub distance: f64,
    /// Absent on the row recorded when the target was met before any
    /// oracle call.
    pub gap: Option<f64>,
    pub oracle_value: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GilbertResult {
    pub projection: DensityMatrix,
    pub distance: f64,
    pub weights: Vec<f64>,
    pub extreme_points: Vec<ExtremePoint>,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub iterations: usize,
    /// Largest oracle gap seen; a lower bound on the true distance when the
    /// oracle is exact.
    pub best_gap: Option<f64>,
    /// Memory columns at termination, used to warm-start a later call.
    #[serde(skip)]
    pub recent: Vec<ExtremePoint>,
}

impl GilbertResult {
    /// `iter,distance,gap,oracle_value` rows with a header line.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iter,distance,gap,oracle_value\n");
        for r in &self.trace {
            let opt = |v: Option<f64>| v.map(|x| format!("{x:.12e}")).unwrap_or_default();
            let _ = writeln!(out, "{},{:.12e},{},{}", r.iter, r.distance, opt(r.gap), opt(r.oracle_value));
        }
        out
    }

    /// `Σ w_i |v_i><v_i|` rebuilt from the stored decomposition.
    pub fn reconstruct(&self) -> CMatrix {
        rebuild(&self.extreme_points, &self.weights, self.projection.dim())
    }
}

fn rebuild(points: &[ExtremePoint], weights: &[f64], d: usize) -> CMatrix {
    let mut m = CMatrix::zeros(d, d);
    for (p, &w) in points.iter().zip(weights) {
        m.add_projector(w, p.vector());
    }
    m.hermitian_part()
}

/// `g = <ρ - C, ρ - σ> / |ρ - C|`, zero when `ρ = C`.
pub fn gilbert_gap(rho: &CMatrix, current: &CMatrix, sigma: &CMatrix) -> f64 {
    let x = rho.sub(current);
    let nx = x.frobenius_norm();
    if nx == 0.0 {
        return 0.0;
    }
    x.hs_inner_unchecked(&rho.sub(sigma)) / nx
}

/// Least-squares weights on the simplex for `Σ w_i col_i ≈ ρ`.
pub fn simplex_ls(columns: &[CMatrix], rho: &CMatrix) -> Result<(Vec<f64>, CMatrix)> {
    let Some(first) = columns.first() else {
        return arg_err("simplex fit needs at least one column");
    };
    if columns.iter().any(|c| c.rows() != rho.rows() || c.cols() != rho.cols())
        || first.rows() != rho.rows()
    {
        return Err(Error::Dimension("columns and target differ in shape".into()));
    }
    let n = columns.len();
    let shifted: Vec<CMatrix> = columns.iter().map(|c| c.sub(rho)).collect();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = shifted[i].hs_inner_unchecked(&shifted[j]);
            p[i * n + j] = v;
            p[j * n + i] = v;
        }
    }
    let w = simplex_min_norm(&Gram { n, p: &p }, None);
    let mut fit = CMatrix::zeros(rho.rows(), rho.cols());
    for (c, &wi) in columns.iter().zip(&w) {
        fit.axpy(wi, c);
    }
    Ok((w, fit))
}

/// Normalized mixture of atoms, kept both as a matrix and as atom weights.
struct Composite {
    mat: CMatrix,
    parts: BTreeMap<usize, f64>,
}

struct Run<'a> {
    rho: &'a CMatrix,
    rho_norm2: f64,
    atoms: Vec<ExtremePoint>,
    rhat: Composite,
    mem: VecDeque<usize>,
    /// Weights of `[R, mem...]`.
    mu: Vec<f64>,
    /// `|<v_i|v_j>|²` between memory columns.
    mem_gram: VecDeque<VecDeque<f64>>,
    /// `<v_i|ρ|v_i>`
    mem_b: VecDeque<f64>,
    /// `<v_i|R|v_i>`
    mem_r: VecDeque<f64>,
    r_b: f64,
    r_rr: f64,
}

impl<'a> Run<'a> {
    fn new(rho: &'a CMatrix, atoms: Vec<ExtremePoint>, parts: BTreeMap<usize, f64>, rmat: CMatrix) -> Self {
        let mut run = Run {
            rho,
            rho_norm2: rho.hs_inner_unchecked(rho),
            atoms,
            rhat: Composite { mat: rmat, parts },
            mem: VecDeque::new(),
            mu: vec![1.0],
            mem_gram: VecDeque::new(),
            mem_b: VecDeque::new(),
            mem_r: VecDeque::new(),
            r_b: 0.0,
            r_rr: 0.0,
        };
        run.refresh_composite();
        run
    }

    fn refresh_composite(&mut self) {
        self.r_b = self.rhat.mat.hs_inner_unchecked(self.rho);
        self.r_rr = self.rhat.mat.hs_inner_unchecked(&self.rhat.mat);
        let rmat = &self.rhat.mat;
        self.mem_r = self.mem.iter().map(|&a| rmat.expectation(self.atoms[a].vector())).collect();
    }

    fn push_atom(&mut self, point: ExtremePoint) {
        let idx = self.atoms.len();
        self.atoms.push(point);
        let v = self.atoms[idx].vector();
        let row: VecDeque<f64> = self
            .mem
            .iter()
            .map(|&a| crate::qcore::inner(self.atoms[a].vector(), v).norm_sqr())
            .collect();
        for (r, &g) in self.mem_gram.iter_mut().zip(&row) {
            r.push_back(g);
        }
        let mut row = row;
        row.push_back(crate::qcore::vec_norm(v).powi(4));
        self.mem_gram.push_back(row);
        self.mem_b.push_back(self.rho.expectation(v));
        self.mem_r.push_back(self.rhat.mat.expectation(v));
        self.mem.push_back(idx);
        self.mu.push(0.0);
    }

    /// Folds the oldest memory column into the composite.
    fn evict(&mut self) {
        let a = self.mem.pop_front().expect("non-empty memory");
        self.mem_gram.pop_front();
        for r in self.mem_gram.iter_mut() {
            r.pop_front();
        }
        self.mem_b.pop_front();
        self.mem_r.pop_front();
        let w0 = self.mu[0];
        let wa = self.mu.remove(1);
        let total = w0 + wa;
        if wa > 0.0 && total > 0.0 {
            let (s0, sa) = (w0 / total, wa / total);
            self.rhat.mat.scale_mut(s0);
            self.rhat.mat.add_projector(sa, self.atoms[a].vector());
            for v in self.rhat.parts.values_mut() {
                *v *= s0;
            }
            *self.rhat.parts.entry(a).or_insert(0.0) += sa;
            self.rhat.parts.retain(|_, v| *v > 0.0);
            self.refresh_composite();
        }
        self.mu[0] = total;
    }

    fn shifted_gram(&self) -> Vec<f64> {
        let n = 1 + self.mem.len();
        let mut g = vec![0.0; n * n];
        let mut b = Vec::with_capacity(n);
        b.push(self.r_b);
        b.extend(self.mem_b.iter());
        g[0] = self.r_rr;
        for i in 1..n {
            g[i] = self.mem_r[i - 1];
            g[i * n] = self.mem_r[i - 1];
            for j in 1..n {
                g[i * n + j] = self.mem_gram[i - 1][j - 1];
            }
        }
        for i in 0..n {
            for j in 0..n {
                g[i * n + j] += self.rho_norm2 - b[i] - b[j];
            }
        }
        g
    }

    fn iterate(&self, mu: &[f64]) -> CMatrix {
        let mut c = self.rhat.mat.scale(mu[0]);
        for (&a, &w) in self.mem.iter().zip(&mu[1..]) {
            if w > 0.0 {
                c.add_projector(w, self.atoms[a].vector());
            }
        }
        c
    }

    fn refit(&mut self) {
        let g = self.shifted_gram();
        let n = self.mu.len();
        self.mu = simplex_min_norm(&Gram { n, p: &g }, Some(&self.mu));
    }

    fn finish(self, trace: Vec<TraceRow>, stop_reason: StopReason, best_gap: Option<f64>) -> GilbertResult {
        let d = self.rho.rows();
        let mut total: BTreeMap<usize, f64> = BTreeMap::new();
        for (&a, &w) in &self.rhat.parts {
            *total.entry(a).or_insert(0.0) += self.mu[0] * w;
        }
        for (&a, &w) in self.mem.iter().zip(&self.mu[1..]) {
            *total.entry(a).or_insert(0.0) += w;
        }
        total.retain(|_, w| *w > 1e-14);
        let sum: f64 = total.values().sum();
        let mut points = Vec::with_capacity(total.len());
        let mut weights = Vec::with_capacity(total.len());
        for (&a, &w) in &total {
            points.push(self.atoms[a].clone());
            weights.push(w / sum);
        }
        let projection = rebuild(&points, &weights, d);
        let distance = hs_distance(self.rho, &projection);
        let recent = self.mem.iter().map(|&a| self.atoms[a].clone()).collect();
        GilbertResult {
            projection: DensityMatrix::from_trusted(projection),
            distance,
            weights,
            extreme_points: points,
            iterations: trace.len(),
            trace,
            converged: stop_reason != StopReason::MaxIters,
            stop_reason,
            best_gap,
            recent,
        }
    }
}

fn check_target(target: &CMatrix, spec: &ClassSpec) -> Result<()> {
    let d = spec.shape().total_dim();
    if target.rows() != d || target.cols() != d {
        return Err(Error::Dimension(format!(
            "{}x{} target for a class of dimension {d}",
            target.rows(),
            target.cols()
        )));
    }
    let defect = target.hermiticity_defect();
    if defect > 1e-8 * target.frobenius_norm().max(1.0) {
        return Err(Error::NotHermitian(defect));
    }
    let tr = target.trace();
    if (tr.re - 1.0).abs() > 1e-8 || tr.im.abs() > 1e-8 {
        return arg_err(format!("projection target must have unit trace, got {tr}"));
    }
    if spec.is_ppt() {
        return Err(Error::UnsupportedClass(format!("{spec} uses the PPT projection, not Gilbert")));
    }
    Ok(())
}

/// Approximate HS projection of `target` onto `spec`. The target must be
/// Hermitian with unit trace but need not be PSD.
pub fn gilbert_project(target: &CMatrix, spec: &ClassSpec, params: &GilbertParams) -> Result<GilbertResult> {
    gilbert_project_warm(target, spec, params, None)
}

/// As [`gilbert_project`], starting from an earlier result on the same class.
pub fn gilbert_project_warm(
    target: &CMatrix,
    spec: &ClassSpec,
    params: &GilbertParams,
    warm: Option<&GilbertResult>,
) -> Result<GilbertResult> {
    params.validate()?;
    check_target(target, spec)?;
    let rho = target.hermitian_part();
    let d = rho.rows();
    let shape = spec.shape();

    let mut run = match warm {
        Some(prev) if prev.projection.dim() == d && !prev.extreme_points.is_empty() => {
            let atoms = prev.extreme_points.clone();
            let parts = prev.weights.iter().copied().enumerate().collect();
            let mut run = Run::new(&rho, atoms, parts, prev.reconstruct());
            for p in prev.recent.iter().rev().take(params.memory).rev() {
                run.push_atom(p.clone());
            }
            run.refit();
            run
        }
        Some(_) => return Err(Error::Dimension("warm start from a different system".into())),
        None => {
            let atoms: Vec<ExtremePoint> = (0..d).map(|k| ExtremePoint::basis(shape, k)).collect();
            let parts = (0..d).map(|k| (k, 1.0 / d as f64)).collect();
            Run::new(&rho, atoms, parts, CMatrix::identity(d).scale(1.0 / d as f64))
        }
    };

    let mut current = run.iterate(&run.mu);
    let mut dist = hs_distance(&rho, &current);
    let mut trace: Vec<TraceRow> = Vec::new();
    let mut best_gap: Option<f64> = None;
    let mut stop = StopReason::MaxIters;

    for k in 1..=params.max_iters {
        if params.target.is_some_and(|t| dist <= t) {
            stop = StopReason::Target;
            break;
        }
        let x = rho.sub(&current);
        let xnorm = x.frobenius_norm();
        let oracle_params = OracleParams {
            seed: derive_seed(params.oracle.seed, k as u64),
            ..params.oracle
        };
        let warm_pts: Vec<&ExtremePoint> = run.mem.iter().rev().take(3).map(|&a| &run.atoms[a]).collect();
        let mut sigma = oracle_class(&x, spec, &oracle_params, &warm_pts)?;
        let gap_of = |value: f64| if xnorm == 0.0 { 0.0 } else { (x.hs_inner_unchecked(&rho) - value) / xnorm };
        let stops = |gap: f64| {
            if dist - gap.max(0.0) <= params.tol {
                Some(StopReason::Gap)
            } else if params.abort_above_target && params.target.is_some_and(|t| gap > t) {
                Some(StopReason::GapAboveTarget)
            } else {
                None
            }
        };
        let mut value = sigma.value.expect("oracle points carry their value");
        let mut gap = gap_of(value);
        if stops(gap).is_some() && params.confirm_restarts > params.oracle.restarts {
            let strong = OracleParams {
                restarts: params.confirm_restarts,
                seed: derive_seed(oracle_params.seed, CONFIRM_STREAM),
                ..params.oracle
            };
            let mut warm_pts = warm_pts;
            warm_pts.push(&sigma);
            let second = oracle_class(&x, spec, &strong, &warm_pts)?;
            let v2 = second.value.expect("oracle points carry their value");
            if v2 > value {
                sigma = second;
                value = v2;
                gap = gap_of(value);
            }
        }
        best_gap = Some(best_gap.map_or(gap, |b: f64| b.max(gap)));
        if let Some(reason) = stops(gap) {
            trace.push(TraceRow { iter: k, distance: dist, gap: Some(gap), oracle_value: Some(value) });
            stop = reason;
            break;
        }

        if run.mem.len() == params.memory {
            run.evict();
        }
        run.push_atom(sigma);
        let before = run.mu.clone();
        run.refit();
        let next = run.iterate(&run.mu);
        let next_dist = hs_distance(&rho, &next);
        if next_dist > dist + 1e-15 {
            run.mu = before;
            current = run.iterate(&run.mu);
            dist = hs_distance(&rho, &current).min(dist);
        } else {
            current = next;
            dist = next_dist;
        }
        trace.push(TraceRow { iter: k, distance: dist, gap: Some(gap), oracle_value: Some(value) });

        let w = params.stall_window;
        if w > 0 && trace.len() > w {
            let old = trace[trace.len() - 1 - w].distance;
            let rate = (old - dist) / (w as f64);
            if rate < params.tol * 1e-3 {
                stop = StopReason::Stall;
                break;
            }
            // Improvements shrink as the run goes on, so a linear extrapolation
            // of the current rate is optimistic.
            let left = (params.max_iters - k) as f64;
            if params.abort_above_target && params.target.is_some_and(|t| dist - t > rate * left) {
                stop = StopReason::OutOfReach;
                break;
            }
        }
    }
    if trace.is_empty() {
        // Target met before any oracle call.
        trace.push(TraceRow { iter: 0, distance: dist, gap: None, oracle_value: None });
    }
    Ok(run.finish(trace, stop, best_gap))
}
