//! Seesaw oracles: maximize `<Φ|X|Φ>` over the pure extreme points of a class.

use serde::{Deserialize, Serialize};

use super::{ClassKind, ClassSpec, Partition};
use crate::error::{Error, Result};
use crate::qcore::{
    eigh, inner, normalize, vec_norm, CMatrix, DensityMatrix, SystemShape, C64, ONE,
    ZERO,
};
use crate::rng::SeededRng;
use crate::states::random_pure_with;

/// Seesaw budget for one oracle call.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleParams {
    /// Random initializations per partition, on top of any warm starts.
    pub restarts: usize,
    /// Maximum sweeps over the blocks per initialization.
    pub sweeps: usize,
    /// A sweep gaining less than this stops the initialization.
    pub gain_tol: f64,
    pub seed: u64,
    /// When positive, every initialization first gets this many sweeps and
    /// only the overall leader continues to the full budget.
    #[serde(default)]
    pub screen_sweeps: usize,
}

impl OracleParams {
    /// Sweeps given to each initialization before the leader is polished.
    fn first_pass(&self) -> usize {
        if self.screen_sweeps > 0 && self.screen_sweeps < self.sweeps {
            self.screen_sweeps
        } else {
            self.sweeps
        }
    }
}

impl Default for OracleParams {
    fn default() -> Self {
        OracleParams {
            restarts: 20,
            sweeps: 50,
            gain_tol: 1e-12,
            seed: 0,
            screen_sweeps: 0,
        }
    }
}

/// How an extreme point is built, kept so that its class membership can be
/// re-verified without trusting the optimizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum ExtremeForm {
    /// One unit vector per block of the partition.
    Product {
        partition: Partition,
        factors: Vec<Vec<C64>>,
    },
    /// Local operators applied to the class seed, one per party.
    Slocc { operators: Vec<CMatrix> },
}

/// A pure state in the class, with the oracle value that selected it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtremePoint {
    pub form: ExtremeForm,
    vector: Vec<C64>,
    /// `<Φ|X|Φ>` for the operator the oracle was called with; absent for
    /// points built directly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

/// Earlier oracle outputs used to seed the seesaw.
pub type WarmStart<'a> = &'a [&'a ExtremePoint];

/// Per-block index tables: `idx[b][i]` is the index of basis state `i`
/// restricted to the parties of block `b`.
struct Layout {
    block_dims: Vec<usize>,
    idx: Vec<Vec<usize>>,
}

impl Layout {
    fn new(shape: &SystemShape, partition: &Partition) -> Self {
        let d = shape.total_dim();
        let dims = shape.local_dims();
        let mut block_dims = Vec::new();
        let mut idx = Vec::new();
        for block in partition.blocks() {
            block_dims.push(block.iter().map(|&p| dims[p]).product());
            idx.push(
                (0..d)
                    .map(|i| {
                        let digits = shape.digits(i);
                        block.iter().fold(0, |acc, &p| acc * dims[p] + digits[p])
                    })
                    .collect(),
            );
        }
        Layout { block_dims, idx }
    }

    fn assemble(&self, factors: &[Vec<C64>]) -> Vec<C64> {
        let d = self.idx[0].len();
        (0..d)
            .map(|i| {
                factors
                    .iter()
                    .zip(&self.idx)
                    .fold(ONE, |acc, (f, ix)| acc * f[ix[i]])
            })
            .collect()
    }

    /// `<⊗_{b≠j} φ_b| X |⊗_{b≠j} φ_b>` as an operator on block `j`.
    fn contract(&self, x: &CMatrix, factors: &[Vec<C64>], j: usize) -> CMatrix {
        let d = x.rows();
        let dj = self.block_dims[j];
        let idxj = &self.idx[j];
        let coef: Vec<C64> = (0..d)
            .map(|i| {
                let mut c = ONE;
                for (b, f) in factors.iter().enumerate() {
                    if b != j {
                        c *= f[self.idx[b][i]];
                    }
                }
                c
            })
            .collect();
        let xd = x.data();
        let mut t = vec![ZERO; d * dj];
        for i in 0..d {
            let row = &xd[i * d..(i + 1) * d];
            let trow = &mut t[i * dj..(i + 1) * dj];
            for ((xij, cj), &bj) in row.iter().zip(&coef).zip(idxj) {
                trow[bj] += xij * cj;
            }
        }
        let mut m = CMatrix::zeros(dj, dj);
        for i in 0..d {
            let ci = coef[i].conj();
            let a = idxj[i];
            for b in 0..dj {
                m[(a, b)] += ci * t[i * dj + b];
            }
        }
        m.hermitian_part()
    }
}

fn top_eigenpair(m: &CMatrix) -> (f64, Vec<C64>) {
    let e = eigh(m).expect("contracted operator is Hermitian");
    (e.values[0], e.vector(0))
}

/// Seesaw over product states of one partition. Returns the factors, the
/// final value and the value after each sweep.
fn seesaw_product(
    x: &CMatrix,
    layout: &Layout,
    mut factors: Vec<Vec<C64>>,
    sweeps: usize,
    gain_tol: f64,
) -> (Vec<Vec<C64>>, f64, Vec<f64>) {
    let mut value = x.expectation(&layout.assemble(&factors));
    let mut history = Vec::with_capacity(sweeps);
    let scale = x.frobenius_norm().max(1e-300);
    for _ in 0..sweeps {
        let before = value;
        for j in 0..factors.len() {
            let m = layout.contract(x, &factors, j);
            let (lam, v) = top_eigenpair(&m);
            factors[j] = v;
            value = lam;
        }
        debug_assert!(value >= before - 1e-10 * scale, "seesaw sweep decreased {before} -> {value}");
        history.push(value);
        if value - before < gain_tol * scale {
            break;
        }
    }
    (factors, value, history)
}

fn check_operator(x: &CMatrix, shape: &SystemShape) -> Result<()> {
    if !x.is_square() || x.rows() != shape.total_dim() {
        return Err(Error::Dimension(format!(
            "oracle operator is {}x{}, system dimension is {}",
            x.rows(),
            x.cols(),
            shape.total_dim()
        )));
    }
    let defect = x.hermiticity_defect();
    if defect > 1e-8 * x.frobenius_norm().max(1.0) {
        return Err(Error::NotHermitian(defect));
    }
    Ok(())
}

/// Best product state over one partition after the first pass, from warm
/// starts and random restarts. Ties keep the earliest initialization.
fn product_search(
    x: &CMatrix,
    layout: &Layout,
    params: &OracleParams,
    warm: &[Vec<Vec<C64>>],
    stream: u64,
) -> (Vec<Vec<C64>>, f64) {
    let mut inits: Vec<Vec<Vec<C64>>> = warm.to_vec();
    for r in 0..params.restarts {
        let mut rng = SeededRng::derived(params.seed, (stream << 20) | r as u64);
        inits.push(
            layout
                .block_dims
                .iter()
                .map(|&db| random_pure_with(db, &mut rng).amplitudes().to_vec())
                .collect(),
        );
    }
    if inits.is_empty() {
        inits.push(
            layout
                .block_dims
                .iter()
                .map(|&db| {
                    let mut v = vec![ZERO; db];
                    v[0] = ONE;
                    v
                })
                .collect(),
        );
    }
    let mut best: Option<(Vec<Vec<C64>>, f64)> = None;
    for init in inits {
        let (f, v, _) = seesaw_product(x, layout, init, params.first_pass(), params.gain_tol);
        if best.as_ref().is_none_or(|(_, bv)| v > *bv) {
            best = Some((f, v));
        }
    }
    best.expect("at least one initialization")
}

/// Runs the remaining sweeps on the leader and packages it.
fn finish_product(
    x: &CMatrix,
    layout: &Layout,
    partition: &Partition,
    params: &OracleParams,
    factors: Vec<Vec<C64>>,
) -> ExtremePoint {
    let rest = params.sweeps - params.first_pass();
    let factors = if rest > 0 {
        seesaw_product(x, layout, factors, rest, params.gain_tol).0
    } else {
        factors
    };
    let vector = layout.assemble(&factors);
    let value = x.expectation(&vector);
    ExtremePoint {
        form: ExtremeForm::Product {
            partition: partition.clone(),
            factors,
        },
        vector,
        value: Some(value),
    }
}

/// Product state over `partition` heuristically maximizing `<Φ|X|Φ>`.
pub fn oracle_product(
    x: &CMatrix,
    shape: &SystemShape,
    partition: &Partition,
    params: &OracleParams,
) -> Result<ExtremePoint> {
    check_operator(x, shape)?;
    if partition.n_parties() != shape.n_parties() {
        return Err(Error::Dimension(format!(
            "partition over {} parties on a {}-party system",
            partition.n_parties(),
            shape.n_parties()
        )));
    }
    let layout = Layout::new(shape, partition);
    let (factors, _) = product_search(x, &layout, params, &[], 0);
    Ok(finish_product(x, &layout, partition, params, factors))
}

/// Extreme point of `spec` heuristically maximizing `<Φ|X|Φ>`.
pub fn oracle_class(
    x: &CMatrix,
    spec: &ClassSpec,
    params: &OracleParams,
    warm: WarmStart<'_>,
) -> Result<ExtremePoint> {
    let shape = spec.shape();
    check_operator(x, shape)?;
    match spec.kind() {
        ClassKind::Ppt { .. } => Err(Error::UnsupportedClass(format!(
            "{spec} has no extreme-point oracle; use the PPT projection"
        ))),
        ClassKind::Slocc { seed, .. } => {
            let warm_ops: Vec<Vec<CMatrix>> = warm
                .iter()
                .filter_map(|p| match &p.form {
                    ExtremeForm::Slocc { operators } => Some(operators.clone()),
                    _ => None,
                })
                .collect();
            Ok(slocc_search(x, shape, seed.amplitudes(), params, &warm_ops))
        }
        _ => {
            let mut best: Option<(Partition, Layout, Vec<Vec<C64>>, f64)> = None;
            for (k, partition) in spec.partitions()?.iter().enumerate() {
                let warm_f: Vec<Vec<Vec<C64>>> = warm
                    .iter()
                    .filter_map(|p| match &p.form {
                        ExtremeForm::Product { partition: q, factors } if q == partition => {
                            Some(factors.clone())
                        }
                        _ => None,
                    })
                    .collect();
                let layout = Layout::new(shape, partition);
                let (factors, v) = product_search(x, &layout, params, &warm_f, k as u64);
                if best.as_ref().is_none_or(|b| v > b.3) {
                    best = Some((partition.clone(), layout, factors, v));
                }
            }
            let (partition, layout, factors, _) = best.expect("at least one partition");
            Ok(finish_product(x, &layout, &partition, params, factors))
        }
    }
}

/// `(I ⊗ .. ⊗ A ⊗ .. ⊗ I) v` with `A` on party `p`.
fn apply_local(v: &[C64], shape: &SystemShape, p: usize, a: &CMatrix) -> Vec<C64> {
    let dp = shape.local_dims()[p];
    let stride = shape.stride(p);
    let mut out = vec![ZERO; v.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let x = (i / stride) % dp;
        let base = i - x * stride;
        let mut s = ZERO;
        for y in 0..dp {
            s += a[(x, y)] * v[base + y * stride];
        }
        *o = s;
    }
    out
}

fn apply_all(seed: &[C64], shape: &SystemShape, ops: &[CMatrix], skip: Option<usize>) -> Vec<C64> {
    let mut v = seed.to_vec();
    for (p, a) in ops.iter().enumerate() {
        if Some(p) != skip {
            v = apply_local(&v, shape, p, a);
        }
    }
    v
}

/// Lower-triangular `L` with `L L† = N` for Hermitian positive definite `N`.
fn cholesky(n: &CMatrix) -> Option<CMatrix> {
    let k = n.rows();
    let mut l = CMatrix::zeros(k, k);
    for j in 0..k {
        let mut diag = n[(j, j)].re;
        for m in 0..j {
            diag -= l[(j, m)].norm_sqr();
        }
        if !(diag > 0.0) {
            return None;
        }
        let ljj = diag.sqrt();
        l[(j, j)] = C64::new(ljj, 0.0);
        for i in j + 1..k {
            let mut s = n[(i, j)];
            for m in 0..j {
                s -= l[(i, m)] * l[(j, m)].conj();
            }
            l[(i, j)] = s / ljj;
        }
    }
    Some(l)
}

fn lower_inverse(l: &CMatrix) -> CMatrix {
    let k = l.rows();
    let mut inv = CMatrix::zeros(k, k);
    for col in 0..k {
        for i in col..k {
            let mut s = if i == col { ONE } else { ZERO };
            for m in col..i {
                s -= l[(i, m)] * inv[(m, col)];
            }
            inv[(i, col)] = s / l[(i, i)];
        }
    }
    inv
}

/// Top generalized eigenvector of the pencil `(M, N)`, `N` positive definite.
fn generalized_top(m: &CMatrix, n: &CMatrix) -> Option<Vec<C64>> {
    let l = cholesky(n)?;
    let li = lower_inverse(&l);
    let c = li.matmul(m).matmul(&li.adjoint()).hermitian_part();
    let (_, z) = top_eigenpair(&c);
    Some(li.adjoint().matvec(&z))
}

fn slocc_seesaw(
    x: &CMatrix,
    shape: &SystemShape,
    seed: &[C64],
    mut ops: Vec<CMatrix>,
    sweeps: usize,
    gain_tol: f64,
) -> (Vec<CMatrix>, f64) {
    let d = shape.total_dim();
    let scale = x.frobenius_norm().max(1e-300);
    let quotient = |ops: &[CMatrix]| {
        let v = apply_all(seed, shape, ops, None);
        let nn = vec_norm(&v);
        if nn < 1e-150 {
            f64::NEG_INFINITY
        } else {
            x.expectation(&v) / (nn * nn)
        }
    };
    let mut value = quotient(&ops);
    for _ in 0..sweeps {
        let before = value;
        for j in 0..ops.len() {
            let dj = shape.local_dims()[j];
            let stride = shape.stride(j);
            let chi = apply_all(seed, shape, &ops, Some(j));
            // Column (x, y) of T maps A_j[x][y] to its contribution to the state.
            let cols = dj * dj;
            let mut t = CMatrix::zeros(d, cols);
            for i in 0..d {
                let xi = (i / stride) % dj;
                let base = i - xi * stride;
                for y in 0..dj {
                    t[(i, xi * dj + y)] = chi[base + y * stride];
                }
            }
            let td = t.adjoint();
            let m = td.matmul(&x.matmul(&t)).hermitian_part();
            let mut nmat = td.matmul(&t).hermitian_part();
            nmat.add_identity(1e-12);
            let Some(mut a) = generalized_top(&m, &nmat) else {
                continue;
            };
            if normalize(&mut a) == 0.0 {
                continue;
            }
            let cand = CMatrix::from_fn(dj, dj, |r, c| a[r * dj + c]);
            let old = std::mem::replace(&mut ops[j], cand);
            let v = quotient(&ops);
            if v + 1e-12 * scale < value {
                ops[j] = old;
            } else {
                value = v;
            }
        }
        if value - before < gain_tol * scale {
            break;
        }
    }
    (ops, value)
}

fn slocc_search(
    x: &CMatrix,
    shape: &SystemShape,
    seed: &[C64],
    params: &OracleParams,
    warm: &[Vec<CMatrix>],
) -> ExtremePoint {
    let n = shape.n_parties();
    let unit = |dp: usize| CMatrix::identity(dp).scale(1.0 / (dp as f64).sqrt());
    let mut inits: Vec<Vec<CMatrix>> = warm.to_vec();
    inits.push(shape.local_dims().iter().map(|&dp| unit(dp)).collect());
    for r in 0..params.restarts {
        let mut rng = SeededRng::derived(params.seed, (1 << 40) | r as u64);
        inits.push(
            (0..n)
                .map(|p| {
                    let dp = shape.local_dims()[p];
                    let g = CMatrix::from_fn(dp, dp, |_, _| rng.complex_gaussian());
                    g.scale(1.0 / g.frobenius_norm())
                })
                .collect(),
        );
    }
    let mut best: Option<(Vec<CMatrix>, f64)> = None;
    for init in inits {
        let (ops, v) = slocc_seesaw(x, shape, seed, init, params.first_pass(), params.gain_tol);
        if v.is_finite() && best.as_ref().is_none_or(|(_, bv)| v > *bv) {
            best = Some((ops, v));
        }
    }
    let (mut operators, _) = best.expect("identity initialization is always finite");
    let rest = params.sweeps - params.first_pass();
    if rest > 0 {
        operators = slocc_seesaw(x, shape, seed, operators, rest, params.gain_tol).0;
    }
    let mut vector = apply_all(seed, shape, &operators, None);
    normalize(&mut vector);
    let value = x.expectation(&vector);
    ExtremePoint {
        form: ExtremeForm::Slocc { operators },
        vector,
        value: Some(value),
    }
}

impl ExtremePoint {
    /// Product point from explicit block factors (each normalized here).
    pub fn product(shape: &SystemShape, partition: Partition, mut factors: Vec<Vec<C64>>) -> Result<Self> {
        let layout = Layout::new(shape, &partition);
        if factors.len() != partition.n_blocks()
            || factors.iter().zip(&layout.block_dims).any(|(f, &db)| f.len() != db)
        {
            return Err(Error::Dimension("factor sizes do not match the partition".into()));
        }
        for f in &mut factors {
            if !(normalize(f) > 0.0) {
                return Err(Error::InvalidState("zero factor".into()));
            }
        }
        let vector = layout.assemble(&factors);
        Ok(ExtremePoint {
            form: ExtremeForm::Product { partition, factors },
            vector,
            value: None,
        })
    }

    /// Computational basis state `k` as a fully product point.
    pub fn basis(shape: &SystemShape, k: usize) -> Self {
        let digits = shape.digits(k);
        let factors = digits
            .iter()
            .zip(shape.local_dims())
            .map(|(&x, &dp)| {
                let mut v = vec![ZERO; dp];
                v[x] = ONE;
                v
            })
            .collect();
        ExtremePoint::product(shape, Partition::finest(shape.n_parties()), factors)
            .expect("basis factors are valid")
    }

    pub fn vector(&self) -> &[C64] {
        &self.vector
    }

    pub fn projector(&self) -> CMatrix {
        CMatrix::projector(&self.vector)
    }

    pub fn as_density(&self) -> DensityMatrix {
        DensityMatrix::from_trusted(self.projector())
    }

    /// Re-derives the stored vector from the stored form and checks that the
    /// form is admissible for `spec`.
    pub fn verify(&self, spec: &ClassSpec, tol: f64) -> Result<()> {
        let shape = spec.shape();
        let bad = |m: String| Err(Error::InvalidState(m));
        if self.vector.len() != shape.total_dim() {
            return bad("extreme point has the wrong dimension".into());
        }
        if (vec_norm(&self.vector) - 1.0).abs() > tol {
            return bad("extreme point is not normalized".into());
        }
        let rebuilt = match &self.form {
            ExtremeForm::Product { partition, factors } => {
                let admissible = match spec.kind() {
                    ClassKind::Slocc { .. } | ClassKind::Ppt { .. } => {
                        partition.n_blocks() == shape.n_parties()
                    }
                    _ => partition.n_blocks() >= spec.block_count().unwrap_or(usize::MAX),
                };
                if !admissible || partition.n_parties() != shape.n_parties() {
                    return bad(format!("partition {partition} is not admissible for {spec}"));
                }
                let layout = Layout::new(shape, partition);
                if factors.len() != partition.n_blocks()
                    || factors.iter().zip(&layout.block_dims).any(|(f, &db)| f.len() != db)
                {
                    return bad("factor sizes do not match the partition".into());
                }
                layout.assemble(factors)
            }
            ExtremeForm::Slocc { operators } => {
                let ClassKind::Slocc { seed, .. } = spec.kind() else {
                    return bad(format!("SLOCC point offered for {spec}"));
                };
                if operators.len() != shape.n_parties()
                    || operators
                        .iter()
                        .zip(shape.local_dims())
                        .any(|(a, &dp)| a.rows() != dp || a.cols() != dp)
                {
                    return bad("operator sizes do not match the system".into());
                }
                let mut v = apply_all(seed.amplitudes(), shape, operators, None);
                if !(normalize(&mut v) > 0.0) {
                    return bad("operators annihilate the seed".into());
                }
                // Global phase is irrelevant for the projector.
                let ov = inner(&v, &self.vector);
                let phase = if ov.norm() > 0.0 { ov / ov.norm() } else { ONE };
                v.iter().map(|z| z * phase).collect()
            }
        };
        let err = rebuilt
            .iter()
            .zip(&self.vector)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        if err > tol {
            return bad(format!("stored vector deviates from its form by {err:.3e}"));
        }
        Ok(())
    }
}
