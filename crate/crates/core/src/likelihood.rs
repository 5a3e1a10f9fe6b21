//! Tomography models, the log-likelihood and its gradient, simulated data,
//! and the likelihood-ratio test against a convex class.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::classes::{ClassSpec, PptParams};
use crate::error::{arg_err, Error, Result};
use crate::gilbert::GilbertParams;
use crate::optimize::{
    apg_maximize, dg_maximize, GilbertProjector, Objective, OptParams, OptResult, PptProjector, Projector,
    StateSpaceProjector,
};
use crate::qcore::{min_eigenvalue, tensor, CMatrix, DensityMatrix, C64, ONE, ZERO};
use crate::rng::SeededRng;

/// Probabilities are clamped below at this value in the likelihood.
pub const P_MIN: f64 = 1e-12;

/// How a POVM was built; this is what data files record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PovmSpec {
    Pauli { n: usize },
    Sic3,
    Sic3x3,
    /// Row-major `[re, im]` entries of each element.
    Explicit { elements: Vec<Vec<[f64; 2]>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PovmSpec", into = "PovmSpec")]
pub struct Povm {
    spec: PovmSpec,
    dim: usize,
    elements: Vec<CMatrix>,
}

impl TryFrom<PovmSpec> for Povm {
    type Error = Error;

    fn try_from(spec: PovmSpec) -> Result<Self> {
        Povm::from_spec(spec)
    }
}

impl From<Povm> for PovmSpec {
    fn from(p: Povm) -> Self {
        p.spec
    }
}

fn pauli_axis_states() -> [[Vec<C64>; 2]; 3] {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let r = |x: f64| C64::new(x, 0.0);
    [
        [vec![r(h), r(h)], vec![r(h), r(-h)]],
        [vec![r(h), C64::new(0.0, h)], vec![r(h), C64::new(0.0, -h)]],
        [vec![ONE, ZERO], vec![ZERO, ONE]],
    ]
}

/// Weyl-Heisenberg orbit of the qutrit fiducial `(0, 1, -1)/√2`.
fn sic3_elements() -> Vec<CMatrix> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let fid = [ZERO, C64::new(h, 0.0), C64::new(-h, 0.0)];
    let omega = C64::from_polar(1.0, 2.0 * std::f64::consts::PI / 3.0);
    let mut out = Vec::with_capacity(9);
    for j in 0..3 {
        for k in 0..3 {
            // X^j Z^k |fid>: Z multiplies entry m by ω^{km}, X shifts m -> m + j.
            let mut v = vec![ZERO; 3];
            for m in 0..3 {
                v[(m + j) % 3] = fid[m] * omega.powu((k * m) as u32);
            }
            out.push(CMatrix::projector(&v).scale(1.0 / 3.0));
        }
    }
    out
}

impl Povm {
    /// Pauli tomography on `n` qubits as one POVM: the `2^n` outcome
    /// projectors of each of the `3^n` settings, weighted `1/3^n`. Element
    /// `k = setting·2^n + outcome`; party 0 is the most significant digit of
    /// both, with axes ordered x, y, z and outcomes +, -.
    pub fn pauli(n: usize) -> Result<Self> {
        Self::from_spec(PovmSpec::Pauli { n })
    }

    pub fn sic3() -> Self {
        Self::from_spec(PovmSpec::Sic3).expect("built-in POVM is valid")
    }

    /// Two-qutrit SIC POVM: all products of single-qutrit elements.
    pub fn sic3x3() -> Self {
        Self::from_spec(PovmSpec::Sic3x3).expect("built-in POVM is valid")
    }

    /// Validated POVM from explicit elements.
    pub fn explicit(elements: Vec<CMatrix>) -> Result<Self> {
        let raw = elements
            .iter()
            .map(|m| m.data().iter().map(|z| [z.re, z.im]).collect())
            .collect();
        Self::from_spec(PovmSpec::Explicit { elements: raw })
    }

    pub fn from_spec(spec: PovmSpec) -> Result<Self> {
        let elements = match &spec {
            PovmSpec::Pauli { n } => {
                if !(1..=6).contains(n) {
                    return arg_err(format!("Pauli POVM needs 1 to 6 qubits, got {n}"));
                }
                let axes = pauli_axis_states();
                let single: Vec<Vec<CMatrix>> = axes
                    .iter()
                    .map(|pair| pair.iter().map(|v| CMatrix::projector(v).scale(1.0 / 3.0)).collect())
                    .collect();
                let settings = 3usize.pow(*n as u32);
                let outcomes = 1usize << n;
                let mut out = Vec::with_capacity(settings * outcomes);
                for s in 0..settings {
                    for o in 0..outcomes {
                        let factors: Vec<CMatrix> = (0..*n)
                            .map(|p| {
                                let axis = (s / 3usize.pow((n - 1 - p) as u32)) % 3;
                                let bit = (o >> (n - 1 - p)) & 1;
                                single[axis][bit].clone()
                            })
                            .collect();
                        out.push(tensor(&factors)?);
                    }
                }
                out
            }
            PovmSpec::Sic3 => sic3_elements(),
            PovmSpec::Sic3x3 => {
                let one = sic3_elements();
                let mut out = Vec::with_capacity(81);
                for a in &one {
                    for b in &one {
                        out.push(a.kron(b));
                    }
                }
                out
            }
            PovmSpec::Explicit { elements } => explicit_elements(elements)?,
        };
        let dim = elements[0].rows();
        let povm = Povm { spec, dim, elements };
        povm.validate()?;
        Ok(povm)
    }

    fn validate(&self) -> Result<()> {
        let bad = |message: String| Err(Error::Data { field: "povm.elements".into(), message });
        let mut total = CMatrix::zeros(self.dim, self.dim);
        for (k, e) in self.elements.iter().enumerate() {
            if e.hermiticity_defect() > 1e-10 {
                return bad(format!("element {k} is not Hermitian"));
            }
            let lo = min_eigenvalue(&e.hermitian_part())?;
            if lo < -1e-10 {
                return bad(format!("element {k} has eigenvalue {lo:.3e}"));
            }
            total = total.add(e);
        }
        let defect = total.max_abs_diff(&CMatrix::identity(self.dim));
        if defect > 1e-9 {
            return bad(format!("elements sum to the identity only within {defect:.3e}"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[CMatrix] {
        &self.elements
    }

    pub fn spec(&self) -> &PovmSpec {
        &self.spec
    }

    /// `tr(ρ Π_k)` without any clamping, for arbitrary Hermitian `ρ`.
    pub fn raw_probabilities(&self, rho: &CMatrix) -> Vec<f64> {
        self.elements.iter().map(|e| e.hs_inner_unchecked(rho)).collect()
    }
}

fn explicit_elements(elements: &[Vec<[f64; 2]>]) -> Result<Vec<CMatrix>> {
    let bad = |message: String| Err(Error::Data { field: "povm.elements".into(), message });
    if elements.is_empty() {
        return bad("no elements".into());
    }
    let len = elements[0].len();
    let dim = (len as f64).sqrt().round() as usize;
    if dim * dim != len || dim == 0 {
        return bad(format!("element 0 has {len} entries, not a square count"));
    }
    let mut out = Vec::with_capacity(elements.len());
    for (k, raw) in elements.iter().enumerate() {
        if raw.len() != len {
            return bad(format!("element {k} has {} entries, expected {len}", raw.len()));
        }
        if raw.iter().flatten().any(|x| !x.is_finite()) {
            return bad(format!("element {k} has a non-finite entry"));
        }
        let data = raw.iter().map(|z| C64::new(z[0], z[1])).collect();
        out.push(CMatrix::from_vec(dim, dim, data)?);
    }
    Ok(out)
}

/// Born-rule probabilities. Values down to `-1e-10` are clamped to zero;
/// anything more negative is an error.
pub fn probabilities(rho: &DensityMatrix, povm: &Povm) -> Result<Vec<f64>> {
    if rho.dim() != povm.dim() {
        return arg_err(format!("state of dimension {} for a POVM of dimension {}", rho.dim(), povm.dim()));
    }
    let mut p = povm.raw_probabilities(rho.matrix());
    for (k, v) in p.iter_mut().enumerate() {
        if *v < -1e-10 {
            return Err(Error::InvalidState(format!("probability {k} is {v:.3e}")));
        }
        *v = v.max(0.0);
    }
    Ok(p)
}

/// Click counts for one POVM. Counts are reals so that exact frequencies can
/// stand in for data.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "RawDataset", into = "RawDataset")]
pub struct Dataset {
    povm: Povm,
    counts: Vec<f64>,
    total: f64,
}

#[derive(Serialize, Deserialize)]
struct RawDataset {
    dim: usize,
    povm: PovmSpec,
    counts: Vec<f64>,
    #[serde(rename = "N")]
    n: f64,
}

impl TryFrom<RawDataset> for Dataset {
    type Error = Error;

    fn try_from(raw: RawDataset) -> Result<Self> {
        let povm = Povm::from_spec(raw.povm)?;
        if povm.dim() != raw.dim {
            return Err(Error::Data {
                field: "dim".into(),
                message: format!("{} does not match the POVM dimension {}", raw.dim, povm.dim()),
            });
        }
        let data = Dataset::new(povm, raw.counts)?;
        if (data.total - raw.n).abs() > 1e-9 * data.total.max(1.0) {
            return Err(Error::Data {
                field: "N".into(),
                message: format!("{} differs from the count total {}", raw.n, data.total),
            });
        }
        Ok(data)
    }
}

impl From<Dataset> for RawDataset {
    fn from(d: Dataset) -> Self {
        RawDataset {
            dim: d.povm.dim(),
            povm: d.povm.spec,
            counts: d.counts,
            n: d.total,
        }
    }
}

impl Dataset {
    pub fn new(povm: Povm, counts: Vec<f64>) -> Result<Self> {
        let bad = |message: String| Err(Error::Data { field: "counts".into(), message });
        if counts.len() != povm.len() {
            return bad(format!("{} counts for {} POVM elements", counts.len(), povm.len()));
        }
        if let Some((k, v)) = counts.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return bad(format!("count {k} is {v}"));
        }
        let total: f64 = counts.iter().sum();
        if !(total > 0.0) {
            return bad("counts sum to zero".into());
        }
        Ok(Dataset { povm, counts, total })
    }

    /// `n_k = N p_k` exactly.
    pub fn exact(rho: &DensityMatrix, povm: &Povm, n: f64) -> Result<Self> {
        if !(n > 0.0) {
            return arg_err(format!("N must be positive, got {n}"));
        }
        let p = probabilities(rho, povm)?;
        let s: f64 = p.iter().sum();
        Dataset::new(povm.clone(), p.iter().map(|v| n * v / s).collect())
    }

    /// Multinomial draw of `n` clicks, one binomial per element conditioned
    /// on the clicks left.
    pub fn sample(rho: &DensityMatrix, povm: &Povm, n: u64, seed: u64) -> Result<Self> {
        if n == 0 {
            return arg_err("N must be at least 1");
        }
        let p = probabilities(rho, povm)?;
        let mut rng = SeededRng::new(seed);
        let mut left = n;
        let mut mass: f64 = p.iter().sum();
        let mut counts = Vec::with_capacity(p.len());
        for (k, &pk) in p.iter().enumerate() {
            let c = if k + 1 == p.len() {
                left
            } else if left == 0 || pk <= 0.0 {
                0
            } else {
                let frac = (pk / mass).clamp(0.0, 1.0);
                Binomial::new(left, frac)
                    .map_err(|e| Error::Argument(e.to_string()))?
                    .sample(rng.inner_mut())
            };
            left -= c;
            mass -= pk;
            counts.push(c as f64);
        }
        Dataset::new(povm.clone(), counts)
    }

    /// Parses the data-file schema, keeping the field name of any
    /// validation failure.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawDataset = serde_json::from_str(text)?;
        Dataset::try_from(raw)
    }

    pub fn povm(&self) -> &Povm {
        &self.povm
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn dim(&self) -> usize {
        self.povm.dim()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.counts.iter().map(|c| c / self.total).collect()
    }
}

/// Normalized log-likelihood `Σ f_k ln p_k` with `p_k >= P_MIN`.
pub struct LogLikelihood<'a> {
    data: &'a Dataset,
    freqs: Vec<f64>,
    clamps: AtomicUsize,
}

impl<'a> LogLikelihood<'a> {
    pub fn new(data: &'a Dataset) -> Self {
        LogLikelihood {
            data,
            freqs: data.frequencies(),
            clamps: AtomicUsize::new(0),
        }
    }

    /// Number of probabilities raised to `P_MIN` so far.
    pub fn clamp_events(&self) -> usize {
        self.clamps.load(Ordering::Relaxed)
    }

    fn clamped(&self, rho: &CMatrix) -> Vec<f64> {
        let mut p = self.data.povm.raw_probabilities(rho);
        let mut hits = 0;
        for (v, &f) in p.iter_mut().zip(&self.freqs) {
            if f > 0.0 && *v < P_MIN {
                *v = P_MIN;
                hits += 1;
            }
        }
        if hits > 0 {
            self.clamps.fetch_add(hits, Ordering::Relaxed);
        }
        p
    }
}

impl Objective for LogLikelihood<'_> {
    fn value(&self, rho: &CMatrix) -> f64 {
        self.clamped(rho)
            .iter()
            .zip(&self.freqs)
            .filter(|(_, &f)| f > 0.0)
            .map(|(p, f)| f * p.ln())
            .sum()
    }

    fn gradient(&self, rho: &CMatrix) -> CMatrix {
        let p = self.clamped(rho);
        let d = self.data.dim();
        let mut g = CMatrix::zeros(d, d);
        for ((e, &f), pk) in self.data.povm.elements.iter().zip(&self.freqs).zip(&p) {
            if f > 0.0 {
                g.axpy(f / pk, e);
            }
        }
        g
    }
}

pub fn loglik(rho: &CMatrix, data: &Dataset) -> f64 {
    LogLikelihood::new(data).value(rho)
}

pub fn grad_loglik(rho: &CMatrix, data: &Dataset) -> CMatrix {
    LogLikelihood::new(data).gradient(rho)
}

/// `½ Pr(χ²₁ ≥ λ)` for `λ > 0`, and 1 at `λ = 0`.
pub fn pvalue_semichi2(lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return arg_err(format!("likelihood ratio must be non-negative, got {lambda}"));
    }
    if lambda == 0.0 {
        return Ok(1.0);
    }
    Ok(0.5 * erfc((lambda / 2.0).sqrt()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Dg,
    Apg,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dg" => Ok(Algorithm::Dg),
            "apg" => Ok(Algorithm::Apg),
            _ => arg_err(format!("unknown algorithm `{s}` (expected dg or apg)")),
        }
    }
}

pub fn maximize(
    algorithm: Algorithm,
    obj: &dyn Objective,
    projector: &mut dyn Projector,
    dim: usize,
    params: &OptParams,
) -> Result<OptResult> {
    match algorithm {
        Algorithm::Dg => dg_maximize(obj, projector, dim, params),
        Algorithm::Apg => apg_maximize(obj, projector, dim, params),
    }
}

/// The projector for a class: PPT projection or Gilbert's algorithm.
pub fn class_projector(spec: &ClassSpec, gilbert: &GilbertParams, ppt: &PptParams) -> Box<dyn Projector> {
    if spec.is_ppt() {
        Box::new(PptProjector { spec: spec.clone(), params: *ppt })
    } else {
        Box::new(GilbertProjector::new(spec.clone(), *gilbert))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrtParams {
    pub opt: OptParams,
    /// Parameters of the maximum-likelihood run over all states.
    pub mle_opt: OptParams,
    pub gilbert: GilbertParams,
    pub ppt: PptParams,
    /// Scheme for the constrained run; the unconstrained run always uses APG.
    pub algorithm: Algorithm,
}

impl Default for LrtParams {
    fn default() -> Self {
        LrtParams {
            opt: OptParams::default(),
            mle_opt: OptParams {
                max_iters: 20_000,
                f_tol: 1e-13,
                ..OptParams::default()
            },
            gilbert: GilbertProjector::inner_params(),
            ppt: PptParams::default(),
            algorithm: Algorithm::Apg,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LrtReport {
    pub class: ClassSpec,
    pub algorithm: Algorithm,
    pub n: f64,
    pub f_mle: f64,
    pub f_constrained: f64,
    /// `2N (F_mle - F_constrained)` floored at zero.
    pub lambda: f64,
    /// The difference before flooring.
    pub lambda_raw: f64,
    pub lambda_over_n: f64,
    /// Semi-χ²₁ tail; valid only asymptotically in `N`.
    pub p_value: f64,
    pub clamp_events: usize,
    pub mle: OptResult,
    pub constrained: OptResult,
}

impl LrtReport {
    /// Trace of the constrained run with `λ/N` measured against the MLE.
    pub fn constrained_csv(&self) -> String {
        self.constrained.trace_csv(Some(self.f_mle))
    }
}

/// Likelihood-ratio test of `data` against `spec`. The two maximizations
/// run concurrently.
pub fn lrt(data: &Dataset, spec: &ClassSpec, params: &LrtParams) -> Result<LrtReport> {
    let d = data.dim();
    if spec.shape().total_dim() != d {
        return Err(Error::Dimension(format!(
            "class of dimension {} for data of dimension {d}",
            spec.shape().total_dim()
        )));
    }
    let mle_obj = LogLikelihood::new(data);
    let con_obj = LogLikelihood::new(data);
    let (mle, constrained) = std::thread::scope(|s| {
        let mle = s.spawn(|| apg_maximize(&mle_obj, &mut StateSpaceProjector, d, &params.mle_opt));
        let mut projector = class_projector(spec, &params.gilbert, &params.ppt);
        let constrained = maximize(params.algorithm, &con_obj, projector.as_mut(), d, &params.opt);
        (mle.join().expect("MLE thread panicked"), constrained)
    });
    let (mle, constrained) = (mle?, constrained?);
    Ok(report(data, spec, params.algorithm, mle, constrained, mle_obj.clamp_events() + con_obj.clamp_events()))
}

/// Assembles a report from finished runs.
pub fn report(
    data: &Dataset,
    spec: &ClassSpec,
    algorithm: Algorithm,
    mle: OptResult,
    constrained: OptResult,
    clamp_events: usize,
) -> LrtReport {
    // A constrained run that beats the MLE run means the MLE run stopped
    // early; the better value is still a lower bound on the true maximum.
    let f_mle = mle.f_hat.max(constrained.f_hat);
    let n = data.total();
    let lambda_raw = 2.0 * n * (mle.f_hat - constrained.f_hat);
    let lambda = (2.0 * n * (f_mle - constrained.f_hat)).max(0.0);
    LrtReport {
        class: spec.clone(),
        algorithm,
        n,
        f_mle,
        f_constrained: constrained.f_hat,
        lambda,
        lambda_raw,
        lambda_over_n: lambda / n,
        p_value: pvalue_semichi2(lambda).expect("lambda is non-negative"),
        clamp_events,
        mle,
        constrained,
    }
}
