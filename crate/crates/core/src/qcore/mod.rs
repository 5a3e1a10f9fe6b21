//! Dense complex linear algebra and quantum-state primitives.
//!
//! Basis convention: party 0 is the most significant tensor factor and the
//! computational basis is ordered lexicographically, so for two qubits the
//! basis reads `00, 01, 10, 11`.

mod eigh;
mod matrix;

pub use eigh::{eigh, eigvalsh, min_eigenvalue, Eigh, EIGH_HERMITIAN_TOL};
pub use matrix::{inner, kron_vec, normalize, vec_norm, CMatrix, C64, ONE, ZERO};

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};

/// Numerical tolerances used to validate states.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToleranceConfig {
    /// Maximum `||M - M†||_HS`.
    pub hermitian: f64,
    /// Maximum `|tr M - 1|`.
    pub trace: f64,
    /// Most negative eigenvalue accepted as PSD (a positive magnitude).
    pub psd: f64,
    /// Maximum `| ||ψ|| - 1 |`.
    pub pure_norm: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        ToleranceConfig {
            hermitian: 1e-10,
            trace: 1e-10,
            psd: 1e-9,
            pure_norm: 1e-12,
        }
    }
}

/// Local dimensions `(d_1, ..., d_n)` of a multipartite system.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct SystemShape {
    local_dims: Vec<usize>,
}

impl TryFrom<Vec<usize>> for SystemShape {
    type Error = Error;

    fn try_from(dims: Vec<usize>) -> Result<Self> {
        SystemShape::new(dims)
    }
}

impl From<SystemShape> for Vec<usize> {
    fn from(s: SystemShape) -> Self {
        s.local_dims
    }
}

impl SystemShape {
    pub fn new(local_dims: Vec<usize>) -> Result<Self> {
        if local_dims.is_empty() {
            return arg_err("a system needs at least one party");
        }
        if let Some(d) = local_dims.iter().find(|&&d| d < 2) {
            return arg_err(format!("local dimension {d} < 2"));
        }
        Ok(SystemShape { local_dims })
    }

    pub fn qubits(n: usize) -> Self {
        SystemShape::new(vec![2; n]).expect("n >= 1")
    }

    pub fn local_dims(&self) -> &[usize] {
        &self.local_dims
    }

    pub fn n_parties(&self) -> usize {
        self.local_dims.len()
    }

    pub fn total_dim(&self) -> usize {
        self.local_dims.iter().product()
    }

    pub fn is_qubits(&self) -> bool {
        self.local_dims.iter().all(|&d| d == 2)
    }

    /// Mixed-radix digits of a basis index.
    pub fn digits(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.local_dims.len()];
        for (slot, &d) in out.iter_mut().zip(&self.local_dims).rev() {
            *slot = index % d;
            index /= d;
        }
        out
    }

    pub fn index(&self, digits: &[usize]) -> usize {
        digits
            .iter()
            .zip(&self.local_dims)
            .fold(0, |acc, (&x, &d)| acc * d + x)
    }

    /// Stride of party `p` in the flat index.
    pub fn stride(&self, p: usize) -> usize {
        self.local_dims[p + 1..].iter().product()
    }

    /// Sub-shape over a sorted set of parties.
    pub fn restrict(&self, parties: &[usize]) -> Result<SystemShape> {
        SystemShape::new(parties.iter().map(|&p| self.local_dims[p]).collect())
    }

    pub(crate) fn check_parties(&self, parties: &[usize]) -> Result<()> {
        for &p in parties {
            if p >= self.n_parties() {
                return arg_err(format!(
                    "party index {p} out of range for {} parties",
                    self.n_parties()
                ));
            }
        }
        Ok(())
    }
}

/// Unit-norm state vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PureState {
    amplitudes: Vec<C64>,
}

impl PureState {
    pub fn new(amplitudes: Vec<C64>) -> Result<Self> {
        Self::with_tolerance(amplitudes, &ToleranceConfig::default())
    }

    pub fn with_tolerance(amplitudes: Vec<C64>, tol: &ToleranceConfig) -> Result<Self> {
        if amplitudes.is_empty() {
            return arg_err("empty state vector");
        }
        let n = vec_norm(&amplitudes);
        if (n - 1.0).abs() > tol.pure_norm {
            return Err(Error::InvalidState(format!("state norm {n} is not 1")));
        }
        Ok(PureState { amplitudes })
    }

    /// Normalizes `v`; fails on the zero vector.
    pub fn normalized(mut v: Vec<C64>) -> Result<Self> {
        let n = normalize(&mut v);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidState("cannot normalize a zero vector".into()));
        }
        Ok(PureState { amplitudes: v })
    }

    pub fn basis(dim: usize, k: usize) -> Self {
        let mut amplitudes = vec![ZERO; dim];
        amplitudes[k] = ONE;
        PureState { amplitudes }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn projector(&self) -> CMatrix {
        CMatrix::projector(&self.amplitudes)
    }

    pub fn density(&self) -> DensityMatrix {
        DensityMatrix::from_trusted(self.projector())
    }

    pub fn kron(&self, other: &PureState) -> PureState {
        PureState {
            amplitudes: kron_vec(&self.amplitudes, &other.amplitudes),
        }
    }
}

/// Hermitian, positive semidefinite, unit-trace matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CMatrix", into = "CMatrix")]
pub struct DensityMatrix {
    mat: CMatrix,
}

impl TryFrom<CMatrix> for DensityMatrix {
    type Error = Error;

    fn try_from(m: CMatrix) -> Result<Self> {
        DensityMatrix::new(m)
    }
}

impl From<DensityMatrix> for CMatrix {
    fn from(d: DensityMatrix) -> Self {
        d.mat
    }
}

impl DensityMatrix {
    pub fn new(mat: CMatrix) -> Result<Self> {
        Self::with_tolerance(mat, &ToleranceConfig::default())
    }

    pub fn with_tolerance(mat: CMatrix, tol: &ToleranceConfig) -> Result<Self> {
        if !mat.is_square() {
            return Err(Error::Dimension(format!(
                "density matrix must be square, got {}x{}",
                mat.rows(),
                mat.cols()
            )));
        }
        let defect = mat.hermiticity_defect();
        if defect > tol.hermitian {
            return Err(Error::NotHermitian(defect));
        }
        let tr = mat.trace();
        if (tr.re - 1.0).abs() > tol.trace || tr.im.abs() > tol.trace {
            return Err(Error::InvalidState(format!("trace {tr} is not 1")));
        }
        let lmin = min_eigenvalue(&mat)?;
        if lmin < -tol.psd {
            return Err(Error::InvalidState(format!(
                "minimum eigenvalue {lmin:.3e} is negative"
            )));
        }
        Ok(DensityMatrix { mat })
    }

    /// Wraps a matrix that is a state by construction.
    pub(crate) fn from_trusted(mat: CMatrix) -> Self {
        debug_assert!(mat.is_square());
        DensityMatrix { mat }
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        DensityMatrix {
            mat: CMatrix::identity(dim).scale(1.0 / dim as f64),
        }
    }

    pub fn dim(&self) -> usize {
        self.mat.rows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> CMatrix {
        self.mat
    }

    pub fn purity(&self) -> f64 {
        self.mat.hs_inner_unchecked(&self.mat)
    }

    /// Convex combination `Σ w_i ρ_i`; weights must be a probability vector.
    pub fn mixture(parts: &[(f64, &DensityMatrix)]) -> Result<Self> {
        let Some((_, first)) = parts.first() else {
            return arg_err("empty mixture");
        };
        let d = first.dim();
        let total: f64 = parts.iter().map(|(w, _)| w).sum();
        if parts.iter().any(|(w, _)| *w < 0.0) || (total - 1.0).abs() > 1e-12 {
            return arg_err("mixture weights must be non-negative and sum to 1");
        }
        let mut acc = CMatrix::zeros(d, d);
        for (w, rho) in parts {
            if rho.dim() != d {
                return Err(Error::Dimension("mixture of states with different dimensions".into()));
            }
            acc.axpy(*w, &rho.mat);
        }
        Ok(DensityMatrix { mat: acc })
    }
}

/// Kronecker product of the factors, left to right.
pub fn tensor(factors: &[CMatrix]) -> Result<CMatrix> {
    let Some((first, rest)) = factors.split_first() else {
        return arg_err("tensor of an empty list");
    };
    Ok(rest.iter().fold(first.clone(), |acc, f| acc.kron(f)))
}

/// `tr(AB)` for Hermitian `A`, `B`.
pub fn hs_inner(a: &CMatrix, b: &CMatrix) -> Result<f64> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::Dimension(format!(
            "hs_inner of {}x{} and {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(a.hs_inner_unchecked(b))
}

pub fn hs_norm(a: &CMatrix) -> f64 {
    a.frobenius_norm()
}

pub fn hs_distance(a: &CMatrix, b: &CMatrix) -> f64 {
    assert_eq!((a.rows(), a.cols()), (b.rows(), b.cols()));
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

fn check_square_shape(m: &CMatrix, shape: &SystemShape) -> Result<()> {
    if !m.is_square() || m.rows() != shape.total_dim() {
        return Err(Error::Dimension(format!(
            "{}x{} matrix on a system of dimension {}",
            m.rows(),
            m.cols(),
            shape.total_dim()
        )));
    }
    Ok(())
}

/// Transpose on the tensor factors listed in `block`.
pub fn partial_transpose(m: &CMatrix, shape: &SystemShape, block: &[usize]) -> Result<CMatrix> {
    check_square_shape(m, shape)?;
    shape.check_parties(block)?;
    let d = shape.total_dim();
    let mut mask = vec![false; shape.n_parties()];
    for &p in block {
        mask[p] = true;
    }
    // For each flat index, split it into its in-block and out-of-block parts.
    let split: Vec<(usize, usize)> = (0..d)
        .map(|i| {
            let digits = shape.digits(i);
            let mut inb = 0;
            let mut outb = 0;
            for (p, &x) in digits.iter().enumerate() {
                let s = shape.stride(p);
                if mask[p] {
                    inb += x * s;
                } else {
                    outb += x * s;
                }
            }
            (inb, outb)
        })
        .collect();
    let mut out = CMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let (ib, io) = split[i];
            let (jb, jo) = split[j];
            out[(jb + io, ib + jo)] = m[(i, j)];
        }
    }
    Ok(out)
}

/// Reduced matrix on the parties in `keep`, in ascending party order.
pub fn partial_trace_matrix(m: &CMatrix, shape: &SystemShape, keep: &[usize]) -> Result<CMatrix> {
    check_square_shape(m, shape)?;
    if keep.is_empty() {
        return arg_err("partial trace must keep at least one party");
    }
    shape.check_parties(keep)?;
    let mut kept: Vec<usize> = keep.to_vec();
    kept.sort_unstable();
    kept.dedup();
    let traced: Vec<usize> = (0..shape.n_parties()).filter(|p| !kept.contains(p)).collect();
    let kshape = shape.restrict(&kept)?;
    let dk = kshape.total_dim();
    let dt: usize = traced.iter().map(|&p| shape.local_dims()[p]).product();
    let tshape_dims: Vec<usize> = traced.iter().map(|&p| shape.local_dims()[p]).collect();

    let offsets = |sub: &[usize], parties: &[usize], idx: usize| -> usize {
        let mut rem = idx;
        let mut off = 0;
        for (k, &p) in parties.iter().enumerate().rev() {
            let dp = sub[k];
            off += (rem % dp) * shape.stride(p);
            rem /= dp;
        }
        off
    };
    let kept_off: Vec<usize> = (0..dk).map(|a| offsets(kshape.local_dims(), &kept, a)).collect();
    let traced_off: Vec<usize> = (0..dt).map(|t| offsets(&tshape_dims, &traced, t)).collect();

    let mut out = CMatrix::zeros(dk, dk);
    for a in 0..dk {
        for b in 0..dk {
            let mut s = ZERO;
            for &t in &traced_off {
                s += m[(kept_off[a] + t, kept_off[b] + t)];
            }
            out[(a, b)] = s;
        }
    }
    Ok(out)
}

pub fn partial_trace(rho: &DensityMatrix, shape: &SystemShape, keep: &[usize]) -> Result<DensityMatrix> {
    partial_trace_matrix(rho.matrix(), shape, keep).map(DensityMatrix::from_trusted)
}

/// Euclidean projection onto the probability simplex (sort and threshold).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Closest unit-trace PSD matrix in HS norm to a Hermitian matrix.
pub fn project_psd_trace1(h: &CMatrix) -> Result<DensityMatrix> {
    let e = eigh(h)?;
    let p = project_simplex(&e.values);
    let out = e.reconstruct_with_index(&p);
    Ok(DensityMatrix::from_trusted(out.hermitian_part()))
}

impl Eigh {
    /// `V diag(w) V†` with explicit per-eigenvalue weights.
    pub fn reconstruct_with_index(&self, w: &[f64]) -> CMatrix {
        let n = self.values.len();
        let mut out = CMatrix::zeros(n, n);
        for (k, &wk) in w.iter().enumerate() {
            if wk == 0.0 {
                continue;
            }
            out.add_projector(wk, &self.vectors.column(k));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn pauli_x() -> CMatrix {
        CMatrix::from_fn(2, 2, |i, j| if i != j { ONE } else { ZERO })
    }

    fn phi_plus() -> CMatrix {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        CMatrix::projector(&[C64::new(s, 0.0), ZERO, ZERO, C64::new(s, 0.0)])
    }

    fn random_density(d: usize, rng: &mut SeededRng) -> DensityMatrix {
        let g = CMatrix::from_fn(d, d, |_, _| rng.complex_gaussian());
        let m = g.matmul(&g.adjoint());
        let t = m.trace().re;
        DensityMatrix::new(m.scale(1.0 / t).hermitian_part()).unwrap()
    }

    #[test]
    fn tensor_examples() {
        assert!(tensor(&[]).is_err());
        let i4 = tensor(&[CMatrix::identity(2), CMatrix::identity(2)]).unwrap();
        assert_eq!(i4, CMatrix::identity(4));
        let p0 = CMatrix::from_real_diag(&[1.0, 0.0]);
        let p1 = CMatrix::from_real_diag(&[0.0, 1.0]);
        assert_eq!(tensor(&[p0, p1]).unwrap(), CMatrix::from_real_diag(&[0.0, 1.0, 0.0, 0.0]));
        let xx = tensor(&[pauli_x(), pauli_x()]).unwrap();
        assert_eq!(xx.matvec(&[ONE, ZERO, ZERO, ZERO]), vec![ZERO, ZERO, ZERO, ONE]);
    }

    #[test]
    fn partial_transpose_examples() {
        let shape = SystemShape::qubits(2);
        let p = phi_plus();
        assert_eq!(partial_transpose(&p, &shape, &[]).unwrap(), p);
        let pt = partial_transpose(&p, &shape, &[1]).unwrap();
        let lmin = min_eigenvalue(&pt).unwrap();
        assert!((lmin + 0.5).abs() < 1e-12);
        assert!(partial_transpose(&p, &shape, &[2]).is_err());
    }

    #[test]
    fn partial_transpose_is_involution() {
        let shape = SystemShape::new(vec![2, 3, 2]).unwrap();
        let mut rng = SeededRng::new(3);
        let rho = random_density(12, &mut rng);
        for block in [vec![0], vec![1], vec![0, 2], vec![1, 2]] {
            let once = partial_transpose(rho.matrix(), &shape, &block).unwrap();
            assert_eq!(once.trace(), rho.matrix().trace());
            assert!(once.is_hermitian(1e-14));
            let twice = partial_transpose(&once, &shape, &block).unwrap();
            assert_eq!(&twice, rho.matrix());
        }
        // Transposing every factor is the full transpose.
        let full = partial_transpose(rho.matrix(), &shape, &[0, 1, 2]).unwrap();
        assert_eq!(full, rho.matrix().transpose());
    }

    #[test]
    fn partial_trace_examples() {
        let shape = SystemShape::qubits(2);
        let reduced = partial_trace_matrix(&phi_plus(), &shape, &[0]).unwrap();
        assert!(reduced.max_abs_diff(&CMatrix::identity(2).scale(0.5)) < 1e-15);
        assert!(partial_trace_matrix(&phi_plus(), &shape, &[]).is_err());
        let all = partial_trace_matrix(&phi_plus(), &shape, &[0, 1]).unwrap();
        assert_eq!(all, phi_plus());

        let mut rng = SeededRng::new(9);
        let a = random_density(2, &mut rng);
        let b = random_density(3, &mut rng);
        let ab = a.matrix().kron(b.matrix());
        let shape = SystemShape::new(vec![2, 3]).unwrap();
        let ra = partial_trace_matrix(&ab, &shape, &[0]).unwrap();
        let rb = partial_trace_matrix(&ab, &shape, &[1]).unwrap();
        assert!(ra.max_abs_diff(a.matrix()) < 1e-12);
        assert!(rb.max_abs_diff(b.matrix()) < 1e-12);
    }

    #[test]
    fn hs_examples() {
        let m = CMatrix::identity(3).scale(1.0 / 3.0);
        assert!((hs_inner(&m, &m).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let p0 = CMatrix::from_real_diag(&[1.0, 0.0]);
        let p1 = CMatrix::from_real_diag(&[0.0, 1.0]);
        assert_eq!(hs_inner(&p0, &p1).unwrap(), 0.0);
        assert!(hs_inner(&p0, &CMatrix::identity(3)).is_err());
        let d = phi_plus().sub(&CMatrix::identity(4).scale(0.25));
        assert!((hs_norm(&d) - 3f64.sqrt() / 2.0).abs() < 1e-14);
    }

    #[test]
    fn simplex_projection() {
        assert_eq!(project_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
        let p = project_simplex(&[0.9, 0.9, -0.8]);
        for (x, want) in p.iter().zip([0.5, 0.5, 0.0]) {
            assert!((x - want).abs() < 1e-15);
        }
        let p = project_simplex(&[0.2, 0.3, 0.5]);
        assert!((p[0] - 0.2).abs() < 1e-15 && (p[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn psd_projection_examples() {
        let h = CMatrix::from_real_diag(&[0.9, 0.9, -0.8]);
        let p = project_psd_trace1(&h).unwrap();
        assert!(p.matrix().max_abs_diff(&CMatrix::from_real_diag(&[0.5, 0.5, 0.0])) < 1e-14);
        let p = project_psd_trace1(&CMatrix::from_real_diag(&[2.0, 0.0])).unwrap();
        assert!(p.matrix().max_abs_diff(&CMatrix::from_real_diag(&[1.0, 0.0])) < 1e-14);
        let mut rng = SeededRng::new(5);
        let rho = random_density(6, &mut rng);
        let p = project_psd_trace1(rho.matrix()).unwrap();
        assert!(p.matrix().max_abs_diff(rho.matrix()) < 1e-12);
    }

    #[test]
    fn psd_projection_is_closest() {
        let mut rng = SeededRng::new(17);
        let d = 4;
        let g = CMatrix::from_fn(d, d, |_, _| rng.complex_gaussian());
        let h = g.add(&g.adjoint()).scale(0.5);
        let p = project_psd_trace1(&h).unwrap();
        let best = hs_distance(&h, p.matrix());
        for _ in 0..100 {
            let sigma = random_density(d, &mut rng);
            assert!(best <= hs_distance(&h, sigma.matrix()) + 1e-9);
        }
    }

    #[test]
    fn density_validation() {
        assert!(DensityMatrix::new(CMatrix::from_real_diag(&[0.5, 0.5])).is_ok());
        assert!(DensityMatrix::new(CMatrix::from_real_diag(&[0.6, 0.5])).is_err());
        assert!(DensityMatrix::new(CMatrix::from_real_diag(&[1.5, -0.5])).is_err());
        let mut m = CMatrix::from_real_diag(&[0.5, 0.5]);
        m[(0, 1)] = C64::new(0.1, 0.0);
        assert!(matches!(DensityMatrix::new(m), Err(Error::NotHermitian(_))));
    }

    #[test]
    fn shape_digits_roundtrip() {
        let s = SystemShape::new(vec![2, 3, 2]).unwrap();
        for i in 0..12 {
            assert_eq!(s.index(&s.digits(i)), i);
        }
        assert_eq!(s.digits(5), vec![0, 2, 1]);
        assert!(SystemShape::new(vec![2, 1]).is_err());
    }
}
