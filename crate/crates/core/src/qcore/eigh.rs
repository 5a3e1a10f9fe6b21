//! Hermitian eigendecomposition by cyclic Jacobi rotations.

use super::matrix::{CMatrix, C64, ZERO};
use crate::error::{Error, Result};

/// Spectrum of a Hermitian matrix: eigenvalues in descending order and the
/// matching orthonormal eigenvectors as columns of `vectors`.
#[derive(Clone, Debug)]
pub struct Eigh {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

impl Eigh {
    pub fn vector(&self, k: usize) -> Vec<C64> {
        self.vectors.column(k)
    }

    /// `V diag(f(λ)) V†`
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> CMatrix {
        let n = self.values.len();
        let mut out = CMatrix::zeros(n, n);
        let v = &self.vectors;
        for (k, &lam) in self.values.iter().enumerate() {
            let w = f(lam);
            if w == 0.0 {
                continue;
            }
            for i in 0..n {
                let vi = v[(i, k)] * w;
                for j in 0..n {
                    out[(i, j)] += vi * v[(j, k)].conj();
                }
            }
        }
        out
    }

    pub fn reconstruct(&self) -> CMatrix {
        self.reconstruct_with(|x| x)
    }
}

/// Hermiticity tolerance accepted by [`eigh`].
pub const EIGH_HERMITIAN_TOL: f64 = 1e-8;

const MAX_SWEEPS: usize = 100;

/// Eigendecomposition of a Hermitian matrix.
pub fn eigh(h: &CMatrix) -> Result<Eigh> {
    if !h.is_square() {
        return Err(Error::Dimension(format!(
            "eigh needs a square matrix, got {}x{}",
            h.rows(),
            h.cols()
        )));
    }
    let defect = h.hermiticity_defect();
    let scale = h.frobenius_norm().max(1.0);
    if defect > EIGH_HERMITIAN_TOL * scale {
        return Err(Error::NotHermitian(defect));
    }
    Ok(jacobi(h.hermitian_part()))
}

/// Eigenvalues only, descending.
pub fn eigvalsh(h: &CMatrix) -> Result<Vec<f64>> {
    eigh(h).map(|e| e.values)
}

pub fn min_eigenvalue(h: &CMatrix) -> Result<f64> {
    eigvalsh(h).map(|v| *v.last().expect("non-empty spectrum"))
}

fn jacobi(mut a: CMatrix) -> Eigh {
    let n = a.rows();
    let mut v = CMatrix::identity(n);
    if n == 1 {
        return Eigh {
            values: vec![a[(0, 0)].re],
            vectors: v,
        };
    }
    if n == 2 {
        return two_by_two(&a);
    }
    let total: f64 = a.data().iter().map(|z| z.norm_sqr()).sum();
    let floor = (f64::EPSILON * f64::EPSILON) * total.max(f64::MIN_POSITIVE);

    for sweep in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[(p, q)].norm_sqr();
            }
        }
        if off <= floor {
            break;
        }
        // Skip negligible rotations during the first few sweeps.
        let threshold = if sweep < 3 { 0.2 * off / (n * n) as f64 } else { 0.0 };
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                let mag2 = apq.norm_sqr();
                if mag2 == 0.0 || (sweep < 3 && mag2 < threshold) {
                    continue;
                }
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let mag = mag2.sqrt();
                // Tiny off-diagonal relative to the diagonal gap: zero it.
                if sweep > 3 && mag < f64::EPSILON * 1e-2 * (app.abs().max(aqq.abs())) {
                    a[(p, q)] = ZERO;
                    a[(q, p)] = ZERO;
                    continue;
                }
                let phase = apq / mag;
                let tau = (aqq - app) / (2.0 * mag);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                rotate(&mut a, &mut v, p, q, c, s, phase);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag = a.real_diag();
    order.sort_by(|&i, &j| diag[j].total_cmp(&diag[i]));
    let values = order.iter().map(|&i| diag[i]).collect();
    let vectors = CMatrix::from_fn(n, n, |i, k| v[(i, order[k])]);
    Eigh { values, vectors }
}

/// Apply `A <- U† A U`, `V <- V U` with the unitary
/// `U = [[c, s e^{iφ}], [-s e^{-iφ}, c]]` on the `(p, q)` plane, which
/// annihilates `A[p][q]` when `t = s/c` solves the real Jacobi equation.
#[inline]
fn rotate(a: &mut CMatrix, v: &mut CMatrix, p: usize, q: usize, c: f64, s: f64, phase: C64) {
    let n = a.rows();
    let sp = phase * s; // s e^{iφ}
    let spc = sp.conj(); // s e^{-iφ}
    // Columns: A <- A U
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = akp * c - akq * spc;
        a[(k, q)] = akp * sp + akq * c;
    }
    // Rows: A <- U† A
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = apk * c - aqk * sp;
        a[(q, k)] = apk * spc + aqk * c;
    }
    a[(p, q)] = ZERO;
    a[(q, p)] = ZERO;
    a[(p, p)].im = 0.0;
    a[(q, q)].im = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = vkp * c - vkq * spc;
        v[(k, q)] = vkp * sp + vkq * c;
    }
}

/// Closed form for 2x2 Hermitian matrices.
fn two_by_two(a: &CMatrix) -> Eigh {
    let a00 = a[(0, 0)].re;
    let a11 = a[(1, 1)].re;
    let b = a[(0, 1)];
    let mean = 0.5 * (a00 + a11);
    let half = 0.5 * (a00 - a11);
    let r = (half * half + b.norm_sqr()).sqrt();
    let values = vec![mean + r, mean - r];
    let vectors = if b.norm() <= f64::MIN_POSITIVE.sqrt() * r.max(1.0) {
        if a00 >= a11 {
            CMatrix::identity(2)
        } else {
            CMatrix::from_fn(2, 2, |i, j| if i != j { C64::new(1.0, 0.0) } else { ZERO })
        }
    } else {
        // Top vector ∝ (b, λ₊ - a00); choose the better conditioned form.
        let (mut top, mut bot) = if half >= 0.0 {
            (vec![C64::new(half + r, 0.0), b.conj()], vec![-b, C64::new(half + r, 0.0)])
        } else {
            (vec![b, C64::new(r - half, 0.0)], vec![C64::new(r - half, 0.0), -b.conj()])
        };
        super::matrix::normalize(&mut top);
        super::matrix::normalize(&mut bot);
        CMatrix::from_fn(2, 2, |i, j| if j == 0 { top[i] } else { bot[i] })
    };
    Eigh { values, vectors }
}
