//! HS projection onto PPT states by Dykstra's alternating projections.

use serde::{Deserialize, Serialize};

use super::{ClassKind, ClassSpec};
use crate::error::{Error, Result};
use crate::qcore::{eigh, hs_distance, min_eigenvalue, partial_transpose, project_psd_trace1, CMatrix, DensityMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PptParams {
    /// Stop when one full cycle moves the iterate less than this (HS norm).
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for PptParams {
    fn default() -> Self {
        PptParams {
            tol: 1e-9,
            max_iters: 5000,
        }
    }
}

fn cuts(spec: &ClassSpec) -> Result<&[Vec<usize>]> {
    match spec.kind() {
        ClassKind::Ppt { cuts } => Ok(cuts),
        _ => Err(Error::UnsupportedClass(format!("{spec} is not a PPT class"))),
    }
}

/// Projection onto `{X : X^{T_block} ⪰ 0}`.
fn project_pt_cone(z: &CMatrix, spec: &ClassSpec, block: &[usize]) -> CMatrix {
    let shape = spec.shape();
    let pt = partial_transpose(z, shape, block).expect("validated cut");
    let e = eigh(&pt.hermitian_part()).expect("Hermitian");
    let clamped = e.reconstruct_with(|l| l.max(0.0));
    partial_transpose(&clamped, shape, block).expect("validated cut")
}

/// HS-closest state whose partial transposes across every cut of `spec` are
/// PSD. `target` must be Hermitian; it need not be PSD. The converged
/// iterate is nudged toward `I/d` by the least amount that makes it feasible.
pub fn project_ppt(target: &CMatrix, spec: &ClassSpec, params: &PptParams) -> Result<DensityMatrix> {
    let cuts = cuts(spec)?;
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
    let n_sets = cuts.len() + 1;
    let mut x = target.hermitian_part();
    let mut corrections = vec![CMatrix::zeros(d, d); n_sets];
    let mut moved = f64::INFINITY;
    for _ in 0..params.max_iters {
        let start = x.clone();
        for (i, corr) in corrections.iter_mut().enumerate() {
            let z = x.add(corr);
            let y = if i < cuts.len() {
                project_pt_cone(&z, spec, &cuts[i])
            } else {
                project_psd_trace1(&z)?.into_matrix()
            };
            *corr = z.sub(&y);
            x = y;
        }
        moved = hs_distance(&x, &start);
        if moved < params.tol {
            // Remove the residual constraint violation so the output is exactly
            // feasible and a second projection leaves it in place.
            return repair_ppt(&x, spec).map(|(rho, _)| rho);
        }
    }
    Err(Error::Convergence {
        iterations: params.max_iters,
        residual: moved,
        last_iterate: Box::new(x),
    })
}

/// Smallest eigenvalue over the state itself and its partial transposes
/// across the cuts of `spec`.
pub fn min_pt_eigenvalue(m: &CMatrix, spec: &ClassSpec) -> Result<f64> {
    let mut lo = min_eigenvalue(m)?;
    for cut in cuts(spec)? {
        lo = lo.min(min_eigenvalue(&partial_transpose(m, spec.shape(), cut)?)?);
    }
    Ok(lo)
}

/// Mixes `rho` with the least amount of `I/d` that makes every listed partial
/// transpose PSD. Returns the repaired state and the mixing weight.
pub fn repair_ppt(rho: &CMatrix, spec: &ClassSpec) -> Result<(DensityMatrix, f64)> {
    let d = rho.rows() as f64;
    let lo = min_pt_eigenvalue(rho, spec)?;
    if lo >= 0.0 {
        return Ok((DensityMatrix::from_trusted(rho.clone()), 0.0));
    }
    // (1 - t) lo + t/d = 0, plus a hair of slack for rounding.
    let t = ((-lo) / (1.0 / d - lo) * (1.0 + 1e-9) + 1e-15).min(1.0);
    let mut out = rho.scale(1.0 - t);
    out.add_identity(t / d);
    Ok((DensityMatrix::from_trusted(out), t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::{eigvalsh, SystemShape};
    use crate::states::{bell_states, mix_white, random_mixed, smolin};

    fn two_qubit_ppt() -> ClassSpec {
        ClassSpec::ppt(SystemShape::qubits(2), vec![vec![1]]).unwrap()
    }

    #[test]
    fn ppt_input_is_fixed() {
        let spec = two_qubit_ppt();
        let rho = mix_white(&bell_states()[0].density(), 0.2).unwrap();
        let out = project_ppt(rho.matrix(), &spec, &PptParams::default()).unwrap();
        assert!(hs_distance(out.matrix(), rho.matrix()) < 1e-9);
    }

    #[test]
    fn bell_state_distance() {
        // Closest PPT state to Φ+ is its mixture at q = 1/3, at distance 1/√3.
        let spec = two_qubit_ppt();
        let phi = bell_states()[0].density();
        let out = project_ppt(phi.matrix(), &spec, &PptParams::default()).unwrap();
        let want = mix_white(&phi, 1.0 / 3.0).unwrap();
        assert!((hs_distance(out.matrix(), phi.matrix()) - 1.0 / 3f64.sqrt()).abs() < 1e-6);
        assert!(hs_distance(out.matrix(), want.matrix()) < 1e-5);
        assert!(min_pt_eigenvalue(out.matrix(), &spec).unwrap() >= -1e-8);
    }

    #[test]
    fn smolin_is_fixed_for_balanced_cuts() {
        let s4 = SystemShape::qubits(4);
        let spec = ClassSpec::parse("ppt:cuts=2:2", &s4).unwrap();
        let rho = smolin();
        let out = project_ppt(rho.matrix(), &spec, &PptParams::default()).unwrap();
        assert!(hs_distance(out.matrix(), rho.matrix()) < 1e-9);
    }

    #[test]
    fn postconditions_and_idempotence() {
        let s = SystemShape::new(vec![2, 3]).unwrap();
        let spec = ClassSpec::ppt(s.clone(), vec![vec![1]]).unwrap();
        let p = PptParams::default();
        for seed in 0..5 {
            let rho = random_mixed(&s, 2, seed).unwrap();
            let out = project_ppt(rho.matrix(), &spec, &p).unwrap();
            assert!(min_pt_eigenvalue(out.matrix(), &spec).unwrap() >= -1e-8);
            assert!(DensityMatrix::new(out.matrix().clone()).is_ok());
            let again = project_ppt(out.matrix(), &spec, &p).unwrap();
            assert!(hs_distance(again.matrix(), out.matrix()) <= 2.0 * p.tol);
        }
    }

    #[test]
    fn repair_makes_ppt() {
        let spec = two_qubit_ppt();
        let rho = mix_white(&bell_states()[0].density(), 0.4).unwrap();
        let (fixed, t) = repair_ppt(rho.matrix(), &spec).unwrap();
        assert!(t > 0.0 && t < 1.0);
        assert!(min_pt_eigenvalue(fixed.matrix(), &spec).unwrap() >= 0.0);
        // q(1 - t) lands on the PPT boundary q = 1/3.
        assert!((0.4 * (1.0 - t) - 1.0 / 3.0).abs() < 1e-8);
        assert!(eigvalsh(fixed.matrix()).unwrap().iter().all(|&l| l >= 0.0));
    }

    #[test]
    fn non_convergence_reports_last_iterate() {
        let spec = two_qubit_ppt();
        let phi = bell_states()[0].density();
        let p = PptParams { tol: 1e-300, max_iters: 3 };
        match project_ppt(phi.matrix(), &spec, &p) {
            Err(Error::Convergence { iterations, last_iterate, .. }) => {
                assert_eq!(iterations, 3);
                assert_eq!(last_iterate.rows(), 4);
            }
            other => panic!("expected a convergence error, got {other:?}"),
        }
    }
}
