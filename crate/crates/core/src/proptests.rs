//! Randomized invariants of the numerical kernels.

use crate::classes::{pauli_ball_radius, project_ppt};
use crate::gilbert::simplex_ls;
use crate::likelihood::{grad_loglik, loglik};
use crate::optimize::{dg_step, next_theta};
use crate::qcore::{hs_distance, hs_inner, min_eigenvalue, partial_transpose, tensor};
use crate::states::{mix_white, random_mixed, random_pure};
use crate::{
    gilbert_project, CMatrix, ClassSpec, Dataset, DensityMatrix, GilbertParams, OracleParams, Povm, PptParams,
    SystemShape, C64,
};
use proptest::prelude::*;

fn hermitian(d: usize, raw: &[f64]) -> CMatrix {
    let m = CMatrix::from_fn(d, d, |i, j| C64::new(raw[2 * (i * d + j)], raw[2 * (i * d + j) + 1]));
    m.hermitian_part()
}

fn qubits(n: usize) -> SystemShape {
    SystemShape::qubits(n)
}

fn pauli_strings(n: usize) -> Vec<CMatrix> {
    let i = C64::new(0.0, 1.0);
    let o = C64::new(0.0, 0.0);
    let l = C64::new(1.0, 0.0);
    let single = [
        CMatrix::identity(2),
        CMatrix::from_vec(2, 2, vec![o, l, l, o]).unwrap(),
        CMatrix::from_vec(2, 2, vec![o, -i, i, o]).unwrap(),
        CMatrix::from_vec(2, 2, vec![l, o, o, -l]).unwrap(),
    ];
    (0..4usize.pow(n as u32))
        .map(|mut k| {
            let factors: Vec<CMatrix> = (0..n)
                .map(|_| {
                    let f = single[k % 4].clone();
                    k /= 4;
                    f
                })
                .collect();
            tensor(&factors).unwrap()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn dg_step_is_exactly_a_state(
        n in 1usize..=3,
        seed in any::<u64>(),
        rank in 1usize..=8,
        raw in prop::collection::vec(-3.0f64..3.0, 128),
        eps in 1e-3f64..2.0,
    ) {
        let shape = qubits(n);
        let d = shape.total_dim();
        let rho = random_mixed(&shape, rank.min(d), seed).unwrap();
        let g = hermitian(d, &raw);
        let next = dg_step(&rho, &g, eps).unwrap();
        prop_assert!((next.matrix().trace().re - 1.0).abs() <= 1e-12);
        prop_assert!(next.matrix().trace().im.abs() <= 1e-12);
        prop_assert!(next.matrix().hermiticity_defect() <= 1e-12);
        prop_assert!(min_eigenvalue(next.matrix()).unwrap() >= -1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn gilbert_distance_never_increases(seed in any::<u64>(), three in any::<bool>(), rank in 1usize..=4) {
        let shape = qubits(if three { 3 } else { 2 });
        let spec = ClassSpec::fully_separable(shape.clone()).unwrap();
        let rho = random_mixed(&shape, rank, seed).unwrap();
        let params = GilbertParams {
            max_iters: 150,
            memory: 10,
            oracle: OracleParams { seed, restarts: 3, ..OracleParams::default() },
            ..GilbertParams::default()
        };
        let r = gilbert_project(rho.matrix(), &spec, &params).unwrap();
        for w in r.trace.windows(2) {
            prop_assert!(w[1].distance <= w[0].distance + 1e-12, "{} -> {}", w[0].distance, w[1].distance);
        }
        prop_assert!(r.weights.iter().all(|&w| w >= 0.0));
        prop_assert!((r.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        prop_assert!(r.reconstruct().max_abs_diff(r.projection.matrix()) <= 1e-9);
        prop_assert!((r.distance - hs_distance(rho.matrix(), r.projection.matrix())).abs() <= 1e-10);
        prop_assert!((r.distance - r.trace.last().unwrap().distance).abs() <= 1e-10);
        for p in &r.extreme_points {
            prop_assert!(p.verify(&spec, 1e-9).is_ok());
        }
    }

    #[test]
    fn project_ppt_is_idempotent_and_ppt(seed in any::<u64>(), rank in 1usize..=4, four in any::<bool>()) {
        let (shape, text) = if four { (qubits(4), "ppt:cuts=2:2") } else { (qubits(2), "ppt") };
        let spec = ClassSpec::parse(text, &shape).unwrap();
        let rho = random_mixed(&shape, rank, seed).unwrap();
        let p = project_ppt(rho.matrix(), &spec, &PptParams::default()).unwrap();
        prop_assert!(min_eigenvalue(p.matrix()).unwrap() >= -1e-9);
        for cut in ClassSpec::ppt_cuts(&shape, if four { Some(2) } else { None }) {
            let pt = partial_transpose(p.matrix(), &shape, &cut).unwrap();
            prop_assert!(min_eigenvalue(&pt).unwrap() >= -1e-9);
        }
        let again = project_ppt(p.matrix(), &spec, &PptParams::default()).unwrap();
        prop_assert!(hs_distance(again.matrix(), p.matrix()) <= 1e-7);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn simplex_ls_beats_a_fine_grid(
        k in 1usize..=3,
        d in 2usize..=4,
        seed in any::<u64>(),
    ) {
        let shape = SystemShape::new(vec![d]).unwrap();
        let cols: Vec<CMatrix> = (0..k).map(|i| random_pure(&shape, seed ^ (i as u64 + 1)).projector()).collect();
        let rho = random_mixed(&shape, d, seed).unwrap();
        let (w, fit) = simplex_ls(&cols, rho.matrix()).unwrap();
        prop_assert!(w.iter().all(|&x| x >= 0.0) && (w.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        let best = hs_distance(&fit, rho.matrix());
        let steps = 200;
        let mut grid_best = f64::INFINITY;
        for a in 0..=steps {
            for b in 0..=(if k == 3 { steps - a } else { 0 }) {
                let wa = a as f64 / steps as f64;
                let wb = b as f64 / steps as f64;
                let ws = match k {
                    1 => vec![1.0],
                    2 => vec![wa, 1.0 - wa],
                    _ => vec![wa, wb, 1.0 - wa - wb],
                };
                let mut m = CMatrix::zeros(d, d);
                for (c, &x) in cols.iter().zip(&ws) {
                    m.axpy(x, c);
                }
                grid_best = grid_best.min(hs_distance(&m, rho.matrix()));
            }
        }
        prop_assert!(best <= grid_best + 1e-12, "ls {best} grid {grid_best}");
    }

    #[test]
    fn loglik_gradient_matches_finite_differences(
        seed in any::<u64>(),
        raw in prop::collection::vec(-1.0f64..1.0, 32),
    ) {
        let shape = qubits(2);
        let povm = Povm::pauli(2).unwrap();
        let truth = random_mixed(&shape, 4, seed).unwrap();
        let data = Dataset::exact(&truth, &povm, 1000.0).unwrap();
        let at = mix_white(&random_mixed(&shape, 4, seed.wrapping_add(1)).unwrap(), 0.9).unwrap();
        let mut dir = hermitian(4, &raw);
        dir.add_identity(-dir.trace().re / 4.0);
        let g = grad_loglik(at.matrix(), &data);
        let analytic = hs_inner(&g, &dir).unwrap();
        let h = 1e-4;
        let f = |t: f64| {
            let mut m = at.matrix().clone();
            m.axpy(t, &dir);
            loglik(&m, &data)
        };
        let numeric = (f(-2.0 * h) - 8.0 * f(-h) + 8.0 * f(h) - f(2.0 * h)) / (12.0 * h);
        let scale = analytic.abs().max(numeric.abs()).max(1e-3);
        prop_assert!((analytic - numeric).abs() / scale < 1e-6, "{analytic} vs {numeric}");
    }

    #[test]
    fn povm_probabilities_sum_to_one(seed in any::<u64>(), which in 0usize..6) {
        let (povm, shape) = match which {
            0 => (Povm::pauli(1).unwrap(), qubits(1)),
            1 => (Povm::pauli(2).unwrap(), qubits(2)),
            2 => (Povm::pauli(3).unwrap(), qubits(3)),
            3 => (Povm::pauli(4).unwrap(), qubits(4)),
            4 => (Povm::sic3(), SystemShape::new(vec![3]).unwrap()),
            _ => (Povm::sic3x3(), SystemShape::new(vec![3, 3]).unwrap()),
        };
        let rho = random_mixed(&shape, 2, seed).unwrap();
        let p = povm.raw_probabilities(rho.matrix());
        prop_assert!(p.iter().all(|&x| x >= -1e-12));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn pauli_ball_states_are_product_mixtures(n in 2usize..=4, raw in prop::collection::vec(-1.0f64..1.0, 512)) {
        // Inside the ball the Pauli coefficients have l1 norm at most one, so the
        // state is a mixture of the product states (I ± P)/d.
        let shape = qubits(n);
        let d = shape.total_dim();
        let mut x = hermitian(d, &raw);
        x.add_identity(-x.trace().re / d as f64);
        let r = pauli_ball_radius(&shape);
        let x = x.scale(r / x.frobenius_norm());
        let l1: f64 = pauli_strings(n).iter().skip(1).map(|p| hs_inner(&x, p).unwrap().abs()).sum();
        prop_assert!(l1 <= 1.0 + 1e-12, "l1 = {l1}");
        let mut rho = x.clone();
        rho.add_identity(1.0 / d as f64);
        prop_assert!(DensityMatrix::new(rho).is_ok());
    }
}

#[test]
fn povm_elements_sum_to_identity() {
    let povms = [
        Povm::pauli(1).unwrap(),
        Povm::pauli(2).unwrap(),
        Povm::pauli(3).unwrap(),
        Povm::pauli(4).unwrap(),
        Povm::sic3(),
        Povm::sic3x3(),
    ];
    for povm in &povms {
        let d = povm.dim();
        let mut sum = CMatrix::zeros(d, d);
        for e in povm.elements() {
            assert!(min_eigenvalue(e).unwrap() >= -1e-12);
            sum.axpy(1.0, e);
        }
        assert!(sum.max_abs_diff(&CMatrix::identity(d)) <= 1e-12, "dim {d}");
    }
}

#[test]
fn sic_overlaps_are_one_quarter() {
    // Elements are |psi_k><psi_k| / 3, so tr(E_j E_k) = |<psi_j|psi_k>|^2 / 9.
    let povm = Povm::sic3();
    let els = povm.elements();
    assert_eq!(els.len(), 9);
    for (j, a) in els.iter().enumerate() {
        assert!((a.trace().re - 1.0 / 3.0).abs() < 1e-12);
        for b in &els[j + 1..] {
            let overlap = 9.0 * hs_inner(a, b).unwrap();
            assert!((overlap - 0.25).abs() < 1e-12, "overlap {overlap}");
        }
    }
}

#[test]
fn momentum_sequence_values() {
    let t1 = next_theta(1.0);
    let t2 = next_theta(t1);
    assert!((t1 - 1.618034).abs() < 1e-6);
    assert!((t2 - 2.193527).abs() < 1e-6);
}
