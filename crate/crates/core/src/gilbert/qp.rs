//! Least squares over the probability simplex.
//!
//! With points `p_i = c_i - ρ` and Gram matrix `P_ij = <p_i, p_j>`, fitting
//! `Σ μ_i c_i ≈ ρ` with `μ` on the simplex is the minimum-norm point of the
//! hull of the `p_i`. Solved by Wolfe's corral method on `P`, with a
//! projected-gradient fallback for degenerate corrals.

use crate::qcore::project_simplex;

pub(crate) struct Gram<'a> {
    pub n: usize,
    pub p: &'a [f64],
}

impl Gram<'_> {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.n + j]
    }

    pub fn quad(&self, w: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n {
            if w[i] == 0.0 {
                continue;
            }
            let row = &self.p[i * self.n..(i + 1) * self.n];
            acc += w[i] * row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
        }
        acc
    }

    fn apply(&self, w: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                self.p[i * self.n..(i + 1) * self.n]
                    .iter()
                    .zip(w)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    fn max_diag(&self) -> f64 {
        (0..self.n).map(|i| self.at(i, i)).fold(0.0, f64::max)
    }
}

/// Affine minimizer of `|Σ α_i p_i|` over `Σ α_i = 1` restricted to `s`,
/// from the bordered system `[[P_S, 1], [1ᵀ, 0]]`.
fn affine_minimizer(g: &Gram<'_>, s: &[usize]) -> Option<Vec<f64>> {
    let k = s.len();
    let m = k + 1;
    let scale = g.max_diag().max(1e-300);
    let mut a = vec![0.0; m * m];
    let mut rhs = vec![0.0; m];
    for (r, &i) in s.iter().enumerate() {
        for (c, &j) in s.iter().enumerate() {
            a[r * m + c] = g.at(i, j) / scale;
        }
        a[r * m + r] += 1e-15;
        a[r * m + k] = 1.0;
        a[k * m + r] = 1.0;
    }
    rhs[k] = 1.0;
    // Gaussian elimination with partial pivoting.
    let mut perm: Vec<usize> = (0..m).collect();
    for col in 0..m {
        let piv = (col..m)
            .max_by(|&x, &y| a[perm[x] * m + col].abs().total_cmp(&a[perm[y] * m + col].abs()))
            .expect("non-empty");
        perm.swap(col, piv);
        let pr = perm[col];
        let pv = a[pr * m + col];
        if pv.abs() < 1e-13 {
            return None;
        }
        for &r in &perm[col + 1..] {
            let f = a[r * m + col] / pv;
            if f == 0.0 {
                continue;
            }
            for c in col..m {
                a[r * m + c] -= f * a[pr * m + c];
            }
            rhs[r] -= f * rhs[pr];
        }
    }
    let mut x = vec![0.0; m];
    for col in (0..m).rev() {
        let pr = perm[col];
        let mut v = rhs[pr];
        for c in col + 1..m {
            v -= a[pr * m + c] * x[c];
        }
        x[col] = v / a[pr * m + col];
    }
    x.truncate(k);
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}

/// Wolfe's method. `start` must lie on the simplex; its support becomes the
/// first corral. Returns `None` if a corral turns out affinely dependent.
fn wolfe(g: &Gram<'_>, start: Option<&[f64]>) -> Option<Vec<f64>> {
    let n = g.n;
    let tol = 1e-14 * g.max_diag().max(1e-300);
    let mut lam = vec![0.0; n];
    let mut s: Vec<usize>;
    let mut need_minor;
    match start {
        Some(w) => {
            lam.copy_from_slice(w);
            s = (0..n).filter(|&i| lam[i] > 0.0).collect();
            need_minor = s.len() > 1;
        }
        None => {
            let j = (0..n).min_by(|&x, &y| g.at(x, x).total_cmp(&g.at(y, y)))?;
            lam[j] = 1.0;
            s = vec![j];
            need_minor = false;
        }
    }
    for _ in 0..(50 * n + 100) {
        if need_minor {
            for _ in 0..=s.len() + 1 {
                let alpha = affine_minimizer(g, &s)?;
                if alpha.iter().all(|&a| a > 0.0) {
                    for (&i, &a) in s.iter().zip(&alpha) {
                        lam[i] = a;
                    }
                    break;
                }
                let mut theta = 1.0f64;
                for (&i, &a) in s.iter().zip(&alpha) {
                    if a <= 0.0 {
                        theta = theta.min(lam[i] / (lam[i] - a));
                    }
                }
                let mut drop = None;
                let mut drop_val = f64::INFINITY;
                for (&i, &a) in s.iter().zip(&alpha) {
                    lam[i] += theta * (a - lam[i]);
                    if lam[i] < drop_val {
                        drop_val = lam[i];
                        drop = Some(i);
                    }
                }
                // The blocking index leaves the corral, as do any that hit zero.
                let blocking = drop.expect("non-empty corral");
                lam[blocking] = 0.0;
                s.retain(|&i| {
                    if lam[i] <= 0.0 {
                        lam[i] = 0.0;
                        false
                    } else {
                        true
                    }
                });
                if s.is_empty() {
                    return None;
                }
                let total: f64 = s.iter().map(|&i| lam[i]).sum();
                for &i in &s {
                    lam[i] /= total;
                }
            }
        }
        let grad = g.apply(&lam);
        let xx: f64 = lam.iter().zip(&grad).map(|(a, b)| a * b).sum();
        let (j, gj) = grad
            .iter()
            .copied()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))?;
        if xx - gj <= tol || s.contains(&j) {
            return Some(lam);
        }
        s.push(j);
        need_minor = true;
    }
    Some(lam)
}

/// Accelerated projected gradient on the simplex.
fn projected_gradient(g: &Gram<'_>, start: &[f64], iters: usize) -> Vec<f64> {
    let lip = 2.0
        * (0..g.n)
            .map(|i| (0..g.n).map(|j| g.at(i, j).abs()).sum::<f64>())
            .fold(0.0, f64::max)
            .max(1e-300);
    let mut x = start.to_vec();
    let mut y = x.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let grad = g.apply(&y);
        let step: Vec<f64> = y.iter().zip(&grad).map(|(a, b)| a - 2.0 * b / lip).collect();
        let nx = project_simplex(&step);
        let nt = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        y = nx
            .iter()
            .zip(&x)
            .map(|(a, b)| a + (t - 1.0) / nt * (a - b))
            .collect();
        x = nx;
        t = nt;
    }
    x
}

fn clean(mut w: Vec<f64>) -> Vec<f64> {
    for v in w.iter_mut() {
        if !(*v > 0.0) {
            *v = 0.0;
        }
    }
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        w.iter_mut().for_each(|v| *v /= total);
    }
    w
}

/// Minimizes `wᵀ P w` over the simplex, starting from `start` when given.
/// Never returns a point worse than `start`.
pub(crate) fn simplex_min_norm(g: &Gram<'_>, start: Option<&[f64]>) -> Vec<f64> {
    let mut candidates: Vec<Vec<f64>> = Vec::new();
    if let Some(w) = start {
        candidates.push(w.to_vec());
    }
    let solved = start
        .and_then(|w| wolfe(g, Some(w)))
        .or_else(|| wolfe(g, None))
        .map(clean);
    match solved {
        Some(w) => candidates.push(w),
        None => {
            let from = start.map(<[f64]>::to_vec).unwrap_or_else(|| vec![1.0 / g.n as f64; g.n]);
            candidates.push(projected_gradient(g, &from, 5000));
        }
    }
    candidates
        .into_iter()
        .min_by(|a, b| g.quad(a).total_cmp(&g.quad(b)))
        .expect("at least one candidate")
}
