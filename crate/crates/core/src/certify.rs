//! Membership certificates from a Gilbert approximation, and noise-threshold
//! search by bisection.
//!
//! With `ρ_t = (1+ε)ρ - ε I/d` and `ρ_C` close to `ρ_t` inside the class,
//! `ρ = ρ_C/(1+ε) + ε ρ_x/(1+ε)` where `ρ_x = I/d + (ρ_t - ρ_C)/ε`. If
//! `|ρ_x - I/d| <= r` for a ball of radius `r` inside the class, both parts
//! are members and so is `ρ`.

use serde::{Deserialize, Serialize};

use crate::classes::{
    min_pt_eigenvalue, mixed_ball_radius, project_ppt, ClassKind, ClassSpec, ExtremePoint, PptParams,
};
use crate::error::{arg_err, Error, Result};
use crate::gilbert::{gilbert_project_warm, GilbertParams, GilbertResult, StopReason};
use crate::qcore::{hs_distance, hs_norm, partial_transpose, min_eigenvalue, CMatrix, DensityMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Member,
    Inconclusive,
}

/// Convex decomposition of the class point into verified extreme points.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Decomposition {
    pub weights: Vec<f64>,
    pub extreme_points: Vec<ExtremePoint>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GilbertSummary {
    pub iterations: usize,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub best_gap: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Certificate {
    pub verdict: Verdict,
    pub epsilon: f64,
    /// `|ρ_t - ρ_C|`
    pub delta_achieved: f64,
    /// Radius of the mixed ball used.
    pub radius: f64,
    /// `|ρ_x - I/d| = δ/ε`
    pub r_t: f64,
    pub class: ClassSpec,
    pub rho: DensityMatrix,
    pub rho_class: CMatrix,
    pub rho_x: CMatrix,
    /// Weights of `ρ_C` and `ρ_x` in `ρ`.
    pub mixing_weights: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decomposition: Option<Decomposition>,
    /// Smallest eigenvalue over the partial transposes of `ρ` across every
    /// bipartition (the class cuts for PPT classes).
    pub min_pt_eigenvalue: f64,
    /// `ρ` has a negative partial transpose across some cut; for fully
    /// separable and PPT classes this proves non-membership.
    pub ppt_violation: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gilbert: Option<GilbertSummary>,
    pub params: GilbertParams,
}

const VERIFY_TOL: f64 = 1e-9;

impl Certificate {
    /// Re-checks every claim of a `Member` verdict arithmetically. Always
    /// succeeds for `Inconclusive`.
    pub fn verify(&self) -> Result<()> {
        if self.verdict == Verdict::Inconclusive {
            return Ok(());
        }
        let fail = |m: String| Err(Error::InvalidState(format!("certificate rejected: {m}")));
        let d = self.rho.dim();
        let eps = self.epsilon;
        if !(eps > 0.0) {
            return fail(format!("epsilon {eps} is not positive"));
        }
        let expected_r = mixed_ball_radius(&self.class)?;
        if self.radius > expected_r {
            return fail(format!("radius {} exceeds the class radius {expected_r}", self.radius));
        }
        let mut rho_t = self.rho.matrix().scale(1.0 + eps);
        rho_t.add_identity(-eps / d as f64);
        let mut rho_x = rho_t.sub(&self.rho_class).scale(1.0 / eps);
        rho_x.add_identity(1.0 / d as f64);
        if rho_x.max_abs_diff(&self.rho_x) > VERIFY_TOL {
            return fail("stored ρ_x does not match ρ and ρ_C".into());
        }
        let mut centered = rho_x.clone();
        centered.add_identity(-1.0 / d as f64);
        let rt = hs_norm(&centered);
        if rt > self.radius + VERIFY_TOL {
            return fail(format!("ρ_x lies {rt:.6e} from I/d, outside radius {}", self.radius));
        }
        let [a, b] = self.mixing_weights;
        if (a - 1.0 / (1.0 + eps)).abs() > 1e-12 || (b - eps / (1.0 + eps)).abs() > 1e-12 {
            return fail("mixing weights do not match epsilon".into());
        }
        let mut mix = self.rho_class.scale(a);
        mix.axpy(b, &rho_x);
        if mix.max_abs_diff(self.rho.matrix()) > VERIFY_TOL {
            return fail("ρ is not the stated mixture".into());
        }
        match self.class.kind() {
            ClassKind::Ppt { cuts } => {
                if min_eigenvalue(&self.rho_class)? < 0.0 {
                    return fail("ρ_C is not PSD".into());
                }
                for cut in cuts {
                    let pt = partial_transpose(&self.rho_class, self.class.shape(), cut)?;
                    if min_eigenvalue(&pt)? < 0.0 {
                        return fail(format!("ρ_C has a negative partial transpose on {cut:?}"));
                    }
                }
            }
            _ => {
                let Some(dec) = &self.decomposition else {
                    return fail("missing extreme-point decomposition".into());
                };
                if dec.weights.len() != dec.extreme_points.len() || dec.weights.is_empty() {
                    return fail("decomposition is malformed".into());
                }
                if dec.weights.iter().any(|&w| !(w >= 0.0)) {
                    return fail("negative decomposition weight".into());
                }
                let total: f64 = dec.weights.iter().sum();
                if (total - 1.0).abs() > 1e-10 {
                    return fail(format!("decomposition weights sum to {total}"));
                }
                let mut rebuilt = CMatrix::zeros(d, d);
                for (p, &w) in dec.extreme_points.iter().zip(&dec.weights) {
                    p.verify(&self.class, VERIFY_TOL)?;
                    rebuilt.add_projector(w, p.vector());
                }
                if rebuilt.max_abs_diff(&self.rho_class) > VERIFY_TOL {
                    return fail("ρ_C differs from its decomposition".into());
                }
            }
        }
        Ok(())
    }
}

/// Smallest partial-transpose eigenvalue across every bipartition, or across
/// the class cuts for PPT classes.
fn pt_evidence(rho: &CMatrix, spec: &ClassSpec) -> Result<f64> {
    let probe = match spec.kind() {
        ClassKind::Ppt { .. } => spec.clone(),
        _ => ClassSpec::ppt(spec.shape().clone(), ClassSpec::ppt_cuts(spec.shape(), None))?,
    };
    min_pt_eigenvalue(rho, &probe)
}

/// Tries to certify `ρ ∈ spec` using the shift `ε`.
pub fn certify_membership(
    rho: &DensityMatrix,
    spec: &ClassSpec,
    epsilon: f64,
    params: &GilbertParams,
) -> Result<Certificate> {
    certify_warm(rho, spec, epsilon, params, None).map(|(c, _)| c)
}

/// As [`certify_membership`], with Gilbert started from an earlier run on the
/// same class. Also returns this run's Gilbert result for the next call.
fn certify_warm(
    rho: &DensityMatrix,
    spec: &ClassSpec,
    epsilon: f64,
    params: &GilbertParams,
    warm: Option<&GilbertResult>,
) -> Result<(Certificate, Option<GilbertResult>)> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return arg_err(format!("epsilon must be positive, got {epsilon}"));
    }
    let d = spec.shape().total_dim();
    if rho.dim() != d {
        return Err(Error::Dimension(format!("state of dimension {} for a class of dimension {d}", rho.dim())));
    }
    let radius = mixed_ball_radius(spec)?;
    let mut rho_t = rho.matrix().scale(1.0 + epsilon);
    rho_t.add_identity(-epsilon / d as f64);

    let goal = epsilon * radius * (1.0 - 1e-9);
    let mut next_warm = None;
    let (rho_class, decomposition, gilbert) = if spec.is_ppt() {
        let p = project_ppt(&rho_t, spec, &PptParams::default())?;
        (p.into_matrix(), None, None)
    } else {
        let run_params = GilbertParams {
            target: Some(goal),
            abort_above_target: true,
            ..*params
        };
        let res = gilbert_project_warm(&rho_t, spec, &run_params, warm)?;
        next_warm = Some(res.clone());
        let summary = GilbertSummary {
            iterations: res.iterations,
            converged: res.converged,
            stop_reason: res.stop_reason,
            best_gap: res.best_gap,
        };
        let dec = Decomposition {
            weights: res.weights,
            extreme_points: res.extreme_points,
        };
        (res.projection.into_matrix(), Some(dec), Some(summary))
    };
    let delta = hs_distance(&rho_t, &rho_class);
    let mut rho_x = rho_t.sub(&rho_class).scale(1.0 / epsilon);
    rho_x.add_identity(1.0 / d as f64);
    let r_t = delta / epsilon;
    let min_pt = pt_evidence(rho.matrix(), spec)?;
    let cert = Certificate {
        verdict: if r_t <= radius * (1.0 - 1e-9) { Verdict::Member } else { Verdict::Inconclusive },
        epsilon,
        delta_achieved: delta,
        radius,
        r_t,
        class: spec.clone(),
        rho: rho.clone(),
        rho_class,
        rho_x,
        mixing_weights: [1.0 / (1.0 + epsilon), epsilon / (1.0 + epsilon)],
        decomposition,
        min_pt_eigenvalue: min_pt,
        ppt_violation: min_pt < -1e-12,
        gilbert,
        params: *params,
    };
    // A member verdict that fails re-verification is downgraded, never kept.
    if cert.verdict == Verdict::Member && cert.verify().is_err() {
        return Ok((Certificate { verdict: Verdict::Inconclusive, ..cert }, next_warm));
    }
    Ok((cert, next_warm))
}

/// Tries each `ε` in order and returns the first member certificate, or the
/// last inconclusive one.
pub fn certify_with_schedule(
    rho: &DensityMatrix,
    spec: &ClassSpec,
    schedule: &[f64],
    params: &GilbertParams,
) -> Result<Certificate> {
    let mut warm = None;
    schedule_warm(rho, spec, schedule, params, &mut warm)
}

/// Each run starts from the previous one's projection, which already lies
/// in the class.
fn schedule_warm(
    rho: &DensityMatrix,
    spec: &ClassSpec,
    schedule: &[f64],
    params: &GilbertParams,
    warm: &mut Option<GilbertResult>,
) -> Result<Certificate> {
    if schedule.is_empty() {
        return arg_err("empty epsilon schedule");
    }
    let mut last = None;
    for &eps in schedule {
        let (c, res) = certify_warm(rho, spec, eps, params, warm.as_ref())?;
        if res.is_some() {
            *warm = res;
        }
        if c.verdict == Verdict::Member {
            return Ok(c);
        }
        last = Some(c);
    }
    Ok(last.expect("non-empty schedule"))
}

pub const DEFAULT_EPSILON_SCHEDULE: [f64; 4] = [0.1, 0.05, 0.02, 0.01];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ThresholdParams {
    pub q_lo: f64,
    pub q_hi: f64,
    pub tol_q: f64,
    pub epsilon_schedule: Vec<f64>,
}

impl Default for ThresholdParams {
    fn default() -> Self {
        ThresholdParams {
            q_lo: 0.0,
            q_hi: 1.0,
            tol_q: 0.005,
            epsilon_schedule: DEFAULT_EPSILON_SCHEDULE.to_vec(),
        }
    }
}

/// One bisection probe.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Attempt {
    pub q: f64,
    pub verdict: Verdict,
    pub epsilon: f64,
    pub delta_achieved: f64,
    pub r_t: f64,
    pub radius: f64,
    pub ppt_violation: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub q_star: f64,
    pub attempts: Vec<Attempt>,
    /// Member certificate at `q_star`.
    pub certificate: Certificate,
}

fn attempt(q: f64, c: &Certificate) -> Attempt {
    Attempt {
        q,
        verdict: c.verdict,
        epsilon: c.epsilon,
        delta_achieved: c.delta_achieved,
        r_t: c.r_t,
        radius: c.radius,
        ppt_violation: c.ppt_violation,
    }
}

/// Largest `q` in `[q_lo, q_hi]` (to within `tol_q`) at which `family(q)`
/// is certified a member, assuming membership is monotone in `q`.
pub fn threshold_search(
    family: &dyn Fn(f64) -> Result<DensityMatrix>,
    spec: &ClassSpec,
    tp: &ThresholdParams,
    params: &GilbertParams,
) -> Result<ThresholdReport> {
    if !(tp.q_lo < tp.q_hi) || !(tp.tol_q > 0.0) {
        return arg_err(format!("need q_lo < q_hi and tol_q > 0, got {tp:?}"));
    }
    let mut attempts = Vec::new();
    let mut warm = None;
    let base = schedule_warm(&family(tp.q_lo)?, spec, &tp.epsilon_schedule, params, &mut warm)?;
    attempts.push(attempt(tp.q_lo, &base));
    if base.verdict != Verdict::Member {
        return arg_err(format!("q_lo = {} is not certifiable for {spec}", tp.q_lo));
    }
    let top = schedule_warm(&family(tp.q_hi)?, spec, &tp.epsilon_schedule, params, &mut warm)?;
    attempts.push(attempt(tp.q_hi, &top));
    if top.verdict == Verdict::Member {
        return Ok(ThresholdReport { q_star: tp.q_hi, attempts, certificate: top });
    }
    let (mut lo, mut hi, mut best) = (tp.q_lo, tp.q_hi, base);
    while hi - lo > tp.tol_q {
        let mid = 0.5 * (lo + hi);
        let c = schedule_warm(&family(mid)?, spec, &tp.epsilon_schedule, params, &mut warm)?;
        attempts.push(attempt(mid, &c));
        if c.verdict == Verdict::Member {
            lo = mid;
            best = c;
        } else {
            hi = mid;
        }
    }
    Ok(ThresholdReport { q_star: lo, attempts, certificate: best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classes::OracleParams;
    use crate::qcore::SystemShape;
    use crate::states::{bell_states, mix_white, random_mixed, werner2};

    fn params() -> GilbertParams {
        GilbertParams {
            max_iters: 5000,
            oracle: OracleParams { restarts: 4, ..OracleParams::default() },
            ..GilbertParams::default()
        }
    }

    #[test]
    fn maximally_mixed_is_member() {
        let spec = ClassSpec::fully_separable(SystemShape::qubits(2)).unwrap();
        let c = certify_membership(&DensityMatrix::maximally_mixed(4), &spec, 0.1, &params()).unwrap();
        assert_eq!(c.verdict, Verdict::Member);
        assert!(c.r_t < 1e-9);
        c.verify().unwrap();
        assert!(!c.ppt_violation);
    }

    #[test]
    fn entangled_state_is_inconclusive() {
        let spec = ClassSpec::fully_separable(SystemShape::qubits(2)).unwrap();
        let rho = mix_white(&bell_states()[0].density(), 0.5).unwrap();
        let c = certify_membership(&rho, &spec, 0.05, &params()).unwrap();
        assert_eq!(c.verdict, Verdict::Inconclusive);
        assert!(c.ppt_violation);
        c.verify().unwrap();
    }

    #[test]
    fn tampered_certificates_fail() {
        let spec = ClassSpec::fully_separable(SystemShape::qubits(2)).unwrap();
        let rho = werner2(0.2).unwrap();
        let c = certify_membership(&rho, &spec, 0.1, &params()).unwrap();
        assert_eq!(c.verdict, Verdict::Member);
        c.verify().unwrap();
        let mut bad = c.clone();
        bad.radius *= 10.0;
        assert!(bad.verify().is_err());
        let mut bad = c.clone();
        bad.rho = bell_states()[0].density();
        assert!(bad.verify().is_err());
        let mut bad = c.clone();
        bad.decomposition.as_mut().unwrap().weights[0] += 0.01;
        assert!(bad.verify().is_err());
        let json = serde_json::to_string(&c).unwrap();
        let back: Certificate = serde_json::from_str(&json).unwrap();
        back.verify().unwrap();
    }

    #[test]
    fn ppt_class_certifies_werner() {
        let spec = ClassSpec::ppt(SystemShape::qubits(2), vec![vec![1]]).unwrap();
        let c = certify_membership(&werner2(0.3).unwrap(), &spec, 0.1, &params()).unwrap();
        assert_eq!(c.verdict, Verdict::Member);
        c.verify().unwrap();
    }

    #[test]
    fn no_false_members_on_random_states() {
        let s = SystemShape::qubits(2);
        let spec = ClassSpec::fully_separable(s.clone()).unwrap();
        for seed in 0..10 {
            let rho = random_mixed(&s, 4, seed).unwrap();
            let c = certify_with_schedule(&rho, &spec, &DEFAULT_EPSILON_SCHEDULE, &params()).unwrap();
            if c.verdict == Verdict::Member {
                assert!(c.min_pt_eigenvalue >= -1e-9);
                c.verify().unwrap();
            }
        }
    }

    #[test]
    fn missing_radius_is_reported() {
        let spec = ClassSpec::biseparable(SystemShape::qubits(3)).unwrap();
        let rho = DensityMatrix::maximally_mixed(8);
        assert!(matches!(
            certify_membership(&rho, &spec, 0.1, &params()),
            Err(Error::ConfigurationRequired(_))
        ));
        assert!(certify_membership(&rho, &spec.clone().with_radius(0.1).unwrap(), -1.0, &params()).is_err());
    }

    #[test]
    fn werner_threshold() {
        let spec = ClassSpec::fully_separable(SystemShape::qubits(2)).unwrap();
        let family = |q: f64| werner2(q);
        let rep = threshold_search(&family, &spec, &ThresholdParams::default(), &params()).unwrap();
        assert!(rep.q_star >= 0.30 && rep.q_star <= 0.334, "{}", rep.q_star);
        rep.certificate.verify().unwrap();
    }
}
