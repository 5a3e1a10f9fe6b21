//! Convex entanglement classes, their extreme-point oracles and the PPT
//! projection.

mod oracle;
mod ppt;

pub use oracle::{oracle_class, oracle_product, ExtremeForm, ExtremePoint, OracleParams, WarmStart};
pub use ppt::{min_pt_eigenvalue, project_ppt, repair_ppt, PptParams};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::qcore::{PureState, SystemShape};
use crate::states::{bell_states, ghz, parse_params, w, StateFamily};

/// Disjoint blocks of parties covering the whole system.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<usize>>", into = "Vec<Vec<usize>>")]
pub struct Partition {
    blocks: Vec<Vec<usize>>,
}

impl TryFrom<Vec<Vec<usize>>> for Partition {
    type Error = Error;

    fn try_from(blocks: Vec<Vec<usize>>) -> Result<Self> {
        Partition::new(blocks)
    }
}

impl From<Partition> for Vec<Vec<usize>> {
    fn from(p: Partition) -> Self {
        p.blocks
    }
}

impl Partition {
    /// Canonicalizes: each block sorted, blocks ordered by least element.
    pub fn new(mut blocks: Vec<Vec<usize>>) -> Result<Self> {
        if blocks.iter().any(|b| b.is_empty()) {
            return arg_err("partition blocks must be non-empty");
        }
        for b in &mut blocks {
            b.sort_unstable();
        }
        blocks.sort_by_key(|b| b[0]);
        let mut all: Vec<usize> = blocks.iter().flatten().copied().collect();
        all.sort_unstable();
        if all.iter().enumerate().any(|(i, &p)| i != p) {
            return arg_err(format!("blocks {blocks:?} do not partition 0..{}", all.len()));
        }
        Ok(Partition { blocks })
    }

    /// Every party in its own block.
    pub fn finest(n: usize) -> Self {
        Partition {
            blocks: (0..n).map(|p| vec![p]).collect(),
        }
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_parties(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self
            .blocks
            .iter()
            .map(|b| b.iter().map(|&p| party_name(p)).collect())
            .collect();
        write!(f, "{}", names.join("|"))
    }
}

fn party_name(p: usize) -> String {
    if p < 26 {
        char::from(b'A' + p as u8).to_string()
    } else {
        format!("P{p}")
    }
}

/// All partitions of `0..n` into exactly `k` blocks.
pub fn enumerate_partitions(n: usize, k: usize) -> Result<Vec<Partition>> {
    if k < 2 || k > n {
        return arg_err(format!("need 2 <= k <= n, got k = {k}, n = {n}"));
    }
    // Restricted growth strings with exactly k distinct labels.
    let mut out = Vec::new();
    let mut labels = vec![0usize; n];
    fn rec(pos: usize, max: usize, k: usize, labels: &mut Vec<usize>, out: &mut Vec<Partition>) {
        let n = labels.len();
        if max + 1 + (n - pos) < k {
            return;
        }
        if pos == n {
            if max + 1 == k {
                let mut blocks = vec![Vec::new(); k];
                for (p, &l) in labels.iter().enumerate() {
                    blocks[l].push(p);
                }
                out.push(Partition { blocks });
            }
            return;
        }
        for l in 0..=(max + 1).min(k - 1) {
            labels[pos] = l;
            rec(pos + 1, max.max(l), k, labels, out);
        }
    }
    rec(1, 0, k, &mut labels, &mut out);
    Ok(out)
}

/// Which convex set a [`ClassSpec`] describes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ClassKind {
    FullySeparable,
    KSeparable {
        k: usize,
    },
    Biseparable,
    /// Convex hull of the SLOCC orbit of a seed state.
    Slocc {
        seed: PureState,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
    /// States whose partial transposes on each listed block are PSD.
    Ppt {
        cuts: Vec<Vec<usize>>,
    },
}

/// A convex class on a given system, with an optional mixed-ball radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawClassSpec", into = "RawClassSpec")]
pub struct ClassSpec {
    kind: ClassKind,
    shape: SystemShape,
    ball_radius: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawClassSpec {
    #[serde(flatten)]
    kind: ClassKind,
    dims: SystemShape,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ball_radius: Option<f64>,
}

impl TryFrom<RawClassSpec> for ClassSpec {
    type Error = Error;

    fn try_from(raw: RawClassSpec) -> Result<Self> {
        ClassSpec::new(raw.kind, raw.dims)?.with_radius_opt(raw.ball_radius)
    }
}

impl From<ClassSpec> for RawClassSpec {
    fn from(c: ClassSpec) -> Self {
        RawClassSpec {
            kind: c.kind,
            dims: c.shape,
            ball_radius: c.ball_radius,
        }
    }
}

impl ClassSpec {
    /// Validates and canonicalizes: `KSeparable(2)` becomes `Biseparable` and
    /// `KSeparable(n)` becomes `FullySeparable`.
    pub fn new(kind: ClassKind, shape: SystemShape) -> Result<Self> {
        let n = shape.n_parties();
        let kind = match kind {
            ClassKind::FullySeparable | ClassKind::Biseparable if n < 2 => {
                return arg_err("separability classes need at least two parties");
            }
            ClassKind::KSeparable { k } => {
                if k < 2 || k > n {
                    return arg_err(format!("k-separability needs 2 <= k <= {n}, got {k}"));
                }
                if k == n {
                    ClassKind::FullySeparable
                } else if k == 2 {
                    ClassKind::Biseparable
                } else {
                    ClassKind::KSeparable { k }
                }
            }
            ClassKind::Biseparable if n == 2 => ClassKind::FullySeparable,
            ClassKind::Slocc { seed, label } => {
                if seed.dim() != shape.total_dim() {
                    return Err(Error::Dimension(format!(
                        "seed of dimension {} on a system of dimension {}",
                        seed.dim(),
                        shape.total_dim()
                    )));
                }
                ClassKind::Slocc { seed, label }
            }
            ClassKind::Ppt { cuts } => {
                if cuts.is_empty() {
                    return arg_err("a PPT class needs at least one cut");
                }
                let mut canon = Vec::new();
                for cut in cuts {
                    shape.check_parties(&cut)?;
                    let mut side: Vec<usize> = cut;
                    side.sort_unstable();
                    side.dedup();
                    if side.is_empty() || side.len() == n {
                        return arg_err(format!("cut {side:?} is not a proper bipartition"));
                    }
                    // Store the side without party 0; both sides give the same spectrum.
                    if side.contains(&0) {
                        side = (0..n).filter(|p| !side.contains(p)).collect();
                    }
                    if !canon.contains(&side) {
                        canon.push(side);
                    }
                }
                ClassKind::Ppt { cuts: canon }
            }
            other => other,
        };
        Ok(ClassSpec {
            kind,
            shape,
            ball_radius: None,
        })
    }

    pub fn fully_separable(shape: SystemShape) -> Result<Self> {
        ClassSpec::new(ClassKind::FullySeparable, shape)
    }

    pub fn biseparable(shape: SystemShape) -> Result<Self> {
        ClassSpec::new(ClassKind::Biseparable, shape)
    }

    pub fn k_separable(shape: SystemShape, k: usize) -> Result<Self> {
        ClassSpec::new(ClassKind::KSeparable { k }, shape)
    }

    pub fn slocc(shape: SystemShape, seed: PureState, label: Option<String>) -> Result<Self> {
        ClassSpec::new(ClassKind::Slocc { seed, label }, shape)
    }

    pub fn ppt(shape: SystemShape, cuts: Vec<Vec<usize>>) -> Result<Self> {
        ClassSpec::new(ClassKind::Ppt { cuts }, shape)
    }

    /// PPT across every bipartition whose smaller side has `size` parties,
    /// or across all bipartitions when `size` is `None`.
    pub fn ppt_cuts(shape: &SystemShape, size: Option<usize>) -> Vec<Vec<usize>> {
        let n = shape.n_parties();
        let mut cuts = Vec::new();
        for mask in 1..(1usize << n) - 1 {
            if mask & 1 == 1 {
                continue; // sides without party 0
            }
            let side: Vec<usize> = (0..n).filter(|p| mask >> p & 1 == 1).collect();
            let small = side.len().min(n - side.len());
            if size.is_none_or(|s| s == small) {
                cuts.push(side);
            }
        }
        cuts
    }

    pub fn with_radius(self, r: f64) -> Result<Self> {
        self.with_radius_opt(Some(r))
    }

    fn with_radius_opt(mut self, r: Option<f64>) -> Result<Self> {
        if let Some(r) = r {
            if !(r > 0.0) || !r.is_finite() {
                return arg_err(format!("ball radius must be positive, got {r}"));
            }
        }
        self.ball_radius = r;
        Ok(self)
    }

    pub fn kind(&self) -> &ClassKind {
        &self.kind
    }

    pub fn shape(&self) -> &SystemShape {
        &self.shape
    }

    pub fn ball_radius(&self) -> Option<f64> {
        self.ball_radius
    }

    pub fn is_ppt(&self) -> bool {
        matches!(self.kind, ClassKind::Ppt { .. })
    }

    /// Number of blocks in the partitions the oracle scans.
    pub fn block_count(&self) -> Option<usize> {
        match self.kind {
            ClassKind::FullySeparable => Some(self.shape.n_parties()),
            ClassKind::KSeparable { k } => Some(k),
            ClassKind::Biseparable => Some(2),
            _ => None,
        }
    }

    /// Partitions scanned by the product oracle.
    pub fn partitions(&self) -> Result<Vec<Partition>> {
        let n = self.shape.n_parties();
        match self.block_count() {
            Some(k) if k == n => Ok(vec![Partition::finest(n)]),
            Some(k) => enumerate_partitions(n, k),
            None => Err(Error::UnsupportedClass(self.to_string())),
        }
    }

    /// Parses `fully-separable`, `biseparable`, `k-separable:k=3`,
    /// `ppt`, `ppt:cuts=2:2`, `slocc:seed=w3`.
    pub fn parse(text: &str, shape: &SystemShape) -> Result<Self> {
        let (name, rest) = text.split_once(':').unwrap_or((text, ""));
        let name = name.trim().to_ascii_lowercase();
        match name.as_str() {
            "fully-separable" | "separable" => ClassSpec::fully_separable(shape.clone()),
            "biseparable" => ClassSpec::biseparable(shape.clone()),
            "k-separable" => {
                let p = parse_params(rest)?;
                ClassSpec::k_separable(shape.clone(), crate::states::param(&p, "k", "k-separable")?)
            }
            "ppt" => {
                let size = match rest.strip_prefix("cuts=") {
                    None if rest.is_empty() => None,
                    Some("all") => None,
                    Some(c) => {
                        let Some((a, b)) = c.split_once(':') else {
                            return arg_err(format!("cuts must look like 2:2, got `{c}`"));
                        };
                        let a: usize = a.parse().map_err(|_| Error::Argument(format!("bad cut `{c}`")))?;
                        let b: usize = b.parse().map_err(|_| Error::Argument(format!("bad cut `{c}`")))?;
                        if a + b != shape.n_parties() {
                            return arg_err(format!("cut {c} does not match {} parties", shape.n_parties()));
                        }
                        Some(a.min(b))
                    }
                    None => return arg_err(format!("unknown PPT option `{rest}`")),
                };
                let cuts = ClassSpec::ppt_cuts(shape, size);
                ClassSpec::ppt(shape.clone(), cuts)
            }
            "slocc" => {
                let p = parse_params(rest)?;
                let label: String = crate::states::param(&p, "seed", "slocc")?;
                let seed = seed_state(&label)?;
                ClassSpec::slocc(shape.clone(), seed, Some(label))
            }
            _ => arg_err(format!("unknown class `{text}`")),
        }
    }
}

/// Pure seed states addressable by name.
pub fn seed_state(label: &str) -> Result<PureState> {
    match label.parse::<StateFamily>()? {
        StateFamily::Ghz { n } => ghz(n),
        StateFamily::W { n } => w(n),
        StateFamily::Bell => Ok(bell_states()[0].clone()),
        StateFamily::RandomPure { dims, seed } => {
            Ok(crate::states::random_pure(&SystemShape::new(dims)?, seed))
        }
        other => arg_err(format!("seed `{other}` is not a pure state")),
    }
}

impl fmt::Display for ClassSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ClassKind::FullySeparable => write!(f, "fully-separable"),
            ClassKind::KSeparable { k } => write!(f, "k-separable:k={k}"),
            ClassKind::Biseparable => write!(f, "biseparable"),
            ClassKind::Slocc { label, .. } => {
                write!(f, "slocc:seed={}", label.as_deref().unwrap_or("custom"))
            }
            ClassKind::Ppt { cuts } => {
                let names: Vec<String> =
                    cuts.iter().map(|c| c.iter().map(|&p| party_name(p)).collect()).collect();
                write!(f, "ppt[{}]", names.join(","))
            }
        }
    }
}

/// HS radius `1/√(d(d-1))` of the separable ball around `I/d` for a
/// bipartite split of total dimension `d`.
pub fn bipartite_ball_radius(shape: &SystemShape) -> f64 {
    let d = shape.total_dim() as f64;
    1.0 / (d * (d - 1.0)).sqrt()
}

/// HS radius `1/√(d(d²-1))` of a ball of fully separable n-qubit states
/// around `I/d`: for every non-identity Pauli string `P` the states
/// `(I ± P)/d` are product mixtures, and the ball is inscribed in their hull.
pub fn pauli_ball_radius(shape: &SystemShape) -> f64 {
    let d = shape.total_dim() as f64;
    1.0 / (d * (d * d - 1.0)).sqrt()
}

/// Radius of a mixed ball around `I/d` contained in the class.
pub fn mixed_ball_radius(spec: &ClassSpec) -> Result<f64> {
    if let Some(r) = spec.ball_radius {
        return Ok(r);
    }
    let shape = spec.shape();
    let n = shape.n_parties();
    let separable_default = || -> Option<f64> {
        if n == 2 {
            Some(bipartite_ball_radius(shape))
        } else if shape.is_qubits() {
            Some(pauli_ball_radius(shape))
        } else {
            None
        }
    };
    let found = match spec.kind() {
        ClassKind::FullySeparable => separable_default(),
        // Every PPT set contains the fully separable one.
        ClassKind::Ppt { .. } => separable_default(),
        _ => None,
    };
    found.ok_or_else(|| {
        Error::ConfigurationRequired(format!(
            "no built-in mixed-ball radius for class {spec} on dims {:?}; set ball_radius explicitly",
            shape.local_dims()
        ))
    })
}
