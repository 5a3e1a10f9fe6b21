//! Benchmark states: GHZ, W, Bell, Smolin, Horodecki 3x3, Werner, Haar-random.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::qcore::{
    partial_trace_matrix, CMatrix, DensityMatrix, PureState, SystemShape, C64, ZERO,
};
use crate::rng::SeededRng;

/// Bell states in the fixed order `Φ+, Φ-, Ψ+, Ψ-`.
pub fn bell_states() -> [PureState; 4] {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let v = |a: f64, b: f64, c: f64, d: f64| {
        PureState::new(vec![
            C64::new(a * s, 0.0),
            C64::new(b * s, 0.0),
            C64::new(c * s, 0.0),
            C64::new(d * s, 0.0),
        ])
        .expect("unit norm")
    };
    [
        v(1.0, 0.0, 0.0, 1.0),
        v(1.0, 0.0, 0.0, -1.0),
        v(0.0, 1.0, 1.0, 0.0),
        v(0.0, 1.0, -1.0, 0.0),
    ]
}

/// `(|0…0> + |1…1>)/√2` on `n` qubits.
pub fn ghz(n: usize) -> Result<PureState> {
    if n < 2 {
        return arg_err(format!("GHZ state needs n >= 2, got {n}"));
    }
    let d = 1usize << n;
    let mut amps = vec![ZERO; d];
    let s = std::f64::consts::FRAC_1_SQRT_2;
    amps[0] = C64::new(s, 0.0);
    amps[d - 1] = C64::new(s, 0.0);
    PureState::new(amps)
}

/// Uniform superposition of the single-excitation basis states.
pub fn w(n: usize) -> Result<PureState> {
    if n < 2 {
        return arg_err(format!("W state needs n >= 2, got {n}"));
    }
    let d = 1usize << n;
    let mut amps = vec![ZERO; d];
    let a = 1.0 / (n as f64).sqrt();
    for k in 0..n {
        amps[1 << k] = C64::new(a, 0.0);
    }
    PureState::new(amps)
}

/// Four-qubit Smolin state `(1/4) Σ_μ |Ψ^μ><Ψ^μ|_AB ⊗ |Ψ^μ><Ψ^μ|_CD`.
pub fn smolin() -> DensityMatrix {
    let mut acc = CMatrix::zeros(16, 16);
    for b in bell_states() {
        let p = b.projector();
        acc.axpy(0.25, &p.kron(&p));
    }
    DensityMatrix::from_trusted(acc)
}

/// The Horodecki 3x3 bound entangled family, `0 <= a <= 1`.
pub fn horodecki(a: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&a) {
        return arg_err(format!("Horodecki parameter a = {a} outside [0, 1]"));
    }
    let mut m = CMatrix::zeros(9, 9);
    for i in 0..9 {
        m[(i, i)] = C64::new(a, 0.0);
    }
    for &(i, j) in &[(0, 4), (0, 8), (4, 8)] {
        m[(i, j)] = C64::new(a, 0.0);
        m[(j, i)] = C64::new(a, 0.0);
    }
    let diag = (1.0 + a) / 2.0;
    let off = (1.0 - a * a).sqrt() / 2.0;
    m[(6, 6)] = C64::new(diag, 0.0);
    m[(8, 8)] = C64::new(diag, 0.0);
    m[(6, 8)] = C64::new(off, 0.0);
    m[(8, 6)] = C64::new(off, 0.0);
    Ok(DensityMatrix::from_trusted(m.scale(1.0 / (8.0 * a + 1.0))))
}

/// `q ρ + (1 - q) I/d`
pub fn mix_white(rho: &DensityMatrix, q: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&q) {
        return arg_err(format!("noise parameter q = {q} outside [0, 1]"));
    }
    let d = rho.dim();
    let mut m = rho.matrix().scale(q);
    m.add_identity((1.0 - q) / d as f64);
    Ok(DensityMatrix::from_trusted(m))
}

/// Haar-random pure state: a normalized complex Gaussian vector.
pub fn random_pure(shape: &SystemShape, seed: u64) -> PureState {
    let mut rng = SeededRng::new(seed);
    random_pure_with(shape.total_dim(), &mut rng)
}

pub(crate) fn random_pure_with(dim: usize, rng: &mut SeededRng) -> PureState {
    loop {
        let v: Vec<C64> = (0..dim).map(|_| rng.complex_gaussian()).collect();
        if let Ok(p) = PureState::normalized(v) {
            return p;
        }
    }
}

/// Reduced state of a Haar-random pure state on `system ⊗ C^rank`.
pub fn random_mixed(shape: &SystemShape, rank: usize, seed: u64) -> Result<DensityMatrix> {
    let d = shape.total_dim();
    if rank == 0 || rank > d {
        return arg_err(format!("rank {rank} must lie in 1..={d}"));
    }
    let mut rng = SeededRng::new(seed);
    let psi = random_pure_with(d * rank, &mut rng);
    let big = SystemShape::new(vec![d, rank.max(2)])?;
    let full = if rank == 1 {
        // Pad a trivial ancilla so the shape stays valid.
        let mut v = vec![ZERO; d * 2];
        for (i, a) in psi.amplitudes().iter().enumerate() {
            v[2 * i] = *a;
        }
        CMatrix::projector(&v)
    } else {
        psi.projector()
    };
    let reduced = partial_trace_matrix(&full, &big, &[0])?;
    Ok(DensityMatrix::from_trusted(reduced.hermitian_part()))
}

/// Two-qubit Werner family `q |Ψ-><Ψ-| + (1 - q) I/4`.
pub fn werner2(q: f64) -> Result<DensityMatrix> {
    mix_white(&bell_states()[3].density(), q)
}

/// Named state families addressable from the command line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum StateFamily {
    Ghz { n: usize },
    W { n: usize },
    Bell,
    Smolin,
    Horodecki { a: f64 },
    Werner2,
    RandomPure { dims: Vec<usize>, seed: u64 },
    RandomMixed { dims: Vec<usize>, rank: usize, seed: u64 },
}

impl StateFamily {
    pub fn shape(&self) -> Result<SystemShape> {
        match self {
            StateFamily::Ghz { n } | StateFamily::W { n } => Ok(SystemShape::qubits(*n)),
            StateFamily::Bell | StateFamily::Werner2 => Ok(SystemShape::qubits(2)),
            StateFamily::Smolin => Ok(SystemShape::qubits(4)),
            StateFamily::Horodecki { .. } => SystemShape::new(vec![3, 3]),
            StateFamily::RandomPure { dims, .. } | StateFamily::RandomMixed { dims, .. } => {
                SystemShape::new(dims.clone())
            }
        }
    }

    /// The noiseless member of the family.
    pub fn base_state(&self) -> Result<DensityMatrix> {
        match self {
            StateFamily::Ghz { n } => Ok(ghz(*n)?.density()),
            StateFamily::W { n } => Ok(w(*n)?.density()),
            StateFamily::Bell => Ok(bell_states()[0].density()),
            StateFamily::Smolin => Ok(smolin()),
            StateFamily::Horodecki { a } => horodecki(*a),
            StateFamily::Werner2 => Ok(bell_states()[3].density()),
            StateFamily::RandomPure { dims, seed } => {
                Ok(random_pure(&SystemShape::new(dims.clone())?, *seed).density())
            }
            StateFamily::RandomMixed { dims, rank, seed } => {
                random_mixed(&SystemShape::new(dims.clone())?, *rank, *seed)
            }
        }
    }

    /// `mix_white(base, q)`
    pub fn at(&self, q: f64) -> Result<DensityMatrix> {
        mix_white(&self.base_state()?, q)
    }
}

impl fmt::Display for StateFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |d: &[usize]| d.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("x");
        match self {
            StateFamily::Ghz { n } => write!(f, "ghz{n}"),
            StateFamily::W { n } => write!(f, "w{n}"),
            StateFamily::Bell => write!(f, "bell"),
            StateFamily::Smolin => write!(f, "smolin"),
            StateFamily::Horodecki { a } => write!(f, "horodecki:a={a}"),
            StateFamily::Werner2 => write!(f, "werner2"),
            StateFamily::RandomPure { dims, seed } => {
                write!(f, "random_pure:dims={},seed={seed}", join(dims))
            }
            StateFamily::RandomMixed { dims, rank, seed } => {
                write!(f, "random_mixed:dims={},rank={rank},seed={seed}", join(dims))
            }
        }
    }
}

pub(crate) fn parse_params(s: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    if s.is_empty() {
        return Ok(out);
    }
    for kv in s.split(',') {
        let Some((k, v)) = kv.split_once('=') else {
            return arg_err(format!("expected key=value, got `{kv}`"));
        };
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub(crate) fn param<T: FromStr>(map: &BTreeMap<String, String>, key: &str, ctx: &str) -> Result<T> {
    let raw = map
        .get(key)
        .ok_or_else(|| Error::Argument(format!("{ctx} needs parameter `{key}`")))?;
    raw.parse()
        .map_err(|_| Error::Argument(format!("cannot parse {key}={raw} for {ctx}")))
}

fn parse_dims(s: &str) -> Result<Vec<usize>> {
    s.split('x')
        .map(|d| d.parse().map_err(|_| Error::Argument(format!("bad dimension list `{s}`"))))
        .collect()
}

impl FromStr for StateFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, rest) = s.split_once(':').unwrap_or((s, ""));
        let params = parse_params(rest)?;
        let name = name.trim().to_ascii_lowercase();
        let digits = |prefix: &str| -> Option<usize> { name.strip_prefix(prefix)?.parse().ok() };
        let family = match name.as_str() {
            "bell" => StateFamily::Bell,
            "smolin" => StateFamily::Smolin,
            "werner2" | "werner" => StateFamily::Werner2,
            "horodecki" => StateFamily::Horodecki {
                a: param(&params, "a", "horodecki")?,
            },
            "random_pure" => StateFamily::RandomPure {
                dims: parse_dims(&param::<String>(&params, "dims", "random_pure")?)?,
                seed: param(&params, "seed", "random_pure")?,
            },
            "random_mixed" => StateFamily::RandomMixed {
                dims: parse_dims(&param::<String>(&params, "dims", "random_mixed")?)?,
                rank: param(&params, "rank", "random_mixed")?,
                seed: param(&params, "seed", "random_mixed")?,
            },
            _ => {
                if let Some(n) = digits("ghz") {
                    StateFamily::Ghz { n }
                } else if let Some(n) = digits("w") {
                    StateFamily::W { n }
                } else {
                    return arg_err(format!("unknown state `{s}`"));
                }
            }
        };
        // Validate eagerly so bad parameters surface at parse time.
        family.base_state()?;
        Ok(family)
    }
}
