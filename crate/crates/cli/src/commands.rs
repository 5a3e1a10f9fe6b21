use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context};
use clap::Args;
use entclass_core::certify::{certify_with_schedule, DEFAULT_EPSILON_SCHEDULE};
use entclass_core::classes::{bipartite_ball_radius, min_pt_eigenvalue, pauli_ball_radius};
use entclass_core::likelihood::PovmSpec;
use entclass_core::optimize::GilbertProjector;
use entclass_core::qcore::{eigvalsh, partial_transpose};
use entclass_core::rng::derive_seed;
use entclass_core::{
    certify_membership, lrt as run_lrt, threshold_search, Algorithm, ClassSpec, Dataset, DensityMatrix,
    GilbertParams, LrtParams, LrtReport, OptParams, Partition, Povm, StateFamily, SystemShape, ThresholdParams,
    Verdict,
};
use serde::Serialize;
use serde_json::json;

use crate::manifest::{csv_header, Clock};
use crate::Outcome;

#[derive(Debug, Args, Serialize)]
pub struct GilbertOpts {
    /// Recent oracle outputs kept by Gilbert's algorithm.
    #[arg(long, default_value_t = 50)]
    memory: usize,
    /// Gilbert accuracy goal on the distance.
    #[arg(long = "gilbert-tol")]
    gilbert_tol: Option<f64>,
    /// Gilbert iteration budget.
    #[arg(long = "gilbert-iters")]
    gilbert_iters: Option<usize>,
    /// Random restarts per oracle call [default: 20, or 2 inside lrt and sweep].
    #[arg(long)]
    restarts: Option<usize>,
    /// Seesaw sweeps per initialization before only the best continues
    /// [default: 0 (off), or 5 inside lrt and sweep].
    #[arg(long = "screen-sweeps")]
    screen_sweeps: Option<usize>,
}

impl GilbertOpts {
    fn params(&self, base: GilbertParams, seed: u64) -> GilbertParams {
        let mut p = base;
        p.memory = self.memory;
        p.tol = self.gilbert_tol.unwrap_or(base.tol);
        p.max_iters = self.gilbert_iters.unwrap_or(base.max_iters);
        p.oracle.restarts = self.restarts.unwrap_or(base.oracle.restarts);
        p.oracle.screen_sweeps = self.screen_sweeps.unwrap_or(base.oracle.screen_sweeps);
        p.oracle.seed = seed;
        p
    }
}

fn parse_state(text: &str) -> anyhow::Result<StateFamily> {
    text.parse::<StateFamily>().with_context(|| format!("unknown state `{text}`"))
}

/// `--radius` accepts a number, `bipartite` or `pauli`.
fn class_spec(text: &str, shape: &SystemShape, radius: Option<&str>) -> anyhow::Result<ClassSpec> {
    let spec = ClassSpec::parse(text, shape).with_context(|| format!("unknown class `{text}`"))?;
    let Some(r) = radius else { return Ok(spec) };
    let value = match r {
        "bipartite" => bipartite_ball_radius(shape),
        "pauli" => {
            if !shape.is_qubits() {
                bail!("the pauli radius needs a qubit system");
            }
            pauli_ball_radius(shape)
        }
        v => v.parse().with_context(|| format!("bad radius `{v}`"))?,
    };
    Ok(spec.with_radius(value)?)
}

fn emit(output: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match output {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = io::stdout().lock();
            match writeln!(out, "{text}").and_then(|()| out.flush()) {
                // A closed reader (e.g. `| head`) is not an error of ours.
                Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e).context("writing to stdout"),
                _ => Ok(()),
            }
        }
    }
}

fn epsilons(list: &[f64]) -> Vec<f64> {
    if list.is_empty() {
        DEFAULT_EPSILON_SCHEDULE.to_vec()
    } else {
        list.to_vec()
    }
}

#[derive(Debug, Args, Serialize)]
pub struct CertifyArgs {
    /// State family, e.g. ghz3, w4, smolin, horodecki:a=0.3.
    #[arg(long)]
    state: String,
    /// Weight of the state against white noise.
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    /// Class, e.g. fully-separable, biseparable, ppt:cuts=2:2, slocc:seed=w3.
    #[arg(long)]
    class: String,
    /// Mixed-ball radius: a number, `bipartite` or `pauli`.
    #[arg(long)]
    radius: Option<String>,
    /// Single shift to try; by default 0.1, 0.05, 0.02, 0.01 in turn.
    #[arg(long)]
    epsilon: Option<f64>,
    #[command(flatten)]
    gilbert: GilbertOpts,
    /// Write the certificate here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

pub fn certify(args: CertifyArgs, seed: u64) -> anyhow::Result<Outcome> {
    let clock = Clock::start();
    let family = parse_state(&args.state)?;
    let rho = family.at(args.noise)?;
    let spec = class_spec(&args.class, &family.shape()?, args.radius.as_deref())?;
    let params = args.gilbert.params(GilbertParams::default(), seed);
    let cert = match args.epsilon {
        Some(e) => certify_membership(&rho, &spec, e, &params)?,
        None => certify_with_schedule(&rho, &spec, &DEFAULT_EPSILON_SCHEDULE, &params)?,
    };
    let out = json!({
        "manifest": clock.manifest("certify", &args, seed),
        "certificate": cert,
    });
    emit(args.output.as_deref(), &serde_json::to_string_pretty(&out)?)?;
    Ok(match cert.verdict {
        Verdict::Member => Outcome::Success,
        Verdict::Inconclusive => Outcome::Inconclusive,
    })
}

#[derive(Debug, Args, Serialize)]
pub struct ThresholdArgs {
    #[arg(long)]
    state: String,
    #[arg(long)]
    class: String,
    #[arg(long)]
    radius: Option<String>,
    #[arg(long, default_value_t = 0.0)]
    q_lo: f64,
    #[arg(long, default_value_t = 1.0)]
    q_hi: f64,
    #[arg(long, default_value_t = 0.005)]
    tol_q: f64,
    /// Comma-separated shifts tried at each level.
    #[arg(long, value_delimiter = ',')]
    epsilons: Vec<f64>,
    #[command(flatten)]
    gilbert: GilbertOpts,
    #[arg(long)]
    output: Option<PathBuf>,
}

pub fn threshold(args: ThresholdArgs, seed: u64) -> anyhow::Result<Outcome> {
    let clock = Clock::start();
    let family = parse_state(&args.state)?;
    let spec = class_spec(&args.class, &family.shape()?, args.radius.as_deref())?;
    let params = args.gilbert.params(GilbertParams::default(), seed);
    let tp = ThresholdParams {
        q_lo: args.q_lo,
        q_hi: args.q_hi,
        tol_q: args.tol_q,
        epsilon_schedule: epsilons(&args.epsilons),
    };
    let at = |q: f64| family.at(q);
    let report = threshold_search(&at, &spec, &tp, &params)?;
    let out = json!({
        "manifest": clock.manifest("threshold", &args, seed),
        "q_star": report.q_star,
        "attempts": report.attempts,
        "certificate": report.certificate,
    });
    emit(args.output.as_deref(), &serde_json::to_string_pretty(&out)?)?;
    Ok(Outcome::Success)
}

/// Data options shared by `lrt` and `sweep`.
#[derive(Debug, Args, Serialize)]
pub struct DataOpts {
    /// POVM: pauli, sic3 or sic3x3. Defaults to pauli on qubits and the SIC
    /// POVM on qutrits.
    #[arg(long)]
    povm: Option<String>,
    /// Use exact frequencies `n_k = N p_k` instead of sampling.
    #[arg(long)]
    exact: bool,
    /// Number of copies N.
    #[arg(long = "copies", default_value_t = 1e6)]
    copies: f64,
}

fn povm_for(name: Option<&str>, shape: &SystemShape) -> anyhow::Result<Povm> {
    let dims = shape.local_dims();
    let name = match name {
        Some(n) => n.to_string(),
        None if shape.is_qubits() => "pauli".into(),
        None if dims == [3] => "sic3".into(),
        None if dims == [3, 3] => "sic3x3".into(),
        None => bail!("no default POVM for dimensions {dims:?}; pass --povm"),
    };
    let povm = match name.as_str() {
        "pauli" => {
            if !shape.is_qubits() {
                bail!("the pauli POVM needs a qubit system, got {dims:?}");
            }
            Povm::pauli(shape.n_parties())?
        }
        "sic3" => Povm::sic3(),
        "sic3x3" => Povm::sic3x3(),
        other => bail!("unknown POVM `{other}` (expected pauli, sic3 or sic3x3)"),
    };
    if povm.dim() != shape.total_dim() {
        bail!("POVM `{name}` has dimension {} but the state has {}", povm.dim(), shape.total_dim());
    }
    Ok(povm)
}

fn simulate(rho: &DensityMatrix, povm: &Povm, opts: &DataOpts, seed: u64) -> anyhow::Result<Dataset> {
    if opts.exact {
        Ok(Dataset::exact(rho, povm, opts.copies)?)
    } else {
        if opts.copies < 1.0 || opts.copies.fract() != 0.0 {
            bail!("sampling needs a whole number of copies, got {}", opts.copies);
        }
        Ok(Dataset::sample(rho, povm, opts.copies as u64, seed)?)
    }
}

/// Shape implied by a data file's POVM.
fn data_shape(data: &Dataset, dims: Option<&str>) -> anyhow::Result<SystemShape> {
    if let Some(d) = dims {
        let local: Vec<usize> = d
            .split('x')
            .map(|v| v.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .with_context(|| format!("bad dims `{d}`"))?;
        let shape = SystemShape::new(local)?;
        if shape.total_dim() != data.dim() {
            bail!("dims {d} do not match data dimension {}", data.dim());
        }
        return Ok(shape);
    }
    Ok(match data.povm().spec() {
        PovmSpec::Pauli { n } => SystemShape::qubits(*n),
        PovmSpec::Sic3 => SystemShape::new(vec![3])?,
        PovmSpec::Sic3x3 => SystemShape::new(vec![3, 3])?,
        PovmSpec::Explicit { .. } => {
            let d = data.dim();
            if !d.is_power_of_two() || d < 2 {
                bail!("cannot infer parties for dimension {d}; pass --dims");
            }
            SystemShape::qubits(d.trailing_zeros() as usize)
        }
    })
}

#[derive(Debug, Args, Serialize)]
pub struct OptOpts {
    /// Outer iterations of the constrained maximization.
    #[arg(long, default_value_t = 2000)]
    max_iters: usize,
    /// Initial step size.
    #[arg(long, default_value_t = 0.2)]
    step: f64,
}

fn lrt_params(opt: &OptOpts, gilbert: &GilbertOpts, algorithm: Algorithm, seed: u64) -> LrtParams {
    let base = LrtParams::default();
    LrtParams {
        opt: OptParams {
            max_iters: opt.max_iters,
            eps0: opt.step,
            ..base.opt
        },
        mle_opt: OptParams { eps0: opt.step, ..base.mle_opt },
        gilbert: gilbert.params(GilbertProjector::inner_params(), derive_seed(seed, 1)),
        algorithm,
        ..base
    }
}

#[derive(Debug, Args, Serialize)]
pub struct LrtArgs {
    /// State to simulate data from.
    #[arg(long, conflicts_with = "data")]
    state: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    /// Read counts from a data file instead of simulating.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Local dimensions for a data file, e.g. 2x2x2x2.
    #[arg(long)]
    dims: Option<String>,
    #[command(flatten)]
    sim: DataOpts,
    #[arg(long)]
    class: String,
    #[arg(long)]
    radius: Option<String>,
    /// dg, apg or both.
    #[arg(long, default_value = "apg")]
    algo: String,
    #[command(flatten)]
    opt: OptOpts,
    #[command(flatten)]
    gilbert: GilbertOpts,
    /// Directory for the per-algorithm trace CSVs.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
}

pub fn lrt(args: LrtArgs, seed: u64) -> anyhow::Result<Outcome> {
    let clock = Clock::start();
    let algorithms = match args.algo.as_str() {
        "both" => vec![Algorithm::Dg, Algorithm::Apg],
        a => vec![a.parse::<Algorithm>()?],
    };
    let (data, shape) = match (&args.data, &args.state) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let data = Dataset::from_json(&text).with_context(|| format!("ingesting {}", path.display()))?;
            let shape = data_shape(&data, args.dims.as_deref())?;
            (data, shape)
        }
        (None, Some(state)) => {
            let family = parse_state(state)?;
            let shape = family.shape()?;
            let povm = povm_for(args.sim.povm.as_deref(), &shape)?;
            (simulate(&family.at(args.noise)?, &povm, &args.sim, seed)?, shape)
        }
        (None, None) => bail!("pass --state or --data"),
    };
    let spec = class_spec(&args.class, &shape, args.radius.as_deref())?;
    let mut reports: Vec<(Algorithm, LrtReport)> = Vec::new();
    for &a in &algorithms {
        let report = run_lrt(&data, &spec, &lrt_params(&args.opt, &args.gilbert, a, seed))?;
        reports.push((a, report));
    }
    let manifest = clock.manifest("lrt", &args, seed);
    if let Some(dir) = &args.trace_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (a, r) in &reports {
            let name = format!("lrt_{}.csv", algo_name(*a));
            let text = csv_header(&manifest) + &r.constrained_csv();
            fs::write(dir.join(&name), text).with_context(|| format!("writing {name}"))?;
        }
    }
    let mut by_algo = serde_json::Map::new();
    for (a, r) in &reports {
        by_algo.insert(algo_name(*a).into(), serde_json::to_value(r)?);
    }
    let out = json!({
        "manifest": manifest,
        "p_value_note": "asymptotic semi-chi-squared tail",
        "reports": by_algo,
    });
    emit(args.output.as_deref(), &serde_json::to_string_pretty(&out)?)?;
    Ok(Outcome::Success)
}

fn algo_name(a: Algorithm) -> &'static str {
    match a {
        Algorithm::Dg => "dg",
        Algorithm::Apg => "apg",
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    #[arg(long, default_value = "smolin")]
    state: String,
    /// `start:stop:step` or a comma-separated list.
    #[arg(long, default_value = "0:1:0.1")]
    q_grid: String,
    /// Classes to test; repeat the flag. Defaults to fully-separable,
    /// ppt:cuts=2:2 and ppt:cuts=1:3 on four parties, else fully-separable
    /// and ppt.
    #[arg(long = "class")]
    classes: Vec<String>,
    #[arg(long)]
    radius: Option<String>,
    #[command(flatten)]
    sim: DataOpts,
    #[arg(long, default_value = "apg")]
    algo: String,
    #[command(flatten)]
    opt: OptOpts,
    #[command(flatten)]
    gilbert: GilbertOpts,
    /// Grid points run in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn parse_grid(text: &str) -> anyhow::Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() == 3 {
        let v: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .with_context(|| format!("bad grid `{text}`"))?;
        let (a, b, step) = (v[0], v[1], v[2]);
        if !(step > 0.0) || b < a {
            bail!("grid `{text}` needs start <= stop and a positive step");
        }
        let n = ((b - a) / step + 1e-9).floor() as usize;
        return Ok((0..=n).map(|i| (a + i as f64 * step).min(b)).collect());
    }
    text.split(',')
        .map(|p| p.trim().parse::<f64>().with_context(|| format!("bad grid value `{p}`")))
        .collect()
}

fn column_label(class: &str) -> String {
    class.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

pub fn sweep(args: SweepArgs, seed: u64) -> anyhow::Result<Outcome> {
    let clock = Clock::start();
    let family = parse_state(&args.state)?;
    let shape = family.shape()?;
    let grid = parse_grid(&args.q_grid)?;
    let class_texts: Vec<String> = if !args.classes.is_empty() {
        args.classes.clone()
    } else if shape.n_parties() == 4 {
        vec!["fully-separable".into(), "ppt:cuts=2:2".into(), "ppt:cuts=1:3".into()]
    } else {
        vec!["fully-separable".into(), "ppt".into()]
    };
    let specs: Vec<ClassSpec> = class_texts
        .iter()
        .map(|c| class_spec(c, &shape, args.radius.as_deref()))
        .collect::<anyhow::Result<_>>()?;
    let algorithm: Algorithm = args.algo.parse()?;
    let povm = povm_for(args.sim.povm.as_deref(), &shape)?;

    let rows: Mutex<Vec<Option<String>>> = Mutex::new(vec![None; grid.len()]);
    let failure: Mutex<Option<anyhow::Error>> = Mutex::new(None);
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        if i >= grid.len() || failure.lock().expect("lock").is_some() {
            return;
        }
        let row = (|| -> anyhow::Result<String> {
            let q = grid[i];
            let point_seed = derive_seed(seed, i as u64);
            let rho = family.at(q)?;
            let data = simulate(&rho, &povm, &args.sim, point_seed)?;
            let mut cells = vec![format!("{q}")];
            for spec in &specs {
                let params = lrt_params(&args.opt, &args.gilbert, algorithm, point_seed);
                let r = run_lrt(&data, spec, &params)?;
                let npt = if spec.is_ppt() {
                    format!("{:.6e}", min_pt_eigenvalue(rho.matrix(), spec)?)
                } else {
                    String::new()
                };
                cells.extend([
                    format!("{:.9e}", r.lambda),
                    format!("{:.9e}", r.lambda_over_n),
                    format!("{:.6e}", r.p_value),
                    npt,
                ]);
            }
            Ok(cells.join(","))
        })();
        match row {
            Ok(r) => rows.lock().expect("lock")[i] = Some(r),
            Err(e) => {
                failure.lock().expect("lock").get_or_insert(e);
            }
        }
    };
    std::thread::scope(|s| {
        for _ in 0..args.jobs.max(1) {
            s.spawn(worker);
        }
    });
    if let Some(e) = failure.into_inner().expect("lock") {
        return Err(e);
    }
    let mut text = csv_header(&clock.manifest("sweep", &args, seed));
    let mut header = vec!["q".to_string()];
    for c in &class_texts {
        let l = column_label(c);
        header.extend([
            format!("lambda_{l}"),
            format!("lambda_over_n_{l}"),
            format!("p_{l}"),
            format!("min_pt_eigenvalue_{l}"),
        ]);
    }
    text += &header.join(",");
    text.push('\n');
    for r in rows.into_inner().expect("lock").into_iter().flatten() {
        text += &r;
        text.push('\n');
    }
    emit(args.output.as_deref(), text.trim_end())?;
    Ok(Outcome::Success)
}

#[derive(Debug, Args, Serialize)]
pub struct StateInfoArgs {
    #[arg(long)]
    state: String,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Serialize)]
struct PtSpectrum {
    cut: String,
    side: Vec<usize>,
    min_eigenvalue: f64,
    eigenvalues: Vec<f64>,
}

pub fn state_info(args: StateInfoArgs, seed: u64) -> anyhow::Result<Outcome> {
    let clock = Clock::start();
    let family = parse_state(&args.state)?;
    let shape = family.shape()?;
    let rho = family.at(args.noise)?;
    let n = shape.n_parties();
    let mut spectra = Vec::new();
    for side in ClassSpec::ppt_cuts(&shape, None) {
        let rest: Vec<usize> = (0..n).filter(|p| !side.contains(p)).collect();
        let cut = Partition::new(vec![rest, side.clone()])?.to_string();
        let ev = eigvalsh(&partial_transpose(rho.matrix(), &shape, &side)?)?;
        spectra.push(PtSpectrum {
            cut,
            side,
            min_eigenvalue: ev.iter().copied().fold(f64::INFINITY, f64::min),
            eigenvalues: ev,
        });
    }
    let out = json!({
        "manifest": clock.manifest("state-info", &args, seed),
        "state": family.to_string(),
        "noise": args.noise,
        "dims": shape.local_dims(),
        "purity": rho.purity(),
        "eigenvalues": eigvalsh(rho.matrix())?,
        "ppt_all_cuts": spectra.iter().all(|s| s.min_eigenvalue >= -1e-12),
        "partial_transposes": spectra,
        "matrix": rho.matrix(),
    });
    emit(args.output.as_deref(), &serde_json::to_string_pretty(&out)?)?;
    Ok(Outcome::Success)
}
