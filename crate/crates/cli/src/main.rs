//! `dws-bench`: generate instances, run working-set strategies, certify
//! solutions and emit trace CSVs.
//!
//! Exit codes: 0 success, 1 usage / IO / format error, 2 numerical failure.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dws_core::certify::check_global;
use dws_core::dws::{RunOutput, TraceRecord};
use dws_core::instance::{self, GeneratorConfig, KRule};
use dws_core::solver::{self, SolverVariant};
use dws_core::{linalg, DwsConfig, Instance, SolverConfig, StrategyKind};
use rayon::prelude::*;
use serde::Serialize;

const TRACE_HEADER: [&str; 8] = [
    "r",
    "ws_size",
    "supp_size",
    "e_size",
    "tau_next",
    "objective",
    "inner_iters",
    "cum_seconds",
];

#[derive(Parser)]
#[command(name = "dws-bench", version, about = "Dynamic working set benchmarks for the lasso")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a compressed-sensing instance (CSI1 file).
    Gen(GenArgs),
    /// Run one strategy on an instance; write trace CSV and summary JSON.
    Solve(SolveArgs),
    /// Check a solution against the global optimality conditions.
    Certify(CertifyArgs),
    /// Run a seed range × strategy set and write one combined CSV.
    Bench(BenchArgs),
    /// High-precision reference solution over all variables.
    Oracle(OracleArgs),
}

#[derive(Args, Clone)]
struct GeneratorArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    s: usize,
    /// Multiplier C in k = ⌈C·s·ln(n/s)⌉.
    #[arg(long, conflicts_with = "k", default_value_t = instance::DEFAULT_K_MULTIPLIER)]
    c: f64,
    /// Explicit number of observations.
    #[arg(long)]
    k: Option<usize>,
    /// η = alpha·‖Aᵗb‖_∞.
    #[arg(long, default_value_t = instance::DEFAULT_ETA_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = instance::DEFAULT_NOISE_SIGMA2)]
    sigma2: f64,
    /// Rescale b to unit norm.
    #[arg(long)]
    normalize_b: bool,
}

impl GeneratorArgs {
    fn config(&self, seed: u64) -> GeneratorConfig {
        let mut cfg = GeneratorConfig::new(self.n, self.s, seed);
        cfg.k_rule = match self.k {
            Some(k) => KRule::Explicit(k),
            None => KRule::Multiplier(self.c),
        };
        cfg.eta_alpha = self.alpha;
        cfg.noise_sigma2 = self.sigma2;
        cfg.normalize_b = self.normalize_b;
        cfg
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    gen: GeneratorArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    GpsrBb,
    IstaOracle,
}

impl From<SolverArg> for SolverVariant {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::GpsrBb => SolverVariant::GpsrBb,
            SolverArg::IstaOracle => SolverVariant::IstaOracle,
        }
    }
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Initial growth size τ (default ⌊4 ln² n⌋ clamped to k).
    #[arg(long)]
    tau: Option<usize>,
    /// Size of the first working set (default min(10, n)).
    #[arg(long)]
    p0: Option<usize>,
    /// Growth base, in (1, 2].
    #[arg(long)]
    h: Option<f64>,
    /// Inner KKT tolerance (default 1e-9·(1 + ‖Aᵗb‖_∞)).
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_outer: Option<usize>,
    #[arg(long, value_enum, default_value = "gpsr-bb")]
    solver: SolverArg,
}

impl RunArgs {
    fn configs(&self, inst: &Instance) -> Result<(DwsConfig, SolverConfig), Failure> {
        let mut scfg = SolverConfig::for_instance(inst).with_variant(self.solver.into());
        if let Some(tol) = self.tol {
            scfg.tol_inner = tol;
        }
        scfg.validate()?;
        let mut cfg = DwsConfig::for_instance(inst, &scfg);
        if let Some(tau) = self.tau {
            cfg.tau = tau;
        }
        if let Some(p0) = self.p0 {
            cfg.p0 = p0;
        }
        if let Some(h) = self.h {
            cfg.h = h;
        }
        if let Some(m) = self.max_outer {
            cfg.max_outer = m;
        }
        cfg.validate(inst.n(), inst.k())?;
        Ok((cfg, scfg))
    }
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "dws")]
    strategy: String,
    /// Trace CSV path.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Summary JSON path (stdout when omitted).
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Write the final iterate as a solution file.
    #[arg(long)]
    x_out: Option<PathBuf>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct CertifyArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    x: PathBuf,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// JSON path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    gen: GeneratorArgs,
    #[arg(long, default_value_t = 0)]
    seed_start: u64,
    /// Number of consecutive seeds.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// Comma-separated strategies.
    #[arg(long, value_delimiter = ',', default_value = "dws,doubling")]
    strategies: Vec<String>,
    /// Combined trace CSV (strategy and seed columns, then the trace schema).
    #[arg(long)]
    out: PathBuf,
    /// JSON array of run summaries.
    #[arg(long)]
    summary: Option<PathBuf>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Coordinate KKT tolerance (default 1e-12·(1 + ‖Aᵗb‖_∞)).
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Debug, Serialize)]
struct RunSummary {
    strategy: StrategyKind,
    seed: u64,
    n: usize,
    s: usize,
    k: usize,
    eta: f64,
    outer_iterations: usize,
    tau_sum: usize,
    max_ws: usize,
    final_supp: usize,
    final_objective: f64,
    wall_seconds: f64,
    certificate_max_violation: f64,
    terminated: bool,
    truncated: bool,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Self { code: 1, msg: msg.into() }
    }
}

impl From<dws_core::Error> for Failure {
    fn from(e: dws_core::Error) -> Self {
        let code = if e.is_numerical() { 2 } else { 1 };
        Self { code, msg: e.to_string() }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Self::usage(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Self::usage(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Self::usage(e.to_string())
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn trace_fields(t: &TraceRecord<f64>) -> [String; 8] {
    [
        t.r.to_string(),
        t.ws_size.to_string(),
        t.supp_size.to_string(),
        t.e_size.to_string(),
        t.tau_next.to_string(),
        fmt_f64(t.objective),
        t.inner_iters.to_string(),
        fmt_f64(t.cum_seconds),
    ]
}

fn write_trace(path: &Path, trace: &[TraceRecord<f64>]) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRACE_HEADER)?;
    for t in trace {
        w.write_record(trace_fields(t))?;
    }
    w.flush()?;
    Ok(())
}

fn emit_json<S: Serialize>(value: &S, out: Option<&Path>) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => fs::write(p, text + "\n")?,
        None => {
            let mut stdout = io::stdout().lock();
            writeln!(stdout, "{text}")?;
        }
    }
    Ok(())
}

fn parse_strategy(s: &str) -> Result<StrategyKind, Failure> {
    s.parse().map_err(Failure::from)
}

fn run_one(
    kind: StrategyKind,
    inst: &Instance,
    cfg: &DwsConfig,
    scfg: &SolverConfig,
) -> Result<(RunOutput<f64>, RunSummary), Failure> {
    let start = Instant::now();
    let out = dws_core::strategies::run_strategy(kind, inst, cfg, scfg)?;
    let wall_seconds = start.elapsed().as_secs_f64();
    let cert = check_global(inst, &out.x, scfg.tol_inner)?;
    let summary = RunSummary {
        strategy: kind,
        seed: inst.seed,
        n: inst.n(),
        s: inst.s,
        k: inst.k(),
        eta: inst.eta,
        outer_iterations: out.outer_iterations(),
        tau_sum: out.tau_sum(),
        max_ws: out.max_ws(),
        final_supp: out.final_support(),
        final_objective: inst.objective(&out.x)?,
        wall_seconds,
        certificate_max_violation: cert.max_violation,
        terminated: out.terminated,
        truncated: out.truncated,
    };
    if out.truncated {
        eprintln!(
            "warning: {kind} on seed {} stopped at max_outer = {}",
            inst.seed, cfg.max_outer
        );
    }
    Ok((out, summary))
}

fn cmd_gen(args: GenArgs) -> Result<(), Failure> {
    let inst = instance::generate(&args.gen.config(args.seed))?;
    instance::write_instance(&args.out, &inst)?;
    Ok(())
}

fn cmd_solve(args: SolveArgs) -> Result<(), Failure> {
    let kind = parse_strategy(&args.strategy)?;
    let inst = instance::read_instance(&args.input)?;
    let (cfg, scfg) = args.run.configs(&inst)?;
    let (out, summary) = run_one(kind, &inst, &cfg, &scfg)?;
    if let Some(p) = &args.trace {
        write_trace(p, &out.trace)?;
    }
    if let Some(p) = &args.x_out {
        instance::write_solution(p, &out.x)?;
    }
    emit_json(&summary, args.summary.as_deref())
}

fn cmd_certify(args: CertifyArgs) -> Result<(), Failure> {
    let inst = instance::read_instance(&args.input)?;
    let x = instance::read_solution(&args.x)?;
    let cert = check_global(&inst, &x, args.tol)?;
    emit_json(&cert, args.out.as_deref())
}

fn cmd_oracle(args: OracleArgs) -> Result<(), Failure> {
    let inst = instance::read_instance(&args.input)?;
    let tol = args
        .tol
        .unwrap_or_else(|| 1e-12 * (1.0 + linalg::norm_inf(&inst.atb())));
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Failure::usage("--tol must be positive"));
    }
    let x = solver::solve_full_oracle(&inst, tol)?;
    instance::write_solution(&args.out, &x)?;
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), Failure> {
    let kinds = args
        .strategies
        .iter()
        .map(|s| parse_strategy(s))
        .collect::<Result<Vec<_>, _>>()?;
    if kinds.is_empty() || args.seeds == 0 {
        return Err(Failure::usage("need at least one seed and one strategy"));
    }
    let seeds: Vec<u64> = (0..args.seeds).map(|i| args.seed_start + i).collect();
    let instances = seeds
        .par_iter()
        .map(|&seed| Ok(instance::generate(&args.gen.config(seed))?))
        .collect::<Result<Vec<Instance>, Failure>>()?;

    let cells: Vec<(usize, StrategyKind)> = (0..instances.len())
        .flat_map(|i| kinds.iter().map(move |&k| (i, k)))
        .collect();
    let mut results = cells
        .par_iter()
        .map(|&(i, kind)| {
            let inst = &instances[i];
            let (cfg, scfg) = args.run.configs(inst)?;
            run_one(kind, inst, &cfg, &scfg)
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    results.sort_by_key(|(_, s)| (s.seed, s.strategy));

    let mut w = csv::Writer::from_path(&args.out)?;
    let mut header = vec!["strategy", "seed"];
    header.extend(TRACE_HEADER);
    w.write_record(&header)?;
    for (out, summary) in &results {
        for t in &out.trace {
            let mut row = vec![summary.strategy.to_string(), summary.seed.to_string()];
            row.extend(trace_fields(t));
            w.write_record(&row)?;
        }
    }
    w.flush()?;

    if let Some(p) = &args.summary {
        let summaries: Vec<&RunSummary> = results.iter().map(|(_, s)| s).collect();
        emit_json(&summaries, Some(p))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let res = match cli.cmd {
        Command::Gen(a) => cmd_gen(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Certify(a) => cmd_certify(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Oracle(a) => cmd_oracle(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
