//! `lro`: likelihood-ratio order tests from the command line.
//!
//! Exit codes: 0 success, 1 malformed input or arguments, 2 degenerate
//! data, 3 solver failure.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lro::chibar::{h_matrix, weights_closed_form, weights_monte_carlo, HMatrix, WeightMethod};
use lro::hypothesis::DEFAULT_LAMBDAS;
use lro::simulation::{
    dale_distance, dale_filter, estimate_size_power, relative_efficiency, Design, PowerEstimate, Progress, Scenario,
    Statistic, DALE_E,
};
use lro::{
    parse_table, wilcoxon_midrank, Analysis, AnalysisOptions, ContingencyTable, Family, PowerDivergenceIndex, Sided,
    SolverOptions, TestReport, WeightOptions,
};
use serde::Serialize;
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "lro", version, about = "Likelihood-ratio order tests for 2xJ ordinal tables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Test a table for likelihood-ratio ordering.
    Analyze(AnalyzeArgs),
    /// Print the H matrix and chi-bar-squared weights.
    Weights(WeightsArgs),
    /// Estimate size and power by simulation.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
struct TableSource {
    /// CSV (two rows) or JSON (`{"counts": [[..], [..]]}`) file.
    input: Option<PathBuf>,
    /// Inline table, rows separated by `;`, e.g. "11,8,8,5;6,4,10,12".
    #[arg(long = "table", conflicts_with = "input")]
    inline: Option<String>,
}

impl TableSource {
    fn is_given(&self) -> bool {
        self.input.is_some() || self.inline.is_some()
    }

    fn load(&self) -> Result<ContingencyTable> {
        let text = match (&self.input, &self.inline) {
            (Some(path), _) => {
                std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?
            }
            (None, Some(s)) => s.replace(';', "\n"),
            (None, None) => bail!(Usage("no table given: pass a file or --table".into())),
        };
        Ok(parse_table(&text)?)
    }
}

#[derive(Args, Debug, Clone, Copy, Serialize)]
struct SolverArgs {
    #[arg(long, default_value_t = 1e-8)]
    kkt_tol: f64,
    #[arg(long, default_value_t = 1e-8)]
    feas_tol: f64,
    #[arg(long, default_value_t = 250)]
    max_iter: usize,
    /// Pseudo-count for empty cells.
    #[arg(long, default_value_t = 1e-5)]
    zero_eps: f64,
}

impl From<SolverArgs> for SolverOptions {
    fn from(a: SolverArgs) -> Self {
        SolverOptions {
            kkt_tol: a.kkt_tol,
            feas_tol: a.feas_tol,
            max_iter: a.max_iter,
            zero_cell_eps: a.zero_eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum MethodArg {
    Auto,
    Closed,
    Mc,
}

impl MethodArg {
    fn method(self) -> Option<WeightMethod> {
        match self {
            MethodArg::Auto => None,
            MethodArg::Closed => Some(WeightMethod::ClosedForm),
            MethodArg::Mc => Some(WeightMethod::MonteCarlo),
        }
    }
}

#[derive(Args, Debug, Clone, Copy, Serialize)]
struct WeightArgs {
    /// Weight computation; `auto` uses the closed form when J <= 4.
    #[arg(long = "weights", value_enum, default_value_t = MethodArg::Auto)]
    method: MethodArg,
    /// Monte Carlo draws per orthant (accepts forms like 1e6).
    #[arg(long, value_parser = parse_count, default_value = "1000000")]
    mc_reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl From<WeightArgs> for WeightOptions {
    fn from(a: WeightArgs) -> Self {
        WeightOptions {
            method: a.method.method(),
            mc_reps: a.mc_reps,
            seed: a.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum FamilyArg {
    T,
    S,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum SidedArg {
    One,
    Two,
    Both,
    None,
}

impl SidedArg {
    fn sides(self) -> Vec<Sided> {
        match self {
            SidedArg::One => vec![Sided::One],
            SidedArg::Two => vec![Sided::Two],
            SidedArg::Both => vec![Sided::One, Sided::Two],
            SidedArg::None => vec![],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Table,
}

#[derive(Args, Debug, Clone, Serialize)]
struct AnalyzeArgs {
    #[command(flatten)]
    source: TableSource,
    /// Comma-separated power-divergence indices.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, value_parser = parse_lambda)]
    lambda: Vec<f64>,
    #[arg(long, value_enum, default_value_t = FamilyArg::Both)]
    family: FamilyArg,
    #[arg(long, value_enum, default_value_t = SidedArg::One)]
    wilcoxon: SidedArg,
    #[command(flatten)]
    weights: WeightArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Args, Debug, Clone, Serialize)]
struct WeightsArgs {
    #[command(flatten)]
    source: TableSource,
    /// Category probabilities, used instead of a table.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["input", "inline"])]
    pi: Option<Vec<f64>>,
    /// Sampling fraction of row 1 (with --pi).
    #[arg(long, default_value_t = 0.5)]
    nu1: f64,
    #[arg(long = "method", value_enum, default_value_t = MethodArg::Auto)]
    method: MethodArg,
    #[arg(long, value_parser = parse_count, default_value = "1000000")]
    mc_reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    zero_eps: f64,
}

#[derive(Args, Debug, Clone, Serialize)]
struct SimulateArgs {
    /// Standard scenario A..G, or `custom` with --n1/--n2.
    #[arg(long, default_value = "D")]
    scenario: String,
    #[arg(long)]
    n1: Option<u64>,
    #[arg(long)]
    n2: Option<u64>,
    /// Shift of the one-parameter design; 0 gives the null.
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    /// Categories of the one-parameter design.
    #[arg(long, default_value_t = 3)]
    j: usize,
    /// Row-1 probabilities under the alternative (explicit design).
    #[arg(long, value_delimiter = ',', requires = "pi2")]
    pi1: Option<Vec<f64>>,
    /// Row-2 probabilities under the alternative (explicit design).
    #[arg(long, value_delimiter = ',', requires = "pi1")]
    pi2: Option<Vec<f64>>,
    /// Common row probabilities under the null (explicit design).
    #[arg(long, value_delimiter = ',')]
    null_pi: Option<Vec<f64>>,
    #[arg(long, value_parser = parse_count, default_value = "25000")]
    reps: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// λ grid as start:end:step; defaults to the nine standard indices.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "lambda")]
    lambda_grid: Option<String>,
    /// Explicit comma-separated λ list.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, value_parser = parse_lambda)]
    lambda: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    solver: SolverArgs,
    /// JSON-lines output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Marker for argument errors that should exit with code 1.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// Marker for runs that finished but with a non-converged fit.
#[derive(Debug)]
struct SolverFailure;

impl std::fmt::Display for SolverFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("restricted fit did not converge")
    }
}

impl std::error::Error for SolverFailure {}

fn parse_count(s: &str) -> Result<usize, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("not a number: {s:?}"))?;
    if v < 0.0 || v.fract() != 0.0 || v > 1e15 {
        return Err(format!("expected a nonnegative whole number, got {s:?}"));
    }
    Ok(v as usize)
}

fn parse_lambda(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.parse().map_err(|_| format!("bad lambda {s:?}"))?;
            let b: f64 = b.parse().map_err(|_| format!("bad lambda {s:?}"))?;
            a / b
        }
        None => s.parse().map_err(|_| format!("bad lambda {s:?}"))?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("bad lambda {s:?}"))
    }
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let [a, b, step] = parts[..] else {
        bail!(Usage(format!("--lambda-grid expects start:end:step, got {s:?}")));
    };
    let num = |x: &str| parse_lambda(x).map_err(|e| anyhow::anyhow!(Usage(e)));
    let (a, b, step) = (num(a)?, num(b)?, num(step)?);
    if !(step > 0.0) || b < a {
        bail!(Usage(format!("--lambda-grid needs start <= end and step > 0, got {s:?}")));
    }
    let n = ((b - a) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| a + i as f64 * step).collect())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<SolverFailure>().is_some() {
        return 3;
    }
    if err.downcast_ref::<Usage>().is_some() || err.downcast_ref::<io::Error>().is_some() {
        return 1;
    }
    match err.downcast_ref::<lro::Error>() {
        Some(lro::Error::Degenerate(_) | lro::Error::Saturation(_) | lro::Error::UndefinedEfficiency) => 2,
        Some(
            lro::Error::NumericalRank(_) | lro::Error::OracleInconsistency(_) | lro::Error::TooManyFailures { .. },
        ) => 3,
        _ => 1,
    }
}

fn analyze(args: &AnalyzeArgs) -> Result<()> {
    let table = args.source.load()?;
    let options = AnalysisOptions {
        solver: args.solver.into(),
        weights: args.weights.into(),
    };
    let lambdas = if args.lambda.is_empty() {
        DEFAULT_LAMBDAS.to_vec()
    } else {
        args.lambda.clone()
    };
    let families: &[Family] = match args.family {
        FamilyArg::T => &[Family::T],
        FamilyArg::S => &[Family::S],
        FamilyArg::Both => &[Family::T, Family::S],
    };
    let analysis = Analysis::new(&table, &options)?;
    let mut reports: Vec<TestReport> = Vec::new();
    for &l in &lambdas {
        for &f in families {
            reports.push(analysis.report(f, PowerDivergenceIndex(l))?);
        }
    }
    let mut wilcoxon = Vec::new();
    for side in args.wilcoxon.sides() {
        match wilcoxon_midrank(&table, side) {
            Ok(r) => wilcoxon.push(r),
            Err(lro::Error::Degenerate(msg)) => eprintln!("warning: Wilcoxon test skipped: {msg}"),
            Err(e) => return Err(e.into()),
        }
    }
    let config = json!({
        "command": "analyze",
        "version": env!("CARGO_PKG_VERSION"),
        "args": args,
        "lambdas": lambdas,
        "options": options,
    });

    let stdout = io::stdout();
    let mut out = stdout.lock();
    match args.format {
        Format::Json => {
            let doc = json!({
                "config": config,
                "weights": analysis.weights,
                "reports": reports,
                "wilcoxon": wilcoxon,
            });
            serde_json::to_writer_pretty(&mut out, &doc)?;
            writeln!(out)?;
        }
        Format::Table => write_table(&mut out, &config, &analysis, &lambdas, families, &wilcoxon)?,
    }
    if !analysis.fit_restricted.converged {
        return Err(SolverFailure.into());
    }
    Ok(())
}

fn fmt_p(p: Option<f64>) -> String {
    p.map_or_else(|| "n/a".to_string(), |p| format!("{p:.4}"))
}

fn write_table(
    out: &mut impl Write,
    config: &serde_json::Value,
    analysis: &Analysis,
    lambdas: &[f64],
    families: &[Family],
    wilcoxon: &[TestReport],
) -> Result<()> {
    writeln!(out, "# config: {config}")?;
    let t = &analysis.table;
    writeln!(out, "# table: {:?} / {:?}", t.row(0), t.row(1))?;
    writeln!(out, "# weights: {:.4?} ({:?})", analysis.weights.w, analysis.weights.method)?;
    writeln!(out, "# active set: {:?}", analysis.fit_restricted.active_set)?;
    let converged = analysis.fit_restricted.converged;
    let mut header = format!("{:>10}", "lambda");
    for f in families {
        header += &format!("  {:>10}  {:>8}", format!("{f:?}_lambda"), format!("p({f:?})"));
    }
    writeln!(out, "{header}")?;
    for &l in lambdas {
        let mut line = format!("{l:>10.4}");
        for &f in families {
            let s = analysis.statistic(f, PowerDivergenceIndex(l))?;
            let p = converged.then(|| analysis.pvalue(s));
            line += &format!("  {s:>10.4}  {:>8}", fmt_p(p));
        }
        writeln!(out, "{line}")?;
    }
    for r in wilcoxon {
        let w = r.diagnostics.wilcoxon.expect("wilcoxon details");
        let side = match r.diagnostics.sided {
            Some(Sided::Two) => "two-sided",
            _ => "one-sided",
        };
        writeln!(
            out,
            "Wilcoxon mid-rank: W = {}  z = {:.4}  p ({side}) = {:.5}",
            w.w,
            w.z,
            r.pvalue.unwrap_or(f64::NAN)
        )?;
    }
    if !converged {
        writeln!(out, "# restricted fit did not converge; p-values withheld")?;
    }
    Ok(())
}

fn weights(args: &WeightsArgs) -> Result<()> {
    let h: HMatrix = match (&args.pi, args.source.is_given()) {
        (Some(pi), _) => h_matrix(pi, args.nu1, 1.0 - args.nu1)?,
        (None, true) => HMatrix::from_table(&args.source.load()?, args.zero_eps)?,
        (None, false) => bail!(Usage("pass a table or --pi".into())),
    };
    let j = h.dim() + 1;
    let method = args.method.method().unwrap_or(if j <= 4 {
        WeightMethod::ClosedForm
    } else {
        WeightMethod::MonteCarlo
    });
    let w = match method {
        WeightMethod::ClosedForm => weights_closed_form(&h)?,
        WeightMethod::MonteCarlo => weights_monte_carlo(&h, args.mc_reps, args.seed)?,
    };
    let doc = json!({
        "config": { "command": "weights", "version": env!("CARGO_PKG_VERSION"), "args": args },
        "h": h,
        "weights": w,
    });
    let stdout = io::stdout();
    let mut out = stdout.lock();
    serde_json::to_writer_pretty(&mut out, &doc)?;
    writeln!(out)?;
    Ok(())
}

fn build_scenarios(args: &SimulateArgs) -> Result<(Option<Scenario>, Option<Scenario>)> {
    let (name, n1, n2) = if args.scenario.eq_ignore_ascii_case("custom") {
        match (args.n1, args.n2) {
            (Some(a), Some(b)) => ("custom".to_string(), a, b),
            _ => bail!(Usage("--scenario custom needs --n1 and --n2".into())),
        }
    } else {
        if args.n1.is_some() || args.n2.is_some() {
            bail!(Usage("--n1/--n2 only apply to --scenario custom".into()));
        }
        let s = Scenario::standard(&args.scenario, 0.0, 1, 0.5, 0).map_err(|e| Usage(e.to_string()))?;
        (s.name, s.n1, s.n2)
    };
    let make = |design| Scenario {
        name: name.clone(),
        n1,
        n2,
        design,
        reps: args.reps,
        alpha: args.alpha,
        seed: args.seed,
    };
    let (size, power) = match (&args.pi1, &args.pi2) {
        (Some(pi1), Some(pi2)) => {
            let size = args.null_pi.as_ref().map(|pi| {
                make(Design::Explicit {
                    pi1: pi.clone(),
                    pi2: pi.clone(),
                })
            });
            let power = make(Design::Explicit {
                pi1: pi1.clone(),
                pi2: pi2.clone(),
            });
            (size, Some(power))
        }
        _ => {
            if let Some(pi) = &args.null_pi {
                let s = make(Design::Explicit {
                    pi1: pi.clone(),
                    pi2: pi.clone(),
                });
                (Some(s), None)
            } else {
                let size = make(Design::Delta {
                    delta: 0.0,
                    categories: args.j,
                });
                let power = (args.delta > 0.0).then(|| {
                    make(Design::Delta {
                        delta: args.delta,
                        categories: args.j,
                    })
                });
                (Some(size), power)
            }
        }
    };
    for s in size.iter().chain(&power) {
        s.validate().map_err(|e| Usage(e.to_string()))?;
    }
    Ok((size, power))
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let (size, power) = build_scenarios(args)?;
    let categories = size.as_ref().or(power.as_ref()).expect("a run").categories();
    let lambdas = match &args.lambda_grid {
        Some(g) => parse_grid(g)?,
        None if !args.lambda.is_empty() => args.lambda.clone(),
        None => DEFAULT_LAMBDAS.to_vec(),
    };
    let mut stats: Vec<Statistic> = Vec::new();
    for &l in &lambdas {
        stats.push(Statistic::T(l));
        stats.push(Statistic::S(l));
    }
    for base in [Statistic::T(0.0), Statistic::S(1.0)] {
        if !stats.contains(&base) {
            stats.push(base);
        }
    }
    stats.push(Statistic::Wilcoxon(Sided::One));
    stats.push(Statistic::Wilcoxon(Sided::Two));
    if categories == 2 {
        stats.extend([Statistic::G2, Statistic::Gbar2, Statistic::Gtilde2]);
    }
    let options = AnalysisOptions {
        solver: args.solver.into(),
        weights: WeightOptions::default(),
    };

    let sink: Box<dyn Write + Send> = match &args.out {
        Some(p) => Box::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?),
        None => Box::new(io::stdout()),
    };
    let out = std::sync::Mutex::new(BufWriter::new(sink));
    let emit = |v: serde_json::Value| -> io::Result<()> {
        let mut w = out.lock().expect("output lock");
        serde_json::to_writer(&mut *w, &v)?;
        writeln!(w)?;
        w.flush()
    };
    emit(json!({
        "type": "config",
        "version": env!("CARGO_PKG_VERSION"),
        "args": args,
        "statistics": stats,
        "size_scenario": size,
        "power_scenario": power,
        "options": options,
        "dale_e": DALE_E,
    }))?;

    let run = |s: &Scenario, phase: &'static str| -> Result<PowerEstimate> {
        let cb = |p: Progress| {
            let _ = emit(json!({"type": "progress", "phase": phase, "done": p.done, "total": p.total, "failures": p.failures}));
        };
        Ok(estimate_size_power(s, &stats, &options, Some(&cb))?)
    };
    let size_est = size.as_ref().map(|s| run(s, "size")).transpose()?;
    let power_est = power.as_ref().map(|s| run(s, "power")).transpose()?;

    let pair = |s: Statistic| -> Option<(f64, f64)> {
        Some((size_est.as_ref()?.rate(s)?, power_est.as_ref()?.rate(s)?))
    };
    for (i, &s) in stats.iter().enumerate() {
        let mut rec = json!({"type": "estimate", "statistic": s});
        if let Some(e) = &size_est {
            let a = e.estimates[i];
            rec["alpha_hat"] = json!(a.rate);
            rec["alpha_se"] = json!(a.mc_se);
            rec["dale_distance"] = json!(dale_distance(a.rate, args.alpha));
            rec["dale_pass"] = json!(dale_filter(a.rate, args.alpha, DALE_E));
        }
        if let Some(e) = &power_est {
            let b = e.estimates[i];
            rec["beta_hat"] = json!(b.rate);
            rec["beta_se"] = json!(b.mc_se);
        }
        if let Some(target) = pair(s) {
            for (key, base) in [("rho", Statistic::T(0.0)), ("rho_star", Statistic::S(1.0))] {
                let v = pair(base).and_then(|b| relative_efficiency(target, b).ok());
                rec[key] = json!(v);
            }
        }
        emit(rec)?;
    }
    let failures: usize = size_est.iter().chain(&power_est).map(|e| e.failures).sum();
    emit(json!({"type": "summary", "failures": failures}))?;
    Ok(())
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    if let Ok(v) = std::env::var("LRO_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Usage(format!("LRO_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot configure worker threads")?;
    }
    match &cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Weights(a) => weights(a),
        Command::Simulate(a) => simulate(a),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
