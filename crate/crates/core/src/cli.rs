//! Command-line driver: `run`, `sweep`, `fit` and `table1`.
//!
//! Exit codes: 0 on success, 1 on runtime errors, 2 on usage errors.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::analysis::{
    fit_exponential_with, fit_linear, scaling_check, write_collapse_report, write_fit_report,
    FitWindow, MIN_FAILURES, TAIL_MAX_P,
};
use crate::config::{parse_checkpoints, ConfigBuilder, SimConfig, Strategy};
use crate::ensemble::{
    read_curve_csv, run_ensemble_tally, write_curve, write_eta, EtaEstimate, FailureCurve,
    THREADS_ENV,
};
use crate::error::Error;
use crate::model::TopologyKind;

/// Reference value of η measured with human groups on the pentagon.
pub const EXPERIMENTAL_ETA: f64 = 0.23;

const TABLE1_BETAS: [f64; 3] = [0.1, 0.3, 0.5];

#[derive(Debug, Parser)]
#[command(name = "consensus-cards", version, about = "Simulate and analyze the common-card group task")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one ensemble and write its failure curve.
    Run(RunArgs),
    /// Run one ensemble per value of a swept parameter.
    Sweep(SweepArgs),
    /// Fit exponential tails to failure-curve CSVs.
    Fit(FitArgs),
    /// Compute the η grid on the pentagon.
    Table1(Table1Args),
}

#[derive(Debug, Args)]
struct SimArgs {
    /// Key-value config file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    c: Option<usize>,
    #[arg(long, value_parser = ["uniform", "topc", "gibbs"])]
    strategy: Option<String>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, value_parser = ["complete", "cycle"])]
    topology: Option<String>,
    #[arg(long)]
    runs: Option<u64>,
    #[arg(long)]
    tau_max: Option<u64>,
    /// Comma list of times and `start:stop:step` ranges.
    #[arg(long)]
    checkpoints: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    enum_cap: Option<u64>,
    /// Step every interaction instead of skipping ahead.
    #[arg(long)]
    no_fast_forward: bool,
    /// Worker threads; 0 uses every core.
    #[arg(long, env = THREADS_ENV, default_value_t = 0)]
    threads: usize,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    sim: SimArgs,
    /// Also write η at `--eta-tau` (default: the last checkpoint).
    #[arg(long)]
    eta: bool,
    #[arg(long, requires = "eta")]
    eta_tau: Option<u64>,
    /// Curve CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// η CSV path; defaults to `<out stem>_eta.csv`, or stdout.
    #[arg(long, requires = "eta")]
    eta_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Axis {
    C,
    N,
    Beta,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long, value_enum)]
    axis: Axis,
    /// Comma list. Integer axes also take `start:stop:step`; the beta axis
    /// takes `uniform` and `topc` for the two limits.
    #[arg(long, allow_hyphen_values = true)]
    values: String,
    /// With `--axis n`, set C to round(ratio·N) instead of a fixed C.
    #[arg(long)]
    c_ratio: Option<f64>,
    #[arg(long)]
    eta: bool,
    #[arg(long, requires = "eta")]
    eta_tau: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Failure-curve CSVs; each may hold several curves.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Also compare τ_c against the scaling function.
    #[arg(long)]
    scaling: bool,
    /// Also fit τ_c linearly against N.
    #[arg(long)]
    linear: bool,
    #[arg(long, default_value_t = TAIL_MAX_P)]
    max_p: f64,
    #[arg(long, default_value_t = MIN_FAILURES)]
    min_failures: u64,
    #[arg(long, default_value_t = 0)]
    tau_min: u64,
    #[arg(long)]
    tau_max: Option<u64>,
    /// Fit report path; extra reports go next to it. Stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Table1Args {
    #[arg(long, default_value_t = 5)]
    n: usize,
    #[arg(long, value_parser = ["complete", "cycle"], default_value = "cycle")]
    topology: String,
    #[arg(long, default_value_t = 10_000)]
    tau: u64,
    #[arg(long, default_value_t = crate::config::DEFAULT_RUNS)]
    runs: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    no_fast_forward: bool,
    #[arg(long, env = THREADS_ENV, default_value_t = 0)]
    threads: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

/// Errors raised while turning flags into a config are usage errors.
fn usage(e: Error) -> Failure {
    match e {
        Error::InvalidConfig(m)
        | Error::InvalidSize(m)
        | Error::InvalidTopology(m)
        | Error::InvalidArgument(m) => Failure::Usage(m),
        other => Failure::Runtime(other),
    }
}

pub fn main() -> i32 {
    run(std::env::args_os())
}

/// Parses `args` (including the program name) and executes the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Table1(a) => cmd_table1(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            eprintln!("run with --help for usage");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

impl SimArgs {
    fn builder(&self) -> Result<ConfigBuilder, Failure> {
        let base = match &self.config {
            Some(path) => ConfigBuilder::load(path).map_err(|e| match e {
                Error::File { .. } => Failure::Runtime(e),
                other => usage(other),
            })?,
            None => ConfigBuilder::default(),
        };
        let checkpoints = match &self.checkpoints {
            Some(spec) => Some(parse_checkpoints(spec).map_err(usage)?),
            None => None,
        };
        let topology = match &self.topology {
            Some(t) => Some(t.parse::<TopologyKind>().map_err(usage)?),
            None => None,
        };
        let flags = ConfigBuilder {
            n: self.n,
            c: self.c,
            strategy: self.strategy.clone(),
            beta: self.beta,
            topology,
            tau_max: self.tau_max,
            checkpoints,
            seed: self.seed,
            runs: self.runs,
            enum_cap: self.enum_cap,
            fast_forward: self.no_fast_forward.then_some(false),
        };
        Ok(base.merge(flags))
    }
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|source| Error::File {
            path: p.to_path_buf(),
            source,
        })?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn finish(mut w: Box<dyn Write>, path: Option<&Path>) -> Result<(), Failure> {
    w.flush().map_err(|source| {
        Failure::Runtime(Error::File {
            path: path.map(Path::to_path_buf).unwrap_or_else(|| "<stdout>".into()),
            source,
        })
    })
}

/// `<dir>/<stem><suffix>.csv` next to `path`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}{suffix}.csv"))
}

fn eta_time(config: &SimConfig, requested: Option<u64>) -> Result<u64, Failure> {
    let tau = requested.unwrap_or(config.tau_max);
    if !config.checkpoints.contains(&tau) {
        return Err(Failure::Usage(format!("eta time {tau} is not a checkpoint")));
    }
    Ok(tau)
}

/// Runs one ensemble, returning its curve and, if asked, η.
fn simulate(
    config: &SimConfig,
    threads: usize,
    eta_tau: Option<u64>,
) -> Result<(FailureCurve, Option<EtaEstimate>), Failure> {
    let started = Instant::now();
    let tally = run_ensemble_tally(config, threads)?;
    eprintln!(
        "{} N={} C={} {} runs={} in {:.1}s",
        config.topology,
        config.n,
        config.c,
        config.strategy,
        config.runs,
        started.elapsed().as_secs_f64()
    );
    let eta = match eta_tau {
        Some(tau) => Some(tally.eta(config, tau)?),
        None => None,
    };
    Ok((tally.curve(config), eta))
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let config = args.sim.builder()?.build().map_err(usage)?;
    let eta_tau = if args.eta { Some(eta_time(&config, args.eta_tau)?) } else { None };
    let (curve, eta) = simulate(&config, args.sim.threads, eta_tau)?;

    let out = args.out.as_deref();
    let mut w = open_out(out)?;
    write_curve(&[&curve], &mut w)?;
    if let Some(eta) = eta {
        match args.eta_out.clone().or_else(|| out.map(|p| sibling(p, "_eta"))) {
            Some(path) => {
                let mut ew = open_out(Some(&path))?;
                write_eta(&[eta], &mut ew)?;
                finish(ew, Some(&path))?;
            }
            None => {
                writeln!(w).map_err(|e| Error::File { path: "<stdout>".into(), source: e })?;
                write_eta(&[eta], &mut w)?;
            }
        }
    }
    finish(w, out)
}

enum SweepValue {
    Size(usize),
    Strategy(Strategy),
}

impl SweepValue {
    fn label(&self) -> String {
        match self {
            SweepValue::Size(v) => v.to_string(),
            SweepValue::Strategy(Strategy::Gibbs { beta }) => beta.to_string(),
            SweepValue::Strategy(s) => s.name().to_string(),
        }
    }
}

fn sweep_values(axis: Axis, spec: &str) -> Result<Vec<SweepValue>, Failure> {
    let values: Vec<SweepValue> = match axis {
        Axis::C | Axis::N => parse_checkpoints(spec)
            .map_err(|_| Failure::Usage(format!("invalid value list '{spec}'")))?
            .into_iter()
            .map(|v| SweepValue::Size(v as usize))
            .collect(),
        Axis::Beta => spec
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|item| match item {
                "uniform" => Ok(SweepValue::Strategy(Strategy::Uniform)),
                "topc" | "inf" => Ok(SweepValue::Strategy(Strategy::TopC)),
                _ => match item.parse::<f64>() {
                    Ok(beta) if beta.is_finite() && beta >= 0.0 => {
                        Ok(SweepValue::Strategy(Strategy::Gibbs { beta }))
                    }
                    _ => Err(Failure::Usage(format!("invalid beta '{item}'"))),
                },
            })
            .collect::<Result<_, _>>()?,
    };
    if values.is_empty() {
        return Err(Failure::Usage("the value list is empty".into()));
    }
    Ok(values)
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Failure> {
    let values = sweep_values(args.axis, &args.values)?;
    let base = args.sim.builder()?;
    if args.c_ratio.is_some() && args.axis != Axis::N {
        return Err(Failure::Usage("--c-ratio only applies to --axis n".into()));
    }

    // validate every point before any work starts
    let mut configs = Vec::with_capacity(values.len());
    for value in &values {
        let mut b = base.clone();
        match (args.axis, value) {
            (Axis::C, SweepValue::Size(c)) => b.c = Some(*c),
            (Axis::N, SweepValue::Size(n)) => {
                b.n = Some(*n);
                match args.c_ratio {
                    Some(r) => b.c = Some((r * *n as f64).round() as usize),
                    None if base.c.is_none() => b.c = Some(*n),
                    None => {}
                }
            }
            (Axis::Beta, SweepValue::Strategy(s)) => {
                b.strategy = Some(s.name().to_string());
                b.beta = s.beta();
            }
            _ => unreachable!("values are parsed per axis"),
        }
        configs.push(b.build().map_err(usage)?);
    }
    let eta_taus = if args.eta {
        configs
            .iter()
            .map(|c| eta_time(c, args.eta_tau).map(Some))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        vec![None; configs.len()]
    };

    fs::create_dir_all(&args.out_dir).map_err(|source| Error::File {
        path: args.out_dir.clone(),
        source,
    })?;
    let axis = match args.axis {
        Axis::C => "c",
        Axis::N => "n",
        Axis::Beta => "beta",
    };
    let mut curves = Vec::new();
    let mut etas = Vec::new();
    for ((config, value), eta_tau) in configs.iter().zip(&values).zip(eta_taus) {
        let (curve, eta) = simulate(config, args.sim.threads, eta_tau)?;
        let path = args.out_dir.join(format!("{axis}_{}.csv", value.label()));
        let mut w = open_out(Some(&path))?;
        write_curve(&[&curve], &mut w)?;
        finish(w, Some(&path))?;
        curves.push(curve);
        etas.extend(eta);
    }

    let path = args.out_dir.join("summary.csv");
    let mut w = open_out(Some(&path))?;
    write_curve(&curves.iter().collect::<Vec<_>>(), &mut w)?;
    finish(w, Some(&path))?;
    if args.eta {
        let path = args.out_dir.join("eta.csv");
        let mut w = open_out(Some(&path))?;
        write_eta(&etas, &mut w)?;
        finish(w, Some(&path))?;
    }
    Ok(())
}

fn io_err(path: Option<&Path>) -> impl Fn(io::Error) -> Failure + '_ {
    move |source| {
        Failure::Runtime(Error::File {
            path: path.map(Path::to_path_buf).unwrap_or_else(|| "<stdout>".into()),
            source,
        })
    }
}

fn cmd_fit(args: FitArgs) -> Result<(), Failure> {
    if !(args.max_p > 0.0 && args.max_p <= 1.0) {
        return Err(Failure::Usage(format!("--max-p must lie in (0, 1], got {}", args.max_p)));
    }
    let window = FitWindow {
        tau_min: args.tau_min,
        tau_max: args.tau_max.unwrap_or(u64::MAX),
        max_p: args.max_p,
        min_failures: args.min_failures,
    };
    let mut fits = Vec::new();
    for path in &args.input {
        for curve in read_curve_csv(path)? {
            let fit = fit_exponential_with(&curve, &window).map_err(|e| match e {
                Error::InsufficientData(m) => Failure::Runtime(Error::InsufficientData(format!(
                    "{}: N={} C={} {}: {m}",
                    path.display(),
                    curve.fingerprint.n,
                    curve.fingerprint.c,
                    curve.fingerprint.strategy
                ))),
                other => Failure::Runtime(other),
            })?;
            fits.push((curve.fingerprint.clone(), fit));
        }
    }

    let out = args.out.as_deref();
    let mut w = open_out(out)?;
    write_fit_report(&fits, &mut w)?;
    if args.scaling {
        let table: Vec<_> = fits.iter().map(|(f, r)| (f.n, f.c, r.tau_c)).collect();
        let report = scaling_check(&table)?;
        section(out, "_collapse", &mut w, |w| write_collapse_report(&report, w))?;
    }
    if args.linear {
        let points: Vec<_> = fits.iter().map(|(f, r)| (f.n as f64, r.tau_c)).collect();
        let line = fit_linear(&points)?;
        section(out, "_linear", &mut w, |w| {
            let mut cw = csv::Writer::from_writer(w);
            cw.write_record(["intercept", "slope", "residual"])?;
            cw.write_record([
                line.intercept.to_string(),
                line.slope.to_string(),
                line.residual.to_string(),
            ])?;
            cw.flush().map_err(|e| Error::Csv(e.into()))
        })?;
    }
    finish(w, out)
}

/// Writes an extra report next to `out`, or after a blank line on stdout.
fn section(
    out: Option<&Path>,
    suffix: &str,
    main: &mut Box<dyn Write>,
    body: impl FnOnce(&mut dyn Write) -> crate::error::Result<()>,
) -> Result<(), Failure> {
    match out {
        Some(p) => {
            let path = sibling(p, suffix);
            let mut w = open_out(Some(&path))?;
            body(&mut w)?;
            finish(w, Some(&path))
        }
        None => {
            writeln!(main).map_err(io_err(None))?;
            body(main)?;
            Ok(())
        }
    }
}

/// The η grid: rows C = 1..=N, columns uniform, the Gibbs temperatures, top-C.
fn table1_strategies() -> Vec<Strategy> {
    let mut s = vec![Strategy::Uniform];
    s.extend(TABLE1_BETAS.iter().map(|&beta| Strategy::Gibbs { beta }));
    s.push(Strategy::TopC);
    s
}

fn cmd_table1(args: Table1Args) -> Result<(), Failure> {
    let topology = args.topology.parse::<TopologyKind>().map_err(usage)?;
    let mut configs = Vec::new();
    for c in 1..=args.n {
        for strategy in table1_strategies() {
            let config = SimConfig {
                n: args.n,
                c,
                strategy,
                topology,
                tau_max: args.tau,
                checkpoints: vec![args.tau],
                master_seed: args.seed,
                runs: args.runs,
                enum_cap: crate::config::DEFAULT_ENUM_CAP,
                fast_forward: !args.no_fast_forward,
            };
            config.validate().map_err(usage)?;
            configs.push(config);
        }
    }
    let mut etas = Vec::with_capacity(configs.len());
    for config in &configs {
        let (_, eta) = simulate(config, args.threads, Some(args.tau))?;
        etas.extend(eta);
    }

    let out = args.out.as_deref();
    let mut w = open_out(out)?;
    writeln!(w, "# experimental eta = {EXPERIMENTAL_ETA}").map_err(io_err(out))?;
    write_eta(&etas, &mut w)?;
    finish(w, out)
}
