//! Seeded Monte Carlo ensembles, failure curves, and their CSV form.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;

use crate::config::{SimConfig, Strategy};
use crate::dynamics::Simulation;
use crate::error::{Error, Result};
use crate::model::TopologyKind;
use crate::seeding::run_seed;

pub const CURVE_HEADER: &str = "tau,failures,runs,p,se,n,c,strategy,beta,topology,seed";
pub const ETA_HEADER: &str = "tau_eval,eta,se,runs,n,c,strategy,beta,topology,seed";

/// Environment variable holding the default worker count.
pub const THREADS_ENV: &str = "CONSENSUS_CARDS_THREADS";

/// Identifies the ensemble a curve came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint {
    pub n: usize,
    pub c: usize,
    pub strategy: Strategy,
    pub topology: TopologyKind,
    pub seed: u64,
}

impl Fingerprint {
    pub fn of(config: &SimConfig) -> Self {
        Fingerprint {
            n: config.n,
            c: config.c,
            strategy: config.strategy,
            topology: config.topology,
            seed: config.master_seed,
        }
    }

    fn fields(&self) -> [String; 6] {
        [
            self.n.to_string(),
            self.c.to_string(),
            self.strategy.name().to_string(),
            self.strategy.beta_field(),
            self.topology.to_string(),
            self.seed.to_string(),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub tau: u64,
    pub failures: u64,
    pub runs: u64,
    pub p: f64,
    pub se: f64,
}

impl CurveRow {
    pub fn new(tau: u64, failures: u64, runs: u64) -> Self {
        let (p, se) = binomial_estimate(failures, runs);
        CurveRow { tau, failures, runs, p, se }
    }
}

/// `(k / n, sqrt(p (1 - p) / n))`.
pub fn binomial_estimate(successes: u64, trials: u64) -> (f64, f64) {
    let p = successes as f64 / trials as f64;
    (p, (p * (1.0 - p) / trials as f64).sqrt())
}

/// Estimated failure probability at each checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct FailureCurve {
    pub rows: Vec<CurveRow>,
    pub fingerprint: Fingerprint,
}

impl FailureCurve {
    pub fn row(&self, tau: u64) -> Option<&CurveRow> {
        self.rows.iter().find(|r| r.tau == tau)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EtaEstimate {
    pub tau_eval: u64,
    pub eta: f64,
    pub se: f64,
    pub runs: u64,
    pub fingerprint: Fingerprint,
}

/// Integer event counts per checkpoint over a set of runs.
///
/// Merging is plain addition, so any split of the run indices across workers
/// gives the same totals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tally {
    pub checkpoints: Vec<u64>,
    pub failures: Vec<u64>,
    pub any_error: Vec<u64>,
    pub runs: u64,
}

impl Tally {
    pub fn empty(checkpoints: &[u64]) -> Self {
        Tally {
            checkpoints: checkpoints.to_vec(),
            failures: vec![0; checkpoints.len()],
            any_error: vec![0; checkpoints.len()],
            runs: 0,
        }
    }

    pub fn merge(mut self, other: Tally) -> Tally {
        assert_eq!(self.checkpoints, other.checkpoints, "merging tallies of different checkpoints");
        for (a, b) in self.failures.iter_mut().zip(&other.failures) {
            *a += b;
        }
        for (a, b) in self.any_error.iter_mut().zip(&other.any_error) {
            *a += b;
        }
        self.runs += other.runs;
        self
    }

    fn add_run(&mut self, config: &SimConfig, run_index: u64) -> Result<()> {
        let mut sim = Simulation::new(config, run_seed(config.master_seed, run_index))?;
        let outcome = sim.run(config);
        for (i, record) in outcome.records.iter().enumerate() {
            self.failures[i] += u64::from(!record.group_correct);
            self.any_error[i] += u64::from(record.individual_errors > 0);
        }
        self.runs += 1;
        Ok(())
    }

    pub fn curve(&self, config: &SimConfig) -> FailureCurve {
        FailureCurve {
            rows: self
                .checkpoints
                .iter()
                .zip(&self.failures)
                .map(|(&tau, &k)| CurveRow::new(tau, k, self.runs))
                .collect(),
            fingerprint: Fingerprint::of(config),
        }
    }

    pub fn eta(&self, config: &SimConfig, tau_eval: u64) -> Result<EtaEstimate> {
        let i = self
            .checkpoints
            .iter()
            .position(|&t| t == tau_eval)
            .ok_or_else(|| {
                Error::InvalidArgument(format!("tau_eval {tau_eval} is not a checkpoint"))
            })?;
        let (eta, se) = binomial_estimate(self.any_error[i], self.runs);
        Ok(EtaEstimate {
            tau_eval,
            eta,
            se,
            runs: self.runs,
            fingerprint: Fingerprint::of(config),
        })
    }
}

/// Runs the given run indices of `config` on the current rayon pool.
pub fn run_tally(config: &SimConfig, runs: Range<u64>) -> Result<Tally> {
    config.validate()?;
    runs.into_par_iter()
        .try_fold(
            || Tally::empty(&config.checkpoints),
            |mut tally, index| {
                tally.add_run(config, index)?;
                Ok(tally)
            },
        )
        .try_reduce(|| Tally::empty(&config.checkpoints), |a, b| Ok(a.merge(b)))
}

/// Worker count from `CONSENSUS_CARDS_THREADS`, or 0 (rayon's default) when unset.
pub fn default_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(0)
}

/// Runs the full ensemble `0..config.runs` with `threads` workers (0 = all cores).
pub fn run_ensemble_tally(config: &SimConfig, threads: usize) -> Result<Tally> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| run_tally(config, 0..config.runs))
}

pub fn run_ensemble(config: &SimConfig) -> Result<FailureCurve> {
    run_ensemble_with(config, default_threads())
}

pub fn run_ensemble_with(config: &SimConfig, threads: usize) -> Result<FailureCurve> {
    Ok(run_ensemble_tally(config, threads)?.curve(config))
}

/// Fraction of runs in which at least one agent picks a wrong card at `tau_eval`.
pub fn estimate_eta(config: &SimConfig, tau_eval: u64) -> Result<EtaEstimate> {
    if !config.checkpoints.contains(&tau_eval) {
        return Err(Error::InvalidArgument(format!("tau_eval {tau_eval} is not a checkpoint")));
    }
    run_ensemble_tally(config, default_threads())?.eta(config, tau_eval)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| Error::File { path: path.to_path_buf(), source })
}

fn flush(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|source| Error::File { path: path.to_path_buf(), source })
}

pub fn write_curve<W: Write>(curves: &[&FailureCurve], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CURVE_HEADER.split(','))?;
    for curve in curves {
        let fp = curve.fingerprint.fields();
        for r in &curve.rows {
            let head = [
                r.tau.to_string(),
                r.failures.to_string(),
                r.runs.to_string(),
                r.p.to_string(),
                r.se.to_string(),
            ];
            w.write_record(head.iter().chain(fp.iter()))?;
        }
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn write_curve_csv(curve: &FailureCurve, path: &Path) -> Result<()> {
    let mut file = create(path)?;
    write_curve(&[curve], &mut file)?;
    flush(file, path)
}

pub fn write_eta<W: Write>(estimates: &[EtaEstimate], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ETA_HEADER.split(','))?;
    for e in estimates {
        let head = [
            e.tau_eval.to_string(),
            e.eta.to_string(),
            e.se.to_string(),
            e.runs.to_string(),
        ];
        w.write_record(head.iter().chain(e.fingerprint.fields().iter()))?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn write_eta_csv(estimates: &[EtaEstimate], path: &Path) -> Result<()> {
    let mut file = create(path)?;
    write_eta(estimates, &mut file)?;
    flush(file, path)
}

fn csv_reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input)
}

fn field<T: std::str::FromStr>(record: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    let raw = record.get(i).unwrap_or("");
    raw.parse().map_err(|_| {
        Error::InvalidArgument(format!(
            "line {}: invalid {name} '{raw}'",
            record.position().map(|p| p.line()).unwrap_or(0)
        ))
    })
}

fn parse_fingerprint(record: &csv::StringRecord, offset: usize) -> Result<Fingerprint> {
    let beta_raw = record.get(offset + 3).unwrap_or("");
    let beta = if beta_raw.is_empty() {
        None
    } else {
        Some(field(record, offset + 3, "beta")?)
    };
    Ok(Fingerprint {
        n: field(record, offset, "n")?,
        c: field(record, offset + 1, "c")?,
        strategy: Strategy::from_parts(record.get(offset + 2).unwrap_or(""), beta)?,
        topology: record.get(offset + 4).unwrap_or("").parse()?,
        seed: field(record, offset + 5, "seed")?,
    })
}

fn check_header<R: Read>(reader: &mut csv::Reader<R>, expected: &str) -> Result<()> {
    let header = reader.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != expected {
        return Err(Error::InvalidArgument(format!(
            "unexpected header '{header}', expected '{expected}'"
        )));
    }
    Ok(())
}

/// Reads curve CSV rows, grouping consecutive rows with the same fingerprint
/// into one curve.
pub fn read_curves<R: Read>(input: R) -> Result<Vec<FailureCurve>> {
    let mut reader = csv_reader(input);
    check_header(&mut reader, CURVE_HEADER)?;
    let mut curves: Vec<FailureCurve> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = CurveRow {
            tau: field(&record, 0, "tau")?,
            failures: field(&record, 1, "failures")?,
            runs: field(&record, 2, "runs")?,
            p: field(&record, 3, "p")?,
            se: field(&record, 4, "se")?,
        };
        let fingerprint = parse_fingerprint(&record, 5)?;
        match curves.last_mut() {
            Some(curve) if curve.fingerprint == fingerprint => curve.rows.push(row),
            _ => curves.push(FailureCurve { rows: vec![row], fingerprint }),
        }
    }
    Ok(curves)
}

pub fn read_curve_csv(path: &Path) -> Result<Vec<FailureCurve>> {
    let file = File::open(path).map_err(|source| Error::File { path: path.to_path_buf(), source })?;
    read_curves(file).map_err(|e| match e {
        Error::File { .. } => e,
        other => Error::Parse { path: path.to_path_buf(), message: other.to_string() },
    })
}

pub fn read_eta<R: Read>(input: R) -> Result<Vec<EtaEstimate>> {
    let mut reader = csv_reader(input);
    check_header(&mut reader, ETA_HEADER)?;
    reader
        .records()
        .map(|record| {
            let record = record?;
            Ok(EtaEstimate {
                tau_eval: field(&record, 0, "tau_eval")?,
                eta: field(&record, 1, "eta")?,
                se: field(&record, 2, "se")?,
                runs: field(&record, 3, "runs")?,
                fingerprint: parse_fingerprint(&record, 4)?,
            })
        })
        .collect()
}
