//! Fits of failure curves: exponential tails, the τ_c scaling collapse, the
//! linear law for `C = N`, plateaus, and the `exp(-b/β)` temperature law.

use std::io::Write;

use crate::config::SimConfig;
use crate::ensemble::{run_ensemble, CurveRow, FailureCurve, Fingerprint};
use crate::error::{Error, Result};

/// `P_τ ≈ a·exp(-τ/τ_c)` fitted over `window`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    pub a: f64,
    pub tau_c: f64,
    pub window: (u64, u64),
    /// Weighted root-mean-square of `ln p` residuals.
    pub residual: f64,
    pub points_used: usize,
}

impl FitResult {
    pub fn predict(&self, tau: f64) -> f64 {
        self.a * (-tau / self.tau_c).exp()
    }
}

/// Which rows of a curve enter an exponential fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitWindow {
    pub tau_min: u64,
    pub tau_max: u64,
    /// Rows must have `p` strictly below this.
    pub max_p: f64,
    /// Rows must have at least this many failures.
    pub min_failures: u64,
}

/// Upper bound on `p` for rows in the exponential tail.
pub const TAIL_MAX_P: f64 = 0.05;
/// Fewest failures a row needs for a usable `ln p`.
pub const MIN_FAILURES: u64 = 50;

impl Default for FitWindow {
    fn default() -> Self {
        FitWindow { tau_min: 0, tau_max: u64::MAX, max_p: TAIL_MAX_P, min_failures: MIN_FAILURES }
    }
}

impl FitWindow {
    pub fn between(tau_min: u64, tau_max: u64) -> Self {
        FitWindow { tau_min, tau_max, ..FitWindow::default() }
    }

    pub fn admits(&self, row: &CurveRow) -> bool {
        row.tau >= self.tau_min
            && row.tau <= self.tau_max
            && row.p < self.max_p
            && row.failures >= self.min_failures
            && row.failures < row.runs
    }
}

/// Weighted least squares `y ≈ intercept + slope·x`.
struct LineFit {
    intercept: f64,
    slope: f64,
    rms: f64,
}

fn weighted_line(points: &[(f64, f64, f64)]) -> LineFit {
    let sw: f64 = points.iter().map(|p| p.2).sum();
    let mx = points.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let my = points.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxx: f64 = points.iter().map(|p| p.2 * (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| p.2 * (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = points
        .iter()
        .map(|p| {
            let r = p.1 - intercept - slope * p.0;
            p.2 * r * r
        })
        .sum();
    LineFit { intercept, slope, rms: (ss / sw).sqrt() }
}

fn distinct_x(points: &[(f64, f64, f64)]) -> usize {
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    xs.len()
}

/// Exponential fit using the default window rule.
pub fn fit_exponential(curve: &FailureCurve) -> Result<FitResult> {
    fit_exponential_with(curve, &FitWindow::default())
}

pub fn fit_exponential_with(curve: &FailureCurve, window: &FitWindow) -> Result<FitResult> {
    fit_rows(&curve.rows, window)
}

/// Least squares of `ln p` on `τ` with weights `runs·p/(1-p)`, the inverse
/// delta-method variance of `ln p`.
pub fn fit_rows(rows: &[CurveRow], window: &FitWindow) -> Result<FitResult> {
    let used: Vec<&CurveRow> = rows.iter().filter(|r| window.admits(r)).collect();
    let points: Vec<(f64, f64, f64)> = used
        .iter()
        .map(|r| (r.tau as f64, r.p.ln(), r.runs as f64 * r.p / (1.0 - r.p)))
        .collect();
    if distinct_x(&points) < 3 {
        return Err(Error::InsufficientData(format!(
            "{} usable rows (p < {}, failures >= {}); need 3",
            points.len(),
            window.max_p,
            window.min_failures
        )));
    }
    let line = weighted_line(&points);
    if !(line.slope < 0.0) {
        return Err(Error::InsufficientData(format!(
            "failure probability does not decay (slope {})",
            line.slope
        )));
    }
    let taus = used.iter().map(|r| r.tau);
    Ok(FitResult {
        a: line.intercept.exp(),
        tau_c: -1.0 / line.slope,
        window: (taus.clone().min().unwrap_or(0), taus.max().unwrap_or(0)),
        residual: line.rms,
        points_used: points.len(),
    })
}

/// `f(x) = 1.75·(1/x - 1)`.
pub fn scaling_function(x: f64) -> f64 {
    1.75 * (1.0 / x - 1.0)
}

/// `τ_c = N^{3/2}·f(C/N)`.
pub fn predicted_tau_c(n: usize, c: usize) -> f64 {
    (n as f64).powf(1.5) * scaling_function(c as f64 / n as f64)
}

/// `τ_c = 0.15·N - 0.09` for `C = N`.
pub fn full_display_tau_c(n: usize) -> f64 {
    0.15 * n as f64 - 0.09
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollapsePoint {
    pub n: usize,
    pub c: usize,
    pub x: f64,
    pub tau_c: f64,
    /// `τ_c / N^{3/2}`.
    pub scaled: f64,
    /// `f(C/N)`.
    pub expected: f64,
    /// `|scaled - expected| / expected`; infinite when `expected` is zero
    /// and `scaled` is not.
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollapseReport {
    pub points: Vec<CollapsePoint>,
    /// Root-mean-square of `scaled - expected`.
    pub rms: f64,
}

impl CollapseReport {
    pub fn max_relative_error(&self) -> f64 {
        self.points.iter().map(|p| p.relative_error).fold(0.0, f64::max)
    }
}

/// Compares `(N, C, τ_c)` entries against the scaling function.
pub fn scaling_check(table: &[(usize, usize, f64)]) -> Result<CollapseReport> {
    if table.is_empty() {
        return Err(Error::InvalidArgument("empty τ_c table".into()));
    }
    let mut points = Vec::with_capacity(table.len());
    for &(n, c, tau_c) in table {
        if c == 0 || c > n {
            return Err(Error::InvalidArgument(format!("C = {c} outside [1, {n}]")));
        }
        let x = c as f64 / n as f64;
        let scaled = tau_c / (n as f64).powf(1.5);
        let expected = scaling_function(x);
        let diff = (scaled - expected).abs();
        let relative_error = if expected != 0.0 {
            diff / expected
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        points.push(CollapsePoint { n, c, x, tau_c, scaled, expected, relative_error });
    }
    let ss: f64 = points.iter().map(|p| (p.scaled - p.expected).powi(2)).sum();
    let rms = (ss / points.len() as f64).sqrt();
    Ok(CollapseReport { points, rms })
}

/// Ordinary least squares line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub residual: f64,
}

pub fn fit_linear(points: &[(f64, f64)]) -> Result<LinearFit> {
    let weighted: Vec<(f64, f64, f64)> = points.iter().map(|&(x, y)| (x, y, 1.0)).collect();
    if distinct_x(&weighted) < 2 {
        return Err(Error::InsufficientData(format!(
            "{} points; need 2 distinct abscissae",
            points.len()
        )));
    }
    let line = weighted_line(&weighted);
    Ok(LinearFit { intercept: line.intercept, slope: line.slope, residual: line.rms })
}

/// Failure probability at `tau_eval` with its binomial standard error.
pub fn estimate_p_infinity(config: &SimConfig, tau_eval: u64) -> Result<(f64, f64)> {
    let config = config.clone().with_checkpoints(vec![tau_eval]);
    let config = SimConfig { tau_max: tau_eval, ..config };
    let curve = run_ensemble(&config)?;
    let row = curve.row(tau_eval).expect("single checkpoint");
    Ok((row.p, row.se))
}

/// `P ≈ a·exp(-b/β)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaFit {
    pub a: f64,
    pub b: f64,
}

impl BetaFit {
    pub fn predict(&self, beta: f64) -> f64 {
        self.a * (-self.b / beta).exp()
    }
}

/// Least squares of `ln p` on `1/β` over `(β, p)` points.
pub fn fit_beta_decay(points: &[(f64, f64)]) -> Result<BetaFit> {
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!("{} points; need 3", points.len())));
    }
    if let Some(&(beta, p)) = points.iter().find(|&&(beta, p)| !(beta > 0.0 && p > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "β and p must be positive (β = {beta}, p = {p})"
        )));
    }
    let transformed: Vec<(f64, f64)> = points.iter().map(|&(beta, p)| (1.0 / beta, p.ln())).collect();
    let line = fit_linear(&transformed)?;
    Ok(BetaFit { a: line.intercept.exp(), b: -line.slope })
}

pub const FIT_HEADER: &str = "n,c,strategy,beta,a,tau_c,residual,points_used";

pub fn write_fit_report<W: Write>(fits: &[(Fingerprint, FitResult)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FIT_HEADER.split(','))?;
    for (fp, fit) in fits {
        w.write_record([
            fp.n.to_string(),
            fp.c.to_string(),
            fp.strategy.name().to_string(),
            fp.strategy.beta_field(),
            fit.a.to_string(),
            fit.tau_c.to_string(),
            fit.residual.to_string(),
            fit.points_used.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub const COLLAPSE_HEADER: &str = "n,c,x,tau_c,scaled,expected,relative_error";

pub fn write_collapse_report<W: Write>(report: &CollapseReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLLAPSE_HEADER.split(','))?;
    for p in &report.points {
        w.write_record([
            p.n.to_string(),
            p.c.to_string(),
            p.x.to_string(),
            p.tau_c.to_string(),
            p.scaled.to_string(),
            p.expected.to_string(),
            p.relative_error.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
