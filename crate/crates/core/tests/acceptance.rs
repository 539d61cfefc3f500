//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! A FAIL line is a measured outcome, not a crash, so the binary exits 0 as
//! long as every check ran. `CONSENSUS_CARDS_ACCEPTANCE_SCALE` multiplies the
//! ensemble sizes (default 1) and `CONSENSUS_CARDS_ACCEPTANCE_ONLY` selects
//! criteria by substring.

use std::collections::HashMap;
use std::time::Instant;

use consensus_cards::analysis::{
    fit_beta_decay, fit_exponential, fit_linear, full_display_tau_c, predicted_tau_c,
    scaling_check,
};
use consensus_cards::ensemble::{run_ensemble_tally, write_curve, write_eta};
use consensus_cards::model::ConfidenceTable;
use consensus_cards::samplers::{binomial, elementary_symmetric, enumerate_distribution, SubsetSampler};
use consensus_cards::{CardId, SimConfig, Strategy, TopologyKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

const FULL_RUNS: u64 = 100_000;
const SEED: u64 = 20_240_917;

struct Outcome {
    pass: bool,
    detail: String,
}

fn scale() -> f64 {
    std::env::var("CONSENSUS_CARDS_ACCEPTANCE_SCALE")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1.0)
}

fn runs(full: u64) -> u64 {
    ((full as f64 * scale()).round() as u64).max(500)
}

fn ensemble(config: &SimConfig) -> consensus_cards::ensemble::Tally {
    run_ensemble_tally(config, 0).expect("valid acceptance config")
}

fn gibbs(beta: f64) -> Strategy {
    Strategy::Gibbs { beta }
}

fn exponential_tail() -> Outcome {
    let started = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for (c, tau_max, step) in [(2, 2400, 20), (5, 800, 8), (10, 40, 1)] {
        let config = SimConfig::new(10, c, Strategy::Uniform, tau_max)
            .with_checkpoints((0..=tau_max).step_by(step).collect())
            .with_runs(runs(FULL_RUNS))
            .with_seed(SEED);
        let curve = ensemble(&config).curve(&config);
        match fit_exponential(&curve) {
            Ok(fit) => {
                pass &= fit.residual < 0.1;
                parts.push(format!(
                    "C={c} rms={:.4} tau_c={:.2} window={:?}",
                    fit.residual, fit.tau_c, fit.window
                ));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("C={c} {e}"));
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    pass &= secs < 300.0;
    Outcome { pass, detail: format!("{}; {secs:.0} s (limit 300)", parts.join(", ")) }
}

/// Failure curve sampled densely enough to fit a tail of expected time `tau_c`.
fn tail_fit(n: usize, c: usize, tau_c: f64) -> Result<f64, String> {
    let tau_max = (9.0 * tau_c).ceil().max(30.0) as u64;
    let step = (tau_max / 80).max(1) as usize;
    let config = SimConfig::new(n, c, Strategy::Uniform, tau_max)
        .with_checkpoints((0..=tau_max).step_by(step).collect())
        .with_runs(runs(FULL_RUNS))
        .with_seed(SEED);
    fit_exponential(&ensemble(&config).curve(&config))
        .map(|f| f.tau_c)
        .map_err(|e| format!("N={n} C={c}: {e}"))
}

fn scaling_collapse() -> Outcome {
    let mut table = Vec::new();
    for n in [10usize, 15, 20] {
        for x in [0.2, 0.5, 0.8] {
            let c = (x * n as f64).round() as usize;
            match tail_fit(n, c, predicted_tau_c(n, c)) {
                Ok(tau_c) => table.push((n, c, tau_c)),
                Err(e) => return Outcome { pass: false, detail: e },
            }
        }
    }
    let report = scaling_check(&table).expect("non-empty table");
    let worst = report.max_relative_error();
    let points: Vec<_> = report
        .points
        .iter()
        .map(|p| format!("N={} C={} tau_c={:.1} ({:+.1}%)", p.n, p.c, p.tau_c, 100.0 * p.relative_error))
        .collect();
    Outcome {
        pass: worst <= 0.15,
        detail: format!("max |rel err| {:.1}% (limit 15%): {}", 100.0 * worst, points.join(", ")),
    }
}

fn full_display_law() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    let mut points = Vec::new();
    for n in [10usize, 20, 30] {
        let expected = full_display_tau_c(n);
        let config = SimConfig::new(n, n, Strategy::Uniform, 80)
            .with_checkpoints((0..=80).collect())
            .with_runs(runs(FULL_RUNS))
            .with_seed(SEED);
        match fit_exponential(&ensemble(&config).curve(&config)) {
            Ok(fit) => {
                let rel = fit.tau_c / expected - 1.0;
                pass &= rel.abs() <= 0.15;
                points.push((n as f64, fit.tau_c));
                parts.push(format!(
                    "N={n} tau_c={:.2} vs {expected:.2} ({:+.1}%)",
                    fit.tau_c,
                    100.0 * rel
                ));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("N={n} {e}"));
            }
        }
    }
    if let Ok(line) = fit_linear(&points) {
        parts.push(format!("line {:.3} + {:.4} N", line.intercept, line.slope));
    }
    Outcome { pass, detail: parts.join(", ") }
}

fn zero_temperature_plateau() -> Outcome {
    let mut values = Vec::new();
    for (n, full) in [(10usize, FULL_RUNS), (20, 20_000), (40, 20_000), (80, 20_000)] {
        let config = SimConfig::new(n, n / 2, Strategy::TopC, 10_000)
            .with_runs(runs(full))
            .with_seed(SEED);
        let row = ensemble(&config).curve(&config).rows[0];
        values.push((n, row.p, row.se));
    }
    let monotone = values.windows(2).all(|w| w[1].1 > w[0].1) && values.iter().all(|v| v.1 < 0.5);
    let p10 = values[0].1;
    let near = (p10 - 0.287).abs() <= 0.01;
    let parts: Vec<_> =
        values.iter().map(|(n, p, se)| format!("N={n} P={p:.4}±{se:.4}")).collect();
    Outcome {
        pass: monotone && near,
        detail: format!(
            "{}; increasing below 0.5: {monotone}; N=10 vs 0.287±0.01: {near}",
            parts.join(", ")
        ),
    }
}

fn finite_temperature_decay() -> Outcome {
    let mut points = Vec::new();
    for beta in [0.1, 0.2, 0.3, 0.5] {
        let config = SimConfig::new(10, 5, gibbs(beta), 10_000)
            .with_runs(runs(FULL_RUNS))
            .with_seed(SEED);
        points.push((beta, ensemble(&config).curve(&config).rows[0].p));
    }
    let listed: Vec<_> = points.iter().map(|(b, p)| format!("beta={b}: P={p:.5}")).collect();
    match fit_beta_decay(&points) {
        Ok(fit) => Outcome {
            pass: (fit.a - 0.251).abs() <= 0.03 && (fit.b - 0.428).abs() <= 0.06,
            detail: format!(
                "a={:.4} (0.251±0.03), b={:.4} (0.428±0.06); {}",
                fit.a,
                fit.b,
                listed.join(", ")
            ),
        },
        Err(e) => Outcome { pass: false, detail: format!("{e}; {}", listed.join(", ")) },
    }
}

fn interior_optimum() -> Outcome {
    let tau = 363;
    let mut grid = vec![("0".to_string(), Strategy::Uniform)];
    for beta in [0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0] {
        grid.push((beta.to_string(), gibbs(beta)));
    }
    grid.push(("topc".to_string(), Strategy::TopC));
    let mut values = Vec::new();
    let mut total = 0;
    for (label, strategy) in grid {
        let config = SimConfig::new(10, 5, strategy, tau)
            .with_runs(runs(FULL_RUNS))
            .with_seed(SEED);
        let row = ensemble(&config).curve(&config).rows[0];
        total = row.runs;
        values.push((label, row.p, row.failures));
    }
    let lowest = values.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    let at_min: Vec<usize> = (0..values.len()).filter(|&i| values[i].1 == lowest).collect();
    let interior = at_min.iter().all(|&i| i != 0 && i != values.len() - 1);
    // zero failures only bound the minimum by 3/runs at 95%
    let bound = if lowest == 0.0 { 3.0 / total as f64 } else { lowest };
    let ratio = values[0].1 / bound;
    let labels: Vec<_> = at_min.iter().map(|&i| values[i].0.as_str()).collect();
    let parts: Vec<_> =
        values.iter().map(|(l, p, k)| format!("beta={l}: {p:.2e} ({k})")).collect();
    Outcome {
        pass: interior && ratio >= 10.0,
        detail: format!(
            "min {lowest:.2e} at beta={}, P(0)/max(min, 3/runs)={ratio:.1} (limit 10); {}",
            labels.join("/"),
            parts.join(", ")
        ),
    }
}

/// Published η at C = 1..=5 for the columns uniform, 0.1, 0.3, 0.5, top-C.
const PENTAGON_ETA: [[f64; 5]; 5] = [
    [0.998, 0.251, 0.503, 0.527, 0.601],
    [0.997, 0.058, 0.201, 0.267, 0.387],
    [0.996, 0.004, 0.149, 0.302, 0.549],
    [0.997, 0.001, 0.092, 0.198, 0.565],
    [0.997, 0.997, 0.997, 0.997, 0.997],
];

fn pentagon_grid() -> Outcome {
    let columns = [Strategy::Uniform, gibbs(0.1), gibbs(0.3), gibbs(0.5), Strategy::TopC];
    let mut eta = [[0.0; 5]; 5];
    let mut estimates = Vec::new();
    for c in 1..=5 {
        for (k, &strategy) in columns.iter().enumerate() {
            let config = SimConfig::new(5, c, strategy, 10_000)
                .with_topology(TopologyKind::Cycle)
                .with_runs(runs(FULL_RUNS))
                .with_seed(SEED);
            let estimate = ensemble(&config).eta(&config, 10_000).expect("checkpoint");
            eta[c - 1][k] = estimate.eta;
            estimates.push(estimate);
        }
    }
    let mut csv = Vec::new();
    write_eta(&estimates, &mut csv).expect("in-memory write");

    let mut misses = Vec::new();
    let mut worst: f64 = 0.0;
    for c in 0..5 {
        for k in 0..5 {
            let d = eta[c][k] - PENTAGON_ETA[c][k];
            worst = worst.max(d.abs());
            if d.abs() > 0.02 {
                misses.push(format!("C={} col {k}: {:.4} vs {} ({d:+.3})", c + 1, eta[c][k], PENTAGON_ETA[c][k]));
            }
        }
    }
    let reference = 0.23;
    let extremes_miss = (0..5).all(|c| eta[c][0] > reference && eta[c][4] > reference);
    let bracketed = (0..5).any(|c| {
        (1..4).any(|i| (i + 1..4).any(|j| eta[c][i] <= reference && reference <= eta[c][j]))
    });
    let grid: Vec<_> = eta
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let cells: Vec<_> = row.iter().map(|v| format!("{v:.4}")).collect();
            format!("C={}: {}", c + 1, cells.join(" "))
        })
        .collect();
    Outcome {
        pass: misses.is_empty() && extremes_miss && bracketed,
        detail: format!(
            "max |diff| {worst:.3} (limit 0.02), {} cells off [{}]; extremes above 0.23: {extremes_miss}; \
             intermediate bracket: {bracketed}; grid {}",
            misses.len(),
            misses.join("; "),
            grid.join(" | ")
        ),
    }
}

fn subset_index(positions: &[usize]) -> u32 {
    positions.iter().fold(0, |m, &p| m | (1 << p))
}

fn sampler_oracle() -> Outcome {
    let draws = runs(1_000_000 / 10) * 10;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut min_p: f64 = 1.0;
    let mut worst_case = String::new();
    let mut cases = 0;
    for n in 1..=8usize {
        let cards: Vec<CardId> = (0..n as u32).map(CardId).collect();
        for c in 1..=n {
            for beta in [0.0, 0.3, 1.0, 3.0] {
                let values: Vec<u32> = (0..n).map(|_| rng.random_range(0..6)).collect();
                let table = ConfidenceTable::new(n, cards.clone(), &values).expect("table");
                let dist = enumerate_distribution(&table, c, beta, u64::MAX).expect("enumerable");
                let mut expected: HashMap<u32, f64> = HashMap::new();
                for (sample, p) in dist.entries() {
                    let pos: Vec<usize> = sample.cards().iter().map(|card| card.0 as usize).collect();
                    expected.insert(subset_index(&pos), *p);
                }
                let mut sampler = SubsetSampler::new(gibbs(beta), n, c).expect("sampler");
                let mut observed: HashMap<u32, u64> = HashMap::new();
                let mut out = Vec::with_capacity(c);
                for _ in 0..draws {
                    out.clear();
                    sampler.draw(&mut rng, &values, &mut out);
                    *observed.entry(subset_index(&out)).or_default() += 1;
                }
                cases += 1;
                if observed.keys().any(|k| !expected.contains_key(k)) {
                    return Outcome { pass: false, detail: format!("N={n} C={c}: invalid subset drawn") };
                }
                if expected.len() < 2 {
                    continue;
                }
                // pool cells expected below 5 draws into one
                let (mut stat, mut cells) = (0.0, 0);
                let (mut pool_e, mut pool_o) = (0.0, 0.0);
                for (key, p) in &expected {
                    let e = p * draws as f64;
                    let o = *observed.get(key).unwrap_or(&0) as f64;
                    if e < 5.0 {
                        pool_e += e;
                        pool_o += o;
                    } else {
                        stat += (o - e).powi(2) / e;
                        cells += 1;
                    }
                }
                if pool_e > 0.0 {
                    stat += (pool_o - pool_e).powi(2) / pool_e;
                    cells += 1;
                }
                if cells < 2 {
                    continue;
                }
                let p = ChiSquared::new((cells - 1) as f64).expect("df").sf(stat);
                if p < min_p {
                    min_p = p;
                    worst_case = format!("N={n} C={c} beta={beta}");
                }
            }
        }
    }

    let mut esp_err: f64 = 0.0;
    for n in 1..=12usize {
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0f64..3.0).exp()).collect();
        for k in 0..=n {
            let brute: f64 = (0u32..1 << n)
                .filter(|m| m.count_ones() as usize == k)
                .map(|m| (0..n).filter(|i| m >> i & 1 == 1).map(|i| weights[i]).product::<f64>())
                .sum();
            let fast = elementary_symmetric(&weights, k).expect("valid weights");
            esp_err = esp_err.max((fast - brute).abs() / brute);
        }
    }

    let mut uniform_exact = true;
    for n in 1..=8usize {
        let cards: Vec<CardId> = (0..n as u32).map(CardId).collect();
        let values: Vec<u32> = (0..n).map(|_| rng.random_range(0..50)).collect();
        let table = ConfidenceTable::new(n, cards, &values).expect("table");
        for c in 1..=n {
            let dist = enumerate_distribution(&table, c, 0.0, u64::MAX).expect("enumerable");
            let p = 1.0 / binomial(n, c) as f64;
            uniform_exact &= dist.entries().iter().all(|(_, q)| *q == p);
        }
    }

    Outcome {
        pass: min_p > 0.001 && esp_err <= 1e-10 && uniform_exact,
        detail: format!(
            "{cases} cases x {draws} draws, min chi-square p={min_p:.4} ({worst_case}); \
             ESP max rel err {esp_err:.1e}; beta=0 exactly uniform: {uniform_exact}"
        ),
    }
}

fn determinism() -> Outcome {
    let configs = [
        SimConfig::new(6, 3, gibbs(0.5), 300).with_checkpoints((0..=300).step_by(30).collect()),
        SimConfig::new(8, 4, Strategy::TopC, 2_000).with_checkpoints(vec![10, 100, 2_000]),
        SimConfig::new(7, 2, Strategy::Uniform, 1_500)
            .with_topology(TopologyKind::Cycle)
            .with_checkpoints(vec![5, 1_500]),
    ];
    let mut identical = true;
    for config in configs {
        let config = config.with_runs(3_000).with_seed(SEED);
        let mut outputs = Vec::new();
        for threads in [1, 2, 3, 8] {
            let tally = run_ensemble_tally(&config, threads).expect("valid config");
            let mut bytes = Vec::new();
            write_curve(&[&tally.curve(&config)], &mut bytes).expect("in-memory write");
            write_eta(&[tally.eta(&config, config.tau_max).expect("checkpoint")], &mut bytes)
                .expect("in-memory write");
            outputs.push(bytes);
        }
        identical &= outputs.windows(2).all(|w| w[0] == w[1]);
    }
    Outcome {
        pass: identical,
        detail: format!("3 configs x threads 1, 2, 3, 8: byte-identical CSVs: {identical}"),
    }
}

fn main() {
    let only = std::env::var("CONSENSUS_CARDS_ACCEPTANCE_ONLY").ok();
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("exponential tail", exponential_tail),
        ("scaling collapse", scaling_collapse),
        ("full-display linear law", full_display_law),
        ("zero-temperature plateau", zero_temperature_plateau),
        ("finite-temperature decay", finite_temperature_decay),
        ("interior optimum", interior_optimum),
        ("pentagon eta grid", pentagon_grid),
        ("sampler oracle", sampler_oracle),
        ("determinism", determinism),
    ];
    println!("acceptance suite, ensemble scale {}", scale());
    let (mut passed, mut failed) = (0, 0);
    for (name, check) in criteria {
        if only.as_deref().is_some_and(|o| !name.contains(o)) {
            continue;
        }
        let started = Instant::now();
        let outcome = check();
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        if outcome.pass {
            passed += 1;
        } else {
            failed += 1;
        }
        println!(
            "{verdict} {name} [{:.0} s]: {}",
            started.elapsed().as_secs_f64(),
            outcome.detail
        );
    }
    println!("acceptance: {passed} passed, {failed} failed");
}
