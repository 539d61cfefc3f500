//! Simulation configuration and its flat `key = value` file form.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{Topology, TopologyKind};

/// Default ensemble size.
pub const DEFAULT_RUNS: u64 = 100_000;
/// Default time at which asymptotic quantities are read off.
pub const DEFAULT_TAU_EVAL: u64 = 10_000;
/// Default limit on `binomial(N, C)` for exhaustive subset enumeration.
pub const DEFAULT_ENUM_CAP: u64 = 200_000;

/// How the observed agent chooses the cards it displays.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    /// Uniform over all C-subsets (infinite temperature).
    Uniform,
    /// The C highest-confidence cards, boundary ties broken at random (zero temperature).
    TopC,
    /// Gibbs distribution at inverse temperature `beta`.
    Gibbs { beta: f64 },
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Uniform => "uniform",
            Strategy::TopC => "topc",
            Strategy::Gibbs { .. } => "gibbs",
        }
    }

    pub fn beta(&self) -> Option<f64> {
        match self {
            Strategy::Gibbs { beta } => Some(*beta),
            _ => None,
        }
    }

    /// Builds a strategy from its name and optional beta.
    pub fn from_parts(name: &str, beta: Option<f64>) -> Result<Self> {
        match name {
            "uniform" => Ok(Strategy::Uniform),
            "topc" => Ok(Strategy::TopC),
            "gibbs" => {
                let beta = beta.ok_or_else(|| {
                    Error::InvalidConfig("strategy gibbs requires beta".into())
                })?;
                Ok(Strategy::Gibbs { beta })
            }
            other => Err(Error::InvalidConfig(format!(
                "unknown strategy '{other}' (expected uniform, topc or gibbs)"
            ))),
        }
    }

    /// Beta formatted for CSV output: empty for the two limits.
    pub fn beta_field(&self) -> String {
        self.beta().map(|b| b.to_string()).unwrap_or_default()
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Gibbs { beta } => write!(f, "gibbs(beta={beta})"),
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub c: usize,
    pub strategy: Strategy,
    pub topology: TopologyKind,
    pub tau_max: u64,
    pub checkpoints: Vec<u64>,
    pub master_seed: u64,
    pub runs: u64,
    pub enum_cap: u64,
    /// Skip ahead in bulk while every display is locked in (exact in distribution).
    pub fast_forward: bool,
}

impl SimConfig {
    /// A config with the given problem size and strategy on the complete graph,
    /// evaluated only at `tau_max`.
    pub fn new(n: usize, c: usize, strategy: Strategy, tau_max: u64) -> Self {
        SimConfig {
            n,
            c,
            strategy,
            topology: TopologyKind::Complete,
            tau_max,
            checkpoints: vec![tau_max],
            master_seed: 0,
            runs: DEFAULT_RUNS,
            enum_cap: DEFAULT_ENUM_CAP,
            fast_forward: true,
        }
    }

    pub fn with_topology(mut self, topology: TopologyKind) -> Self {
        self.topology = topology;
        self
    }

    pub fn with_checkpoints(mut self, mut checkpoints: Vec<u64>) -> Self {
        checkpoints.sort_unstable();
        checkpoints.dedup();
        self.checkpoints = checkpoints;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.master_seed = seed;
        self
    }

    pub fn with_runs(mut self, runs: u64) -> Self {
        self.runs = runs;
        self
    }

    pub fn with_fast_forward(mut self, fast_forward: bool) -> Self {
        self.fast_forward = fast_forward;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidConfig(format!("N must be at least 2, got {}", self.n)));
        }
        if self.c < 1 || self.c > self.n {
            return Err(Error::InvalidConfig("C must be in [1, N]".into()));
        }
        if let Strategy::Gibbs { beta } = self.strategy {
            if !(beta >= 0.0 && beta.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "beta must be finite and non-negative, got {beta}"
                )));
            }
        }
        if self.topology == TopologyKind::Custom {
            return Err(Error::InvalidConfig(
                "custom topologies cannot be built from a config".into(),
            ));
        }
        Topology::make(self.topology, self.n).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if self.runs < 1 {
            return Err(Error::InvalidConfig("runs must be at least 1".into()));
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "checkpoints must be strictly increasing".into(),
            ));
        }
        if let Some(&last) = self.checkpoints.last() {
            if last > self.tau_max {
                return Err(Error::InvalidConfig(format!(
                    "checkpoint {last} exceeds tau_max {}",
                    self.tau_max
                )));
            }
        }
        Ok(())
    }

    pub fn build_topology(&self) -> Result<Topology> {
        Topology::make(self.topology, self.n)
    }

    /// Serializes to the flat `key = value` form read by [`SimConfig::from_kv_str`].
    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "n = {}", self.n);
        let _ = writeln!(out, "c = {}", self.c);
        let _ = writeln!(out, "strategy = {}", self.strategy.name());
        if let Some(beta) = self.strategy.beta() {
            let _ = writeln!(out, "beta = {beta}");
        }
        let _ = writeln!(out, "topology = {}", self.topology);
        let _ = writeln!(out, "tau_max = {}", self.tau_max);
        let cps: Vec<String> = self.checkpoints.iter().map(|t| t.to_string()).collect();
        let _ = writeln!(out, "checkpoints = {}", cps.join(","));
        let _ = writeln!(out, "seed = {}", self.master_seed);
        let _ = writeln!(out, "runs = {}", self.runs);
        let _ = writeln!(out, "enum_cap = {}", self.enum_cap);
        let _ = writeln!(out, "fast_forward = {}", self.fast_forward);
        out
    }

    /// Parses the flat config form; missing keys take the defaults of
    /// [`ConfigBuilder::build`].
    pub fn from_kv_str(text: &str) -> Result<Self> {
        ConfigBuilder::parse(text)?.build()
    }

    pub fn load(path: &Path) -> Result<Self> {
        ConfigBuilder::load(path)?.build()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_kv_string()).map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Accumulates config keys from files or flags before validation.
#[derive(Debug, Clone, Default)]
pub struct ConfigBuilder {
    pub n: Option<usize>,
    pub c: Option<usize>,
    pub strategy: Option<String>,
    pub beta: Option<f64>,
    pub topology: Option<TopologyKind>,
    pub tau_max: Option<u64>,
    pub checkpoints: Option<Vec<u64>>,
    pub seed: Option<u64>,
    pub runs: Option<u64>,
    pub enum_cap: Option<u64>,
    pub fast_forward: Option<bool>,
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("invalid value '{value}' for {key}")))
}

impl ConfigBuilder {
    /// Reads `key = value` lines. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut builder = ConfigBuilder::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            builder.set(key.trim(), value.trim())?;
        }
        Ok(builder)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "n" => self.n = Some(parse_value(key, value)?),
            "c" => self.c = Some(parse_value(key, value)?),
            "strategy" => self.strategy = Some(value.to_string()),
            "beta" => {
                self.beta = if value.is_empty() {
                    None
                } else {
                    Some(parse_value(key, value)?)
                }
            }
            "topology" => self.topology = Some(value.parse()?),
            "tau_max" => self.tau_max = Some(parse_value(key, value)?),
            "checkpoints" => self.checkpoints = Some(parse_checkpoints(value)?),
            "seed" => self.seed = Some(parse_value(key, value)?),
            "runs" => self.runs = Some(parse_value(key, value)?),
            "enum_cap" => self.enum_cap = Some(parse_value(key, value)?),
            "fast_forward" => self.fast_forward = Some(parse_value(key, value)?),
            other => return Err(Error::InvalidConfig(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Overlays every key set in `other` on top of `self`.
    pub fn merge(mut self, other: ConfigBuilder) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(n, c, strategy, beta, topology, tau_max, checkpoints, seed, runs, enum_cap, fast_forward);
        self
    }

    /// Builds and validates. `n` is required; `c` defaults to `n`, strategy
    /// to uniform, topology to complete, checkpoints to `[tau_max]`.
    pub fn build(self) -> Result<SimConfig> {
        let n = self
            .n
            .ok_or_else(|| Error::InvalidConfig("missing required key n".into()))?;
        let c = self.c.unwrap_or(n);
        let strategy = match self.strategy.as_deref() {
            Some(name) => Strategy::from_parts(name, self.beta)?,
            None => match self.beta {
                Some(beta) => Strategy::Gibbs { beta },
                None => Strategy::Uniform,
            },
        };
        if self.beta.is_some() && !matches!(strategy, Strategy::Gibbs { .. }) {
            return Err(Error::InvalidConfig(format!(
                "beta is only meaningful for the gibbs strategy, not {}",
                strategy.name()
            )));
        }
        let tau_max = match (self.tau_max, &self.checkpoints) {
            (Some(t), _) => t,
            (None, Some(cps)) => cps.iter().copied().max().unwrap_or(0),
            (None, None) => DEFAULT_TAU_EVAL,
        };
        let mut checkpoints = self.checkpoints.unwrap_or_else(|| vec![tau_max]);
        checkpoints.sort_unstable();
        checkpoints.dedup();
        let config = SimConfig {
            n,
            c,
            strategy,
            topology: self.topology.unwrap_or(TopologyKind::Complete),
            tau_max,
            checkpoints,
            master_seed: self.seed.unwrap_or(0),
            runs: self.runs.unwrap_or(DEFAULT_RUNS),
            enum_cap: self.enum_cap.unwrap_or(DEFAULT_ENUM_CAP),
            fast_forward: self.fast_forward.unwrap_or(true),
        };
        config.validate()?;
        Ok(config)
    }
}

/// Parses checkpoint lists: comma-separated items, each either a single time
/// or an inclusive range `start:stop:step`. The result is sorted and deduplicated.
pub fn parse_checkpoints(spec: &str) -> Result<Vec<u64>> {
    let bad = |item: &str| Error::InvalidConfig(format!("invalid checkpoint item '{item}'"));
    let mut out = Vec::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let parts: Vec<&str> = item.split(':').collect();
        match parts.as_slice() {
            [single] => out.push(single.parse().map_err(|_| bad(item))?),
            [start, stop, step] => {
                let start: u64 = start.parse().map_err(|_| bad(item))?;
                let stop: u64 = stop.parse().map_err(|_| bad(item))?;
                let step: u64 = step.parse().map_err(|_| bad(item))?;
                if step == 0 || stop < start {
                    return Err(bad(item));
                }
                out.extend((start..=stop).step_by(step as usize));
            }
            _ => return Err(bad(item)),
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}
