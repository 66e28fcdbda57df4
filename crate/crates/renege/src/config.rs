//! JSON run configuration.

use std::fs;
use std::path::Path;

use renege_core::equilibrium::{SimBudget, SolverOptions};
use renege_core::simulator::{Coordinate, Deviation};
use renege_core::steady_state::SteadyOptions;
use renege_core::{MarketParams, ServiceModel, ThresholdProfile, Tolerance};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Exponential { rate: f64 },
    Hyperexponential { probs: Vec<f64>, rates: Vec<f64> },
    Pareto { shape: f64, scale: f64 },
    Uniform { lo: f64, hi: f64 },
    Mixture { components: Vec<ModelSpec>, weights: Vec<f64> },
}

impl ModelSpec {
    pub fn build(&self) -> Result<ServiceModel, CliError> {
        let m = match self {
            ModelSpec::Exponential { rate } => ServiceModel::exponential(*rate),
            ModelSpec::Hyperexponential { probs, rates } => ServiceModel::hyperexponential(probs.clone(), rates.clone()),
            ModelSpec::Pareto { shape, scale } => ServiceModel::pareto(*shape, *scale),
            ModelSpec::Uniform { lo, hi } => ServiceModel::uniform(*lo, *hi),
            ModelSpec::Mixture { components, weights } => {
                let parts = components.iter().map(|c| c.build()).collect::<Result<Vec<_>, _>>()?;
                ServiceModel::mixture(parts, weights.clone())
            }
        };
        m.map_err(|e| CliError::Config(format!("model: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    /// Quadrature panels per axis.
    pub points: usize,
    pub eps_root: f64,
    pub eps_quad: f64,
    pub eps_mass: f64,
    pub max_outer: usize,
    /// Solve at this balking level instead of scanning for it.
    pub n_max: Option<usize>,
}

impl Default for SolverSection {
    fn default() -> Self {
        let tol = Tolerance::default();
        Self { points: 400, eps_root: tol.eps_root, eps_quad: tol.eps_quad, eps_mass: tol.eps_mass, max_outer: 60, n_max: None }
    }
}

impl SolverSection {
    pub fn options(&self) -> Result<SolverOptions, CliError> {
        let tol = Tolerance { eps_root: self.eps_root, eps_quad: self.eps_quad, eps_mass: self.eps_mass };
        tol.validate().map_err(|e| CliError::Config(format!("solver: {e}")))?;
        if self.points < 4 {
            return Err(CliError::Config("solver: points must be at least 4".into()));
        }
        Ok(SolverOptions { tol, steady: SteadyOptions { points: self.points, tol }, max_outer: self.max_outer })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub horizon_events: u64,
    /// Defaults to a tenth of the horizon.
    pub warmup_events: Option<u64>,
    pub seed: u64,
    pub replications: usize,
    pub batches: usize,
    /// Line-delimited trace of the first replication, capped at 10⁶ lines.
    pub trace_path: Option<String>,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self { horizon_events: 10_000_000, warmup_events: None, seed: 1, replications: 5, batches: 20, trace_path: None }
    }
}

impl SimulationSection {
    pub fn budget(&self) -> SimBudget {
        SimBudget { horizon_events: self.horizon_events, replications: self.replications, seed: self.seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationSpec {
    /// `"S1"`, `"T2"`, ...
    pub coordinate: String,
    #[serde(flatten)]
    pub target: DeviationTarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviationTarget {
    Value(f64),
    Delta(f64),
}

pub fn parse_coordinate(s: &str) -> Result<Coordinate, CliError> {
    let bad = || CliError::Config(format!("deviation coordinate {s:?} should look like S1 or T1"));
    let (head, tail) = s.split_at(s.char_indices().nth(1).map_or(s.len(), |(i, _)| i));
    let n: usize = tail.parse().map_err(|_| bad())?;
    match head {
        "S" | "s" => Ok(Coordinate::S(n)),
        "T" | "t" => Ok(Coordinate::T(n)),
        _ => Err(bad()),
    }
}

impl DeviationSpec {
    pub fn resolve(&self, profile: &ThresholdProfile) -> Result<Deviation, CliError> {
        let c = parse_coordinate(&self.coordinate)?;
        let base = match c {
            Coordinate::S(n) => profile.s_n(n),
            Coordinate::T(n) => profile.t_n(n),
        };
        let value = match self.target {
            DeviationTarget::Value(v) => v,
            DeviationTarget::Delta(d) => (base + d).max(0.0),
        };
        if !value.is_finite() {
            return Err(CliError::Config(format!("deviation {} has no finite value", self.coordinate)));
        }
        Ok(Deviation { coordinate: c, value })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// `V`, `C`, `lambda`, or a model parameter such as `rate`, `shape`,
    /// `scale`, `probs[0]`, `rates[1]`.
    pub parameter: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub market: MarketParams,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    /// Profile for `simulate`, or to verify instead of solving.
    #[serde(default)]
    pub profile: Option<ThresholdProfile>,
    /// Path to a `profile.json` written by `solve`.
    #[serde(default)]
    pub profile_path: Option<String>,
    #[serde(default)]
    pub deviations: Option<Vec<DeviationSpec>>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|_| CliError::Config(format!("config not found: {}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.market.validate().map_err(|e| CliError::Config(format!("market: {e}")))?;
        self.solver.options()?;
        let s = &self.simulation;
        let warm = s.warmup_events.unwrap_or(s.horizon_events / 10);
        if s.horizon_events == 0 || warm >= s.horizon_events {
            return Err(CliError::Config("simulation: horizon_events must be positive and exceed warmup_events".into()));
        }
        if s.replications == 0 || s.batches < 2 {
            return Err(CliError::Config("simulation: need replications >= 1 and batches >= 2".into()));
        }
        if let Some(sw) = &self.sweep {
            if sw.values.is_empty() {
                return Err(CliError::Config("sweep: empty range".into()));
            }
        }
        Ok(())
    }

    pub fn params(&self) -> MarketParams {
        self.market
    }

    /// Profile given inline or by path, if any.
    pub fn given_profile(&self) -> Result<Option<ThresholdProfile>, CliError> {
        if let Some(p) = &self.profile {
            return Ok(Some(p.clone()));
        }
        let Some(path) = &self.profile_path else { return Ok(None) };
        let text = fs::read_to_string(path).map_err(|_| CliError::Config(format!("profile not found: {path}")))?;
        let p: ThresholdProfile = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("profile: {e}")))?;
        Ok(Some(p))
    }
}

/// Config with one sweep parameter replaced.
pub fn with_parameter(cfg: &RunConfig, name: &str, value: f64) -> Result<RunConfig, CliError> {
    let mut out = cfg.clone();
    let unknown = || CliError::Config(format!("sweep: unknown parameter {name:?}"));
    match name {
        "V" => out.market.v = value,
        "C" => out.market.c = value,
        "lambda" => out.market.lambda = value,
        _ => {
            let (field, index) = match name.find('[') {
                Some(i) => {
                    let idx: usize = name[i + 1..].trim_end_matches(']').parse().map_err(|_| unknown())?;
                    (&name[..i], Some(idx))
                }
                None => (name, None),
            };
            let slot = |v: &mut Vec<f64>| -> Result<(), CliError> {
                let i = index.ok_or_else(unknown)?;
                *v.get_mut(i).ok_or_else(unknown)? = value;
                Ok(())
            };
            match (&mut out.model, field) {
                (ModelSpec::Exponential { rate }, "rate") => *rate = value,
                (ModelSpec::Pareto { shape, .. }, "shape") => *shape = value,
                (ModelSpec::Pareto { scale, .. }, "scale") => *scale = value,
                (ModelSpec::Uniform { lo, .. }, "lo") => *lo = value,
                (ModelSpec::Uniform { hi, .. }, "hi") => *hi = value,
                (ModelSpec::Hyperexponential { probs, .. }, "probs") => {
                    // Two-phase models keep the probabilities summing to one.
                    slot(probs)?;
                    if probs.len() == 2 {
                        let i = index.unwrap_or(0);
                        probs[1 - i] = 1.0 - value;
                    }
                }
                (ModelSpec::Hyperexponential { rates, .. }, "rates") => slot(rates)?,
                _ => return Err(unknown()),
            }
        }
    }
    out.validate()?;
    Ok(out)
}
