//! Experiment and tracking configuration files (TOML, strictly validated).

use std::path::{Path, PathBuf};

use ato_core::demand::DemandModel;
use ato_core::model::{validate_system, AtoSystem, RawSystem};
use ato_core::sp::{Backend, SpOptions, Truncation};
use ato_core::tracking::{TargetGenerator, TrackingSpec};
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl ToString) -> ConfigError {
    ConfigError::Invalid { field: field.into(), message: message.to_string() }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    /// One row per component, one column per product.
    pub bom: Vec<Vec<f64>>,
    /// One lead time per component.
    pub lead_times: Vec<f64>,
    pub holding: Vec<f64>,
    pub backlog: Vec<f64>,
    /// Multiplies every holding and backlog cost.
    #[serde(default = "one")]
    pub cost_scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "kebab-case")]
pub enum DemandSection {
    Poisson { rates: Vec<f64> },
    Compound { rate: f64, sizes: Vec<Vec<i64>>, probs: Vec<f64> },
}

impl DemandSection {
    pub fn model(&self) -> Result<DemandModel, ConfigError> {
        match self {
            DemandSection::Poisson { rates } => DemandModel::independent_poisson(rates),
            DemandSection::Compound { rate, sizes, probs } => DemandModel::compound(*rate, sizes.clone(), probs.clone()),
        }
        .map_err(|e| invalid("demand", e))
    }
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SpSection {
    /// `nested` or `tree`.
    pub backend: Option<String>,
    /// Fixed truncation level M for every stage.
    pub truncation: Option<i64>,
    /// Scales the six-sigma truncation levels.
    pub truncation_scale: Option<f64>,
    /// Sample-average approximation with this many atoms per stage.
    pub saa_samples: Option<usize>,
    pub saa_seed: Option<u64>,
    pub leaf_budget: Option<f64>,
    pub memo_capacity: Option<usize>,
}

impl SpSection {
    pub fn options(&self) -> Result<SpOptions, ConfigError> {
        let mut o = SpOptions::default();
        match self.backend.as_deref() {
            None | Some("nested") => {}
            Some("tree") => o.backend = Backend::TreeLp,
            Some(other) => return Err(invalid("sp.backend", format!("unknown backend `{other}` (expected nested or tree)"))),
        }
        let chosen = [self.truncation.is_some(), self.truncation_scale.is_some(), self.saa_samples.is_some()];
        if chosen.iter().filter(|&&c| c).count() > 1 {
            return Err(invalid("sp", "truncation, truncation_scale and saa_samples are mutually exclusive"));
        }
        if let Some(m) = self.truncation {
            if m < 0 {
                return Err(invalid("sp.truncation", "must be non-negative"));
            }
            o.truncation = Truncation::Fixed(m);
        }
        if let Some(s) = self.truncation_scale {
            if !(s > 0.0) {
                return Err(invalid("sp.truncation_scale", "must be positive"));
            }
            o.truncation = Truncation::Scaled(s);
        }
        if let Some(samples) = self.saa_samples {
            if samples == 0 {
                return Err(invalid("sp.saa_samples", "must be positive"));
            }
            o.truncation = Truncation::Sampled { samples, seed: self.saa_seed.unwrap_or(0) };
        } else if self.saa_seed.is_some() {
            return Err(invalid("sp.saa_seed", "only valid with saa_samples"));
        }
        if let Some(b) = self.leaf_budget {
            o.leaf_budget = b;
        }
        if let Some(c) = self.memo_capacity {
            o.memo_capacity = c;
        }
        Ok(o)
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    /// Defaults to `max(10^4, 1250 L_K)` per case.
    pub horizon: Option<f64>,
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
    #[serde(default = "default_reps")]
    pub replications: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_audit")]
    pub audit_every: u64,
    #[serde(default = "yes")]
    pub record_timings: bool,
}

fn default_warmup() -> f64 {
    0.1
}
fn default_reps() -> u64 {
    30
}
fn default_audit() -> u64 {
    1000
}
fn yes() -> bool {
    true
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            horizon: None,
            warmup_fraction: default_warmup(),
            replications: default_reps(),
            seed: 0,
            audit_every: default_audit(),
            record_timings: true,
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CaseSection {
    pub label: String,
    #[serde(default)]
    pub orientation: String,
    /// Per-component lead times; defaults to `[system] lead_times`.
    pub lead_times: Option<Vec<f64>>,
    pub holding: Option<Vec<f64>>,
    pub backlog: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    output: Option<PathBuf>,
    system: SystemSection,
    demand: DemandSection,
    #[serde(default)]
    sp: SpSection,
    #[serde(default)]
    sim: SimSection,
    #[serde(default)]
    cases: Vec<CaseSection>,
}

/// One validated experiment case.
#[derive(Clone, Debug)]
pub struct Case {
    pub label: String,
    pub orientation: String,
    pub system: AtoSystem,
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub output: Option<PathBuf>,
    pub system: SystemSection,
    pub demand_section: DemandSection,
    pub demand: DemandModel,
    pub sp: SpOptions,
    pub sim: SimSection,
    /// The `[[cases]]` list, or the base system alone when none is given.
    pub cases: Vec<Case>,
}

fn build_system(
    field: &str,
    base: &SystemSection,
    leads: &[f64],
    holding: &[f64],
    backlog: &[f64],
) -> Result<AtoSystem, ConfigError> {
    let n = base.bom.len();
    if leads.len() != n {
        return Err(invalid(format!("{field}.lead_times"), format!("expected {n} entries (one per component), got {}", leads.len())));
    }
    if !(base.cost_scale > 0.0 && base.cost_scale.is_finite()) {
        return Err(invalid("system.cost_scale", "must be positive"));
    }
    let h = holding.iter().map(|v| v * base.cost_scale).collect();
    let b = backlog.iter().map(|v| v * base.cost_scale).collect();
    let raw = RawSystem::from_component_lead_times(base.bom.clone(), leads, h, b);
    validate_system(&raw).map_err(|e| invalid(field, e))
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let raw: RawExperiment = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let demand = raw.demand.model()?;
    let sp = raw.sp.options()?;
    let s = &raw.sim;
    if let Some(hz) = s.horizon {
        if !(hz > 0.0) {
            return Err(invalid("sim.horizon", "must be positive"));
        }
    }
    if !(0.0..1.0).contains(&s.warmup_fraction) {
        return Err(invalid("sim.warmup_fraction", "must be in [0, 1)"));
    }
    let base = build_system("system", &raw.system, &raw.system.lead_times, &raw.system.holding, &raw.system.backlog)?;
    if base.products() != demand.products() {
        return Err(invalid("demand", format!("{} products in demand, {} in bom", demand.products(), base.products())));
    }
    let mut cases = Vec::new();
    if raw.cases.is_empty() {
        cases.push(Case { label: "base".into(), orientation: String::new(), system: base });
    }
    for (idx, c) in raw.cases.iter().enumerate() {
        let field = format!("cases[{idx}]");
        let leads = c.lead_times.as_deref().unwrap_or(&raw.system.lead_times);
        let h = c.holding.as_deref().unwrap_or(&raw.system.holding);
        let b = c.backlog.as_deref().unwrap_or(&raw.system.backlog);
        let system = build_system(&field, &raw.system, leads, h, b)?;
        cases.push(Case { label: c.label.clone(), orientation: c.orientation.clone(), system });
    }
    Ok(ExperimentConfig {
        output: raw.output,
        system: raw.system,
        demand_section: raw.demand,
        demand,
        sp,
        sim: raw.sim,
        cases,
    })
}

pub fn read_to_string(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    parse_config(&read_to_string(path)?)
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "kebab-case")]
pub enum TargetSection {
    Constant { value: f64 },
    MovingWindow { kappa: f64, weights: Vec<f64>, lag: f64 },
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrackingSection {
    pub lead_times: Vec<f64>,
    #[serde(default = "default_tracking_reps")]
    pub replications: u64,
    #[serde(default)]
    pub seed: u64,
    pub weights: Vec<f64>,
    #[serde(default)]
    pub lags: Vec<f64>,
    #[serde(default = "minus_one")]
    pub start: f64,
    #[serde(default = "five")]
    pub w0_scale: f64,
    #[serde(default = "twenty")]
    pub horizon_factor: f64,
    pub target: TargetSection,
}

fn default_tracking_reps() -> u64 {
    200
}
fn minus_one() -> f64 {
    -1.0
}
fn five() -> f64 {
    5.0
}
fn twenty() -> f64 {
    20.0
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct RawTracking {
    output: Option<PathBuf>,
    demand: DemandSection,
    tracking: TrackingSection,
}

#[derive(Clone, Debug)]
pub struct TrackingConfig {
    pub output: Option<PathBuf>,
    pub spec: TrackingSpec,
    pub lead_times: Vec<f64>,
    pub replications: u64,
    pub seed: u64,
}

pub fn parse_tracking_config(text: &str) -> Result<TrackingConfig, ConfigError> {
    let raw: RawTracking = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let t = raw.tracking;
    if t.lead_times.is_empty() {
        return Err(invalid("tracking.lead_times", "grid must be non-empty"));
    }
    if t.lead_times.iter().any(|l| !(*l > 0.0)) {
        return Err(invalid("tracking.lead_times", "lead times must be positive"));
    }
    let target = match t.target {
        TargetSection::Constant { value } => TargetGenerator::Constant(value),
        TargetSection::MovingWindow { kappa, weights, lag } => TargetGenerator::MovingWindow { kappa, weights, lag },
    };
    let spec = TrackingSpec {
        demand: raw.demand.model()?,
        weights: t.weights,
        lags: t.lags,
        start: t.start,
        w0_scale: t.w0_scale,
        target,
        horizon_factor: t.horizon_factor,
    };
    ato_core::tracking::validate(&spec).map_err(|e| invalid("tracking", e))?;
    Ok(TrackingConfig { output: raw.output, spec, lead_times: t.lead_times, replications: t.replications, seed: t.seed })
}

pub fn load_tracking_config(path: &Path) -> Result<TrackingConfig, ConfigError> {
    parse_tracking_config(&read_to_string(path)?)
}
