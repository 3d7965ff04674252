//! Experiment configuration: JSON with a model, a task and an output block.

use serde::Deserialize;
use serde_json::Value;

use telegraph_core::process::{Jump, StateRegime, Table2d, Velocity};
use telegraph_core::switching::{PrevSojourn, State};
use telegraph_core::{RegimeSpec, SojournDistribution, SwitchingModel};

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub model: ModelConfig,
    pub task: TaskConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub sojourn: [DistConfig; 2],
    pub states: [StateConfig; 2],
    #[serde(default)]
    pub initial_state: usize,
    /// Fixed sojourn before time 0; sampled from the opposite law when absent.
    #[serde(default)]
    pub prev_sojourn: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistConfig {
    Exponential { rate: f64 },
    Gamma { shape: f64, rate: f64 },
    Weibull { shape: f64, scale: f64 },
    Table { t: Vec<f64>, survival: Vec<f64> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateConfig {
    pub velocity: VelocityConfig,
    pub jump: JumpConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VelocityConfig {
    Constant {
        c: f64,
    },
    /// `a / (1 + a t)`
    Hyperbolic {
        a: f64,
    },
    /// `slope * t`
    Linear {
        slope: f64,
    },
    Table2d {
        #[serde(rename = "T_grid")]
        prev_grid: Vec<f64>,
        t_grid: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum JumpConfig {
    Constant { h: f64 },
    /// `b / (1 + a T)`
    Hyperbolic { a: f64, b: f64 },
    /// `slope * T`
    Linear { slope: f64 },
    Table { t: Vec<f64>, values: Vec<f64> },
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum MethodConfig {
    /// Closed form when sojourns are exponential and regimes constant.
    #[default]
    Auto,
    Grid,
    ClosedForm,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionConfig {
    pub payoff: String,
    #[serde(default)]
    pub strike: Option<f64>,
    pub maturity: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TaskConfig {
    Simulate {
        seed: u64,
        horizon: f64,
        samples: usize,
        #[serde(default = "one")]
        paths: usize,
        #[serde(default = "unit")]
        spot: f64,
    },
    Moments {
        seed: u64,
        t_max: f64,
        #[serde(default = "default_step")]
        step: f64,
        #[serde(default)]
        method: MethodConfig,
        #[serde(default)]
        literal_variance: bool,
        #[serde(default)]
        mc_paths: usize,
        #[serde(default)]
        mc_times: Vec<f64>,
        #[serde(default = "three")]
        z_tolerance: f64,
    },
    Density {
        seed: u64,
        t: f64,
        #[serde(default)]
        s: f64,
        x_min: f64,
        x_max: f64,
        #[serde(default = "default_cells")]
        cells: usize,
        #[serde(default = "default_step")]
        step: f64,
        #[serde(default)]
        mc_paths: usize,
        #[serde(default = "mass_tolerance")]
        mass_tolerance: f64,
        #[serde(default = "three")]
        z_tolerance: f64,
    },
    MartingaleCheck {
        seed: u64,
        t_max: f64,
        #[serde(default = "default_points")]
        points: usize,
        #[serde(default = "residual_tolerance")]
        tolerance: f64,
    },
    MeasureCheck {
        seed: u64,
        /// Physical rates; the model's exponential sojourns are the targets.
        mu: [f64; 2],
        t: f64,
        paths: usize,
        #[serde(default = "direct_paths")]
        direct_paths: usize,
        #[serde(default = "alpha")]
        alpha: f64,
    },
    Price {
        seed: u64,
        option: OptionConfig,
        #[serde(default = "unit")]
        spot: f64,
        #[serde(default)]
        rates: Option<[f64; 2]>,
        #[serde(default = "all_methods")]
        methods: Vec<String>,
        #[serde(default = "price_step")]
        step: f64,
        #[serde(default = "price_nodes")]
        nodes: usize,
        #[serde(default)]
        mc_paths: usize,
        #[serde(default)]
        s_grid: Vec<f64>,
        #[serde(default = "yes")]
        normalized: bool,
        #[serde(default = "one_percent")]
        tolerance: f64,
        #[serde(default = "three")]
        z_tolerance: f64,
    },
    Hv {
        seed: u64,
        t_max: f64,
        #[serde(default = "default_points")]
        points: usize,
        #[serde(default)]
        method: MethodConfig,
        #[serde(default = "default_step")]
        step: f64,
        #[serde(default)]
        mc_paths: usize,
        #[serde(default)]
        mc_times: Vec<f64>,
        #[serde(default = "edge_tolerance")]
        edge_tolerance: f64,
    },
}

fn one() -> usize {
    1
}
fn unit() -> f64 {
    1.0
}
fn three() -> f64 {
    3.0
}
fn yes() -> bool {
    true
}
fn default_step() -> f64 {
    1e-3
}
fn default_cells() -> usize {
    400
}
fn default_points() -> usize {
    200
}
fn mass_tolerance() -> f64 {
    1e-4
}
fn residual_tolerance() -> f64 {
    1e-8
}
fn direct_paths() -> usize {
    10_000
}
fn alpha() -> f64 {
    0.01
}
fn all_methods() -> Vec<String> {
    vec!["pde".into(), "fundamental".into(), "mc".into()]
}
fn price_step() -> f64 {
    5e-3
}
fn price_nodes() -> usize {
    801
}
fn one_percent() -> f64 {
    0.01
}
fn edge_tolerance() -> f64 {
    0.02
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// File-name prefix; defaults to the experiment name.
    #[serde(default)]
    pub prefix: Option<String>,
}

impl TaskConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Simulate { .. } => "simulate",
            Self::Moments { .. } => "moments",
            Self::Density { .. } => "density",
            Self::MartingaleCheck { .. } => "martingale-check",
            Self::MeasureCheck { .. } => "measure-check",
            Self::Price { .. } => "price",
            Self::Hv { .. } => "hv",
        }
    }

    pub fn seed(&self) -> u64 {
        match *self {
            Self::Simulate { seed, .. }
            | Self::Moments { seed, .. }
            | Self::Density { seed, .. }
            | Self::MartingaleCheck { seed, .. }
            | Self::MeasureCheck { seed, .. }
            | Self::Price { seed, .. }
            | Self::Hv { seed, .. } => seed,
        }
    }
}

impl DistConfig {
    pub fn build(&self) -> telegraph_core::Result<SojournDistribution> {
        match self {
            Self::Exponential { rate } => SojournDistribution::exponential(*rate),
            Self::Gamma { shape, rate } => SojournDistribution::gamma(*shape, *rate),
            Self::Weibull { shape, scale } => SojournDistribution::weibull(*shape, *scale),
            Self::Table { t, survival } => SojournDistribution::table(t.clone(), survival.clone()),
        }
    }
}

impl VelocityConfig {
    pub fn build(&self) -> telegraph_core::Result<Velocity> {
        Ok(match self {
            Self::Constant { c } => Velocity::Constant(*c),
            Self::Hyperbolic { a } => Velocity::Hyperbolic { a: *a },
            Self::Linear { slope } => Velocity::Linear { slope: *slope },
            Self::Table2d { prev_grid, t_grid, values } => {
                Velocity::Table2d(Table2d::new(prev_grid.clone(), t_grid.clone(), values.clone())?)
            }
        })
    }
}

impl JumpConfig {
    pub fn build(&self) -> telegraph_core::Result<Jump> {
        Ok(match self {
            Self::Constant { h } => Jump::Constant(*h),
            Self::Hyperbolic { a, b } => Jump::Hyperbolic { a: *a, b: *b },
            Self::Linear { slope } => Jump::Linear { slope: *slope },
            Self::Table { t, values } => Jump::table(t.clone(), values.clone())?,
        })
    }
}

/// Core objects built from a validated configuration.
#[derive(Debug, Clone)]
pub struct Model {
    pub dists: [SojournDistribution; 2],
    pub regime: RegimeSpec,
    pub initial_state: State,
    pub prev_sojourn: PrevSojourn,
}

impl Model {
    pub fn switching(&self, initial: State) -> SwitchingModel {
        SwitchingModel::new(self.dists[0].clone(), self.dists[1].clone())
            .with_initial_state(initial)
            .with_prev_sojourn(self.prev_sojourn)
    }
}

impl ModelConfig {
    pub fn build(&self) -> Result<Model, CliError> {
        let invalid = |e: telegraph_core::Error| CliError::Validation(e.to_string());
        let d0 = self.sojourn[0].build().map_err(invalid)?;
        let d1 = self.sojourn[1].build().map_err(invalid)?;
        let state = |s: &StateConfig| -> Result<StateRegime, CliError> {
            Ok(StateRegime { velocity: s.velocity.build().map_err(invalid)?, jump: s.jump.build().map_err(invalid)? })
        };
        let regime = RegimeSpec::new(state(&self.states[0])?, state(&self.states[1])?);
        let initial_state = State::from_index(self.initial_state)
            .ok_or_else(|| CliError::Validation(format!("initial_state must be 0 or 1, got {}", self.initial_state)))?;
        let prev_sojourn = match self.prev_sojourn {
            Some(v) if !(v >= 0.0) || !v.is_finite() => {
                return Err(CliError::Validation(format!("prev_sojourn must be a nonnegative number, got {v}")))
            }
            Some(v) => PrevSojourn::Fixed(v),
            None => PrevSojourn::Sampled,
        };
        Ok(Model { dists: [d0, d1], regime, initial_state, prev_sojourn })
    }
}

/// Applies `key=value` overrides to the raw document. Values are read as
/// JSON when they parse and as strings otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Parse(format!("override `{assignment}` is not of the form key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (k, part) in parts.iter().enumerate() {
        let last = k + 1 == parts.len();
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| CliError::Validation(format!("`{part}` in `{key}` is not an array index")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| CliError::Validation(format!("index {idx} in `{key}` is out of range ({len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(CliError::Validation(format!("`{key}` does not name a field"))),
        };
    }
    Err(CliError::Parse("empty override key".into()))
}

/// Parses a configuration, applying overrides to the raw document first.
pub fn parse(text: &str, overrides: &[String], seed: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let mut doc: Value = serde_json::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    if let Some(s) = seed {
        apply_override(&mut doc, &format!("task.seed={s}"))?;
    }
    serde_json::from_value(doc).map_err(|e| CliError::Validation(e.to_string()))
}
