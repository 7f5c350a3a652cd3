//! Configuration file schema, command-line overrides and resolution.
//!
//! The file is TOML with four sections; every key can also be given as a
//! kebab-case flag, and flags win over the file:
//!
//! ```toml
//! [model]
//! n_spins = 20
//! temperature = 3.7
//! coupling_scale = 1.0
//! asymmetry = 1.0
//! external_field = 0.0      # or a path to a file with one value per spin
//! seed = 1
//!
//! [simulation]
//! data_length = 2e6
//! burn_in_sweeps = 1000
//! lag_attempts = 1
//! estimator = "tanh"        # or "finite_difference"
//!
//! [inference]
//! methods = ["nmf", "tap-iterative", "tap-cubic"]
//! tolerance = 1e-5
//! max_iterations = 10000
//!
//! [sweep]
//! values = [2.5, 3.0, 3.7, 5.0, 8.0]
//! realizations = 5
//! workers = 4
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use kising_core::harness::{ExperimentConfig, SweepVariable};
use kising_core::inference::{Method, TapIterationOptions};
use kising_core::io::read_vector;
use kising_core::moments::DEstimator;
use kising_core::sk_model::ModelParams;
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
    #[error("missing required key `{0}`")]
    Missing(String),
    #[error("config file {path}: {message}")]
    File { path: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.to_owned(), message: message.into() }
}

/// A TOML number written either as an integer or a float.
#[derive(Debug, Clone, Copy, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum Number {
    Int(i64),
    Float(f64),
}

impl Number {
    fn as_f64(self) -> f64 {
        match self {
            Number::Int(i) => i as f64,
            Number::Float(f) => f,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum FieldValue {
    Scalar(Number),
    Path(String),
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub n_spins: Option<Number>,
    pub temperature: Option<Number>,
    pub coupling_scale: Option<Number>,
    pub asymmetry: Option<Number>,
    pub external_field: Option<FieldValue>,
    pub seed: Option<Number>,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub data_length: Option<Number>,
    pub burn_in_sweeps: Option<Number>,
    pub lag_attempts: Option<Number>,
    pub estimator: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct InferenceSection {
    pub methods: Option<Vec<String>>,
    pub tolerance: Option<Number>,
    pub max_iterations: Option<Number>,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub values: Option<Vec<Number>>,
    pub realizations: Option<Number>,
    pub workers: Option<Number>,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub inference: InferenceSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let file_error = |message: String| ConfigError::File { path: path.display().to_string(), message };
        let text = fs::read_to_string(path).map_err(|e| file_error(e.to_string()))?;
        Self::parse(&text).map_err(|e| file_error(e.to_string()))
    }
}

/// Flags mirroring every configuration key.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub n_spins: Option<usize>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub temperature: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub coupling_scale: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub asymmetry: Option<f64>,
    /// Scalar broadcast to every spin, or a path to a per-spin vector file.
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub external_field: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Measured attempts; accepts scientific notation such as 2e7.
    #[arg(long, global = true)]
    pub data_length: Option<f64>,
    #[arg(long, global = true)]
    pub burn_in_sweeps: Option<u64>,
    #[arg(long, global = true)]
    pub lag_attempts: Option<u64>,
    /// tanh or finite_difference.
    #[arg(long, global = true)]
    pub estimator: Option<String>,
    /// Comma-separated list of nmf, tap-iterative, tap-cubic.
    #[arg(long, global = true, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    #[arg(long, global = true)]
    pub tolerance: Option<f64>,
    #[arg(long, global = true)]
    pub max_iterations: Option<usize>,
    /// Comma-separated temperatures or data lengths.
    #[arg(long, global = true, value_delimiter = ',', allow_negative_numbers = true)]
    pub sweep_values: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub realizations: Option<usize>,
    /// Worker threads for sweeps (falls back to KISING_WORKERS, then the core count).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Use the full-scale data lengths and realization counts.
    #[arg(long, global = true)]
    pub full_scale: bool,
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
}

/// Which subcommand a configuration is resolved for; selects defaults and
/// required keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Generate,
    Simulate,
    Infer,
    SweepTemperature,
    SweepLength,
    RootFraction,
    Scatter,
    OracleCheck,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Generate => "generate",
            CommandKind::Simulate => "simulate",
            CommandKind::Infer => "infer",
            CommandKind::SweepTemperature => "sweep-temperature",
            CommandKind::SweepLength => "sweep-length",
            CommandKind::RootFraction => "root-fraction",
            CommandKind::Scatter => "scatter",
            CommandKind::OracleCheck => "oracle-check",
        }
    }

    fn sweeps_temperature(self) -> bool {
        matches!(self, CommandKind::SweepTemperature | CommandKind::RootFraction)
    }

    fn sweeps_length(self) -> bool {
        matches!(self, CommandKind::SweepLength | CommandKind::Scatter)
    }

    fn needs_temperature(self) -> bool {
        !matches!(self, CommandKind::Generate | CommandKind::OracleCheck) && !self.sweeps_temperature()
    }

    fn default_output(self) -> &'static str {
        match self {
            CommandKind::Generate => "couplings.txt",
            CommandKind::Simulate => "moments.txt",
            CommandKind::Infer => "inference.txt",
            CommandKind::SweepTemperature => "sweep-temperature.csv",
            CommandKind::SweepLength => "sweep-length.csv",
            CommandKind::RootFraction => "root-fraction.csv",
            CommandKind::Scatter => "scatter.csv",
            CommandKind::OracleCheck => "oracle-check.txt",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExternalField {
    Scalar(f64),
    File { path: PathBuf, values: Vec<f64> },
}

/// Fully resolved configuration with every default explicit.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub command: CommandKind,
    pub n_spins: usize,
    /// Absent only where the sweep supplies the temperatures.
    pub temperature: Option<f64>,
    pub coupling_scale: f64,
    pub asymmetry: f64,
    pub external_field: ExternalField,
    pub seed: u64,
    pub data_length: u64,
    pub burn_in_sweeps: u64,
    pub lag_attempts: u64,
    pub estimator: DEstimator,
    pub methods: Vec<Method>,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub sweep_values: Vec<f64>,
    pub realizations: usize,
    pub workers: usize,
    pub full_scale: bool,
    pub output: PathBuf,
}

pub const DEFAULT_BURN_IN_SWEEPS: u64 = 1000;
pub const DEFAULT_TEMPERATURE_GRID: [f64; 5] = [2.5, 3.0, 3.7, 5.0, 8.0];
pub const DEFAULT_DESK_LENGTH: u64 = 200_000_000;
pub const ORACLE_LENGTH: u64 = 10_000_000;
pub const DEFAULT_REALIZATIONS: usize = 5;
pub const FULL_SCALE_REALIZATIONS: usize = 10;

/// 1.0 to 4.5 in steps of 0.25; includes T = 1.5 and T = 3.
pub fn root_fraction_grid() -> Vec<f64> {
    (0..15).map(|i| (4 + i) as f64 / 4.0).collect()
}

fn positive_int(key: &str, value: f64) -> Result<u64, ConfigError> {
    if !(value.is_finite() && value >= 1.0 && value.fract() == 0.0 && value <= u64::MAX as f64) {
        return Err(invalid(key, format!("must be a positive whole number, got {value}")));
    }
    Ok(value as u64)
}

fn nonnegative_int(key: &str, value: f64) -> Result<u64, ConfigError> {
    if value == 0.0 {
        return Ok(0);
    }
    positive_int(key, value)
}

fn seed_value(value: Number) -> Result<u64, ConfigError> {
    match value {
        Number::Int(i) if i >= 0 => Ok(i as u64),
        other => Err(invalid("seed", format!("must be a nonnegative integer, got {other:?}"))),
    }
}

fn positive_real(key: &str, value: f64) -> Result<f64, ConfigError> {
    if !(value > 0.0 && value.is_finite()) {
        return Err(invalid(key, format!("must be positive and finite, got {value}")));
    }
    Ok(value)
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>, ConfigError> {
    if names.is_empty() {
        return Err(invalid("methods", "must name at least one method"));
    }
    let mut out: Vec<Method> = Vec::new();
    for name in names {
        let m: Method = name.trim().parse().map_err(|e: String| invalid("methods", e))?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    Ok(out)
}

fn load_field(text: &str, n: usize) -> Result<ExternalField, ConfigError> {
    if let Ok(v) = text.trim().parse::<f64>() {
        if !v.is_finite() {
            return Err(invalid("external_field", "must be finite"));
        }
        return Ok(ExternalField::Scalar(v));
    }
    let path = PathBuf::from(text);
    let file = fs::File::open(&path).map_err(|e| invalid("external_field", format!("{}: {e}", path.display())))?;
    let values = read_vector(std::io::BufReader::new(file))
        .map_err(|e| invalid("external_field", format!("{}: {e}", path.display())))?;
    if values.len() != n {
        return Err(invalid("external_field", format!("file has {} values, n_spins is {n}", values.len())));
    }
    Ok(ExternalField::File { path, values })
}

/// Merges the file and flags for `command`. `env_workers` is the value of
/// `KISING_WORKERS`, `cores` the fallback worker count.
pub fn resolve(
    file: &FileConfig,
    flags: &Overrides,
    command: CommandKind,
    env_workers: Option<&str>,
    cores: usize,
) -> Result<ResolvedConfig, ConfigError> {
    let m = &file.model;
    let oracle = command == CommandKind::OracleCheck;

    let n_spins = match (flags.n_spins, m.n_spins) {
        (Some(n), _) => n as u64,
        (None, Some(n)) => positive_int("n_spins", n.as_f64())?,
        (None, None) if oracle => 3,
        (None, None) => return Err(ConfigError::Missing("n_spins".into())),
    };
    if n_spins < 2 {
        return Err(invalid("n_spins", format!("must be at least 2, got {n_spins}")));
    }
    let n_spins = n_spins as usize;

    let temperature = match flags.temperature.or(m.temperature.map(Number::as_f64)) {
        Some(t) => Some(positive_real("temperature", t)?),
        None if oracle => Some(1.0),
        None if command.needs_temperature() => return Err(ConfigError::Missing("temperature".into())),
        None => None,
    };
    let coupling_scale =
        positive_real("coupling_scale", flags.coupling_scale.or(m.coupling_scale.map(Number::as_f64)).unwrap_or(1.0))?;
    let default_asymmetry = if oracle { 0.0 } else { 1.0 };
    let asymmetry = flags.asymmetry.or(m.asymmetry.map(Number::as_f64)).unwrap_or(default_asymmetry);
    if !(asymmetry >= 0.0 && asymmetry.is_finite()) {
        return Err(invalid("asymmetry", format!("must be nonnegative and finite, got {asymmetry}")));
    }
    let field_text = match (&flags.external_field, &m.external_field) {
        (Some(text), _) => Some(text.clone()),
        (None, Some(FieldValue::Scalar(v))) => Some(v.as_f64().to_string()),
        (None, Some(FieldValue::Path(p))) => Some(p.clone()),
        (None, None) => None,
    };
    let external_field = match field_text {
        Some(text) => load_field(&text, n_spins)?,
        None => ExternalField::Scalar(0.0),
    };
    let seed = match (flags.seed, m.seed) {
        (Some(s), _) => s,
        (None, Some(s)) => seed_value(s)?,
        (None, None) => 0,
    };

    let s = &file.simulation;
    let full_scale = flags.full_scale;
    let default_length = match command {
        CommandKind::SweepTemperature if full_scale => n_spins as u64 * 10_000_000_000,
        CommandKind::SweepTemperature => DEFAULT_DESK_LENGTH,
        CommandKind::OracleCheck => ORACLE_LENGTH,
        _ => n_spins as u64 * 1_000_000,
    };
    let data_length = match flags.data_length.or(s.data_length.map(Number::as_f64)) {
        Some(l) => positive_int("data_length", l)?,
        None => default_length,
    };
    let burn_in_sweeps = match flags.burn_in_sweeps {
        Some(b) => b,
        None => match s.burn_in_sweeps {
            Some(b) => nonnegative_int("burn_in_sweeps", b.as_f64())?,
            None => DEFAULT_BURN_IN_SWEEPS,
        },
    };
    let lag_attempts = match flags.lag_attempts {
        Some(0) => return Err(invalid("lag_attempts", "must be at least 1")),
        Some(l) => l,
        None => match s.lag_attempts {
            Some(l) => positive_int("lag_attempts", l.as_f64())?,
            None => 1,
        },
    };
    if data_length <= lag_attempts + 1 || data_length < n_spins as u64 {
        return Err(invalid("data_length", format!("{data_length} is too short for N = {n_spins} and the lag")));
    }
    let estimator = match flags.estimator.as_ref().or(s.estimator.as_ref()) {
        Some(e) => e.parse().map_err(|e: String| invalid("estimator", e))?,
        None => DEstimator::Tanh,
    };

    let inf = &file.inference;
    let methods = match flags.methods.as_ref().or(inf.methods.as_ref()) {
        Some(names) => parse_methods(names)?,
        None => Method::ALL.to_vec(),
    };
    let defaults = TapIterationOptions::default();
    let tolerance = positive_real(
        "tolerance",
        flags.tolerance.or(inf.tolerance.map(Number::as_f64)).unwrap_or(defaults.tolerance),
    )?;
    let max_iterations = match flags.max_iterations {
        Some(0) => return Err(invalid("max_iterations", "must be at least 1")),
        Some(k) => k,
        None => match inf.max_iterations {
            Some(k) => positive_int("max_iterations", k.as_f64())? as usize,
            None => defaults.max_iterations,
        },
    };

    let sw = &file.sweep;
    let file_values = sw.values.as_ref().map(|v| v.iter().map(|x| x.as_f64()).collect::<Vec<_>>());
    let sweep_values = match flags.sweep_values.clone().or(file_values) {
        Some(v) => v,
        None => match command {
            CommandKind::SweepTemperature => DEFAULT_TEMPERATURE_GRID.to_vec(),
            CommandKind::RootFraction => root_fraction_grid(),
            CommandKind::SweepLength => {
                let top = if full_scale { 10 } else { 7 };
                (5..=top).map(|e| n_spins as f64 * 10f64.powi(e)).collect()
            }
            CommandKind::Scatter => {
                vec![n_spins as f64 * 1e5, n_spins as f64 * if full_scale { 1e7 } else { 1e6 }]
            }
            _ => Vec::new(),
        },
    };
    if command.sweeps_temperature() || command.sweeps_length() {
        if sweep_values.is_empty() {
            return Err(invalid("sweep_values", "must not be empty"));
        }
        if sweep_values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("sweep_values", "must be strictly increasing"));
        }
        for &v in &sweep_values {
            if command.sweeps_temperature() {
                positive_real("sweep_values", v)?;
            } else {
                let l = positive_int("sweep_values", v)?;
                if l <= lag_attempts + 1 || l < n_spins as u64 {
                    return Err(invalid("sweep_values", format!("data length {l} is too short")));
                }
            }
        }
    }
    let realizations = match flags.realizations {
        Some(0) => return Err(invalid("realizations", "must be at least 1")),
        Some(r) => r,
        None => match sw.realizations {
            Some(r) => positive_int("realizations", r.as_f64())? as usize,
            None if full_scale => FULL_SCALE_REALIZATIONS,
            None => DEFAULT_REALIZATIONS,
        },
    };
    let workers = match flags.workers {
        Some(0) => return Err(invalid("workers", "must be at least 1")),
        Some(w) => w,
        None => match env_workers {
            Some(text) => match text.trim().parse::<usize>() {
                Ok(w) if w > 0 => w,
                _ => {
                    return Err(invalid("workers", format!("KISING_WORKERS must be a positive integer, got `{text}`")))
                }
            },
            None => match sw.workers {
                Some(w) => positive_int("workers", w.as_f64())? as usize,
                None => cores.max(1),
            },
        },
    };
    let output = flags.output.clone().unwrap_or_else(|| PathBuf::from(command.default_output()));

    Ok(ResolvedConfig {
        command,
        n_spins,
        temperature,
        coupling_scale,
        asymmetry,
        external_field,
        seed,
        data_length,
        burn_in_sweeps,
        lag_attempts,
        estimator,
        methods,
        tolerance,
        max_iterations,
        sweep_values,
        realizations,
        workers,
        full_scale,
        output,
    })
}

impl ResolvedConfig {
    pub fn field_vector(&self) -> Vec<f64> {
        match &self.external_field {
            ExternalField::Scalar(v) => vec![*v; self.n_spins],
            ExternalField::File { values, .. } => values.clone(),
        }
    }

    /// Model parameters; sweeps without a fixed temperature use their first
    /// sweep value as the base temperature.
    pub fn model_params(&self) -> Result<ModelParams, ConfigError> {
        let t = self.temperature.or_else(|| self.sweep_values.first().copied()).unwrap_or(1.0);
        ModelParams::new(self.n_spins, t, self.coupling_scale, self.asymmetry, self.field_vector(), self.seed)
            .map_err(|e| invalid("model", e.to_string()))
    }

    pub fn tap_options(&self) -> TapIterationOptions {
        TapIterationOptions { tolerance: self.tolerance, max_iterations: self.max_iterations }
    }

    pub fn experiment(&self) -> Result<ExperimentConfig, ConfigError> {
        let sweep_variable =
            if self.command.sweeps_temperature() { SweepVariable::Temperature } else { SweepVariable::DataLength };
        Ok(ExperimentConfig {
            base_params: self.model_params()?,
            sweep_variable,
            sweep_values: self.sweep_values.clone(),
            realizations: self.realizations,
            methods: self.methods.clone(),
            d_estimator: self.estimator,
            data_length: self.data_length,
            burn_in_sweeps: self.burn_in_sweeps,
            lag_attempts: self.lag_attempts,
            tap_options: self.tap_options(),
            workers: self.workers,
            output_path: Some(self.output.clone()),
        })
    }

    /// `key=value` lines of every setting that determines output content.
    pub fn content_lines(&self) -> Vec<String> {
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let field = match &self.external_field {
            ExternalField::Scalar(v) => v.to_string(),
            ExternalField::File { path, values } => format!("{} [{}]", path.display(), list(values)),
        };
        let methods: Vec<&str> = self.methods.iter().map(|m| m.name()).collect();
        vec![
            format!("command={}", self.command.name()),
            format!("n_spins={}", self.n_spins),
            format!("temperature={}", self.temperature.map_or("none".to_owned(), |t| t.to_string())),
            format!("coupling_scale={}", self.coupling_scale),
            format!("asymmetry={}", self.asymmetry),
            format!("external_field={field}"),
            format!("seed={}", self.seed),
            format!("data_length={}", self.data_length),
            format!("burn_in_sweeps={}", self.burn_in_sweeps),
            format!("lag_attempts={}", self.lag_attempts),
            format!("estimator={}", self.estimator.name()),
            format!("methods={}", methods.join(",")),
            format!("tolerance={}", self.tolerance),
            format!("max_iterations={}", self.max_iterations),
            format!("sweep_values={}", list(&self.sweep_values)),
            format!("realizations={}", self.realizations),
            format!("full_scale={}", self.full_scale),
        ]
    }
}

impl fmt::Display for ResolvedConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for line in self.content_lines() {
            writeln!(f, "{line}")?;
        }
        writeln!(f, "workers={}", self.workers)?;
        writeln!(f, "output={}", self.output.display())
    }
}
