//! Experiment files.
//!
//! ```toml
//! [schedule]
//! kind = "cosine"
//! gamma_max = 0.1
//!
//! [optimizer]
//! method = "sgd"
//! momentum = 0.9
//! lambda = 5e-3
//! decay_mode = "corrected"
//!
//! [[layers]]
//! dim = 256
//! sigma = 1.0
//!
//! [run]
//! steps = 20000
//! seed = 1
//!
//! [sweep]
//! lambda = [1e-4, 1e-3]
//! ```
//!
//! Every `[sweep]` list multiplies the grid; an absent or empty `[sweep]`
//! yields one run.

use std::fmt;
use std::path::Path;

use serde::Deserialize;
use wdlab::oracle::Activation;
use wdlab::{
    AdamDecayStyle, DecayMode, Error, LayerSpec, Method, MlpSpec, OptimizerConfig, OracleKind,
    RunConfig, Schedule, ScheduleKind,
};

/// A configuration problem, with the 1-based source line when one is known.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub source: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{}:{}: {}", self.source, line, self.message),
            None => write!(f, "{}: {}", self.source, self.message),
        }
    }
}

impl std::error::Error for Diagnostic {}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentFile {
    schedule: ScheduleSection,
    optimizer: OptimizerSection,
    layers: Vec<LayerSection>,
    run: RunSection,
    #[serde(default)]
    sweep: SweepSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleSection {
    #[serde(default = "default_kind")]
    kind: String,
    gamma_max: f64,
    #[serde(default)]
    gamma_min: f64,
    #[serde(default)]
    warmup_steps: usize,
}

fn default_kind() -> String {
    "constant".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerSection {
    #[serde(default = "default_method")]
    method: String,
    #[serde(default = "default_decay_mode")]
    decay_mode: String,
    lambda: f64,
    #[serde(default)]
    momentum: f64,
    #[serde(default)]
    dampening: f64,
    #[serde(default = "default_beta1")]
    beta1: f64,
    #[serde(default = "default_beta2")]
    beta2: f64,
    #[serde(default = "default_epsilon")]
    epsilon: f64,
    #[serde(default = "default_adam_style")]
    adam_decay_style: String,
}

fn default_method() -> String {
    "sgd".into()
}
fn default_decay_mode() -> String {
    "coupled".into()
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_adam_style() -> String {
    "decoupled".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerSection {
    dim: usize,
    #[serde(default = "one")]
    initial_scale: f64,
    #[serde(default = "one")]
    sigma: f64,
    #[serde(default = "yes")]
    normalized: bool,
}

fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    steps: usize,
    seed: u64,
    #[serde(default = "default_ema")]
    ema_decay: f64,
    #[serde(default = "default_oracle")]
    oracle: String,
    #[serde(default)]
    mlp_input_dim: Option<usize>,
    #[serde(default)]
    mlp_batch: Option<usize>,
    #[serde(default)]
    mlp_activation: Option<String>,
}

fn default_ema() -> f64 {
    0.99
}
fn default_oracle() -> String {
    "synthetic".into()
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSection {
    #[serde(default)]
    gamma_max: Vec<f64>,
    #[serde(default)]
    lambda: Vec<f64>,
    #[serde(default)]
    momentum: Vec<f64>,
    #[serde(default)]
    decay_mode: Vec<String>,
    #[serde(default)]
    seed: Vec<u64>,
}

/// One point of the sweep grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedRun {
    pub index: usize,
    /// Swept keys and their values at this grid point, in file order.
    pub sweep_point: Vec<(String, String)>,
    pub config: RunConfig,
}

/// Reads, expands and validates an experiment file.
pub fn parse_config(path: &Path) -> Result<Vec<PlannedRun>, Diagnostic> {
    let source = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Diagnostic {
        source: source.clone(),
        line: None,
        message: format!("cannot read config: {e}"),
    })?;
    parse_config_str(&text, &source)
}

pub fn parse_config_str(text: &str, source: &str) -> Result<Vec<PlannedRun>, Diagnostic> {
    let index = KeyIndex::new(text);
    let file: ExperimentFile = toml::from_str(text).map_err(|e| Diagnostic {
        source: source.into(),
        line: e.span().map(|s| line_of_offset(text, s.start)),
        message: e.message().trim().to_string(),
    })?;
    let diag = |field: &str, message: String| Diagnostic {
        source: source.into(),
        line: index.locate(field),
        message: format!("`{field}`: {message}"),
    };
    let lift = |e: Error| match e {
        Error::Config { field, message } => diag(&field, message),
        other => Diagnostic {
            source: source.into(),
            line: None,
            message: other.to_string(),
        },
    };

    let sweep = &file.sweep;
    let axes: Vec<(&str, usize)> = [
        ("gamma_max", sweep.gamma_max.len()),
        ("lambda", sweep.lambda.len()),
        ("momentum", sweep.momentum.len()),
        ("decay_mode", sweep.decay_mode.len()),
        ("seed", sweep.seed.len()),
    ]
    .into_iter()
    .filter(|(_, n)| *n > 0)
    .collect();
    let total: usize = axes.iter().map(|(_, n)| n).product();

    let mut runs = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let mut picks = vec![0usize; axes.len()];
        for (k, (_, n)) in axes.iter().enumerate().rev() {
            picks[k] = rem % n;
            rem /= n;
        }
        let mut gamma_max = file.schedule.gamma_max;
        let mut lambda = file.optimizer.lambda;
        let mut momentum = file.optimizer.momentum;
        let mut decay_mode = file.optimizer.decay_mode.clone();
        let mut seed = file.run.seed;
        let mut point = Vec::new();
        for ((name, _), &i) in axes.iter().zip(&picks) {
            let shown = match *name {
                "gamma_max" => {
                    gamma_max = sweep.gamma_max[i];
                    gamma_max.to_string()
                }
                "lambda" => {
                    lambda = sweep.lambda[i];
                    lambda.to_string()
                }
                "momentum" => {
                    momentum = sweep.momentum[i];
                    momentum.to_string()
                }
                "decay_mode" => {
                    decay_mode = sweep.decay_mode[i].clone();
                    decay_mode.clone()
                }
                _ => {
                    seed = sweep.seed[i];
                    seed.to_string()
                }
            };
            point.push((name.to_string(), shown));
        }

        let kind: ScheduleKind = file.schedule.kind.parse().map_err(lift)?;
        let schedule = Schedule {
            kind,
            gamma_max,
            gamma_min: file.schedule.gamma_min,
            warmup_steps: file.schedule.warmup_steps,
            total_steps: file.run.steps,
        };
        let opt = &file.optimizer;
        let optimizer = OptimizerConfig {
            method: opt.method.parse::<Method>().map_err(lift)?,
            decay_mode: decay_mode.parse::<DecayMode>().map_err(lift)?,
            lambda,
            beta1: opt.beta1,
            beta2: opt.beta2,
            epsilon: opt.epsilon,
            momentum,
            dampening: opt.dampening,
            adam_decay_style: opt
                .adam_decay_style
                .parse::<AdamDecayStyle>()
                .map_err(lift)?,
        };
        let oracle = match file.run.oracle.as_str() {
            "synthetic" => OracleKind::Synthetic,
            "mlp" => {
                let activation =
                    match file.run.mlp_activation.as_deref().unwrap_or("relu") {
                        "relu" => Activation::Relu,
                        "identity" => Activation::Identity,
                        other => return Err(diag(
                            "run.mlp_activation",
                            format!(
                                "unknown activation {other:?}, expected \"relu\" or \"identity\""
                            ),
                        )),
                    };
                OracleKind::Mlp(MlpSpec {
                    input_dim: file.run.mlp_input_dim.unwrap_or(8),
                    batch_size: file.run.mlp_batch.unwrap_or(16),
                    activation,
                })
            }
            other => {
                return Err(diag(
                    "run.oracle",
                    format!("unknown oracle {other:?}, expected \"synthetic\" or \"mlp\""),
                ))
            }
        };
        let layers = file
            .layers
            .iter()
            .map(|l| LayerSpec {
                dim: l.dim,
                initial_scale: l.initial_scale,
                sigma: l.sigma,
                normalized: l.normalized,
            })
            .collect();
        let config = RunConfig {
            layers,
            oracle,
            optimizer,
            schedule,
            total_steps: file.run.steps,
            ema_decay: file.run.ema_decay,
            seed,
        };
        config.validate().map_err(lift)?;
        runs.push(PlannedRun {
            index: flat,
            sweep_point: point,
            config,
        });
    }
    Ok(runs)
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Key positions by section, for pointing validation errors at a line.
struct KeyIndex {
    /// (section, key, 1-based line); section headers use an empty key.
    entries: Vec<(String, String, usize)>,
}

impl KeyIndex {
    fn new(text: &str) -> Self {
        let mut entries = Vec::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if let Some(name) = line.strip_prefix('[') {
                section = name
                    .trim_matches(|c| c == '[' || c == ']')
                    .trim()
                    .to_string();
                entries.push((section.clone(), String::new(), i + 1));
            } else if let Some((key, _)) = line.split_once('=') {
                entries.push((section.clone(), key.trim().to_string(), i + 1));
            }
        }
        Self { entries }
    }

    fn find(&self, section: &str, key: &str) -> Option<usize> {
        self.entries
            .iter()
            .find(|(s, k, _)| s == section && k == key)
            .map(|e| e.2)
    }

    /// A swept key points at `[sweep]`; otherwise the key in its section,
    /// falling back to the section header.
    fn locate(&self, field: &str) -> Option<usize> {
        let (section, key) = field.split_once('.').unwrap_or((field, ""));
        self.find("sweep", key)
            .or_else(|| self.find(section, key))
            .or_else(|| self.find(section, ""))
    }
}
