//! Flat `key = value` experiment configuration.
//!
//! Keys are the field names of the federated and privacy settings. Blank
//! lines and `#` comments are ignored. Schedules use the `round:value`
//! breakpoint syntax (`1:30,6:60`) or a single constant. A later assignment
//! of a key wins, which is how command-line overrides are layered on top of a
//! file.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use dpfed_core::dp::DEFAULT_LAMBDA_MAX;
use dpfed_core::federation::{ClipRule, DpConfig, FederatedConfig, Schedule};
use dpfed_core::model::MNIST_ARCH;

use crate::error::{Error, Result};

/// Default local learning rate.
pub const DEFAULT_ETA: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub clients: usize,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub eta: f64,
    /// `None` means every client participates in every round.
    pub m_schedule: Option<Schedule<usize>>,
    pub max_rounds: u32,
    pub seed: u64,
    pub eval_every: u32,
    pub target_accuracy: Option<f64>,
    pub arch: Vec<usize>,
    /// Whether the differentially private aggregation is used. The remaining
    /// fields only matter when it is.
    pub dp: bool,
    pub sigma_schedule: Schedule<f64>,
    pub epsilon: f64,
    pub delta_threshold: f64,
    pub lambda_max: u32,
    pub clip: ClipRule,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            clients: 100,
            batch_size: 10,
            local_epochs: 1,
            eta: DEFAULT_ETA,
            m_schedule: None,
            max_rounds: 100,
            seed: 1,
            eval_every: 1,
            target_accuracy: None,
            arch: MNIST_ARCH.to_vec(),
            dp: true,
            sigma_schedule: Schedule::constant(1.0),
            epsilon: 8.0,
            delta_threshold: 1e-3,
            lambda_max: DEFAULT_LAMBDA_MAX,
            clip: ClipRule::Median,
        }
    }
}

pub const KEYS: [&str; 16] = [
    "clients",
    "batch_size",
    "local_epochs",
    "eta",
    "m_schedule",
    "max_rounds",
    "seed",
    "eval_every",
    "target_accuracy",
    "arch",
    "dp",
    "sigma_schedule",
    "epsilon",
    "delta_threshold",
    "lambda_max",
    "clip",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("bad value {value:?} for {key}"))),
    }
}

impl ExperimentConfig {
    /// Assigns one key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "clients" => self.clients = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "local_epochs" => self.local_epochs = parse(key, value)?,
            "eta" => self.eta = parse(key, value)?,
            "m_schedule" => {
                self.m_schedule = match value {
                    "all" => None,
                    _ => Some(value.parse()?),
                }
            }
            "max_rounds" => self.max_rounds = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "target_accuracy" => {
                self.target_accuracy = match value {
                    "none" => None,
                    _ => Some(parse(key, value)?),
                }
            }
            "arch" => {
                self.arch = value
                    .split(',')
                    .map(|s| parse(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "dp" => self.dp = parse_bool(key, value)?,
            "sigma_schedule" => self.sigma_schedule = value.parse()?,
            "epsilon" => self.epsilon = parse(key, value)?,
            "delta_threshold" => self.delta_threshold = parse(key, value)?,
            "lambda_max" => self.lambda_max = parse(key, value)?,
            "clip" => self.clip = value.parse()?,
            _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Applies every assignment in `text` on top of `self`.
    pub fn merge_str(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected `key = value`, got {line:?}",
                    i + 1
                ))
            })?;
            self.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        self.merge_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.merge_file(path)?;
        Ok(cfg)
    }

    pub fn m_schedule(&self) -> Schedule<usize> {
        self.m_schedule
            .clone()
            .unwrap_or_else(|| Schedule::constant(self.clients))
    }

    pub fn dp_config(&self) -> DpConfig {
        DpConfig {
            sigma_schedule: self.sigma_schedule.clone(),
            delta_threshold: self.delta_threshold,
            epsilon: self.epsilon,
            lambda_max: self.lambda_max,
            clip: self.clip,
        }
    }

    pub fn federated(&self) -> FederatedConfig {
        FederatedConfig {
            clients: self.clients,
            batch_size: self.batch_size,
            local_epochs: self.local_epochs,
            eta: self.eta,
            m_schedule: self.m_schedule(),
            dp: self.dp.then(|| self.dp_config()),
            max_rounds: self.max_rounds,
            seed: self.seed,
            eval_every: self.eval_every,
            target_accuracy: self.target_accuracy,
            arch: self.arch.clone(),
        }
    }

    /// Every key with its effective value. Parsing the result yields `self`
    /// back, with the participation schedule made explicit.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
        put("clients", self.clients.to_string());
        put("batch_size", self.batch_size.to_string());
        put("local_epochs", self.local_epochs.to_string());
        put("eta", self.eta.to_string());
        put("m_schedule", self.m_schedule().to_string());
        put("max_rounds", self.max_rounds.to_string());
        put("seed", self.seed.to_string());
        put("eval_every", self.eval_every.to_string());
        put(
            "target_accuracy",
            self.target_accuracy
                .map_or("none".into(), |t| t.to_string()),
        );
        put(
            "arch",
            self.arch
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        put("dp", self.dp.to_string());
        put("sigma_schedule", self.sigma_schedule.to_string());
        put("epsilon", self.epsilon.to_string());
        put("delta_threshold", self.delta_threshold.to_string());
        put("lambda_max", self.lambda_max.to_string());
        put("clip", self.clip.to_string());
        out
    }
}
