//! Run configuration.
//!
//! Every tunable of detection, training, analysis and evaluation lives in one
//! [`RunConfig`]. On disk it is a flat UTF-8 file of `key=value` lines with
//! dotted keys (`cluster.rho_d=0.6`); `#` starts a comment. Values are JSON
//! literals (`7.0`, `true`, `[0.2,5.0]`, `"typical"`), bare words are read as
//! strings and `none` clears an optional value. Keys that do not name a
//! setting are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::annotator::PipelineConfig;
use crate::error::{CodaError, Result};
use crate::exchange::ExchangeConfig;
use crate::temporal::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// A detected click matches a true click within this distance.
    pub match_tol_ms: f64,
    /// ROC sweep over the detection threshold ρ_d.
    pub rho_min: f64,
    pub rho_max: f64,
    pub rho_steps: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            match_tol_ms: 2.0,
            rho_min: 0.0,
            rho_max: 3.0,
            rho_steps: 61,
        }
    }
}

impl EvalConfig {
    pub fn thresholds(&self) -> Result<Vec<f64>> {
        if self.rho_steps == 0 || !(self.rho_max >= self.rho_min) {
            return Err(CodaError::Config("ROC sweep needs rho_steps >= 1 and rho_max >= rho_min".into()));
        }
        if self.rho_steps == 1 {
            return Ok(vec![self.rho_min]);
        }
        let step = (self.rho_max - self.rho_min) / (self.rho_steps - 1) as f64;
        Ok((0..self.rho_steps).map(|i| self.rho_min + step * i as f64).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub pipeline: PipelineConfig,
    pub train: TrainConfig,
    pub exchange: ExchangeConfig,
    pub eval: EvalConfig,
    /// Seeds every random choice of a run.
    pub seed: u64,
}

fn flatten(prefix: &str, value: &Value, out: &mut Vec<(String, Value)>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        leaf => out.push((prefix.to_string(), leaf.clone())),
    }
}

fn render(value: &Value) -> String {
    match value {
        Value::Null => "none".to_string(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn parse_value(text: &str) -> Value {
    if text == "none" {
        return Value::Null;
    }
    serde_json::from_str(text).unwrap_or_else(|_| Value::String(text.to_string()))
}

fn leaf_mut<'a>(root: &'a mut Map<String, Value>, key: &str) -> Option<&'a mut Value> {
    let mut parts = key.split('.');
    let mut slot = root.get_mut(parts.next()?)?;
    for part in parts {
        slot = slot.as_object_mut()?.get_mut(part)?;
    }
    (!slot.is_object()).then_some(slot)
}

/// Parse `key=value` lines. Blank lines and `#` comments are skipped; a key
/// given twice is an error.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CodaError::Config(format!("line {}: expected key=value, got `{line}`", n + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(CodaError::Config(format!("line {}: empty key", n + 1)));
        }
        if pairs.iter().any(|(k, _)| k == key) {
            return Err(CodaError::Config(format!("line {}: key `{key}` repeated", n + 1)));
        }
        pairs.push((key.to_string(), value.to_string()));
    }
    Ok(pairs)
}

impl RunConfig {
    /// Effective settings as sorted `(key, value)` pairs.
    pub fn to_pairs(&self) -> Result<Vec<(String, String)>> {
        let mut leaves = Vec::new();
        flatten("", &serde_json::to_value(self)?, &mut leaves);
        let mut pairs: Vec<(String, String)> = leaves.into_iter().map(|(k, v)| (k, render(&v))).collect();
        pairs.sort();
        Ok(pairs)
    }

    /// Effective settings as `key=value` lines, the form stored in manifests.
    pub fn to_lines(&self) -> Result<Vec<String>> {
        Ok(self.to_pairs()?.into_iter().map(|(k, v)| format!("{k}={v}")).collect())
    }

    /// Override settings in order. Fails on the first unknown key or
    /// ill-typed value and leaves `self` untouched.
    pub fn apply<K: AsRef<str>, V: AsRef<str>>(&mut self, pairs: &[(K, V)]) -> Result<()> {
        let Value::Object(mut root) = serde_json::to_value(*self)? else {
            return Err(CodaError::Config("configuration is not a map".into()));
        };
        for (key, value) in pairs {
            let (key, value) = (key.as_ref(), value.as_ref());
            let slot = leaf_mut(&mut root, key).ok_or_else(|| CodaError::Config(format!("unknown key `{key}`")))?;
            *slot = parse_value(value);
            serde_json::from_value::<RunConfig>(Value::Object(root.clone()))
                .map_err(|e| CodaError::Config(format!("bad value `{value}` for `{key}`: {e}")))?;
        }
        *self = serde_json::from_value(Value::Object(root))?;
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(&parse_config_text(text)?)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CodaError::io(path, e))?;
        Self::from_text(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.to_lines()?.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| CodaError::io(path, e))
    }

    /// Training settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train
        }
    }
}
