//! Run configuration: TOML or JSON files with dotted-path CLI overrides
//! and an FNV-1a fingerprint over the resolved config.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::transforms::CotMode;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::ModelConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr: f64,
    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 3e-4,
            warmup_steps: 100,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("optim.lr must be positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("optim.{name} must be in [0, 1)")));
            }
        }
        if self.eps <= 0.0 {
            return Err(Error::config("optim.eps must be positive"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::config("optim.weight_decay must be non-negative"));
        }
        Ok(())
    }

    /// Linear warm-up to `lr` over `warmup_steps`, constant afterwards;
    /// `step` is the 1-based optimizer step.
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            self.lr
        } else {
            self.lr * step as f64 / self.warmup_steps as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub batch_size: usize,
    pub grad_accum_steps: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            batch_size: 1,
            grad_accum_steps: 4,
            epochs: 10,
            steps_per_epoch: 200,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("grad_accum_steps", self.grad_accum_steps),
            ("epochs", self.epochs),
            ("steps_per_epoch", self.steps_per_epoch),
        ] {
            if v == 0 {
                return Err(Error::config(format!("train.{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Corpus root containing records.jsonl, images/ and masks/.
    pub root: String,
    /// Seed for the 3:2:5 split; independent of the run seed so the split
    /// stays fixed across training seeds.
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            root: String::new(),
            split_seed: 1234,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub optim: OptimConfig,
    pub train: TrainSchedule,
    pub data: DataConfig,
    pub seed: u64,
    pub cot_mode: CotMode,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.optim.validate()?;
        self.train.validate()?;
        if self.data.root.is_empty() {
            return Err(Error::config("data.root must be set"));
        }
        Ok(())
    }

    /// FNV-1a over the canonical JSON serialization.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in json.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn file_to_value(path: &Path) -> Result<serde_json::Value> {
    let text = std::fs::read_to_string(path)?;
    let is_toml = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.eq_ignore_ascii_case("toml"))
        .unwrap_or(false);
    if is_toml {
        let tv: toml::Value = toml::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        Ok(serde_json::to_value(tv)?)
    } else {
        serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }
}

/// Sets `path` (dotted) to `raw` inside a JSON tree; `raw` is parsed as a
/// JSON literal when possible and treated as a bare string otherwise.
fn set_path(root: &mut serde_json::Value, path: &str, raw: &str) -> Result<()> {
    if path.is_empty() {
        return Err(Error::config("override path is empty"));
    }
    let parts: Vec<&str> = path.split('.').collect();
    let mut cur = root;
    for p in &parts[..parts.len() - 1] {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::config(format!("override {path}: {p} is not a table")))?;
        cur = obj
            .entry(p.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    let leaf = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    cur.as_object_mut()
        .ok_or_else(|| Error::config(format!("override {path}: parent is not a table")))?
        .insert(parts[parts.len() - 1].to_string(), leaf);
    Ok(())
}

/// Loads a config file (TOML or JSON; defaults when absent), applies
/// `key=value` overrides, and validates nothing; call `validate` at the
/// point of use so partially-specified configs remain constructible.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut value = match path {
        Some(p) => file_to_value(p)?,
        None => serde_json::Value::Object(Default::default()),
    };
    for ov in overrides {
        let (key, raw) = ov
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override {ov:?} is not key=value")))?;
        set_path(&mut value, key.trim(), raw.trim())?;
    }
    serde_json::from_value(value).map_err(|e| Error::config(format!("config: {e}")))
}
