//! Run configuration, read from JSON with every field optional.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::synth::SceneParams;
use crate::error::{MimError, Result};
use crate::model::ModelConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Linear warm-up length.
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables it.
    pub grad_clip: f64,
    /// Box jitter: center shift as a fraction of box size.
    pub shift: f64,
    /// Box jitter: max log-scale change.
    pub scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 8,
            lr: 3e-3,
            warmup_steps: 100,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: 1.0,
            shift: 0.1,
            scale: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.batch > 0
            && self.lr > 0.0
            && self.lr.is_finite()
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.grad_clip >= 0.0
            && (0.0..0.5).contains(&self.shift)
            && (0.0..1.0).contains(&self.scale);
        if ok {
            Ok(())
        } else {
            Err(MimError::Config(format!("invalid training schedule {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub pool_seed: u64,
    pub train_sequences: usize,
    pub eval_seed: u64,
    pub eval_sequences: usize,
    pub scene: SceneParams,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            pool_seed: 1000,
            train_sequences: 400,
            eval_seed: 2000,
            eval_sequences: 8,
            scene: SceneParams::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seed for initialization and training sample order.
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| MimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.data.train_sequences == 0 || self.data.eval_sequences == 0 {
            return Err(MimError::Config("data pools must be non-empty".into()));
        }
        if self.data.scene.frames < self.model.window + 1 {
            return Err(MimError::Config(format!(
                "scenes of {} frames are shorter than window {} + 1",
                self.data.scene.frames, self.model.window
            )));
        }
        Ok(())
    }

    /// Same run with temporal scan and retrieval switched as given.
    pub fn ablated(&self, temporal: bool, retrieval: bool) -> Self {
        let mut c = self.clone();
        c.model.temporal = temporal;
        c.model.retrieval = retrieval;
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Injection;

    #[test]
    fn partial_json_fills_defaults() {
        let c = RunConfig::from_json(r#"{"seed": 5, "model": {"depth": 3, "injection": "kv_attention"}}"#).unwrap();
        assert_eq!(c.seed, 5);
        assert_eq!(c.model.depth, 3);
        assert_eq!(c.model.injection, Injection::KvAttention);
        assert_eq!(c.train, TrainConfig::default());
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(RunConfig::from_json(r#"{"modle": {}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"model": {"fusion": "median"}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"lr": -1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"data": {"scene": {"frames": 2}}}"#).is_err());
    }
}
