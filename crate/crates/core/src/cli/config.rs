//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::{ModelConfig, WidthScale};
use crate::training::{Stage, TrainConfig};

/// Every accepted key.
pub const KEYS: &[&str] = &[
    "input_size",
    "width_scale",
    "enable_aux",
    "enable_bu",
    "enable_td",
    "enable_rrm",
    "stage",
    "batch_size",
    "epochs",
    "lr",
    "momentum",
    "beta2",
    "eps",
    "decay_rate",
    "decay_every",
    "seed",
    "lambda_w",
    "lambda_b",
    "lambda_aux",
    "lambda_bu",
    "lambda_td",
    "lambda_tdr",
    "data",
    "init",
    "out",
    "log",
];

/// Raw settings; typed views with stage-dependent defaults are produced on demand.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Parses `key = value` lines. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, strip(e))))?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        RunConfig::parse(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), strip(e))))
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        self.values.insert(key.to_string(), value.into());
        Ok(())
    }

    /// `key=value` form used by `--set`.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got `{pair}`")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn typed<V: FromStr>(&self, key: &str) -> Result<Option<V>> {
        self.get(key)
            .map(|v| v.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`"))))
            .transpose()
    }

    fn or<V: FromStr>(&self, key: &str, default: V) -> Result<V> {
        Ok(self.typed(key)?.unwrap_or(default))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    /// Model geometry with the toy network as the default.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let d = ModelConfig::toy();
        let width_scale = match self.get("width_scale") {
            Some(s) => WidthScale::from_str(s)?,
            None => d.width_scale,
        };
        let cfg = ModelConfig {
            input_size: self.or("input_size", d.input_size)?,
            width_scale,
            enable_aux: self.or("enable_aux", d.enable_aux)?,
            enable_bu: self.or("enable_bu", d.enable_bu)?,
            enable_td: self.or("enable_td", d.enable_td)?,
            enable_rrm: self.or("enable_rrm", d.enable_rrm)?,
            pretrained: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn stage(&self) -> Result<Option<Stage>> {
        self.get("stage").map(Stage::from_str).transpose()
    }

    pub fn loss_weights(&self) -> Result<LossWeights> {
        let d = LossWeights::default();
        let w = LossWeights {
            lambda_w: self.or("lambda_w", d.lambda_w)?,
            lambda_b: self.or("lambda_b", d.lambda_b)?,
            lambda_aux: self.or("lambda_aux", d.lambda_aux)?,
            lambda_bu: self.or("lambda_bu", d.lambda_bu)?,
            lambda_td: self.or("lambda_td", d.lambda_td)?,
            lambda_tdr: self.or("lambda_tdr", d.lambda_tdr)?,
        };
        w.validate()?;
        Ok(w)
    }

    /// Stage defaults overridden by any keys present.
    pub fn train_config(&self, stage: Stage) -> Result<TrainConfig> {
        let d = TrainConfig::for_stage(stage);
        let cfg = TrainConfig {
            stage,
            batch_size: self.or("batch_size", d.batch_size)?,
            epochs: self.or("epochs", d.epochs)?,
            lr: self.or("lr", d.lr)?,
            momentum: self.or("momentum", d.momentum)?,
            beta2: self.or("beta2", d.beta2)?,
            eps: self.or("eps", d.eps)?,
            decay_rate: self.or("decay_rate", d.decay_rate)?,
            decay_every: self.or("decay_every", d.decay_every)?,
            seed: self.or("seed", d.seed)?,
            weights: self.loss_weights()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(msg) => msg,
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let cfg = RunConfig::parse("# toy run\n  epochs = 3  # short\n\nwidth_scale=1/4\nlambda_b = 0\n").unwrap();
        assert_eq!(cfg.get("epochs"), Some("3"));
        let t = cfg.train_config(Stage::E2e).unwrap();
        assert_eq!(t.epochs, 3);
        assert_eq!(t.weights.lambda_b, 0.0);
        assert_eq!(t.lr, 3e-4);
        assert_eq!(cfg.model_config().unwrap().width_scale, WidthScale::new(1, 4).unwrap());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse("epochs = 2\nlamda_b = 0.3\n").unwrap_err().to_string();
        assert!(err.contains("lamda_b") && err.contains("line 2"), "{err}");
    }

    #[test]
    fn bad_values_are_config_errors() {
        let cfg = RunConfig::parse("epochs = many").unwrap();
        assert!(matches!(cfg.train_config(Stage::Pretrain), Err(Error::Config(_))));
        assert!(RunConfig::parse("just words").is_err());
        let cfg = RunConfig::parse("lambda_w = -1").unwrap();
        assert!(matches!(cfg.loss_weights(), Err(Error::Config(_))));
    }

    #[test]
    fn defaults_match_library() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.loss_weights().unwrap(), LossWeights::default());
        assert_eq!(cfg.train_config(Stage::Pretrain).unwrap(), TrainConfig::pretrain());
        assert_eq!(cfg.model_config().unwrap(), ModelConfig::toy());
    }

    #[test]
    fn later_values_override() {
        let mut cfg = RunConfig::parse("seed = 1").unwrap();
        cfg.set_pair("seed=9").unwrap();
        assert_eq!(cfg.train_config(Stage::E2e).unwrap().seed, 9);
        assert!(cfg.set_pair("nope=1").is_err());
    }
}
