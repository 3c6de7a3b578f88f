//! Run configuration for `train`: built-in defaults, overridden by a `key = value`
//! file, overridden by command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use tssd::models::{parse_key_values, ModelConfig, MODEL_KEYS};
use tssd::training::{LossMode, TrainConfig};

use crate::Failure;

pub const RUN_KEYS: &[&str] = &[
    "train_protocol",
    "train_audio",
    "dev_protocol",
    "dev_audio",
    "out",
    "epochs",
    "batch_size",
    "lr",
    "lr_decay",
    "mixup_alpha",
    "seed",
];

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seed: u64,
    pub train_protocol: PathBuf,
    pub train_audio: PathBuf,
    pub dev_protocol: PathBuf,
    pub dev_audio: PathBuf,
    pub out: PathBuf,
}

/// Ordered `key → value` settings where later layers win.
#[derive(Clone, Debug, Default)]
pub struct Layers {
    values: BTreeMap<String, String>,
}

impl Layers {
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Applies a config file, rejecting keys that are neither model nor run keys.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read config file {}: {e}", path.display())))?;
        let pairs = parse_key_values(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        for (k, v) in pairs {
            if !MODEL_KEYS.contains(&k.as_str()) && !RUN_KEYS.contains(&k.as_str()) {
                return Err(Failure::Usage(format!("{}: unknown key `{k}`", path.display())));
            }
            self.set(&k, v);
        }
        Ok(())
    }

    pub fn model_config(&self) -> Result<ModelConfig, Failure> {
        let mut text = String::new();
        for (k, v) in &self.values {
            if MODEL_KEYS.contains(&k.as_str()) {
                text += &format!("{k} = {v}\n");
            }
        }
        if self.get("family").is_none() {
            text += "family = res\n";
        }
        if self.get("m").is_none() && self.get("channels").is_none() {
            text += "m = 4\n";
        }
        ModelConfig::from_text(&text).map_err(|e| Failure::Usage(e.to_string()))
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, Failure> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Failure::Usage(format!("invalid value `{v}` for `{key}`"))),
        }
    }

    fn path(&self, key: &str) -> Result<PathBuf, Failure> {
        self.get(key)
            .map(PathBuf::from)
            .ok_or_else(|| Failure::Usage(format!("missing required setting `{key}` (flag --{})", key.replace('_', "-"))))
    }

    pub fn run_config(&self) -> Result<RunConfig, Failure> {
        let defaults = TrainConfig::default();
        let loss = match self.get("mixup_alpha") {
            None => LossMode::Weighted,
            Some(_) => LossMode::Mixup {
                alpha: self.parsed("mixup_alpha", 1.0)?,
            },
        };
        let train = TrainConfig {
            batch_size: self.parsed("batch_size", defaults.batch_size)?,
            max_epochs: self.parsed("epochs", defaults.max_epochs)?,
            base_lr: self.parsed("lr", defaults.base_lr)?,
            lr_decay: self.parsed("lr_decay", defaults.lr_decay)?,
            loss,
        };
        train.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        Ok(RunConfig {
            model: self.model_config()?,
            train,
            seed: self.parsed("seed", 0)?,
            train_protocol: self.path("train_protocol")?,
            train_audio: self.path("train_audio")?,
            dev_protocol: self.path("dev_protocol")?,
            dev_audio: self.path("dev_audio")?,
            out: self.path("out")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn required() -> Layers {
        let mut l = Layers::default();
        for k in ["train_protocol", "train_audio", "dev_protocol", "dev_audio", "out"] {
            l.set(k, "x");
        }
        l
    }

    #[test]
    fn defaults() {
        let run = required().run_config().unwrap();
        assert_eq!(run.model, ModelConfig::res(4).unwrap());
        assert_eq!(run.train, TrainConfig::default());
        assert_eq!(run.seed, 0);
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.cfg");
        std::fs::write(&file, "# comment\nepochs = 7\nlr = 0.01\nfamily = inc\nbranches = 8\n").unwrap();
        let mut l = required();
        l.apply_file(&file).unwrap();
        l.set("epochs", "3");
        let run = l.run_config().unwrap();
        assert_eq!(run.train.max_epochs, 3);
        assert_eq!(run.train.base_lr, 0.01);
        assert_eq!(run.model, ModelConfig::inc(4, 8).unwrap());
    }

    #[test]
    fn unknown_key_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("bad.cfg");
        std::fs::write(&file, "epochz = 3\n").unwrap();
        assert!(matches!(required().apply_file(&file), Err(Failure::Usage(_))));
    }

    #[test]
    fn missing_path_is_usage_error() {
        assert!(matches!(Layers::default().run_config(), Err(Failure::Usage(_))));
    }

    #[test]
    fn mixup_alpha_switches_loss() {
        let mut l = required();
        l.set("mixup_alpha", "1.0");
        assert_eq!(l.run_config().unwrap().train.loss, LossMode::Mixup { alpha: 1.0 });
        l.set("mixup_alpha", "0");
        assert!(l.run_config().is_err());
    }
}
