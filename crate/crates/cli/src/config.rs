//! Flat `key = value` run configuration.
//!
//! Blank lines and everything after `#` are ignored. Every key is optional;
//! an unknown or repeated key is a hard error. Relative paths are resolved
//! against the directory holding the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mhssmamba::data::{PatchConfig, SplitSpec, SynthSpec};
use mhssmamba::model::HyperParams;
use mhssmamba::train::TrainConfig;

use crate::error::CliError;

/// `(key, default, meaning)` for every recognized key.
pub const KEYS: &[(&str, &str, &str)] = &[
    (
        "data.path",
        "(unset)",
        "cube file to load; when unset a synthetic cube is generated from synth.*",
    ),
    ("synth.seed", "0", "synthetic scene seed"),
    ("synth.height", "32", "synthetic cube height"),
    ("synth.width", "32", "synthetic cube width"),
    ("synth.bands", "30", "synthetic band count C"),
    ("synth.classes", "3", "synthetic class count K (>= 2)"),
    ("synth.noise", "0.05", "synthetic noise standard deviation"),
    ("patch.size", "4", "patch side P (>= 1)"),
    (
        "patch.stride",
        "1",
        "keep labeled pixels whose row and column are multiples of this",
    ),
    ("split.train", "0.1", "per-class training fraction"),
    ("split.val", "0.1", "per-class validation fraction"),
    ("split.test", "0.8", "per-class test fraction; the three must sum to 1"),
    ("split.seed", "0", "split shuffle seed"),
    ("model.embed_dim", "64", "token embedding width"),
    ("model.heads", "4", "attention heads; must divide model.embed_dim"),
    ("model.state_dim", "128", "recurrent state width"),
    ("model.layers", "1", "enhancement + attention layers"),
    ("model.seed", "0", "weight initialization seed"),
    ("train.learning_rate", "0.001", "Adam step size"),
    ("train.epochs", "50", "passes over the training split"),
    (
        "train.batch_size",
        "256",
        "mini-batch size; the last batch may be smaller",
    ),
    ("train.beta1", "0.9", "Adam first-moment decay"),
    ("train.beta2", "0.999", "Adam second-moment decay"),
    ("train.epsilon", "1e-8", "Adam denominator guard"),
    ("train.seed", "0", "epoch shuffle seed"),
    ("train.shuffle", "true", "reshuffle the training split every epoch"),
    ("gradcheck.seed", "0", "seed of the gradient-check problem"),
    ("gradcheck.eps", "1e-5", "central-difference step"),
    ("output.dir", "run", "directory for train_log.csv and model.ckpt"),
    (
        "output.log_seconds",
        "false",
        "fill the wall-time column of the log (makes it non-reproducible)",
    ),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data_path: Option<PathBuf>,
    pub synth: SynthSpec,
    pub patch: PatchConfig,
    pub split: SplitSpec,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub state_dim: usize,
    pub num_layers: usize,
    pub model_seed: u64,
    pub train: TrainConfig,
    pub gradcheck_seed: u64,
    pub gradcheck_eps: f64,
    pub output_dir: PathBuf,
    pub log_seconds: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let hp = HyperParams::new(3);
        Self {
            data_path: None,
            synth: SynthSpec::default(),
            patch: PatchConfig::default(),
            split: SplitSpec::default(),
            embed_dim: hp.embed_dim,
            num_heads: hp.num_heads,
            state_dim: hp.state_dim,
            num_layers: hp.num_layers,
            model_seed: 0,
            train: TrainConfig::default(),
            gradcheck_seed: 0,
            gradcheck_eps: 1e-5,
            output_dir: PathBuf::from("run"),
            log_seconds: false,
        }
    }
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    raw.parse()
        .map_err(|e| CliError::Config(format!("{key}: cannot parse {raw:?}: {e}")))
}

impl RunConfig {
    /// Hyperparameters for a `classes`-way problem.
    pub fn hyper_params(&self, classes: usize) -> HyperParams {
        HyperParams {
            embed_dim: self.embed_dim,
            num_heads: self.num_heads,
            state_dim: self.state_dim,
            num_layers: self.num_layers,
            num_classes: classes,
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value, got {line:?}", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.iter().any(|(known, _, _)| *known == k) {
                return Err(CliError::Config(format!("line {}: unknown key {k:?}", n + 1)));
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(CliError::Config(format!("line {}: key {k:?} given twice", n + 1)));
            }
        }

        let mut cfg = Self::default();
        let resolve = |raw: &str| -> PathBuf {
            let p = PathBuf::from(raw);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        cfg.output_dir = resolve("run");
        for (k, raw) in &entries {
            let raw = raw.as_str();
            match k.as_str() {
                "data.path" => cfg.data_path = Some(resolve(raw)),
                "synth.seed" => cfg.synth.seed = value(k, raw)?,
                "synth.height" => cfg.synth.height = value(k, raw)?,
                "synth.width" => cfg.synth.width = value(k, raw)?,
                "synth.bands" => cfg.synth.bands = value(k, raw)?,
                "synth.classes" => cfg.synth.classes = value(k, raw)?,
                "synth.noise" => cfg.synth.noise_sigma = value(k, raw)?,
                "patch.size" => cfg.patch.patch_size = value(k, raw)?,
                "patch.stride" => cfg.patch.stride = value(k, raw)?,
                "split.train" => cfg.split.train = value(k, raw)?,
                "split.val" => cfg.split.val = value(k, raw)?,
                "split.test" => cfg.split.test = value(k, raw)?,
                "split.seed" => cfg.split.seed = value(k, raw)?,
                "model.embed_dim" => cfg.embed_dim = value(k, raw)?,
                "model.heads" => cfg.num_heads = value(k, raw)?,
                "model.state_dim" => cfg.state_dim = value(k, raw)?,
                "model.layers" => cfg.num_layers = value(k, raw)?,
                "model.seed" => cfg.model_seed = value(k, raw)?,
                "train.learning_rate" => cfg.train.learning_rate = value(k, raw)?,
                "train.epochs" => cfg.train.epochs = value(k, raw)?,
                "train.batch_size" => cfg.train.batch_size = value(k, raw)?,
                "train.beta1" => cfg.train.beta1 = value(k, raw)?,
                "train.beta2" => cfg.train.beta2 = value(k, raw)?,
                "train.epsilon" => cfg.train.epsilon = value(k, raw)?,
                "train.seed" => cfg.train.seed = value(k, raw)?,
                "train.shuffle" => cfg.train.shuffle = value(k, raw)?,
                "gradcheck.seed" => cfg.gradcheck_seed = value(k, raw)?,
                "gradcheck.eps" => cfg.gradcheck_eps = value(k, raw)?,
                "output.dir" => cfg.output_dir = resolve(raw),
                "output.log_seconds" => cfg.log_seconds = value(k, raw)?,
                other => unreachable!("key {other} listed in KEYS but not handled"),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        self.patch.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.split.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.hyper_params(2)
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.gradcheck_eps > 0.0 && self.gradcheck_eps.is_finite()) {
            return Err(CliError::Config(format!(
                "gradcheck.eps must be positive, got {}",
                self.gradcheck_eps
            )));
        }
        Ok(())
    }
}
