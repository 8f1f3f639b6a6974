//! Line-oriented run configuration.
//!
//! ```text
//! # comments and blank lines are ignored
//! train = data/data_batch_1.bin
//! train = data/data_batch_2.bin
//! pipeline = gcn-zca
//! model = model3
//! variant = dropout
//! lr = 0.17
//! seed = 7
//! ```
//!
//! `model = NAME` expands a builtin; alternatively the architecture is
//! given inline by repeated `layer = ...` entries. Unknown keys are errors.

use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::io_util::sha256_hex;
use crate::model_zoo::{builtin, BuildOptions, Builtin, InitPolicy, LayerSpec, ModelSpec, Variant};
use crate::optimizer::{MomentumKind, TrainSchedule};
use crate::preprocess::{Pipeline, PipelineConfig, RescaleOrder, DEFAULT_FUDGE};

const KEYS: &[&str] = &[
    "train",
    "test",
    "split",
    "train_limit",
    "valid_limit",
    "pipeline",
    "grayscale",
    "rescale",
    "fudge",
    "model",
    "name",
    "variant",
    "input",
    "maps_divisor",
    "units_divisor",
    "conv_pieces",
    "dense_pieces",
    "input_retain",
    "hidden_retain",
    "dropout_conv",
    "layer",
    "lr",
    "lr_floor_factor",
    "lr_saturate_epoch",
    "momentum",
    "momentum_start",
    "momentum_end",
    "momentum_saturate_epoch",
    "conv_grad_scale",
    "batch_size",
    "max_norm",
    "norm_cap",
    "first_layer_norm_cap",
    "init_conv",
    "init_dense",
    "seed",
    "max_epochs",
    "early_stop",
    "eval_chunk",
];

const REPEATABLE: &[&str] = &["train", "test", "layer"];

/// Raw `key = value` entries in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    entries: Vec<(String, String)>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {line:?}", n + 1)))?;
            cfg.set(key.trim(), value.trim()).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        Ok(cfg)
    }

    /// Adds an entry; non-repeatable keys replace earlier values only via
    /// [`RunConfig::set_override`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(Error::Config(format!("unknown key {key:?}")));
        }
        if !REPEATABLE.contains(&key) && self.get(key).is_some() {
            return Err(Error::Config(format!("duplicate key {key:?}")));
        }
        self.entries.push((key.to_string(), value.to_string()));
        Ok(())
    }

    /// Replaces every entry for `key` (command-line overrides).
    pub fn set_override(&mut self, key: &str, value: &str) -> Result<()> {
        self.entries.retain(|(k, _)| k != key);
        self.set(key, value)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_all(&self, key: &str) -> Vec<&str> {
        self.entries.iter().filter(|(k, _)| k == key).map(|(_, v)| v.as_str()).collect()
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|_| Error::Config(format!("invalid value {v:?} for {key}"))))
            .transpose()
    }

    fn flag(&self, key: &str) -> Result<Option<bool>> {
        self.get(key)
            .map(|v| match v {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(Error::Config(format!("invalid boolean {v:?} for {key}"))),
            })
            .transpose()
    }

    pub fn resolve(&self) -> Result<ResolvedConfig> {
        let model_name = self.get("model");
        let layers = self.get_all("layer");
        let (spec, default_schedule) = match (model_name, layers.is_empty()) {
            (Some(_), false) => return Err(Error::Config("give either `model` or `layer` entries, not both".into())),
            (None, true) => return Err(Error::Config("no model: set `model = NAME` or list `layer = ...` entries".into())),
            (Some(name), true) => {
                let model: Builtin = name.parse()?;
                let mut opts = BuildOptions::default();
                if let Some(v) = self.get("variant") {
                    opts.variant = v.parse::<Variant>()?;
                }
                if let Some(s) = self.get("input") {
                    opts.input = Some(parse_dims(s)?);
                }
                opts.maps_divisor = self.parsed("maps_divisor")?.unwrap_or(opts.maps_divisor);
                opts.units_divisor = self.parsed("units_divisor")?.unwrap_or(opts.units_divisor);
                opts.conv_pieces = self.parsed("conv_pieces")?.unwrap_or(opts.conv_pieces);
                opts.dense_pieces = self.parsed("dense_pieces")?.unwrap_or(opts.dense_pieces);
                opts.input_retain = self.parsed("input_retain")?.unwrap_or(opts.input_retain);
                opts.hidden_retain = self.parsed("hidden_retain")?.unwrap_or(opts.hidden_retain);
                opts.dropout_conv = self.flag("dropout_conv")?.unwrap_or(opts.dropout_conv);
                let mut spec = builtin(model, &opts)?;
                if let Some(n) = self.get("name") {
                    spec.name = n.to_string();
                }
                (spec, model.default_schedule())
            }
            (None, false) => {
                for key in ["variant", "input", "maps_divisor", "units_divisor", "conv_pieces", "dense_pieces", "input_retain", "hidden_retain", "dropout_conv"] {
                    if self.get(key).is_some() {
                        return Err(Error::Config(format!("`{key}` only applies to builtin models")));
                    }
                }
                let layers = layers.iter().map(|l| l.parse::<LayerSpec>()).collect::<Result<Vec<_>>>()?;
                (ModelSpec::new(self.get("name").unwrap_or("custom"), layers)?, TrainSchedule::default())
            }
        };

        let mut s = default_schedule;
        s.base_lr = self.parsed("lr")?.unwrap_or(s.base_lr);
        s.lr_floor_factor = self.parsed("lr_floor_factor")?.unwrap_or(s.lr_floor_factor);
        s.lr_saturate_epoch = self.parsed("lr_saturate_epoch")?.unwrap_or(s.lr_saturate_epoch);
        s.momentum_kind = self.parsed::<MomentumKind>("momentum")?.unwrap_or(s.momentum_kind);
        s.momentum_start = self.parsed("momentum_start")?.unwrap_or(s.momentum_start);
        s.momentum_end = self.parsed("momentum_end")?.unwrap_or(s.momentum_end);
        s.momentum_saturate_epoch = self.parsed("momentum_saturate_epoch")?.unwrap_or(s.momentum_saturate_epoch);
        s.conv_grad_scale = self.parsed("conv_grad_scale")?.unwrap_or(s.conv_grad_scale);
        s.batch_size = self.parsed("batch_size")?.unwrap_or(s.batch_size);
        s.max_norm = self.flag("max_norm")?.unwrap_or(s.max_norm);
        s.norm_cap = self.parsed("norm_cap")?.unwrap_or(s.norm_cap);
        s.first_layer_norm_cap = self.parsed("first_layer_norm_cap")?.unwrap_or(s.first_layer_norm_cap);
        s.validate()?;

        let pipeline = PipelineConfig {
            pipeline: self.parsed::<Pipeline>("pipeline")?.unwrap_or(Pipeline::RescaleCenter),
            grayscale: self.flag("grayscale")?.unwrap_or(spec.input_shape().first() == Some(&1)),
            rescale: self.parsed::<RescaleOrder>("rescale")?.unwrap_or(RescaleOrder::None),
            fudge: self.parsed("fudge")?.unwrap_or(DEFAULT_FUDGE),
        };
        pipeline.validate()?;

        let defaults = InitPolicy::default();
        let split = self.parsed("split")?.unwrap_or(0.9);
        if !(split > 0.0 && split < 1.0) {
            return Err(Error::Config(format!("split {split} outside (0, 1)")));
        }
        let resolved = ResolvedConfig {
            train_files: self.get_all("train").into_iter().map(PathBuf::from).collect(),
            test_files: self.get_all("test").into_iter().map(PathBuf::from).collect(),
            split,
            train_limit: self.parsed("train_limit")?,
            valid_limit: self.parsed("valid_limit")?,
            pipeline,
            spec,
            schedule: s,
            init: InitPolicy {
                conv_range: self.parsed("init_conv")?.unwrap_or(defaults.conv_range),
                dense_range: self.parsed("init_dense")?.unwrap_or(defaults.dense_range),
            },
            seed: self.parsed("seed")?.unwrap_or(0),
            max_epochs: self.parsed("max_epochs")?.unwrap_or(1000),
            early_stop: self.flag("early_stop")?.unwrap_or(true),
            eval_chunk: self.parsed("eval_chunk")?.unwrap_or(500),
        };
        if resolved.eval_chunk == 0 {
            return Err(Error::Config("eval_chunk must be positive".into()));
        }
        Ok(resolved)
    }
}

fn parse_dims(s: &str) -> Result<Vec<usize>> {
    s.split('x')
        .map(|d| d.trim().parse::<usize>().ok().filter(|&d| d > 0))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::Config(format!("invalid dimensions {s:?}")))
}

/// A complete configuration with every default filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub train_files: Vec<PathBuf>,
    pub test_files: Vec<PathBuf>,
    pub split: f64,
    pub train_limit: Option<usize>,
    pub valid_limit: Option<usize>,
    pub pipeline: PipelineConfig,
    pub spec: ModelSpec,
    pub schedule: TrainSchedule,
    pub init: InitPolicy,
    pub seed: u64,
    pub max_epochs: usize,
    pub early_stop: bool,
    pub eval_chunk: usize,
}

impl ResolvedConfig {
    /// Canonical text of every setting that influences the trained
    /// parameters. File paths and the epoch cap are excluded so that data
    /// can move and runs can be extended.
    pub fn canonical(&self) -> String {
        let s = &self.schedule;
        let mut out = String::new();
        let mut kv = |k: &str, v: &dyn fmt::Display| writeln!(out, "{k} = {v}").expect("writing to a String");
        kv("split", &self.split);
        kv("train_limit", &opt(self.train_limit));
        kv("valid_limit", &opt(self.valid_limit));
        kv("pipeline", &self.pipeline.pipeline);
        kv("grayscale", &self.pipeline.grayscale);
        kv("rescale", &self.pipeline.rescale);
        kv("fudge", &self.pipeline.fudge);
        kv("name", &self.spec.name);
        kv("lr", &s.base_lr);
        kv("lr_floor_factor", &s.lr_floor_factor);
        kv("lr_saturate_epoch", &s.lr_saturate_epoch);
        kv("momentum", &s.momentum_kind);
        kv("momentum_start", &s.momentum_start);
        kv("momentum_end", &s.momentum_end);
        kv("momentum_saturate_epoch", &s.momentum_saturate_epoch);
        kv("conv_grad_scale", &s.conv_grad_scale);
        kv("batch_size", &s.batch_size);
        kv("max_norm", &s.max_norm);
        kv("norm_cap", &s.norm_cap);
        kv("first_layer_norm_cap", &s.first_layer_norm_cap);
        kv("init_conv", &self.init.conv_range);
        kv("init_dense", &self.init.dense_range);
        kv("seed", &self.seed);
        kv("early_stop", &self.early_stop);
        out.push_str(&self.spec.to_string());
        out
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.canonical().as_bytes())
    }
}

fn opt(v: Option<usize>) -> String {
    v.map_or_else(|| "all".to_string(), |n| n.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_with_overrides() {
        let cfg = RunConfig::parse("model = model3\nvariant = dropout\nlr = 0.1\nbatch_size = 50\n# note\n\nseed = 4").unwrap();
        let r = cfg.resolve().unwrap();
        assert_eq!(r.spec.name, "model3-dropout");
        assert_eq!(r.schedule.base_lr, 0.1);
        assert_eq!(r.schedule.batch_size, 50);
        assert_eq!(r.seed, 4);
        assert!(!r.pipeline.grayscale);
    }

    #[test]
    fn initial_cnn_defaults_to_grayscale_and_its_schedule() {
        let r = RunConfig::parse("model = initial_cnn").unwrap().resolve().unwrap();
        assert!(r.pipeline.grayscale);
        assert_eq!(r.schedule, TrainSchedule::initial_cnn());
    }

    #[test]
    fn inline_layers() {
        let text = "name = tiny\nlayer = input 4\nlayer = dense 3\nlayer = softmax 3\n";
        let r = RunConfig::parse(text).unwrap().resolve().unwrap();
        assert_eq!(r.spec.layers.len(), 3);
        assert_eq!(r.spec.name, "tiny");
        let again = RunConfig::parse(&format!("{}{}", "name = tiny\n", r.spec)).unwrap().resolve().unwrap();
        assert_eq!(again.spec, r.spec);
    }

    #[test]
    fn rejections() {
        assert!(RunConfig::parse("colour = red").is_err());
        assert!(RunConfig::parse("model = model1\nmodel = model2").is_err());
        assert!(RunConfig::parse("just words").is_err());
        assert!(RunConfig::parse("lr = fast\nmodel = model1").unwrap().resolve().is_err());
        assert!(RunConfig::parse("model = model1\nlayer = input 3").unwrap().resolve().is_err());
        assert!(RunConfig::parse("lr = 0.1").unwrap().resolve().is_err());
        assert!(RunConfig::parse("model = model9").unwrap().resolve().is_err());
        assert!(RunConfig::parse("model = model1\npipeline = sharpen").unwrap().resolve().is_err());
    }

    #[test]
    fn hash_tracks_training_settings_only() {
        let base = RunConfig::parse("model = model1\ntrain = a.bin\nmax_epochs = 5").unwrap();
        let h = base.resolve().unwrap().hash();
        let mut moved = base.clone();
        moved.set_override("train", "elsewhere/a.bin").unwrap();
        moved.set_override("max_epochs", "50").unwrap();
        assert_eq!(moved.resolve().unwrap().hash(), h);
        let mut reseeded = base.clone();
        reseeded.set_override("seed", "1").unwrap();
        assert_ne!(reseeded.resolve().unwrap().hash(), h);
    }
}
