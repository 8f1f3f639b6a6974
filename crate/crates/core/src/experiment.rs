//! Glue from a resolved run configuration to prepared data and a trained
//! model.

use std::fs;
use std::path::Path;

use crate::config::ResolvedConfig;
use crate::dataset::{load_cifar10, split, LabeledDataset};
use crate::error::{Error, Result};
use crate::model_zoo::ModelSpec;
use crate::preprocess::{FittedPipeline, Pipeline, PipelineConfig};
use crate::trainer::{train, Checkpoint, TrainObserver, TrainOptions, TrainOutcome};

pub const STATS_FILE: &str = "preproc.bin";
pub const TRAIN_FILE: &str = "train.lds";
pub const VALID_FILE: &str = "valid.lds";
pub const TEST_FILE: &str = "test.lds";

/// Training, validation and optional test sets after preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub pipeline: FittedPipeline,
    pub train: LabeledDataset,
    pub valid: LabeledDataset,
    pub test: Option<LabeledDataset>,
}

/// Reads the configured CIFAR-10 batch files.
pub fn load_raw(cfg: &ResolvedConfig) -> Result<(LabeledDataset, Option<LabeledDataset>)> {
    if cfg.train_files.is_empty() {
        return Err(Error::Config("no `train = PATH` entries".into()));
    }
    let train = load_cifar10(&cfg.train_files)?;
    let test = if cfg.test_files.is_empty() { None } else { Some(load_cifar10(&cfg.test_files)?) };
    Ok((train, test))
}

/// Splits, truncates to the configured limits, fits the pipeline on the
/// training half only and transforms every set.
pub fn prepare(cfg: &ResolvedConfig, full: &LabeledDataset, test: Option<&LabeledDataset>) -> Result<Prepared> {
    let (train, valid) = split(full, cfg.split, cfg.seed)?;
    let train = match cfg.train_limit {
        Some(n) => train.head(n)?,
        None => train,
    };
    let valid = match cfg.valid_limit {
        Some(n) => valid.head(n)?,
        None => valid,
    };
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Data(format!("split left {} training and {} validation samples", train.len(), valid.len())));
    }
    let pipeline = FittedPipeline::fit(cfg.pipeline, &train.images)?;
    let apply = |ds: &LabeledDataset| ds.with_images(pipeline.apply(&ds.images)?);
    Ok(Prepared {
        train: apply(&train)?,
        valid: apply(&valid)?,
        test: test.map(apply).transpose()?,
        pipeline,
    })
}

impl Prepared {
    pub fn preproc_hash(&self) -> Result<String> {
        self.pipeline.content_hash()
    }

    /// Writes the datasets and, unless the pipeline is raw, the fitted
    /// statistics.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        if self.pipeline.config.pipeline != Pipeline::Raw {
            self.pipeline.save(dir.join(STATS_FILE))?;
        }
        self.train.save(dir.join(TRAIN_FILE))?;
        self.valid.save(dir.join(VALID_FILE))?;
        if let Some(t) = &self.test {
            t.save(dir.join(TEST_FILE))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let train = LabeledDataset::load(dir.join(TRAIN_FILE))?;
        let valid = LabeledDataset::load(dir.join(VALID_FILE))?;
        let test_path = dir.join(TEST_FILE);
        let test = if test_path.exists() { Some(LabeledDataset::load(test_path)?) } else { None };
        let stats = dir.join(STATS_FILE);
        let pipeline = if stats.exists() {
            FittedPipeline::load(stats)?
        } else {
            raw_pipeline(&train)
        };
        Ok(Prepared { pipeline, train, valid, test })
    }
}

fn raw_pipeline(ds: &LabeledDataset) -> FittedPipeline {
    let shape = ds.images.shape()[1..].to_vec();
    FittedPipeline {
        config: PipelineConfig { grayscale: shape.first() == Some(&1), ..PipelineConfig::new(Pipeline::Raw) },
        center: None,
        zca: None,
        range: None,
        output_shape: shape,
    }
}

/// Data and model must agree on the per-sample element count.
pub fn check_input(spec: &ModelSpec, ds: &LabeledDataset) -> Result<()> {
    let want: usize = spec.input_shape().iter().product();
    if ds.images.row_len() != want {
        return Err(Error::Config(format!(
            "model {} expects inputs {:?} but the data has per-sample shape {:?}",
            spec.name,
            spec.input_shape(),
            &ds.images.shape()[1..]
        )));
    }
    if ds.class_names.len() != spec.classes() {
        return Err(Error::Config(format!(
            "model has {} outputs but the data has {} classes",
            spec.classes(),
            ds.class_names.len()
        )));
    }
    Ok(())
}

pub fn train_options(cfg: &ResolvedConfig, prepared: &Prepared, wall_clock: bool) -> Result<TrainOptions> {
    Ok(TrainOptions {
        seed: cfg.seed,
        max_epochs: cfg.max_epochs,
        early_stop: cfg.early_stop,
        init: cfg.init,
        eval_chunk: cfg.eval_chunk,
        wall_clock,
        config_hash: cfg.hash(),
        preproc_hash: prepared.preproc_hash()?,
    })
}

/// Trains the configured model on prepared data.
pub fn run_training(
    cfg: &ResolvedConfig,
    prepared: &Prepared,
    wall_clock: bool,
    resume: Option<Checkpoint>,
    observer: impl TrainObserver,
) -> Result<TrainOutcome> {
    check_input(&cfg.spec, &prepared.train)?;
    let opts = train_options(cfg, prepared, wall_clock)?;
    train(&cfg.spec, &cfg.schedule, &prepared.train, Some(&prepared.valid), &opts, resume, observer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn synthetic(n: usize) -> LabeledDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let images = Tensor::from_fn(&[n, 3, 32, 32], |_| f64::from(rng.gen::<u8>()));
        let labels = (0..n).map(|_| rng.gen_range(0..10)).collect();
        LabeledDataset::new(images, labels, LabeledDataset::cifar_class_names()).unwrap()
    }

    #[test]
    fn prepare_limits_and_round_trip() {
        let cfg = RunConfig::parse("model = baseline\nunits_divisor = 100\ntrain_limit = 12\nvalid_limit = 3\npipeline = gcn")
            .unwrap()
            .resolve()
            .unwrap();
        let p = prepare(&cfg, &synthetic(20), Some(&synthetic(4))).unwrap();
        assert_eq!((p.train.len(), p.valid.len()), (12, 2));
        let dir = tempfile::tempdir().unwrap();
        p.save(dir.path()).unwrap();
        assert_eq!(Prepared::load(dir.path()).unwrap(), p);
    }

    #[test]
    fn raw_pipeline_writes_no_stats() {
        let cfg = RunConfig::parse("model = initial_cnn\npipeline = raw").unwrap().resolve().unwrap();
        let p = prepare(&cfg, &synthetic(10), None).unwrap();
        assert_eq!(p.train.images.shape()[1], 1);
        let dir = tempfile::tempdir().unwrap();
        p.save(dir.path()).unwrap();
        assert!(!dir.path().join(STATS_FILE).exists());
        let back = Prepared::load(dir.path()).unwrap();
        assert_eq!(back.preproc_hash().unwrap(), p.preproc_hash().unwrap());
    }

    #[test]
    fn input_mismatch_is_a_config_error() {
        let cfg = RunConfig::parse("model = initial_cnn\ngrayscale = false").unwrap().resolve().unwrap();
        let p = prepare(&cfg, &synthetic(10), None).unwrap();
        assert!(matches!(check_input(&cfg.spec, &p.train), Err(Error::Config(_))));
    }
}
