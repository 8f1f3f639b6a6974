use std::fs;
use std::path::Path;
use std::process::ExitCode;

use convnet_core::config::{ResolvedConfig, RunConfig};
use convnet_core::dataset::{pca2, write_predictions, write_scatter_csv, LabeledDataset};
use convnet_core::experiment::{check_input, load_raw, prepare, run_training, Prepared};
use convnet_core::io_util::write_atomic;
use convnet_core::optimizer::{lr_at, momentum_at};
use convnet_core::preprocess::Dictionary;
use convnet_core::trainer::{gradcheck, Checkpoint, EpochEvent};
use convnet_core::{builtin, BuildOptions, Builtin, Error, Network, Result, Variant};

use crate::{Command, Common};

pub fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Prepare { common, pipeline, out } => {
            let mut raw = raw_config(&common)?;
            if let Some(p) = pipeline {
                raw.set_override("pipeline", &p)?;
            }
            let cfg = raw.resolve()?;
            let prepared = prepare_from_files(&cfg)?;
            prepared.save(&out)?;
            println!(
                "prepared {} train / {} valid{} samples with {} (hash {})",
                prepared.train.len(),
                prepared.valid.len(),
                prepared.test.as_ref().map_or(String::new(), |t| format!(" / {} test", t.len())),
                prepared.pipeline.config,
                prepared.preproc_hash()?
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::DictLearn { common, centroids, patch, iters, alpha, patches_per_centroid, out } => {
            let cfg = resolve(&common)?;
            let prepared = prepare_from_files(&cfg)?;
            let dict = Dictionary::learn(&prepared.train.images, patch, centroids, iters, alpha, patches_per_centroid, cfg.seed)?;
            dict.save(&out)?;
            println!(
                "dictionary of {} atoms over {}x{}x{} patches written to {}",
                dict.centroids(),
                dict.channels,
                patch,
                patch,
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Train { common, prepared, resume, dry_run, wall_clock, out } => {
            let cfg = resolve(&common)?;
            if dry_run {
                print!("{}", dry_run_report(&cfg)?);
                return Ok(ExitCode::SUCCESS);
            }
            let out = out.ok_or_else(|| Error::Config("train needs --out DIR".into()))?;
            let data = load_prepared(&cfg, prepared.as_deref())?;
            let resume = resume.map(Checkpoint::load).transpose()?;
            fs::create_dir_all(&out)?;
            let meta = format!(
                "{}config_hash = {}\npreproc_hash = {}\n",
                cfg.canonical(),
                cfg.hash(),
                data.preproc_hash()?
            );
            write_atomic(&out.join("run.txt"), meta.as_bytes())?;
            let outcome = run_training(&cfg, &data, wall_clock, resume, |e: &EpochEvent<'_>| {
                let r = e.row;
                println!(
                    "epoch {:>4}  train loss {:.4} err {:.4}  valid loss {:.4} err {:.4}  lr {:.5} mu {:.3}{}",
                    r.epoch,
                    r.train_loss,
                    r.train_error,
                    r.val_loss,
                    r.val_error,
                    r.lr,
                    r.momentum,
                    if e.improved { "  *" } else { "" }
                );
                e.last.curve.write_csv(out.join("curve.csv"))?;
                e.last.save(out.join("last.ckpt"))?;
                if e.improved {
                    e.best.save(out.join("best.ckpt"))?;
                }
                Ok(())
            })?;
            outcome.curve.write_csv(out.join("curve.csv"))?;
            outcome.last.save(out.join("last.ckpt"))?;
            outcome.best.save(out.join("best.ckpt"))?;
            println!(
                "finished after {} epochs{}; best validation error {:.4} at epoch {}",
                outcome.last.epoch,
                if outcome.stopped_early { " (early stop)" } else { "" },
                outcome.best.best_error,
                outcome.best.best_epoch.map_or("-".to_string(), |e| e.to_string())
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { common, checkpoint, prepared, set } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let cfg = resolve(&common).ok();
            let data = prepared_for_checkpoint(cfg.as_ref(), prepared.as_deref())?;
            let ds = pick_set(&data, &set)?;
            check_input(&ckpt.model, ds)?;
            let report = convnet_core::trainer::evaluate(&ckpt, ds, &data.preproc_hash()?, 500)?;
            println!(
                "{set}: samples {} loss {:.6} error {:.6} accuracy {:.6}",
                report.samples,
                report.loss,
                report.error_rate,
                report.accuracy()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Predict { common, checkpoint, prepared, out } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let cfg = resolve(&common).ok();
            let data = prepared_for_checkpoint(cfg.as_ref(), prepared.as_deref())?;
            if ckpt.preproc_hash != data.preproc_hash()? {
                return Err(Error::Config("the checkpoint was trained with different preprocessing".into()));
            }
            let test = pick_set(&data, "test")?;
            check_input(&ckpt.model, test)?;
            let net = Network::new(ckpt.model.clone())?;
            let labels = net.predict_proba(&ckpt.params, &test.images, 500)?.argmax_rows();
            let ids: Vec<u64> = (1..=labels.len() as u64).collect();
            write_predictions(&ids, &labels, &test.class_names, &out)?;
            println!("wrote {} predictions to {}", labels.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck { models, variant, seed, tolerance } => {
            let models: Vec<Builtin> = if models.iter().any(|m| m == "all") {
                Builtin::ALL.to_vec()
            } else {
                models.iter().map(|m| m.parse()).collect::<Result<_>>()?
            };
            let variants: Vec<Variant> = if variant == "all" { Variant::ALL.to_vec() } else { vec![variant.parse()?] };
            let mut failed = 0;
            for &m in &models {
                for &v in &variants {
                    let spec = builtin(m, &BuildOptions::tiny(v))?;
                    let report = gradcheck(&spec, seed, tolerance)?;
                    print!("{report}");
                    if !report.passed() {
                        failed += 1;
                    }
                }
            }
            let total = models.len() * variants.len();
            println!("{} of {total} models passed at tolerance {tolerance:e}", total - failed);
            Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(3) })
        }
        Command::Pca2 { common, cap, out } => {
            let cfg = resolve(&common)?;
            let (full, _) = load_raw(&cfg)?;
            let (points, labels) = pca2(&full, cap, cfg.seed)?;
            write_scatter_csv(&points, &labels, &out)?;
            println!("wrote {} points to {}", labels.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn raw_config(common: &Common) -> Result<RunConfig> {
    let path = common.config.as_ref().ok_or_else(|| Error::Config("--config PATH is required".into()))?;
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut raw = RunConfig::parse(&text)?;
    if let Some(seed) = common.seed {
        raw.set_override("seed", &seed.to_string())?;
    }
    Ok(raw)
}

fn resolve(common: &Common) -> Result<ResolvedConfig> {
    raw_config(common)?.resolve()
}

fn prepare_from_files(cfg: &ResolvedConfig) -> Result<Prepared> {
    let (full, test) = load_raw(cfg)?;
    prepare(cfg, &full, test.as_ref())
}

fn load_prepared(cfg: &ResolvedConfig, dir: Option<&Path>) -> Result<Prepared> {
    match dir {
        Some(d) => Prepared::load(d),
        None => prepare_from_files(cfg),
    }
}

fn prepared_for_checkpoint(cfg: Option<&ResolvedConfig>, dir: Option<&Path>) -> Result<Prepared> {
    match (dir, cfg) {
        (Some(d), _) => Prepared::load(d),
        (None, Some(c)) => prepare_from_files(c),
        (None, None) => Err(Error::Config("give --prepared DIR or a valid --config".into())),
    }
}

fn pick_set<'a>(data: &'a Prepared, set: &str) -> Result<&'a LabeledDataset> {
    match set {
        "train" => Ok(&data.train),
        "valid" => Ok(&data.valid),
        "test" => data.test.as_ref().ok_or_else(|| Error::Data("no test set was prepared".into())),
        other => Err(Error::Config(format!("unknown set {other:?} (train, valid, test)"))),
    }
}

fn dry_run_report(cfg: &ResolvedConfig) -> Result<String> {
    let mut out = String::new();
    out.push_str("# resolved configuration\n");
    out.push_str(&cfg.canonical());
    out.push_str(&format!("# config hash {}\n\n# shape chain\n", cfg.hash()));
    out.push_str(&cfg.spec.describe()?);
    out.push_str("\n# schedule\nepoch        lr  momentum\n");
    for epoch in [0, 100, 250, 400, 500, 1000] {
        out.push_str(&format!(
            "{epoch:>5}  {:>8.5}  {:>8.4}\n",
            lr_at(&cfg.schedule, epoch),
            momentum_at(&cfg.schedule, epoch)
        ));
    }
    Ok(out)
}
