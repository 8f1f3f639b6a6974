use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use convnet_core::dataset::write_cifar10;
use convnet_core::preprocess::Dictionary;
use convnet_core::{FittedPipeline, LabeledDataset, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn convnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_convnet")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new(train: usize, test: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (name, n) in [("train.bin", train), ("test.bin", test)] {
            let images = Tensor::from_fn(&[n, 3, 32, 32], |_| f64::from(rng.gen::<u8>()));
            let labels = (0..n).map(|_| rng.gen_range(0..10)).collect();
            let ds = LabeledDataset::new(images, labels, LabeledDataset::cifar_class_names()).unwrap();
            write_cifar10(&ds, dir.path().join(name)).unwrap();
        }
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self, extra: &str) -> String {
        let path = self.path("run.cfg");
        let text = format!(
            "train = {}\ntest = {}\n{extra}\n",
            self.path("train.bin").display(),
            self.path("test.bin").display()
        );
        std::fs::write(&path, text).unwrap();
        path.display().to_string()
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn prepare_gcn_zca_writes_stats() {
    let f = Fixture::new(40, 5);
    // grayscale keeps the eigendecomposition at 1024 dimensions
    let cfg = f.config("model = initial_cnn");
    let out = f.path("prep");
    let o = convnet(&["prepare", "--config", &cfg, "--pipeline", "gcn-zca", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stats = FittedPipeline::load(out.join("preproc.bin")).unwrap();
    assert_eq!(stats.config.fudge, 0.01);
    assert!(stats.zca.is_some());
    assert_eq!(LabeledDataset::load(out.join("train.lds")).unwrap().len(), 36);
    assert_eq!(LabeledDataset::load(out.join("test.lds")).unwrap().len(), 5);
}

#[test]
fn prepare_raw_writes_no_stats() {
    let f = Fixture::new(20, 5);
    let cfg = f.config("model = baseline\nunits_divisor = 100\npipeline = raw");
    let out = f.path("prep");
    assert!(convnet(&["prepare", "--config", &cfg, "--out", s(&out)]).status.success());
    assert!(out.join("train.lds").exists());
    assert!(!out.join("preproc.bin").exists());
}

#[test]
fn unknown_pipeline_is_a_config_error() {
    let f = Fixture::new(20, 5);
    let cfg = f.config("model = baseline\npipeline = whiten-everything");
    let o = convnet(&["prepare", "--config", &cfg, "--out", s(&f.path("prep"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}

#[test]
fn truncated_data_is_a_data_error() {
    let f = Fixture::new(20, 5);
    let bytes = std::fs::read(f.path("train.bin")).unwrap();
    std::fs::write(f.path("train.bin"), &bytes[..bytes.len() - 7]).unwrap();
    let cfg = f.config("model = baseline");
    let o = convnet(&["prepare", "--config", &cfg, "--out", s(&f.path("prep"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_eval_predict_round_trip() {
    let f = Fixture::new(60, 7);
    let cfg = f.config(
        "model = model3\nvariant = dropout\nmaps_divisor = 16\nunits_divisor = 64\nbatch_size = 18\nmax_epochs = 3\nearly_stop = false",
    );
    let prep = f.path("prep");
    assert!(convnet(&["prepare", "--config", &cfg, "--out", s(&prep)]).status.success());
    let run = f.path("run");
    let o = convnet(&["train", "--config", &cfg, "--prepared", s(&prep), "--out", s(&run)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let curve = std::fs::read_to_string(run.join("curve.csv")).unwrap();
    let lines: Vec<&str> = curve.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,train_error,val_loss,val_error,lr,momentum,seconds");
    assert_eq!(lines.len(), 4);
    assert!(lines[1..].iter().all(|l| l.ends_with(",0")));
    for file in ["best.ckpt", "last.ckpt", "run.txt"] {
        assert!(run.join(file).exists(), "{file}");
    }

    let ckpt = run.join("best.ckpt");
    let o = convnet(&["eval", "--checkpoint", s(&ckpt), "--prepared", s(&prep), "--set", "valid"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("valid: samples 6 "), "{}", stdout(&o));

    let preds = f.path("preds.csv");
    let o = convnet(&["predict", "--checkpoint", s(&ckpt), "--prepared", s(&prep), "--out", s(&preds)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&preds).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 8);
    assert_eq!(rows[0], "id,label");
    assert!(rows[1].starts_with("1,"));
    let names = LabeledDataset::cifar_class_names();
    assert!(rows[1..].iter().all(|r| names.iter().any(|n| r.ends_with(&format!(",{n}")))));
}

#[test]
fn resume_continues_the_same_run() {
    let f = Fixture::new(40, 2);
    let base = "model = baseline\nunits_divisor = 50\nbatch_size = 12\nearly_stop = false";
    let cfg = f.config(&format!("{base}\nmax_epochs = 4"));
    let full = f.path("full");
    assert!(convnet(&["train", "--config", &cfg, "--out", s(&full)]).status.success());

    let cfg = f.config(&format!("{base}\nmax_epochs = 2"));
    let half = f.path("half");
    assert!(convnet(&["train", "--config", &cfg, "--out", s(&half)]).status.success());
    let cfg = f.config(&format!("{base}\nmax_epochs = 4"));
    let resumed = f.path("resumed");
    let ckpt = half.join("last.ckpt");
    let o = convnet(&["train", "--config", &cfg, "--resume", s(&ckpt), "--out", s(&resumed)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for file in ["curve.csv", "last.ckpt"] {
        assert_eq!(std::fs::read(full.join(file)).unwrap(), std::fs::read(resumed.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn resume_rejects_a_different_config() {
    let f = Fixture::new(30, 2);
    let cfg = f.config("model = baseline\nunits_divisor = 50\nmax_epochs = 1");
    let run = f.path("run");
    assert!(convnet(&["train", "--config", &cfg, "--out", s(&run)]).status.success());
    let cfg = f.config("model = baseline\nunits_divisor = 50\nmax_epochs = 2\nlr = 0.1");
    let ckpt = run.join("last.ckpt");
    let o = convnet(&["train", "--config", &cfg, "--resume", s(&ckpt), "--out", s(&f.path("again"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn dry_run_prints_shapes_and_schedule() {
    let f = Fixture::new(2, 1);
    let cfg = f.config("model = model2");
    let o = convnet(&["train", "--config", &cfg, "--dry-run"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("# config hash "));
    assert!(text.contains("conv 96 5x5"));
    assert!(text.contains("maxpool 3x3 stride 2"));
    assert!(text.contains("  500   0.00170"), "{text}");
}

#[test]
fn gradcheck_passes_on_small_builtins() {
    let o = convnet(&["gradcheck", "model1", "baseline", "--variant", "maxout"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("2 of 2 models passed"));
}

#[test]
fn pca2_writes_a_scatter() {
    let f = Fixture::new(30, 1);
    let cfg = f.config("model = baseline");
    let out = f.path("pca.csv");
    assert!(convnet(&["pca2", "--config", &cfg, "--out", s(&out)]).status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "x,y,label");
    assert_eq!(rows.len(), 31);
    assert!(rows[1..].iter().all(|r| r.split(',').count() == 3));
}

#[test]
fn dict_learn_writes_unit_norm_atoms() {
    let f = Fixture::new(30, 1);
    let cfg = f.config("model = baseline\npipeline = gcn");
    let out = f.path("dict.bin");
    let o = convnet(&["dict-learn", "--config", &cfg, "--centroids", "8", "--patch", "4", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dict = Dictionary::load(&out).unwrap();
    assert_eq!(dict.centroids(), 8);
    let atoms = &dict.atoms;
    let (rows, cols) = (atoms.rows(), atoms.row_len());
    for c in 0..cols {
        let norm: f64 = (0..rows).map(|r| atoms.data()[r * cols + c].powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9, "atom {c} norm {norm}");
    }
}

#[test]
fn missing_config_is_reported() {
    let o = convnet(&["train", "--dry-run"]);
    assert_eq!(o.status.code(), Some(1));
}
