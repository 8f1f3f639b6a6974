//! The training loop: shuffled mini-batches, Nesterov updates at the
//! lookahead point, max-norm projection, per-epoch evaluation, the
//! 20-window early-stopping rule, checkpoints and a model-level gradient
//! check.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::io::{Cursor, Read, Write};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{BatchIterator, LabeledDataset};
use crate::error::{Error, Result};
use crate::gradcheck::{relative_error, STEP};
use crate::io_util::{expect_magic, read_bytes, read_f64, read_u64, write_atomic, write_bytes, write_f64, write_u32, write_u64};
use crate::layers::{softmax, DropoutMask};
use crate::model_zoo::{initialize, InitPolicy, ModelSpec, ParamKind};
use crate::network::{DropoutMode, DropoutStreams, Network};
use crate::objective::{cross_entropy, softmax_xent_backward, LossReport};
use crate::optimizer::{classical_step, lr_at, momentum_at, nag_step, project_maxnorm, MomentumKind, TrainSchedule};
use crate::tensor::{read_u32, Tensor};

pub const EARLY_STOP_WINDOW: usize = 20;
pub const CURVE_HEADER: &str = "epoch,train_loss,train_error,val_loss,val_error,lr,momentum,seconds";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_error: f64,
    pub val_loss: f64,
    pub val_error: f64,
    pub lr: f64,
    pub momentum: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearningCurve {
    rows: Vec<CurveRow>,
}

impl LearningCurve {
    pub fn rows(&self) -> &[CurveRow] {
        &self.rows
    }

    pub fn push(&mut self, row: CurveRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.epoch <= last.epoch {
                return Err(Error::invalid(format!("curve epoch {} after {}", row.epoch, last.epoch)));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{CURVE_HEADER}\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.epoch, r.train_loss, r.train_error, r.val_loss, r.val_error, r.lr, r.momentum, r.seconds
            )
            .expect("writing to a String");
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_csv().as_bytes())
    }
}

/// The last [`EARLY_STOP_WINDOW`] validation misclassification errors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EarlyStopState {
    window: VecDeque<f64>,
}

impl EarlyStopState {
    pub fn push(&mut self, error: f64) {
        if self.window.len() == EARLY_STOP_WINDOW {
            self.window.pop_front();
        }
        self.window.push_back(error);
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.window.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }
}

/// True iff the window is full and its oldest entry is strictly lower than
/// every later one.
pub fn should_stop(state: &EarlyStopState) -> bool {
    let mut it = state.window.iter();
    match it.next() {
        Some(&oldest) if state.window.len() == EARLY_STOP_WINDOW => it.all(|&v| oldest < v),
        _ => false,
    }
}

/// Serializable position of a ChaCha stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }

    fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&self.seed)?;
        write_u64(w, self.stream)?;
        w.write_all(&self.word_pos.to_le_bytes())?;
        Ok(())
    }

    fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut seed = [0u8; 32];
        r.read_exact(&mut seed)?;
        let stream = read_u64(r)?;
        let mut pos = [0u8; 16];
        r.read_exact(&mut pos)?;
        Ok(RngState { seed, stream, word_pos: u128::from_le_bytes(pos) })
    }
}

/// Everything needed to evaluate a model or resume its training exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelSpec,
    pub params: Vec<Tensor>,
    pub velocity: Vec<Tensor>,
    /// Epochs completed.
    pub epoch: usize,
    pub shuffle_rng: RngState,
    pub dropout_rngs: Vec<RngState>,
    pub early_stop: EarlyStopState,
    pub best_error: f64,
    pub best_epoch: Option<usize>,
    pub curve: LearningCurve,
    pub config_hash: String,
    pub preproc_hash: String,
}

const CHECKPOINT_VERSION: u32 = 1;

fn write_tensors(w: &mut impl Write, ts: &[Tensor]) -> Result<()> {
    write_u32(w, ts.len() as u32)?;
    ts.iter().try_for_each(|t| t.write_to(w))
}

fn read_tensors(r: &mut impl Read) -> Result<Vec<Tensor>> {
    let n = read_u32(r)? as usize;
    (0..n).map(|_| Tensor::read_from(r)).collect()
}

fn read_string(r: &mut impl Read) -> Result<String> {
    String::from_utf8(read_bytes(r)?).map_err(|_| Error::Format("non-UTF-8 string".into()))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Vec::new();
        w.write_all(b"CKPT")?;
        write_u32(&mut w, CHECKPOINT_VERSION)?;
        write_bytes(&mut w, self.model.name.as_bytes())?;
        write_bytes(&mut w, self.model.to_string().as_bytes())?;
        write_tensors(&mut w, &self.params)?;
        write_tensors(&mut w, &self.velocity)?;
        write_u64(&mut w, self.epoch as u64)?;
        self.shuffle_rng.write_to(&mut w)?;
        write_u32(&mut w, self.dropout_rngs.len() as u32)?;
        for s in &self.dropout_rngs {
            s.write_to(&mut w)?;
        }
        write_u32(&mut w, self.early_stop.len() as u32)?;
        for v in self.early_stop.values() {
            write_f64(&mut w, v)?;
        }
        write_f64(&mut w, self.best_error)?;
        write_u64(&mut w, self.best_epoch.map_or(u64::MAX, |e| e as u64))?;
        write_u32(&mut w, self.curve.rows.len() as u32)?;
        for r in &self.curve.rows {
            write_u64(&mut w, r.epoch as u64)?;
            for v in [r.train_loss, r.train_error, r.val_loss, r.val_error, r.lr, r.momentum, r.seconds] {
                write_f64(&mut w, v)?;
            }
        }
        write_bytes(&mut w, self.config_hash.as_bytes())?;
        write_bytes(&mut w, self.preproc_hash.as_bytes())?;
        Ok(w)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        expect_magic(&mut r, b"CKPT")?;
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let name = read_string(&mut r)?;
        let model = ModelSpec::parse(&name, &read_string(&mut r)?)?;
        let params = read_tensors(&mut r)?;
        let velocity = read_tensors(&mut r)?;
        let epoch = read_u64(&mut r)? as usize;
        let shuffle_rng = RngState::read_from(&mut r)?;
        let n = read_u32(&mut r)? as usize;
        let dropout_rngs = (0..n).map(|_| RngState::read_from(&mut r)).collect::<Result<_>>()?;
        let n = read_u32(&mut r)? as usize;
        if n > EARLY_STOP_WINDOW {
            return Err(Error::Format(format!("early-stop window of {n} entries")));
        }
        let mut early_stop = EarlyStopState::default();
        for _ in 0..n {
            early_stop.push(read_f64(&mut r)?);
        }
        let best_error = read_f64(&mut r)?;
        let best_epoch = match read_u64(&mut r)? {
            u64::MAX => None,
            e => Some(e as usize),
        };
        let n = read_u32(&mut r)? as usize;
        let mut curve = LearningCurve::default();
        for _ in 0..n {
            let epoch = read_u64(&mut r)? as usize;
            let mut v = [0.0; 7];
            for x in &mut v {
                *x = read_f64(&mut r)?;
            }
            curve.push(CurveRow {
                epoch,
                train_loss: v[0],
                train_error: v[1],
                val_loss: v[2],
                val_error: v[3],
                lr: v[4],
                momentum: v[5],
                seconds: v[6],
            })?;
        }
        let config_hash = read_string(&mut r)?;
        let preproc_hash = read_string(&mut r)?;
        if r.position() as usize != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        let layout = model.param_layout()?;
        if layout.slots.len() != params.len()
            || params.len() != velocity.len()
            || layout.slots.iter().zip(&params).any(|(s, p)| s.shape != p.shape())
        {
            return Err(Error::Format("checkpoint tensors do not match the model".into()));
        }
        Ok(Checkpoint {
            model,
            params,
            velocity,
            epoch,
            shuffle_rng,
            dropout_rngs,
            early_stop,
            best_error,
            best_epoch,
            curve,
            config_hash,
            preproc_hash,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub seed: u64,
    pub max_epochs: usize,
    pub early_stop: bool,
    pub init: InitPolicy,
    /// Rows per inference chunk during evaluation.
    pub eval_chunk: usize,
    /// Record elapsed seconds in the curve; otherwise the column is 0 so
    /// that curves are byte-reproducible.
    pub wall_clock: bool,
    pub config_hash: String,
    pub preproc_hash: String,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            seed: 0,
            max_epochs: 1000,
            early_stop: true,
            init: InitPolicy::default(),
            eval_chunk: 500,
            wall_clock: false,
            config_hash: String::new(),
            preproc_hash: String::new(),
        }
    }
}

/// Per-epoch notification passed to the observer of [`train`].
pub struct EpochEvent<'a> {
    pub row: &'a CurveRow,
    pub last: &'a Checkpoint,
    pub best: &'a Checkpoint,
    pub improved: bool,
}

/// Receives progress from [`train`]. Closures over [`EpochEvent`] observe
/// epochs only.
pub trait TrainObserver {
    /// Called after every parameter update and projection.
    fn on_step(&mut self, _epoch: usize, _batch: usize, _params: &[Tensor]) -> Result<()> {
        Ok(())
    }

    fn on_epoch(&mut self, _event: &EpochEvent<'_>) -> Result<()> {
        Ok(())
    }
}

/// Observes nothing.
impl TrainObserver for () {}

impl<F: FnMut(&EpochEvent<'_>) -> Result<()>> TrainObserver for F {
    fn on_epoch(&mut self, event: &EpochEvent<'_>) -> Result<()> {
        self(event)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub curve: LearningCurve,
    pub stopped_early: bool,
}

/// Sub-seeds for initialization, shuffling and dropout.
fn derive_seeds(seed: u64) -> (u64, u64, u64) {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    (master.gen(), master.gen(), master.gen())
}

/// The checkpoint a fresh run starts from.
pub fn initial_checkpoint(spec: &ModelSpec, opts: &TrainOptions) -> Result<Checkpoint> {
    let (init_seed, shuffle_seed, dropout_seed) = derive_seeds(opts.seed);
    let params = initialize(spec, &opts.init, init_seed)?;
    let velocity = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
    let streams = DropoutStreams::new(spec, dropout_seed);
    Ok(Checkpoint {
        model: spec.clone(),
        params,
        velocity,
        epoch: 0,
        shuffle_rng: RngState::capture(&ChaCha8Rng::seed_from_u64(shuffle_seed)),
        dropout_rngs: streams.streams().map(RngState::capture).collect(),
        early_stop: EarlyStopState::default(),
        best_error: f64::INFINITY,
        best_epoch: None,
        curve: LearningCurve::default(),
        config_hash: opts.config_hash.clone(),
        preproc_hash: opts.preproc_hash.clone(),
    })
}

fn located(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}, batch {batch}: {m}")),
        other => other,
    }
}

/// Trains `spec` on `train`, evaluating on `valid` (or on `train` when no
/// validation set is given) after every epoch.
///
/// Starts from `resume` when given; the checkpoint must carry the same
/// config hash. `observer` sees every epoch after it completes.
pub fn train(
    spec: &ModelSpec,
    schedule: &TrainSchedule,
    train: &LabeledDataset,
    valid: Option<&LabeledDataset>,
    opts: &TrainOptions,
    resume: Option<Checkpoint>,
    mut observer: impl TrainObserver,
) -> Result<TrainOutcome> {
    schedule.validate()?;
    if train.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let net = Network::new(spec.clone())?;
    let layout = net.layout().clone();
    let scales = layout.lr_scales(schedule);
    let constraints = layout.constraints(schedule);

    let mut state = match resume {
        Some(c) => {
            if c.config_hash != opts.config_hash {
                return Err(Error::Config(format!(
                    "checkpoint config hash {} does not match {}",
                    c.config_hash, opts.config_hash
                )));
            }
            if c.model != *spec {
                return Err(Error::Config("checkpoint was trained on a different model".into()));
            }
            c
        }
        None => initial_checkpoint(spec, opts)?,
    };
    let mut best = state.clone();
    let mut shuffle = state.shuffle_rng.restore();
    let mut streams = DropoutStreams::new(spec, 0);
    streams.restore(state.dropout_rngs.iter().map(RngState::restore).collect())?;
    let started = Instant::now();
    let mut stopped_early = should_stop(&state.early_stop) && opts.early_stop;

    while state.epoch < opts.max_epochs && !stopped_early {
        let epoch = state.epoch;
        let lr = lr_at(schedule, epoch);
        let mu = momentum_at(schedule, epoch);
        let batches = BatchIterator::new(train, schedule.batch_size, &mut shuffle)?;
        for (b, batch) in batches.enumerate() {
            let batch = batch?;
            let stream_ref = &mut streams;
            let step = match schedule.momentum_kind {
                MomentumKind::Nesterov => nag_step(&mut state.params, &mut state.velocity, lr, mu, &scales, |p| {
                    let (_, g) = net.loss_and_grads(p, &batch.inputs, &batch.labels, DropoutMode::Sample(stream_ref))?;
                    Ok((g, ()))
                }),
                MomentumKind::Classical => net
                    .loss_and_grads(&state.params, &batch.inputs, &batch.labels, DropoutMode::Sample(stream_ref))
                    .and_then(|(_, g)| classical_step(&mut state.params, &mut state.velocity, &g, lr, mu, &scales)),
            };
            step.map_err(|e| located(e, epoch, b))?;
            for (i, (p, c)) in state.params.iter_mut().zip(&constraints).enumerate() {
                if let Some(c) = c {
                    project_maxnorm(p, *c);
                }
                if !p.is_finite() {
                    let slot = &layout.slots[i];
                    return Err(located(
                        Error::Numeric(format!(
                            "non-finite {} after update at layer {} ({})",
                            if slot.is_bias { "bias" } else { "weights" },
                            slot.layer,
                            spec.layers[slot.layer]
                        )),
                        epoch,
                        b,
                    ));
                }
            }
            observer.on_step(epoch, b, &state.params)?;
        }

        let train_report = net.evaluate(&state.params, &train.images, &train.labels, opts.eval_chunk)?;
        let val_report = match valid {
            Some(v) => net.evaluate(&state.params, &v.images, &v.labels, opts.eval_chunk)?,
            None => train_report,
        };
        if !train_report.loss.is_finite() || !val_report.loss.is_finite() {
            return Err(Error::Numeric(format!("epoch {epoch}: non-finite evaluation loss")));
        }
        let row = CurveRow {
            epoch,
            train_loss: train_report.loss,
            train_error: train_report.error_rate,
            val_loss: val_report.loss,
            val_error: val_report.error_rate,
            lr,
            momentum: mu,
            seconds: if opts.wall_clock { started.elapsed().as_secs_f64() } else { 0.0 },
        };
        state.curve.push(row)?;
        state.early_stop.push(val_report.error_rate);
        state.epoch = epoch + 1;
        state.shuffle_rng = RngState::capture(&shuffle);
        state.dropout_rngs = streams.streams().map(RngState::capture).collect();
        let improved = val_report.error_rate < state.best_error;
        if improved {
            state.best_error = val_report.error_rate;
            state.best_epoch = Some(epoch);
            best = state.clone();
        }
        observer.on_epoch(&EpochEvent { row: &row, last: &state, best: &best, improved })?;
        stopped_early = opts.early_stop && should_stop(&state.early_stop);
    }
    if best.best_epoch.is_none() {
        best = state.clone();
    }
    Ok(TrainOutcome { curve: state.curve.clone(), best, last: state, stopped_early })
}

/// Inference-mode loss and error of a checkpoint. `preproc_hash` must be
/// the hash of the preprocessing that produced `ds`.
pub fn evaluate(checkpoint: &Checkpoint, ds: &LabeledDataset, preproc_hash: &str, chunk: usize) -> Result<LossReport> {
    if checkpoint.preproc_hash != preproc_hash {
        return Err(Error::Config(format!(
            "preprocessing hash {preproc_hash} does not match the checkpoint's {}",
            checkpoint.preproc_hash
        )));
    }
    let net = Network::new(checkpoint.model.clone())?;
    net.evaluate(&checkpoint.params, &ds.images, &ds.labels, chunk)
}

/// Maximum relative error for one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub max_error: f64,
    pub probes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub model: String,
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.max_error < self.tolerance)
    }

    pub fn max_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_error).fold(0.0, f64::max)
    }
}

impl std::fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{}: {}", self.model, if self.passed() { "PASS" } else { "FAIL" })?;
        for t in &self.tensors {
            let mark = if t.max_error < self.tolerance { "ok" } else { "FAIL" };
            writeln!(f, "  {:<32} max rel err {:.3e} over {} probes  {mark}", t.name, t.max_error, t.probes)?;
        }
        Ok(())
    }
}

pub const DEFAULT_GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Coordinates probed per tensor; smaller tensors are probed exhaustively.
pub const GRADCHECK_PROBES: usize = 24;
const GRADCHECK_BATCH: usize = 2;

/// Frozen inputs for a gradient check: parameters, batch and masks.
pub struct GradcheckCase {
    pub net: Network,
    pub params: Vec<Tensor>,
    pub x: Tensor,
    pub labels: Vec<usize>,
    pub masks: Vec<DropoutMask>,
}

impl GradcheckCase {
    pub fn new(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let net = Network::new(spec.clone())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = initialize(spec, &InitPolicy::default(), rng.gen())?;
        // random biases so that relu and max decisions are not all at zero
        let params = params
            .into_iter()
            .zip(&net.layout().slots)
            .map(|(p, s)| if s.is_bias { Tensor::from_fn(p.shape(), |_| rng.gen_range(-0.1..0.1)) } else { p })
            .collect::<Vec<_>>();
        let mut shape = vec![GRADCHECK_BATCH];
        shape.extend_from_slice(spec.input_shape());
        let x = Tensor::from_fn(&shape, |_| rng.gen_range(-1.0..1.0));
        let labels = (0..GRADCHECK_BATCH).map(|_| rng.gen_range(0..spec.classes())).collect();
        let mut streams = DropoutStreams::new(spec, rng.gen());
        let masks = net.forward(&params, &x, DropoutMode::Sample(&mut streams))?.masks;
        Ok(GradcheckCase { net, params, x, labels, masks })
    }

    /// Mean loss and kink fingerprint.
    pub fn loss(&self, params: &[Tensor], x: &Tensor) -> Result<(f64, u64)> {
        let pass = self.net.forward(params, x, DropoutMode::Fixed(&self.masks))?;
        let probs = softmax(&pass.logits)?;
        Ok((cross_entropy(&probs, &self.labels)?.loss, pass.kink_pattern()))
    }

    /// Analytic gradients for every parameter tensor followed by the input.
    pub fn analytic(&self) -> Result<Vec<Tensor>> {
        let pass = self.net.forward(&self.params, &self.x, DropoutMode::Fixed(&self.masks))?;
        let d = softmax_xent_backward(&pass.logits, &self.labels)?;
        let (mut grads, dx) = self.net.backward(&self.params, pass, d, true)?;
        grads.push(dx.expect("input gradient requested"));
        Ok(grads)
    }

    fn tensor_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .net
            .layout()
            .slots
            .iter()
            .map(|s| {
                let kind = match s.kind {
                    ParamKind::Conv => "conv",
                    ParamKind::Dense => "dense",
                };
                let part = if s.is_bias { "bias" } else { "weights" };
                format!("layer {} {kind} {part}", s.layer)
            })
            .collect();
        names.push("input".into());
        names
    }

    /// Compares `analytic` (parameters then input) against central
    /// differences, skipping coordinates whose perturbation crosses a kink.
    pub fn compare(&self, analytic: &[Tensor], tolerance: f64, seed: u64) -> Result<GradcheckReport> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, base_kinks) = self.loss(&self.params, &self.x)?;
        let names = self.tensor_names();
        let mut tensors = Vec::new();
        for (t, (name, grad)) in names.into_iter().zip(analytic).enumerate() {
            let len = grad.len();
            let candidates: Vec<usize> = if len <= GRADCHECK_PROBES {
                (0..len).collect()
            } else {
                (0..GRADCHECK_PROBES * 4).map(|_| rng.gen_range(0..len)).collect()
            };
            let mut max_error: f64 = 0.0;
            let mut probes = 0;
            for idx in candidates {
                if probes == GRADCHECK_PROBES {
                    break;
                }
                let eval = |delta: f64| -> Result<(f64, u64)> {
                    if t < self.params.len() {
                        let mut p = self.params.clone();
                        p[t].data_mut()[idx] += delta;
                        self.loss(&p, &self.x)
                    } else {
                        let mut x = self.x.clone();
                        x.data_mut()[idx] += delta;
                        self.loss(&self.params, &x)
                    }
                };
                let (plus, k_plus) = eval(STEP)?;
                let (minus, k_minus) = eval(-STEP)?;
                if k_plus != base_kinks || k_minus != base_kinks {
                    continue;
                }
                let numeric = (plus - minus) / (2.0 * STEP);
                max_error = max_error.max(relative_error(grad.data()[idx], numeric));
                probes += 1;
            }
            tensors.push(TensorCheck { name, max_error, probes });
        }
        Ok(GradcheckReport { model: self.net.spec().name.clone(), tolerance, tensors })
    }
}

/// Checks every parameter tensor and the input of `spec` against finite
/// differences with frozen dropout masks.
pub fn gradcheck(spec: &ModelSpec, seed: u64, tolerance: f64) -> Result<GradcheckReport> {
    let case = GradcheckCase::new(spec, seed)?;
    let analytic = case.analytic()?;
    case.compare(&analytic, tolerance, seed ^ 0x9e37_79b9_7f4a_7c15)
}
