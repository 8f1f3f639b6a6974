//! Declarative architectures, shape inference and parameter initialization.
//!
//! A [`ModelSpec`] is an ordered list of [`LayerSpec`]s starting with an
//! input layer and ending with a softmax output. Each line of its text form
//! is one layer, e.g. `conv 64 5x5`, `maxpool 3x3 stride 2`, `dense 1000`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{conv_output_dims, pool_output_dims, ActivationKind};
use crate::optimizer::{NormConstraint, NormGrouping, TrainSchedule};
use crate::tensor::Tensor;

/// Optional per-layer overrides of the initialization range and norm cap.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ParamOptions {
    pub init_range: Option<f64>,
    pub norm_cap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    /// Per-sample input shape, e.g. `[3, 32, 32]` or `[3072]`.
    Input(Vec<usize>),
    Conv { maps: usize, kh: usize, kw: usize, opts: ParamOptions },
    MaxPool { rh: usize, rw: usize, stride: usize },
    Activation(ActivationKind),
    Maxout { pieces: usize },
    Dropout { retain: f64 },
    Dense { units: usize, opts: ParamOptions },
    SoftmaxOutput { classes: usize },
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::Dense { .. })
    }
}

fn fmt_opts(f: &mut fmt::Formatter<'_>, o: &ParamOptions) -> fmt::Result {
    if let Some(r) = o.init_range {
        write!(f, " init={r}")?;
    }
    if let Some(c) = o.norm_cap {
        write!(f, " cap={c}")?;
    }
    Ok(())
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Input(shape) => {
                let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
                write!(f, "input {}", dims.join("x"))
            }
            LayerSpec::Conv { maps, kh, kw, opts } => {
                write!(f, "conv {maps} {kh}x{kw}")?;
                fmt_opts(f, opts)
            }
            LayerSpec::MaxPool { rh, rw, stride } => write!(f, "maxpool {rh}x{rw} stride {stride}"),
            LayerSpec::Activation(k) => write!(f, "{k}"),
            LayerSpec::Maxout { pieces } => write!(f, "maxout {pieces}"),
            LayerSpec::Dropout { retain } => write!(f, "dropout {retain}"),
            LayerSpec::Dense { units, opts } => {
                write!(f, "dense {units}")?;
                fmt_opts(f, opts)
            }
            LayerSpec::SoftmaxOutput { classes } => write!(f, "softmax {classes}"),
        }
    }
}

fn parse_dims(s: &str) -> Result<Vec<usize>> {
    s.split('x')
        .map(|d| {
            d.parse::<usize>()
                .map_err(|_| Error::Config(format!("bad dimension list '{s}'")))
        })
        .collect()
}

fn parse_pair(s: &str) -> Result<(usize, usize)> {
    match parse_dims(s)?.as_slice() {
        [a] => Ok((*a, *a)),
        [a, b] => Ok((*a, *b)),
        _ => Err(Error::Config(format!("expected HxW, got '{s}'"))),
    }
}

fn parse_num<T: FromStr>(s: Option<&str>, what: &str) -> Result<T> {
    s.and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Config(format!("missing or invalid {what}")))
}

fn parse_opts(rest: &[&str]) -> Result<ParamOptions> {
    let mut o = ParamOptions::default();
    for tok in rest {
        match tok.split_once('=') {
            Some(("init", v)) => o.init_range = Some(parse_num(Some(v), "init range")?),
            Some(("cap", v)) => o.norm_cap = Some(parse_num(Some(v), "norm cap")?),
            _ => return Err(Error::Config(format!("unexpected layer option '{tok}'"))),
        }
    }
    Ok(o)
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let toks: Vec<&str> = s.split_whitespace().collect();
        let Some((&head, rest)) = toks.split_first() else {
            return Err(Error::Config("empty layer description".into()));
        };
        let layer = match head {
            "input" => LayerSpec::Input(parse_dims(rest.first().copied().unwrap_or(""))?),
            "conv" => {
                let maps = parse_num(rest.first().copied(), "conv map count")?;
                let (kh, kw) = parse_pair(rest.get(1).copied().unwrap_or(""))?;
                LayerSpec::Conv { maps, kh, kw, opts: parse_opts(rest.get(2..).unwrap_or(&[]))? }
            }
            "maxpool" => {
                let (rh, rw) = parse_pair(rest.first().copied().unwrap_or(""))?;
                let stride = match rest.get(1..) {
                    Some(["stride", v]) => parse_num(Some(v), "pool stride")?,
                    Some([]) | None => rh,
                    _ => return Err(Error::Config(format!("bad maxpool layer '{s}'"))),
                };
                LayerSpec::MaxPool { rh, rw, stride }
            }
            "relu" | "sigmoid" | "tanh" if rest.is_empty() => LayerSpec::Activation(head.parse()?),
            "maxout" => LayerSpec::Maxout { pieces: parse_num(rest.first().copied(), "maxout pieces")? },
            "dropout" => LayerSpec::Dropout { retain: parse_num(rest.first().copied(), "retain probability")? },
            "dense" => LayerSpec::Dense {
                units: parse_num(rest.first().copied(), "dense units")?,
                opts: parse_opts(rest.get(1..).unwrap_or(&[]))?,
            },
            "softmax" => LayerSpec::SoftmaxOutput { classes: parse_num(rest.first().copied(), "class count")? },
            _ => return Err(Error::Config(format!("unknown layer '{s}'"))),
        };
        if !matches!(head, "input" | "maxout" | "dropout" | "softmax") || rest.len() == 1 {
            Ok(layer)
        } else {
            Err(Error::Config(format!("trailing tokens in layer '{s}'")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.layers {
            writeln!(f, "layer = {l}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Conv,
    Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSlot {
    pub layer: usize,
    pub kind: ParamKind,
    pub is_bias: bool,
    pub shape: Vec<usize>,
    pub opts: ParamOptions,
}

/// Flat parameter list: weights then biases for every conv/dense layer in
/// network order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub slots: Vec<ParamSlot>,
}

impl ParamLayout {
    pub fn total_params(&self) -> usize {
        self.slots.iter().map(|s| s.shape.iter().product::<usize>()).sum()
    }

    /// Learning-rate multiplier per tensor.
    pub fn lr_scales(&self, schedule: &TrainSchedule) -> Vec<f64> {
        self.slots
            .iter()
            .map(|s| match s.kind {
                ParamKind::Conv => schedule.conv_grad_scale,
                ParamKind::Dense => 1.0,
            })
            .collect()
    }

    /// Max-norm constraint per tensor; biases are never constrained.
    pub fn constraints(&self, schedule: &TrainSchedule) -> Vec<Option<NormConstraint>> {
        let first_layer = self.slots.first().map(|s| s.layer);
        self.slots
            .iter()
            .map(|s| {
                if s.is_bias || !schedule.max_norm {
                    return None;
                }
                let default = if s.kind == ParamKind::Conv && Some(s.layer) == first_layer {
                    schedule.first_layer_norm_cap
                } else {
                    schedule.norm_cap
                };
                Some(NormConstraint {
                    cap: s.opts.norm_cap.unwrap_or(default),
                    grouping: match s.kind {
                        ParamKind::Conv => NormGrouping::PerKernel,
                        ParamKind::Dense => NormGrouping::PerColumn,
                    },
                })
            })
            .collect()
    }
}

impl ModelSpec {
    pub fn new(name: impl Into<String>, layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = ModelSpec { name: name.into(), layers };
        spec.infer_shapes()?;
        Ok(spec)
    }

    /// Parses `layer = ...` lines (or bare layer descriptions).
    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let layers = text
            .lines()
            .map(|l| l.trim())
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| l.strip_prefix("layer").map(|r| r.trim_start().trim_start_matches('=').trim()).unwrap_or(l))
            .map(LayerSpec::from_str)
            .collect::<Result<Vec<_>>>()?;
        ModelSpec::new(name, layers)
    }

    pub fn input_shape(&self) -> &[usize] {
        match self.layers.first() {
            Some(LayerSpec::Input(s)) => s,
            _ => &[],
        }
    }

    pub fn classes(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::SoftmaxOutput { classes }) => *classes,
            _ => 0,
        }
    }

    /// Per-sample output shape of every layer, starting with the input
    /// layer's own shape.
    pub fn infer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let fail = |layer: usize, reason: String| Error::ShapeChain { layer, reason };
        let Some(LayerSpec::Input(input)) = self.layers.first() else {
            return Err(fail(0, "first layer must be an input layer".into()));
        };
        if input.is_empty() || input.contains(&0) {
            return Err(fail(0, format!("non-positive input shape {input:?}")));
        }
        let softmaxes = self
            .layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::SoftmaxOutput { .. }))
            .count();
        if softmaxes != 1 || !matches!(self.layers.last(), Some(LayerSpec::SoftmaxOutput { .. })) {
            return Err(fail(
                self.layers.len().saturating_sub(1),
                "exactly one softmax output is required, as the last layer".into(),
            ));
        }
        let mut shapes = vec![input.clone()];
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            let cur = shapes.last().expect("non-empty").clone();
            let flat: usize = cur.iter().product();
            let next = match layer {
                LayerSpec::Input(_) => return Err(fail(i, "input layer must come first".into())),
                LayerSpec::Conv { maps, kh, kw, .. } => {
                    let &[_, h, w] = cur.as_slice() else {
                        return Err(fail(i, format!("conv needs a CxHxW input, got {cur:?}")));
                    };
                    if *maps == 0 {
                        return Err(fail(i, "conv with zero maps".into()));
                    }
                    let (oh, ow) = conv_output_dims(h, w, *kh, *kw)
                        .ok_or_else(|| fail(i, format!("kernel {kh}x{kw} does not fit {h}x{w}")))?;
                    vec![*maps, oh, ow]
                }
                LayerSpec::MaxPool { rh, rw, stride } => {
                    let &[c, h, w] = cur.as_slice() else {
                        return Err(fail(i, format!("maxpool needs a CxHxW input, got {cur:?}")));
                    };
                    let (oh, ow) = pool_output_dims(h, w, *rh, *rw, *stride).ok_or_else(|| {
                        fail(i, format!("pool {rh}x{rw}/s{stride} does not fit {h}x{w}"))
                    })?;
                    vec![c, oh, ow]
                }
                LayerSpec::Activation(_) => cur,
                LayerSpec::Dropout { retain } => {
                    if !(*retain > 0.0 && *retain <= 1.0) {
                        return Err(fail(i, format!("retain probability {retain} outside (0, 1]")));
                    }
                    cur
                }
                LayerSpec::Maxout { pieces } => {
                    if *pieces == 0 || cur[0] % pieces != 0 {
                        return Err(fail(i, format!("{} features not divisible by {pieces} pieces", cur[0])));
                    }
                    let mut s = cur;
                    s[0] /= pieces;
                    s
                }
                LayerSpec::Dense { units, .. } => {
                    if *units == 0 {
                        return Err(fail(i, "dense with zero units".into()));
                    }
                    vec![*units]
                }
                LayerSpec::SoftmaxOutput { classes } => {
                    if flat != *classes {
                        return Err(fail(i, format!("softmax over {classes} classes fed {flat} features")));
                    }
                    vec![*classes]
                }
            };
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn param_layout(&self) -> Result<ParamLayout> {
        let shapes = self.infer_shapes()?;
        let mut slots = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let prev = &shapes[i.saturating_sub(1)];
            match layer {
                LayerSpec::Conv { maps, kh, kw, opts } => {
                    let cin = prev[0];
                    slots.push(ParamSlot { layer: i, kind: ParamKind::Conv, is_bias: false, shape: vec![*maps, cin, *kh, *kw], opts: *opts });
                    slots.push(ParamSlot { layer: i, kind: ParamKind::Conv, is_bias: true, shape: vec![*maps], opts: *opts });
                }
                LayerSpec::Dense { units, opts } => {
                    let fan_in = prev.iter().product();
                    slots.push(ParamSlot { layer: i, kind: ParamKind::Dense, is_bias: false, shape: vec![fan_in, *units], opts: *opts });
                    slots.push(ParamSlot { layer: i, kind: ParamKind::Dense, is_bias: true, shape: vec![*units], opts: *opts });
                }
                _ => {}
            }
        }
        Ok(ParamLayout { slots })
    }

    /// Human-readable shape chain with parameter counts.
    pub fn describe(&self) -> Result<String> {
        let shapes = self.infer_shapes()?;
        let layout = self.param_layout()?;
        let mut out = String::new();
        for (i, (layer, shape)) in self.layers.iter().zip(&shapes).enumerate() {
            let params: usize = layout
                .slots
                .iter()
                .filter(|s| s.layer == i)
                .map(|s| s.shape.iter().product::<usize>())
                .sum();
            let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
            out.push_str(&format!("{i:>3}  {:<28} -> {:<12} params {params}\n", layer.to_string(), dims.join("x")));
        }
        out.push_str(&format!("total parameters: {}\n", layout.total_params()));
        Ok(out)
    }
}

/// Uniform initialization ranges; biases always start at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitPolicy {
    pub conv_range: f64,
    pub dense_range: f64,
}

impl Default for InitPolicy {
    fn default() -> Self {
        InitPolicy { conv_range: 0.5, dense_range: 0.05 }
    }
}

/// Draws weights i.i.d. from `U(-r, r)` per layer kind, in layout order.
pub fn initialize(spec: &ModelSpec, policy: &InitPolicy, seed: u64) -> Result<Vec<Tensor>> {
    let layout = spec.param_layout()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(layout
        .slots
        .iter()
        .map(|slot| {
            if slot.is_bias {
                return Tensor::zeros(&slot.shape);
            }
            let r = slot.opts.init_range.unwrap_or(match slot.kind {
                ParamKind::Conv => policy.conv_range,
                ParamKind::Dense => policy.dense_range,
            });
            Tensor::from_fn(&slot.shape, |_| if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 })
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Builtin {
    Baseline,
    InitialCnn,
    Model1,
    Model2,
    Model3,
    Model4,
}

impl Builtin {
    pub const ALL: [Builtin; 6] = [
        Builtin::Baseline,
        Builtin::InitialCnn,
        Builtin::Model1,
        Builtin::Model2,
        Builtin::Model3,
        Builtin::Model4,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Builtin::Baseline => "baseline",
            Builtin::InitialCnn => "initial_cnn",
            Builtin::Model1 => "model1",
            Builtin::Model2 => "model2",
            Builtin::Model3 => "model3",
            Builtin::Model4 => "model4",
        }
    }

    /// Training settings these models were described with.
    pub fn default_schedule(self) -> TrainSchedule {
        match self {
            Builtin::Baseline => TrainSchedule::baseline(),
            Builtin::InitialCnn => TrainSchedule::initial_cnn(),
            _ => TrainSchedule::default(),
        }
    }
}

impl FromStr for Builtin {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Builtin::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Builtin::ALL.iter().map(|b| b.name()).collect();
                Error::Config(format!("unknown model '{s}' (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Plain,
    Dropout,
    Maxout,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Plain, Variant::Dropout, Variant::Maxout];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Plain => "plain",
            Variant::Dropout => "dropout",
            Variant::Maxout => "maxout",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Variant::Plain),
            "dropout" => Ok(Variant::Dropout),
            "maxout" => Ok(Variant::Maxout),
            other => Err(Error::Config(format!("unknown variant '{other}' (plain, dropout, maxout)"))),
        }
    }
}

/// Knobs applied when expanding a builtin into a [`ModelSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct BuildOptions {
    pub variant: Variant,
    /// Per-sample input shape; `None` uses the model's natural input
    /// (grayscale 1x32x32 for the initial CNN, RGB 3x32x32 otherwise).
    pub input: Option<Vec<usize>>,
    /// Divide every map count by this (rounding up, minimum 1).
    pub maps_divisor: usize,
    /// Divide every hidden dense width by this (rounding up, minimum 1).
    pub units_divisor: usize,
    pub conv_pieces: usize,
    pub dense_pieces: usize,
    pub input_retain: f64,
    pub hidden_retain: f64,
    /// Also drop convolutional-layer outputs in the dropout/maxout variants.
    pub dropout_conv: bool,
    pub classes: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            variant: Variant::Plain,
            input: None,
            maps_divisor: 1,
            units_divisor: 1,
            conv_pieces: 2,
            dense_pieces: 5,
            input_retain: 0.8,
            hidden_retain: 0.5,
            dropout_conv: false,
            classes: 10,
        }
    }
}

impl BuildOptions {
    pub fn variant(variant: Variant) -> Self {
        BuildOptions { variant, ..Self::default() }
    }

    /// A small instantiation for gradient checks: 1/16 of the maps, 1/100
    /// of the hidden units, and dropout on convolutional outputs too.
    pub fn tiny(variant: Variant) -> Self {
        BuildOptions { variant, maps_divisor: 16, units_divisor: 100, dropout_conv: true, ..Self::default() }
    }
}

struct ConvBlock {
    maps: usize,
    kernel: usize,
    pool: Option<(usize, usize)>,
}

const fn conv(maps: usize, kernel: usize, pool: Option<(usize, usize)>) -> ConvBlock {
    ConvBlock { maps, kernel, pool }
}

struct Blueprint {
    input: Vec<usize>,
    activation: ActivationKind,
    convs: Vec<ConvBlock>,
    dense: Vec<usize>,
}

fn blueprint(model: Builtin) -> Blueprint {
    let rgb = vec![3, 32, 32];
    match model {
        Builtin::Baseline => Blueprint {
            input: rgb,
            activation: ActivationKind::Sigmoid,
            convs: vec![],
            dense: vec![1000],
        },
        Builtin::InitialCnn => Blueprint {
            input: vec![1, 32, 32],
            activation: ActivationKind::Sigmoid,
            convs: vec![conv(6, 5, Some((2, 2))), conv(12, 5, Some((2, 2)))],
            dense: vec![1000],
        },
        Builtin::Model1 => Blueprint {
            input: rgb,
            activation: ActivationKind::Relu,
            convs: vec![conv(64, 5, Some((2, 2))), conv(96, 5, Some((2, 2))), conv(160, 5, None)],
            dense: vec![1000],
        },
        Builtin::Model2 => Blueprint {
            input: rgb,
            activation: ActivationKind::Relu,
            convs: vec![conv(96, 5, Some((3, 2))), conv(192, 5, Some((3, 2))), conv(192, 3, Some((2, 2)))],
            dense: vec![500],
        },
        Builtin::Model3 => Blueprint {
            input: rgb,
            activation: ActivationKind::Relu,
            convs: vec![conv(64, 5, Some((2, 1))), conv(64, 5, Some((3, 2))), conv(128, 5, Some((3, 2)))],
            dense: vec![3072, 2048],
        },
        Builtin::Model4 => Blueprint {
            input: rgb,
            activation: ActivationKind::Relu,
            convs: vec![
                conv(32, 8, Some((2, 1))),
                conv(48, 5, Some((2, 1))),
                conv(64, 3, None),
                conv(64, 3, None),
                conv(48, 3, Some((2, 1))),
            ],
            dense: vec![500, 500],
        },
    }
}

fn scaled(n: usize, divisor: usize) -> usize {
    n.div_ceil(divisor.max(1)).max(1)
}

/// Expands a builtin architecture into a shape-checked spec.
pub fn builtin(model: Builtin, opts: &BuildOptions) -> Result<ModelSpec> {
    let bp = blueprint(model);
    let mut layers = vec![LayerSpec::Input(opts.input.clone().unwrap_or(bp.input))];
    let regularized = opts.variant != Variant::Plain;
    if regularized {
        layers.push(LayerSpec::Dropout { retain: opts.input_retain });
    }
    let nonlinearity = |layers: &mut Vec<LayerSpec>, pieces: usize| match opts.variant {
        Variant::Maxout => layers.push(LayerSpec::Maxout { pieces }),
        _ => layers.push(LayerSpec::Activation(bp.activation)),
    };
    let width = |n: usize, pieces: usize| if opts.variant == Variant::Maxout { n * pieces } else { n };
    for block in &bp.convs {
        let maps = scaled(block.maps, opts.maps_divisor);
        layers.push(LayerSpec::Conv {
            maps: width(maps, opts.conv_pieces),
            kh: block.kernel,
            kw: block.kernel,
            opts: ParamOptions::default(),
        });
        nonlinearity(&mut layers, opts.conv_pieces);
        if let Some((region, stride)) = block.pool {
            layers.push(LayerSpec::MaxPool { rh: region, rw: region, stride });
        }
        if regularized && opts.dropout_conv {
            layers.push(LayerSpec::Dropout { retain: opts.hidden_retain });
        }
    }
    for &units in &bp.dense {
        let units = scaled(units, opts.units_divisor);
        layers.push(LayerSpec::Dense { units: width(units, opts.dense_pieces), opts: ParamOptions::default() });
        nonlinearity(&mut layers, opts.dense_pieces);
        if regularized {
            layers.push(LayerSpec::Dropout { retain: opts.hidden_retain });
        }
    }
    layers.push(LayerSpec::Dense { units: opts.classes, opts: ParamOptions::default() });
    layers.push(LayerSpec::SoftmaxOutput { classes: opts.classes });
    let mut name = model.name().to_string();
    if opts.variant != Variant::Plain {
        name = format!("{name}-{}", opts.variant.name());
    }
    ModelSpec::new(name, layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain(model: Builtin) -> ModelSpec {
        builtin(model, &BuildOptions::default()).unwrap()
    }

    fn spatial(shapes: &[Vec<usize>]) -> Vec<usize> {
        shapes.iter().filter(|s| s.len() == 3).map(|s| s[1]).collect()
    }

    #[test]
    fn model1_first_conv() {
        let spec = plain(Builtin::Model1);
        let layout = spec.param_layout().unwrap();
        assert_eq!(layout.slots[0].shape, vec![64, 3, 5, 5]);
        assert_eq!(layout.slots[0].shape.iter().product::<usize>(), 4800);
        assert_eq!(layout.slots[1].shape, vec![64]);
    }

    #[test]
    fn baseline_layers() {
        let spec = plain(Builtin::Baseline);
        let text: Vec<String> = spec.layers.iter().map(|l| l.to_string()).collect();
        assert_eq!(text, ["input 3x32x32", "dense 1000", "sigmoid", "dense 10", "softmax 10"]);
        assert_eq!(spec.param_layout().unwrap().slots[0].shape, vec![3072, 1000]);
    }

    #[test]
    fn model2_chain() {
        let shapes = plain(Builtin::Model2).infer_shapes().unwrap();
        let dims = spatial(&shapes);
        // input, conv, relu, pool, conv, relu, pool, conv, relu, pool
        assert_eq!(dims, vec![32, 28, 28, 13, 9, 9, 4, 2, 2, 1]);
    }

    #[test]
    fn model1_chain() {
        let shapes = plain(Builtin::Model1).infer_shapes().unwrap();
        assert_eq!(spatial(&shapes), vec![32, 28, 28, 14, 10, 10, 5, 1, 1]);
        // the dense layer sees 160 x 1 x 1
        let layout = plain(Builtin::Model1).param_layout().unwrap();
        assert_eq!(layout.slots[6].shape, vec![160, 1000]);
    }

    #[test]
    fn model3_and_model4_chains() {
        let shapes = plain(Builtin::Model3).infer_shapes().unwrap();
        assert_eq!(spatial(&shapes), vec![32, 28, 28, 27, 23, 23, 11, 7, 7, 3]);
        let shapes = plain(Builtin::Model4).infer_shapes().unwrap();
        assert_eq!(spatial(&shapes), vec![32, 25, 25, 24, 20, 20, 19, 17, 17, 15, 15, 13, 13, 12]);
        let layout = plain(Builtin::Model4).param_layout().unwrap();
        let dense_in = layout.slots.iter().find(|s| s.kind == ParamKind::Dense).unwrap();
        assert_eq!(dense_in.shape, vec![48 * 12 * 12, 500]);
    }

    #[test]
    fn every_builtin_chains_on_cifar() {
        for model in Builtin::ALL {
            for variant in [Variant::Plain, Variant::Dropout, Variant::Maxout] {
                let spec = builtin(model, &BuildOptions::variant(variant)).unwrap();
                assert!(spec.infer_shapes().is_ok(), "{}", spec.name);
                assert_eq!(spec.classes(), 10);
            }
        }
    }

    #[test]
    fn oversized_kernel_reports_layer() {
        let err = ModelSpec::parse("x", "input 3x5x5\nconv 4 8x8\ndense 10\nsoftmax 10").unwrap_err();
        match err {
            Error::ShapeChain { layer, .. } => assert_eq!(layer, 1),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn structural_errors() {
        assert!(ModelSpec::parse("x", "dense 10\nsoftmax 10").is_err());
        assert!(ModelSpec::parse("x", "input 10\ndense 10").is_err());
        assert!(ModelSpec::parse("x", "input 10\nsoftmax 10\nsoftmax 10").is_err());
        assert!(ModelSpec::parse("x", "input 10\ndropout 0\nsoftmax 10").is_err());
        assert!(ModelSpec::parse("x", "input 10\nsoftmax 9").is_err());
        assert!(ModelSpec::parse("x", "input 10\nwarp 3\nsoftmax 10").is_err());
    }

    #[test]
    fn maxout_variant_multiplies_fan_in_groups() {
        for model in [Builtin::Model1, Builtin::Model2, Builtin::Model3, Builtin::Model4] {
            let p = plain(model).param_layout().unwrap();
            let m = builtin(model, &BuildOptions::variant(Variant::Maxout)).unwrap().param_layout().unwrap();
            assert_eq!(p.slots.len(), m.slots.len());
            // the output layer is an ordinary dense of 10 units
            for (a, b) in p.slots.iter().zip(&m.slots).take(p.slots.len() - 2) {
                let k = if a.kind == ParamKind::Conv { 2 } else { 5 };
                let out_axis = if a.kind == ParamKind::Conv || a.is_bias { 0 } else { 1 };
                assert_eq!(b.shape[out_axis], k * a.shape[out_axis]);
                if !a.is_bias {
                    let in_axis = 1 - out_axis;
                    assert_eq!(b.shape[in_axis], a.shape[in_axis]);
                }
            }
        }
    }

    #[test]
    fn dropout_variant_placement() {
        let spec = builtin(Builtin::Model3, &BuildOptions::variant(Variant::Dropout)).unwrap();
        let drops: Vec<f64> = spec
            .layers
            .iter()
            .filter_map(|l| if let LayerSpec::Dropout { retain } = l { Some(*retain) } else { None })
            .collect();
        assert_eq!(drops, vec![0.8, 0.5, 0.5]);
        assert_eq!(spec.layers[1], LayerSpec::Dropout { retain: 0.8 });
    }

    #[test]
    fn text_round_trip() {
        for model in Builtin::ALL {
            let spec = builtin(model, &BuildOptions::variant(Variant::Maxout)).unwrap();
            let back = ModelSpec::parse(&spec.name, &spec.to_string()).unwrap();
            assert_eq!(back, spec);
        }
        let l: LayerSpec = "conv 8 3x3 init=0.1 cap=2".parse().unwrap();
        assert_eq!(l.to_string().parse::<LayerSpec>().unwrap(), l);
        assert_eq!("maxpool 2x2".parse::<LayerSpec>().unwrap(), LayerSpec::MaxPool { rh: 2, rw: 2, stride: 2 });
    }

    #[test]
    fn initialization_ranges() {
        let mut spec = plain(Builtin::Model1);
        spec.layers.truncate(1);
        spec.layers.extend(["conv 400 5x5", "dense 250", "relu", "dense 10", "softmax 10"].map(|s| s.parse().unwrap()));
        let params = initialize(&spec, &InitPolicy::default(), 3).unwrap();
        let conv = &params[0];
        assert_eq!(conv.len(), 400 * 75);
        assert!(conv.data().iter().all(|v| (-0.5..=0.5).contains(v)));
        let n = conv.len() as f64;
        let mean = conv.sum() / n;
        let sigma = (0.25f64 / 3.0 / n).sqrt();
        assert!(mean.abs() < 3.0 * sigma);
        assert!(params[2].data().iter().all(|v| (-0.05..=0.05).contains(v)));
        for b in [&params[1], &params[3], &params[5]] {
            assert!(b.data().iter().all(|&v| v == 0.0));
        }
        assert_eq!(params, initialize(&spec, &InitPolicy::default(), 3).unwrap());
        assert_ne!(params, initialize(&spec, &InitPolicy::default(), 4).unwrap());
    }

    #[test]
    fn first_conv_layer_gets_tighter_cap() {
        let layout = plain(Builtin::Model2).param_layout().unwrap();
        let caps = layout.constraints(&TrainSchedule::default());
        assert_eq!(caps[0].unwrap().cap, 0.9);
        assert!(caps[1].is_none());
        assert!((caps[2].unwrap().cap - 15f64.sqrt() / 4.0).abs() < 1e-15);
        let scales = layout.lr_scales(&TrainSchedule::default());
        assert_eq!(scales[0], 0.05);
        assert_eq!(scales[1], 0.05);
        assert_eq!(*scales.last().unwrap(), 1.0);
    }

    #[test]
    fn scaled_builtins() {
        let opts = BuildOptions { maps_divisor: 4, ..BuildOptions::default() };
        let spec = builtin(Builtin::Model1, &opts).unwrap();
        let layout = spec.param_layout().unwrap();
        assert_eq!(layout.slots[0].shape, vec![16, 3, 5, 5]);
        assert_eq!(layout.slots[4].shape, vec![40, 24, 5, 5]);
    }
}
