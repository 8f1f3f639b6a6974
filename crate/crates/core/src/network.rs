//! Forward and backward passes over a [`ModelSpec`] with an external,
//! flat parameter list (see [`ParamLayout`](crate::model_zoo::ParamLayout)).

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{
    activation_backward, activation_forward, conv_backward, conv_forward, dense_backward,
    dense_forward, dropout_apply, dropout_backward, dropout_infer, dropout_train, maxout_backward,
    maxout_forward, maxpool_backward, maxpool_forward, softmax, DropoutMask, LayerParams,
    MaxoutIndices, PoolIndices,
};
use crate::model_zoo::{LayerSpec, ModelSpec, ParamLayout};
use crate::objective::{cross_entropy, softmax_xent_backward, LossReport};
use crate::tensor::Tensor;

/// One independent RNG stream per dropout layer, keyed by layer index.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutStreams {
    rngs: Vec<(usize, ChaCha8Rng)>,
}

impl DropoutStreams {
    pub fn new(spec: &ModelSpec, seed: u64) -> Self {
        let rngs = spec
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Dropout { .. }))
            .map(|(i, _)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                (i, rng)
            })
            .collect();
        DropoutStreams { rngs }
    }

    fn get(&mut self, layer: usize) -> Option<&mut ChaCha8Rng> {
        self.rngs.iter_mut().find(|(l, _)| *l == layer).map(|(_, r)| r)
    }

    pub fn streams(&self) -> impl Iterator<Item = &ChaCha8Rng> {
        self.rngs.iter().map(|(_, r)| r)
    }

    /// Replaces the stream states (same count and order as [`Self::streams`]).
    pub fn restore(&mut self, states: Vec<ChaCha8Rng>) -> Result<()> {
        if states.len() != self.rngs.len() {
            return Err(Error::Format(format!(
                "expected {} dropout streams, found {}",
                self.rngs.len(),
                states.len()
            )));
        }
        for ((_, slot), s) in self.rngs.iter_mut().zip(states) {
            *slot = s;
        }
        Ok(())
    }
}

pub enum DropoutMode<'a> {
    /// Inference: scale by the retain probability, consume no randomness.
    Infer,
    /// Training: sample fresh masks.
    Sample(&'a mut DropoutStreams),
    /// Training with previously sampled masks, one per dropout layer in order.
    Fixed(&'a [DropoutMask]),
}

enum Cache {
    Nothing,
    Input(Tensor),
    Activation { x: Tensor, y: Tensor },
    Pool(PoolIndices),
    Maxout(MaxoutIndices),
    Mask(DropoutMask),
    Scaled(f64),
}

pub struct ForwardPass {
    pub logits: Tensor,
    /// Masks sampled or applied during this pass, in layer order.
    pub masks: Vec<DropoutMask>,
    caches: Vec<Cache>,
}

impl ForwardPass {
    /// Fingerprint of every piecewise-linear decision (relu signs, pool and
    /// maxout winners). Two passes with equal fingerprints lie on the same
    /// linear piece.
    pub fn kink_pattern(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for c in &self.caches {
            match c {
                Cache::Activation { x, .. } => {
                    for v in x.data() {
                        (*v > 0.0).hash(&mut h);
                    }
                }
                Cache::Pool(p) => p.argmax.hash(&mut h),
                Cache::Maxout(m) => m.winner.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    spec: ModelSpec,
    shapes: Vec<Vec<usize>>,
    layout: ParamLayout,
    /// Index of each layer's weight tensor in the flat parameter list.
    weight_slot: Vec<Option<usize>>,
}

impl Network {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let shapes = spec.infer_shapes()?;
        let layout = spec.param_layout()?;
        let mut weight_slot = vec![None; spec.layers.len()];
        for (i, s) in layout.slots.iter().enumerate() {
            if !s.is_bias {
                weight_slot[s.layer] = Some(i);
            }
        }
        Ok(Network { spec, shapes, layout, weight_slot })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    fn check_params(&self, params: &[Tensor]) -> Result<()> {
        if params.len() != self.layout.slots.len() {
            return Err(Error::invalid(format!(
                "expected {} parameter tensors, got {}",
                self.layout.slots.len(),
                params.len()
            )));
        }
        for (p, s) in params.iter().zip(&self.layout.slots) {
            if p.shape() != s.shape.as_slice() {
                return Err(Error::dim("parameters", p.shape(), &s.shape));
            }
        }
        Ok(())
    }

    fn layer_params(&self, params: &[Tensor], layer: usize) -> LayerParams {
        let w = self.weight_slot[layer].expect("parametrised layer");
        LayerParams { weights: params[w].clone(), biases: params[w + 1].clone() }
    }

    fn shape_input(&self, x: &Tensor) -> Result<Tensor> {
        let sample = &self.shapes[0];
        let per: usize = sample.iter().product();
        if x.rank() == 0 || x.row_len() != per {
            return Err(Error::dim("network input", x.shape(), sample));
        }
        let mut shape = vec![x.rows()];
        shape.extend_from_slice(sample);
        x.reshape(&shape)
    }

    pub fn forward(&self, params: &[Tensor], x: &Tensor, mut mode: DropoutMode<'_>) -> Result<ForwardPass> {
        self.check_params(params)?;
        let training = !matches!(mode, DropoutMode::Infer);
        let mut cur = self.shape_input(x)?;
        let mut caches = Vec::with_capacity(self.spec.layers.len());
        let mut masks = Vec::new();
        let mut fixed_next = 0;
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let (next, cache) = match layer {
                LayerSpec::Input(_) | LayerSpec::SoftmaxOutput { .. } => (cur, Cache::Nothing),
                LayerSpec::Conv { .. } => {
                    let y = conv_forward(&self.layer_params(params, i), &cur)?;
                    (y, Cache::Input(cur))
                }
                LayerSpec::Dense { .. } => {
                    let y = dense_forward(&self.layer_params(params, i), &cur)?;
                    (y, Cache::Input(cur))
                }
                LayerSpec::MaxPool { rh, rw, stride } => {
                    let (y, idx) = maxpool_forward(&cur, (*rh, *rw), *stride)?;
                    (y, Cache::Pool(idx))
                }
                LayerSpec::Activation(kind) => {
                    let y = activation_forward(*kind, &cur);
                    (y.clone(), Cache::Activation { x: cur, y })
                }
                LayerSpec::Maxout { pieces } => {
                    let (y, idx) = maxout_forward(&cur, *pieces)?;
                    (y, Cache::Maxout(idx))
                }
                LayerSpec::Dropout { retain } => match &mut mode {
                    DropoutMode::Infer => (dropout_infer(&cur, *retain)?, Cache::Scaled(*retain)),
                    DropoutMode::Sample(streams) => {
                        let rng = streams
                            .get(i)
                            .ok_or_else(|| Error::invalid(format!("no dropout stream for layer {i}")))?;
                        let (y, mask) = dropout_train(&cur, *retain, i as u64, rng)?;
                        masks.push(mask.clone());
                        (y, Cache::Mask(mask))
                    }
                    DropoutMode::Fixed(given) => {
                        let mask = given
                            .get(fixed_next)
                            .ok_or_else(|| Error::invalid("not enough fixed dropout masks"))?
                            .clone();
                        fixed_next += 1;
                        let y = dropout_apply(&cur, &mask)?;
                        masks.push(mask.clone());
                        (y, Cache::Mask(mask))
                    }
                },
            };
            if training && !next.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite activation at layer {i} ({layer})"
                )));
            }
            cur = next;
            caches.push(cache);
        }
        Ok(ForwardPass { logits: cur, masks, caches })
    }

    /// Gradients for every parameter tensor (layout order) and, when
    /// `want_input` is set, the network input.
    pub fn backward(
        &self,
        params: &[Tensor],
        pass: ForwardPass,
        d_logits: Tensor,
        want_input: bool,
    ) -> Result<(Vec<Tensor>, Option<Tensor>)> {
        self.check_params(params)?;
        let mut grads: Vec<Option<Tensor>> = vec![None; params.len()];
        let first_param_layer = self.layout.slots.first().map(|s| s.layer).unwrap_or(0);
        let mut grad = d_logits;
        for (i, (layer, cache)) in self.spec.layers.iter().zip(pass.caches).enumerate().rev() {
            if i == 0 {
                break;
            }
            // below the first parametrised layer only the input gradient is left
            if !want_input && i < first_param_layer {
                break;
            }
            grad = match (layer, cache) {
                (LayerSpec::Conv { .. }, Cache::Input(x)) | (LayerSpec::Dense { .. }, Cache::Input(x)) => {
                    let lp = self.layer_params(params, i);
                    let need_dx = want_input || i > first_param_layer;
                    let g = if matches!(layer, LayerSpec::Conv { .. }) {
                        conv_backward(&lp, &x, &grad, need_dx)?
                    } else {
                        dense_backward(&lp, &x, &grad, need_dx)?
                    };
                    let w = self.weight_slot[i].expect("parametrised layer");
                    grads[w] = Some(g.weights);
                    grads[w + 1] = Some(g.biases);
                    match g.input {
                        Some(dx) => dx,
                        None => break,
                    }
                }
                (LayerSpec::MaxPool { .. }, Cache::Pool(idx)) => maxpool_backward(&idx, &grad)?,
                (LayerSpec::Activation(kind), Cache::Activation { x, y }) => {
                    activation_backward(*kind, &x, &y, &grad)?
                }
                (LayerSpec::Maxout { .. }, Cache::Maxout(idx)) => maxout_backward(&idx, &grad)?,
                (LayerSpec::Dropout { .. }, Cache::Mask(mask)) => dropout_backward(&mask, &grad)?,
                (LayerSpec::Dropout { .. }, Cache::Scaled(p)) => grad.scale(p),
                (LayerSpec::SoftmaxOutput { .. }, _) => grad,
                (l, _) => return Err(Error::invalid(format!("cache mismatch at layer {i} ({l})"))),
            };
        }
        let grads = grads
            .into_iter()
            .zip(params)
            .map(|(g, p)| g.unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        let input = if want_input {
            let mut shape = vec![grad.rows()];
            shape.extend_from_slice(&self.shapes[0]);
            Some(grad.into_shape(&shape)?)
        } else {
            None
        };
        Ok((grads, input))
    }

    /// Training-mode loss and parameter gradients for one batch.
    pub fn loss_and_grads(
        &self,
        params: &[Tensor],
        x: &Tensor,
        labels: &[usize],
        mode: DropoutMode<'_>,
    ) -> Result<(LossReport, Vec<Tensor>)> {
        let pass = self.forward(params, x, mode)?;
        let probs = softmax(&pass.logits)?;
        let report = cross_entropy(&probs, labels)?;
        if !report.loss.is_finite() {
            return Err(Error::Numeric("non-finite loss".into()));
        }
        let d = softmax_xent_backward(&pass.logits, labels)?;
        let (grads, _) = self.backward(params, pass, d, false)?;
        Ok((report, grads))
    }

    /// Inference-mode class probabilities, computed in chunks.
    pub fn predict_proba(&self, params: &[Tensor], x: &Tensor, chunk: usize) -> Result<Tensor> {
        let n = x.rows();
        let mut parts = Vec::new();
        let mut start = 0;
        while start < n {
            let end = (start + chunk.max(1)).min(n);
            let pass = self.forward(params, &x.slice(0, start..end)?, DropoutMode::Infer)?;
            parts.push(softmax(&pass.logits)?);
            start = end;
        }
        if parts.is_empty() {
            return Ok(Tensor::zeros(&[0, self.spec.classes()]));
        }
        Tensor::concat_rows(&parts)
    }

    pub fn evaluate(&self, params: &[Tensor], x: &Tensor, labels: &[usize], chunk: usize) -> Result<LossReport> {
        let probs = self.predict_proba(params, x, chunk)?;
        cross_entropy(&probs, labels)
    }
}
