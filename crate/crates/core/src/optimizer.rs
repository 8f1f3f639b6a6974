//! Momentum SGD (classical and Nesterov), epoch-indexed schedules and
//! max-norm projection.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{squared_norm, Tensor};

/// Max-norm cap used for every constrained group unless overridden.
pub const DEFAULT_NORM_CAP: f64 = 0.968_245_836_551_854_2; // sqrt(15) / 4
/// Cap for the kernels of the first convolutional layer.
pub const FIRST_LAYER_NORM_CAP: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentumKind {
    Classical,
    Nesterov,
}

impl fmt::Display for MomentumKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MomentumKind::Classical => "classical",
            MomentumKind::Nesterov => "nesterov",
        })
    }
}

impl FromStr for MomentumKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classical" => Ok(MomentumKind::Classical),
            "nesterov" => Ok(MomentumKind::Nesterov),
            other => Err(Error::Config(format!("unknown momentum kind '{other}'"))),
        }
    }
}

/// Every optimizer hyperparameter. Schedules are piecewise linear in the
/// epoch index and held constant after saturation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSchedule {
    pub base_lr: f64,
    /// The learning rate reaches `base_lr * lr_floor_factor` at
    /// `lr_saturate_epoch`.
    pub lr_floor_factor: f64,
    pub lr_saturate_epoch: usize,
    pub momentum_kind: MomentumKind,
    pub momentum_start: f64,
    pub momentum_end: f64,
    pub momentum_saturate_epoch: usize,
    /// Learning-rate multiplier for convolutional weights and biases.
    pub conv_grad_scale: f64,
    pub batch_size: usize,
    pub max_norm: bool,
    pub norm_cap: f64,
    pub first_layer_norm_cap: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            base_lr: 0.17,
            lr_floor_factor: 0.01,
            lr_saturate_epoch: 500,
            momentum_kind: MomentumKind::Nesterov,
            momentum_start: 0.5,
            momentum_end: 0.6,
            momentum_saturate_epoch: 250,
            conv_grad_scale: 0.05,
            batch_size: 100,
            max_norm: true,
            norm_cap: DEFAULT_NORM_CAP,
            first_layer_norm_cap: FIRST_LAYER_NORM_CAP,
        }
    }
}

impl TrainSchedule {
    /// Settings for the one-hidden-layer baseline: lr 0.12, classical
    /// momentum 0.9, no decay, no constraints.
    pub fn baseline() -> Self {
        TrainSchedule {
            base_lr: 0.12,
            lr_floor_factor: 1.0,
            momentum_kind: MomentumKind::Classical,
            momentum_start: 0.9,
            momentum_end: 0.9,
            conv_grad_scale: 1.0,
            max_norm: false,
            ..Self::default()
        }
    }

    /// Settings for the small two-stage CNN: plain SGD with lr 1.
    pub fn initial_cnn() -> Self {
        TrainSchedule {
            base_lr: 1.0,
            lr_floor_factor: 1.0,
            momentum_kind: MomentumKind::Classical,
            momentum_start: 0.0,
            momentum_end: 0.0,
            conv_grad_scale: 1.0,
            max_norm: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.base_lr > 0.0) {
            return bad("base_lr must be positive");
        }
        if !(self.lr_floor_factor > 0.0 && self.lr_floor_factor <= 1.0) {
            return bad("lr_floor_factor must be in (0, 1]");
        }
        for m in [self.momentum_start, self.momentum_end] {
            if !(0.0..=1.0).contains(&m) {
                return bad("momentum must be in [0, 1]");
            }
        }
        if self.momentum_end < self.momentum_start {
            return bad("momentum_end must be >= momentum_start");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.conv_grad_scale > 0.0) || !(self.norm_cap > 0.0) || !(self.first_layer_norm_cap > 0.0) {
            return bad("scales and norm caps must be positive");
        }
        Ok(())
    }
}

fn ramp(start: f64, end: f64, saturate: usize, epoch: usize) -> f64 {
    if saturate == 0 || epoch >= saturate {
        end
    } else {
        start + (end - start) * (epoch as f64 / saturate as f64)
    }
}

pub fn lr_at(schedule: &TrainSchedule, epoch: usize) -> f64 {
    let floor = schedule.base_lr * schedule.lr_floor_factor;
    ramp(schedule.base_lr, floor, schedule.lr_saturate_epoch, epoch)
}

pub fn momentum_at(schedule: &TrainSchedule, epoch: usize) -> f64 {
    ramp(
        schedule.momentum_start,
        schedule.momentum_end,
        schedule.momentum_saturate_epoch,
        epoch,
    )
}

fn check_shapes(params: &[Tensor], velocity: &[Tensor], other: &[Tensor], scales: &[f64]) -> Result<()> {
    if params.len() != velocity.len() || params.len() != other.len() || params.len() != scales.len() {
        return Err(Error::invalid(format!(
            "optimizer arity mismatch: {} params, {} velocities, {} grads, {} scales",
            params.len(),
            velocity.len(),
            other.len(),
            scales.len()
        )));
    }
    for ((p, v), g) in params.iter().zip(velocity).zip(other) {
        if p.shape() != v.shape() || p.shape() != g.shape() {
            return Err(Error::dim("optimizer", p.shape(), g.shape()));
        }
    }
    Ok(())
}

fn apply_update(params: &mut [Tensor], velocity: &mut [Tensor], grads: &[Tensor], lr: f64, mu: f64, scales: &[f64]) {
    for ((p, v), (g, &s)) in params.iter_mut().zip(velocity.iter_mut()).zip(grads.iter().zip(scales)) {
        let eps = lr * s;
        for ((pv, vv), &gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vv = mu * *vv - eps * gv;
            *pv += *vv;
        }
    }
}

/// One Nesterov step:
/// `v <- mu v - eps grad(theta + mu v)`, `theta <- theta + v`.
///
/// `grad_fn` is called exactly once, with the parameters shifted to the
/// lookahead point. `scales[i]` multiplies `lr` for tensor `i`. Returns
/// whatever `grad_fn` returned alongside the gradients (typically the
/// batch loss).
pub fn nag_step<T>(
    params: &mut [Tensor],
    velocity: &mut [Tensor],
    lr: f64,
    mu: f64,
    scales: &[f64],
    grad_fn: impl FnOnce(&[Tensor]) -> Result<(Vec<Tensor>, T)>,
) -> Result<T> {
    check_shapes(params, velocity, velocity, scales)?;
    let shift = |params: &mut [Tensor], sign: f64| {
        for (p, v) in params.iter_mut().zip(velocity.iter()) {
            for (pv, &vv) in p.data_mut().iter_mut().zip(v.data()) {
                *pv += sign * mu * vv;
            }
        }
    };
    let (grads, extra) = if mu == 0.0 {
        grad_fn(params)?
    } else {
        let mut lookahead = params.to_vec();
        shift(&mut lookahead, 1.0);
        grad_fn(&lookahead)?
    };
    check_shapes(params, velocity, &grads, scales)?;
    apply_update(params, velocity, &grads, lr, mu, scales);
    Ok(extra)
}

/// One classical momentum step with the gradient taken at the current
/// point.
pub fn classical_step(
    params: &mut [Tensor],
    velocity: &mut [Tensor],
    grads: &[Tensor],
    lr: f64,
    mu: f64,
    scales: &[f64],
) -> Result<()> {
    check_shapes(params, velocity, grads, scales)?;
    apply_update(params, velocity, grads, lr, mu, scales);
    Ok(())
}

/// How a weight tensor splits into max-norm groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormGrouping {
    /// `[maps_out, ...]`: one group per output kernel.
    PerKernel,
    /// `[in, out]`: one group per column (weights incident on one unit).
    PerColumn,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormConstraint {
    pub cap: f64,
    pub grouping: NormGrouping,
}

/// Rescales every group whose L2 norm exceeds the cap back onto the cap.
pub fn project_maxnorm(weights: &mut Tensor, constraint: NormConstraint) {
    let cap = constraint.cap;
    match constraint.grouping {
        NormGrouping::PerKernel => {
            let w = weights.row_len();
            for group in weights.data_mut().chunks_exact_mut(w.max(1)) {
                let n = squared_norm(group).sqrt();
                if n > cap {
                    let s = cap / n;
                    group.iter_mut().for_each(|v| *v *= s);
                }
            }
        }
        NormGrouping::PerColumn => {
            let (rows, cols) = (weights.rows(), weights.row_len());
            let data = weights.data_mut();
            let mut norms = vec![0.0; cols];
            for r in 0..rows {
                for (acc, v) in norms.iter_mut().zip(&data[r * cols..(r + 1) * cols]) {
                    *acc += v * v;
                }
            }
            let factors: Vec<f64> = norms
                .iter()
                .map(|&sq| {
                    let n = sq.sqrt();
                    if n > cap {
                        cap / n
                    } else {
                        1.0
                    }
                })
                .collect();
            for r in 0..rows {
                for (v, &f) in data[r * cols..(r + 1) * cols].iter_mut().zip(&factors) {
                    if f != 1.0 {
                        *v *= f;
                    }
                }
            }
        }
    }
}

/// Largest group norm of a weight tensor under `grouping`.
pub fn max_group_norm(weights: &Tensor, grouping: NormGrouping) -> f64 {
    match grouping {
        NormGrouping::PerKernel => weights
            .data()
            .chunks_exact(weights.row_len().max(1))
            .map(|g| squared_norm(g).sqrt())
            .fold(0.0, f64::max),
        NormGrouping::PerColumn => {
            let cols = weights.row_len();
            let mut norms = vec![0.0; cols];
            for row in weights.data().chunks_exact(cols.max(1)) {
                for (acc, v) in norms.iter_mut().zip(row) {
                    *acc += v * v;
                }
            }
            norms.into_iter().map(f64::sqrt).fold(0.0, f64::max)
        }
    }
}
