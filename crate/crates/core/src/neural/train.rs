use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::layers::Mode;
use super::network::{backward, forward, forward_cached, sgd_step, Gradients, NetworkSpec, ParameterSet};
use super::tensor::Tensor4;
use crate::data::{RxScPlane, SamplingMask};
use crate::error::{Error, Result};
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    #[default]
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub weight_decay: f64,
    pub lr_start: f64,
    pub lr_end: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: Loss,
    /// Heavy-ball momentum; 0 gives plain SGD.
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            weight_decay: 1e-4,
            lr_start: 1e-7,
            lr_end: 1e-9,
            batch_size: 16,
            seed: 0,
            loss: Loss::Mse,
            momentum: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Parameter(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end && self.lr_start.is_finite()) {
            return bad("learning rates must satisfy lr_start >= lr_end > 0");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be >= 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        Ok(())
    }

    /// Log-linear decay from `lr_start` at epoch 0 to `lr_end` at the last epoch.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.lr_start;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        self.lr_start * (self.lr_end / self.lr_start).powf(t)
    }
}

/// Normalized network input and label for one plane.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    /// Zero-filled sub-sampled plane divided by `scale`.
    pub input: Array2<f64>,
    /// Full plane divided by `scale`.
    pub label: Array2<f64>,
    pub mask: Array2<bool>,
    pub scale: f64,
}

/// 99th-percentile (nearest rank) absolute value over observed entries, or 0
/// when nothing nonzero was observed.
pub fn observed_scale(values: &Array2<f64>, mask: &Array2<bool>) -> f64 {
    let mut mags: Vec<f64> = values
        .iter()
        .zip(mask.iter())
        .filter(|(_, &m)| m)
        .map(|(v, _)| v.abs())
        .collect();
    if mags.is_empty() {
        return 0.0;
    }
    mags.sort_by(f64::total_cmp);
    let rank = ((0.99 * mags.len() as f64).ceil() as usize).clamp(1, mags.len());
    mags[rank - 1]
}

/// Masks and normalizes a full plane; `None` when the observed entries are
/// all zero and there is nothing to scale by.
pub fn make_pair(full: &RxScPlane, mask: &SamplingMask) -> Result<Option<TrainingPair>> {
    let masked = crate::data::apply_mask(full, mask)?;
    let scale = observed_scale(&masked.values, mask.active());
    if scale == 0.0 {
        return Ok(None);
    }
    Ok(Some(TrainingPair {
        input: masked.values / scale,
        label: &full.values / scale,
        mask: mask.active().clone(),
        scale,
    }))
}

/// Stacks planes into a `(batch, channels, rx, sc)` tensor; channel 1, when
/// requested, carries the mask as 0/1.
pub fn stack_inputs(planes: &[(&Array2<f64>, &Array2<bool>)], channels: usize) -> Result<Tensor4> {
    let (rx, sc) = planes
        .first()
        .map(|(p, _)| p.dim())
        .ok_or_else(|| Error::Parameter("empty batch".into()))?;
    if !(1..=2).contains(&channels) {
        return Err(Error::shape("1 or 2 input channels", channels));
    }
    let mut t = Tensor4::zeros([planes.len(), channels, rx, sc]);
    for (b, (p, m)) in planes.iter().enumerate() {
        if p.dim() != (rx, sc) || m.dim() != (rx, sc) {
            return Err(Error::shape(format!("{rx}x{sc} planes"), format!("{:?}", p.dim())));
        }
        for (dst, v) in t.map_mut(b, 0).iter_mut().zip(p.iter()) {
            *dst = *v;
        }
        if channels == 2 {
            for (dst, &a) in t.map_mut(b, 1).iter_mut().zip(m.iter()) {
                *dst = if a { 1.0 } else { 0.0 };
            }
        }
    }
    Ok(t)
}

fn stack_labels(labels: &[&Array2<f64>]) -> Tensor4 {
    let (rx, sc) = labels[0].dim();
    let mut t = Tensor4::zeros([labels.len(), 1, rx, sc]);
    for (b, l) in labels.iter().enumerate() {
        for (dst, v) in t.map_mut(b, 0).iter_mut().zip(l.iter()) {
            *dst = *v;
        }
    }
    t
}

/// Mean squared error and its gradient with respect to `out`.
pub fn mse(out: &Tensor4, target: &Tensor4) -> (f64, Tensor4) {
    let n = out.len() as f64;
    let mut grad = out.clone();
    let mut loss = 0.0;
    for (g, t) in grad.data_mut().iter_mut().zip(target.data()) {
        let r = *g - t;
        loss += r * r;
        *g = 2.0 * r / n;
    }
    (loss / n, grad)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean training loss per epoch (train-mode forward passes).
    pub loss: Vec<f64>,
    /// Mean inference-mode loss on the validation pairs, when any were given.
    pub validation_loss: Vec<f64>,
    pub learning_rate: Vec<f64>,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub loss: f64,
    pub validation_loss: Option<f64>,
    pub learning_rate: f64,
}

fn check_dataset(spec: &NetworkSpec, data: &[TrainingPair]) -> Result<()> {
    let first = data.first().ok_or_else(|| Error::Parameter("training set is empty".into()))?;
    let dim = first.input.dim();
    for (i, p) in data.iter().enumerate() {
        if p.input.dim() != dim || p.label.dim() != dim || p.mask.dim() != dim {
            return Err(Error::shape(format!("pair {i} planes of {dim:?}"), format!("{:?}", p.input.dim())));
        }
    }
    if spec.output_channels() != 1 {
        return Err(Error::shape("single-channel network output", spec.output_channels()));
    }
    Ok(())
}

/// Mean inference-mode loss over `data`, in batches.
pub fn evaluate_loss(spec: &NetworkSpec, params: &ParameterSet, data: &[TrainingPair], batch: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Parameter("evaluation set is empty".into()));
    }
    let mut total = 0.0;
    for chunk in data.chunks(batch.max(1)) {
        let inputs: Vec<_> = chunk.iter().map(|p| (&p.input, &p.mask)).collect();
        let x = stack_inputs(&inputs, spec.input_channels)?;
        let y = stack_labels(&chunk.iter().map(|p| &p.label).collect::<Vec<_>>());
        let (loss, _) = mse(&forward(spec, params, &x)?, &y);
        total += loss * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Trains from a fresh seeded initialization.
pub fn train(spec: &NetworkSpec, data: &[TrainingPair], cfg: &TrainConfig) -> Result<(ParameterSet, TrainHistory)> {
    train_from(spec, ParameterSet::init(spec, cfg.seed), data, &[], cfg, |_| {})
}

/// SGD over `data` starting from `params`. Batch order per epoch is drawn
/// from the seed alone. The returned parameters are rounded to f32.
pub fn train_from(
    spec: &NetworkSpec,
    mut params: ParameterSet,
    data: &[TrainingPair],
    validation: &[TrainingPair],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<(ParameterSet, TrainHistory)> {
    cfg.validate()?;
    check_dataset(spec, data)?;
    if !validation.is_empty() {
        check_dataset(spec, validation)?;
    }
    params.check(spec)?;
    let order_seed = seeding::derive(cfg.seed, "batch-order");
    let mut velocity = (cfg.momentum > 0.0).then(|| Gradients::zeros_like(&params));
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate(epoch);
        order.sort_unstable();
        order.shuffle(&mut seeding::stream(order_seed, epoch as u64));
        let mut epoch_loss = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let inputs: Vec<_> = idx.iter().map(|&i| (&data[i].input, &data[i].mask)).collect();
            let x = stack_inputs(&inputs, spec.input_channels)?;
            let y = stack_labels(&idx.iter().map(|&i| &data[i].label).collect::<Vec<_>>());
            let cache = forward_cached(spec, &mut params, &x, Mode::Train)?;
            let (loss, grad) = mse(cache.output(), &y);
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}, batch {b}")));
            }
            let (grads, _) = backward(spec, &params, &cache, &grad)?;
            if !grads.all_finite() {
                return Err(Error::NonFinite(format!("gradient at epoch {epoch}, batch {b}")));
            }
            sgd_step(&mut params, &grads, lr, cfg.weight_decay, cfg.momentum, velocity.as_mut())?;
            epoch_loss += loss * idx.len() as f64;
            history.steps += 1;
        }
        let loss = epoch_loss / data.len() as f64;
        let validation_loss = if validation.is_empty() {
            None
        } else {
            Some(evaluate_loss(spec, &params, validation, cfg.batch_size)?)
        };
        history.loss.push(loss);
        history.learning_rate.push(lr);
        if let Some(v) = validation_loss {
            history.validation_loss.push(v);
        }
        on_epoch(&EpochReport {
            epoch,
            loss,
            validation_loss,
            learning_rate: lr,
        });
    }
    params.quantize_f32();
    Ok((params, history))
}
