//! Adam, mini-batch epochs with dropout, dev-set early stopping.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamSet};
use crate::data::Example;
use crate::error::{Error, Result};
use crate::features::ImageLookup;
use crate::models::{self, Model};
use crate::rng::{self, Seeded};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clipping; off when `None`.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: None,
        }
    }
}

/// First and second moment buffers for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl OptimizerState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        OptimizerState {
            config,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update from the gradients stored in `params`.
pub fn adam_step(params: &mut ParamSet, state: &mut OptimizerState) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::Config("optimizer state does not match the parameter set".into()));
    }
    for p in params.iter() {
        if p.requires_grad && p.grad.data().iter().any(|g| g.is_nan()) {
            return Err(Error::NonFinite(format!("gradient of {}", p.name)));
        }
    }
    let c = state.config;
    let clip = match c.clip_norm {
        Some(max) => {
            let norm2: f64 = params
                .iter()
                .filter(|p| p.requires_grad)
                .flat_map(|p| p.grad.data().iter())
                .map(|g| g * g)
                .sum();
            let norm = libm::sqrt(norm2);
            if norm > max { max / norm } else { 1.0 }
        }
        None => 1.0,
    };
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - libm::pow(c.beta1, t as f64);
    let bc2 = 1.0 - libm::pow(c.beta2, t as f64);
    for (k, p) in params.iter_mut().enumerate() {
        if !p.requires_grad {
            continue;
        }
        let cols = if p.value.rank() == 2 { p.value.cols() } else { 0 };
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        let grad = p.grad.data();
        let value = p.value.data_mut();
        for j in 0..value.len() {
            if cols > 0 && p.frozen_rows.contains(&(j / cols)) {
                continue;
            }
            let g = grad[j] * clip;
            m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
            v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
            let mh = m[j] / bc1;
            let vh = v[j] / bc2;
            value[j] -= c.learning_rate * mh / (libm::sqrt(vh) + c.epsilon);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Stop once evaluation-mode training accuracy reaches this value.
    pub target_train_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 30,
            batch_size: 64,
            patience: 3,
            seed: 0,
            adam: AdamConfig::default(),
            target_train_accuracy: None,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub dev_accuracy: Option<f64>,
    pub skipped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue { improved: bool },
    Stop { best_epoch: usize },
}

/// Stops once dev accuracy has been strictly below the best for `patience`
/// consecutive epochs. An epoch that ties the best ends the streak.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStopMonitor {
    pub patience: usize,
    best: Option<(usize, f64)>,
    below: usize,
}

impl EarlyStopMonitor {
    pub fn new(patience: usize) -> Self {
        EarlyStopMonitor {
            patience: patience.max(1),
            best: None,
            below: 0,
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }

    pub fn observe(&mut self, epoch: usize, accuracy: f64) -> StopDecision {
        match self.best {
            Some((_, best)) if accuracy < best => {
                self.below += 1;
                if self.below >= self.patience {
                    return StopDecision::Stop {
                        best_epoch: self.best.expect("set").0,
                    };
                }
                StopDecision::Continue { improved: false }
            }
            Some((_, best)) if accuracy == best => {
                self.below = 0;
                StopDecision::Continue { improved: false }
            }
            _ => {
                self.best = Some((epoch, accuracy));
                self.below = 0;
                StopDecision::Continue { improved: true }
            }
        }
    }
}

fn skippable(e: &Error) -> bool {
    matches!(
        e,
        Error::MissingImage(_) | Error::Empty(_) | Error::Variant { .. } | Error::Invalid(_)
    )
}

/// One pass over `data` in seeded random order.
pub fn train_epoch(
    model: &mut Model,
    data: &[Example],
    images: &dyn ImageLookup,
    config: &TrainConfig,
    state: &mut OptimizerState,
    epoch: usize,
) -> Result<EpochMetrics> {
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    Seeded::new(rng::mix(config.seed, &format!("shuffle/{epoch}"))).shuffle(&mut order);
    let network = model.network().clone();
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let mut seen = 0usize;
    let mut skipped = 0usize;

    for batch in order.chunks(config.batch_size.max(1)) {
        model.params_mut().zero_grad();
        let mut used = 0usize;
        for &i in batch {
            let ex = &data[i];
            let dropout_seed = rng::mix(config.seed, &format!("dropout/{epoch}/{i}"));
            let outcome = {
                let params = model.params();
                let mut g = Graph::training(params, dropout_seed);
                models::resolve_input(network.config(), ex, images).and_then(|input| {
                    let logits = network.logits(&mut g, &input)?;
                    let pred = models::Prediction::from_logits(g.value(logits).data())?;
                    let loss = g.cross_entropy(logits, ex.label.index())?;
                    let value = g.value(loss).item();
                    Ok((g.backward(loss)?, value, pred.label == ex.label))
                })
            };
            match outcome {
                Ok((grads, loss, hit)) => {
                    model.params_mut().accumulate(&grads, 1.0);
                    loss_sum += loss;
                    correct += hit as usize;
                    seen += 1;
                    used += 1;
                }
                Err(e) if skippable(&e) => {
                    log::warn!("skipping {}: {e}", ex.pair_id);
                    skipped += 1;
                }
                Err(e) => return Err(e),
            }
        }
        if used == 0 {
            continue;
        }
        let scale = 1.0 / used as f64;
        for p in model.params_mut().iter_mut() {
            for g in p.grad.data_mut() {
                *g *= scale;
            }
        }
        adam_step(model.params_mut(), state)?;
    }
    if seen == 0 {
        return Err(Error::Invalid("every training record was skipped".into()));
    }
    Ok(EpochMetrics {
        epoch,
        loss: loss_sum / seen as f64,
        train_accuracy: correct as f64 / seen as f64,
        dev_accuracy: None,
        skipped,
    })
}

/// Evaluation-mode accuracy over `data`.
pub fn accuracy(model: &Model, data: &[Example], images: &dyn ImageLookup) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation data"));
    }
    let mut correct = 0;
    for ex in data {
        correct += (model.predict_example(ex, images)?.label == ex.label) as usize;
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Mean evaluation-mode cross-entropy over `data`.
pub fn mean_loss(model: &Model, data: &[Example], images: &dyn ImageLookup) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation data"));
    }
    let mut total = 0.0;
    for ex in data {
        let input = models::resolve_input(model.config(), ex, images)?;
        let mut g = Graph::new(model.params());
        let l = model.network().loss(&mut g, &input, ex.label)?;
        total += g.value(l).item();
    }
    Ok(total / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub history: Vec<EpochMetrics>,
    /// Epoch whose parameters the model holds on return.
    pub best_epoch: usize,
    pub best_dev_accuracy: Option<f64>,
    pub stopped_early: bool,
}

/// Trains until early stopping (with a dev set), the epoch limit or the
/// training-accuracy target. With a dev set the best epoch's parameters are restored.
pub fn fit(
    model: &mut Model,
    train: &[Example],
    dev: Option<&[Example]>,
    images: &dyn ImageLookup,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<FitOutcome> {
    let mut state = OptimizerState::new(model.params(), config.adam);
    let mut monitor = EarlyStopMonitor::new(config.patience);
    let mut snapshot: Option<Vec<crate::tensor::Tensor>> = None;
    let mut history = Vec::new();
    let mut stopped_early = false;
    let mut last = 0;

    for epoch in 1..=config.max_epochs {
        let mut m = train_epoch(model, train, images, config, &mut state, epoch)?;
        last = epoch;
        let mut stop = false;
        if let Some(dev) = dev {
            let acc = accuracy(model, dev, images)?;
            m.dev_accuracy = Some(acc);
            match monitor.observe(epoch, acc) {
                StopDecision::Continue { improved: true } => {
                    snapshot = Some(model.params().iter().map(|p| p.value.clone()).collect());
                }
                StopDecision::Continue { improved: false } => {}
                StopDecision::Stop { .. } => {
                    stopped_early = true;
                    stop = true;
                }
            }
        }
        on_epoch(&m);
        history.push(m);
        if stop {
            break;
        }
        if let Some(target) = config.target_train_accuracy {
            if accuracy(model, train, images)? >= target {
                break;
            }
        }
    }

    let (best_epoch, best_dev_accuracy) = match (monitor.best(), snapshot) {
        (Some((epoch, acc)), Some(values)) => {
            for (p, v) in model.params_mut().iter_mut().zip(values) {
                p.value = v;
            }
            (epoch, Some(acc))
        }
        _ => (last, None),
    };
    Ok(FitOutcome {
        history,
        best_epoch,
        best_dev_accuracy,
        stopped_early,
    })
}
