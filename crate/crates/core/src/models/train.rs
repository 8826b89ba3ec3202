//! Mini-batch training of linear models on masked MAE.

use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::linear::{LinearModel, LinearWeights};
use super::ChannelMode;
use crate::error::{Error, Result};

/// Normalized values and observation flags the windows are cut from.
#[derive(Debug, Clone, Copy)]
pub struct WindowData<'a> {
    pub normalized: &'a Array2<f64>,
    pub mask: &'a Array2<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Curriculum {
    pub start: usize,
    pub step: usize,
}

impl Default for Curriculum {
    fn default() -> Self {
        Self { start: 1, step: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub clip_norm: Option<f64>,
    pub patience: usize,
    pub curriculum: Option<Curriculum>,
    /// Multiplicative learning-rate decay applied once per epoch.
    pub lr_decay: f64,
    /// A batch loss above this multiple of the first batch loss (or of 1,
    /// whichever is larger) counts as divergence.
    pub divergence_factor: f64,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 100,
            batch_size: 64,
            clip_norm: None,
            patience: 10,
            curriculum: None,
            lr_decay: 1.0,
            divergence_factor: 1e4,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        if !(self.lr_decay > 0.0) {
            return Err(Error::Config("lr_decay must be positive".into()));
        }
        if let Some(c) = self.curriculum {
            if c.start == 0 {
                return Err(Error::Config("curriculum start must be at least 1".into()));
            }
        }
        Ok(())
    }

    pub fn horizon_at(&self, epoch: usize, horizon: usize) -> usize {
        match self.curriculum {
            None => horizon,
            Some(c) => c.start.saturating_add(c.step.saturating_mul(epoch)).min(horizon),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EarlyStop {
    Continue,
    Stop,
}

/// Stops once the best value (strict improvement) is `patience` epochs old.
pub fn early_stop(val_history: &[f64], patience: usize) -> EarlyStop {
    let mut best = f64::INFINITY;
    let mut best_idx = None;
    for (i, &v) in val_history.iter().enumerate() {
        if v < best {
            best = v;
            best_idx = Some(i);
        }
    }
    match best_idx {
        Some(i) if val_history.len() - 1 - i >= patience => EarlyStop::Stop,
        None if val_history.len() >= patience => EarlyStop::Stop,
        _ => EarlyStop::Continue,
    }
}

const ANCHOR_CHUNK: usize = 16;

struct Partial {
    abs_sum: f64,
    count: usize,
    grads: Option<Vec<LinearWeights>>,
}

impl LinearModel {
    fn chunk_loss(&self, data: &WindowData<'_>, anchors: &[usize], horizon: usize, with_grad: bool) -> Result<Partial> {
        let n = match self.channel_mode {
            ChannelMode::Independent => data.normalized.ncols(),
            ChannelMode::PerChannelWeights => self.weights.len(),
        };
        let d = self.in_dim();
        let f = self.horizon;
        let mut out = Partial {
            abs_sum: 0.0,
            count: 0,
            grads: with_grad.then(|| vec![LinearWeights::zeros(d, f); self.weights.len()]),
        };
        let mut h = vec![0.0; self.history];
        for (k, set) in self.weights.iter().enumerate() {
            let channels: Vec<usize> = match self.channel_mode {
                ChannelMode::Independent => (0..n).collect(),
                ChannelMode::PerChannelWeights => vec![k],
            };
            let rows = anchors.len() * channels.len();
            let mut phi = Array2::zeros((rows, d));
            let mut offsets = vec![0.0; rows];
            for (a, &t) in anchors.iter().enumerate() {
                for (ci, &c) in channels.iter().enumerate() {
                    for (i, v) in h.iter_mut().enumerate() {
                        *v = data.normalized[[t - self.history + i, c]];
                    }
                    let r = a * channels.len() + ci;
                    offsets[r] = self.features_into(&h, phi.row_mut(r).into_slice().expect("row-major"))?;
                }
            }
            let mut resid = phi.dot(&set.w);
            for (a, &t) in anchors.iter().enumerate() {
                for (ci, &c) in channels.iter().enumerate() {
                    let r = a * channels.len() + ci;
                    for s in 0..f {
                        let g = &mut resid[[r, s]];
                        if s < horizon && data.mask[[t + s, c]] {
                            let e = *g + set.b[s] + offsets[r] - data.normalized[[t + s, c]];
                            out.abs_sum += e.abs();
                            out.count += 1;
                            // Subgradient of |e|, 0 at the kink.
                            *g = if e > 0.0 {
                                1.0
                            } else if e < 0.0 {
                                -1.0
                            } else {
                                0.0
                            };
                        } else {
                            *g = 0.0;
                        }
                    }
                }
            }
            if let Some(grads) = out.grads.as_mut() {
                grads[k].w += &phi.t().dot(&resid);
                grads[k].b += &resid.sum_axis(Axis(0));
            }
        }
        Ok(out)
    }

    /// Masked MAE over the first `horizon` forecast steps of every anchor,
    /// and optionally its gradient. Chunks are reduced in a fixed order so the
    /// result does not depend on the thread count.
    pub fn masked_mae_loss(
        &self,
        data: &WindowData<'_>,
        anchors: &[usize],
        horizon: usize,
        with_grad: bool,
    ) -> Result<(f64, Option<Vec<LinearWeights>>)> {
        if anchors
            .iter()
            .any(|&t| t < self.history || t + self.horizon > data.normalized.nrows())
        {
            return Err(Error::Window("anchor outside the value matrix".into()));
        }
        if self.channel_mode == ChannelMode::PerChannelWeights && data.normalized.ncols() < self.weights.len() {
            return Err(Error::Shape("fewer data channels than weight sets".into()));
        }
        let partials: Vec<Partial> = anchors
            .par_chunks(ANCHOR_CHUNK)
            .map(|chunk| self.chunk_loss(data, chunk, horizon, with_grad))
            .collect::<Result<_>>()?;
        let mut abs_sum = 0.0;
        let mut count = 0;
        let mut grads: Option<Vec<LinearWeights>> = None;
        for p in partials {
            abs_sum += p.abs_sum;
            count += p.count;
            if let Some(g) = p.grads {
                match grads.as_mut() {
                    None => grads = Some(g),
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            a.w += &b.w;
                            a.b += &b.b;
                        }
                    }
                }
            }
        }
        if count == 0 {
            return Ok((0.0, grads.map(|g| g.into_iter().map(|w| LinearWeights::zeros(w.w.nrows(), w.w.ncols())).collect())));
        }
        let scale = 1.0 / count as f64;
        if let Some(g) = grads.as_mut() {
            for set in g.iter_mut() {
                set.w *= scale;
                set.b *= scale;
            }
        }
        Ok((abs_sum * scale, grads))
    }

    /// Every parameter in a fixed order: for each set, `w` row-major then `b`.
    pub fn params_flat(&self) -> Vec<f64> {
        flatten(&self.weights)
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(Error::Shape(format!(
                "{} parameters given, model has {}",
                params.len(),
                self.parameter_count()
            )));
        }
        let mut it = params.iter();
        for set in &mut self.weights {
            for v in set.w.iter_mut().chain(set.b.iter_mut()) {
                *v = *it.next().expect("length checked");
            }
        }
        Ok(())
    }
}

pub(crate) fn flatten(sets: &[LinearWeights]) -> Vec<f64> {
    sets.iter()
        .flat_map(|s| s.w.iter().chain(s.b.iter()).copied().collect::<Vec<_>>())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: LinearModel,
    pub train_curve: Vec<f64>,
    pub val_curve: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub epoch_seconds: Vec<f64>,
    pub batch_size: usize,
}

/// Probes an allocation the size of one batch's feature matrix, halving the
/// batch size down to 8 when it cannot be satisfied.
fn fit_batch_size(requested: usize, row_len: usize) -> Result<usize> {
    let mut batch = requested;
    loop {
        let mut probe: Vec<f64> = Vec::new();
        match probe.try_reserve_exact(batch.saturating_mul(row_len)) {
            Ok(()) => return Ok(batch),
            Err(_) if batch > 8 => batch = (batch / 2).max(8),
            Err(_) => return Err(Error::OutOfMemory(format!("a batch of {batch} windows"))),
        }
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grads[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grads[i] * grads[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Trains with Adam on masked MAE over normalized targets and returns the
/// snapshot with the lowest validation masked MAE. With zero epochs the
/// input model is returned unchanged.
pub fn sgd_fit(
    model: LinearModel,
    data: &WindowData<'_>,
    train_anchors: &[usize],
    val_anchors: &[usize],
    cfg: &TrainerConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let channels = data.normalized.ncols();
    let batch_size = fit_batch_size(cfg.batch_size, channels * model.in_dim())?;
    let mut outcome = TrainOutcome {
        model: model.clone(),
        train_curve: Vec::new(),
        val_curve: Vec::new(),
        best_epoch: None,
        epoch_seconds: Vec::new(),
        batch_size,
    };
    if cfg.epochs == 0 {
        return Ok(outcome);
    }
    if train_anchors.is_empty() {
        return Err(Error::Window("no training windows".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut current = model;
    let mut params = current.params_flat();
    let mut adam = Adam::new(params.len());
    let mut order = train_anchors.to_vec();
    let mut reference: Option<f64> = None;
    let mut best_val = f64::INFINITY;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let horizon = cfg.horizon_at(epoch, current.horizon);
        let lr = cfg.lr * cfg.lr_decay.powi(epoch as i32);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, batch) in order.chunks(batch_size).enumerate() {
            let (loss, grads) = current.masked_mae_loss(data, batch, horizon, true)?;
            let limit = cfg.divergence_factor * reference.unwrap_or(loss).max(1.0);
            if !loss.is_finite() || loss > limit {
                return Err(Error::Divergence { epoch, batch: b, loss });
            }
            reference.get_or_insert(loss);
            let mut g = flatten(&grads.expect("gradient requested"));
            if let Some(clip) = cfg.clip_norm {
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > clip {
                    let s = clip / norm;
                    g.iter_mut().for_each(|v| *v *= s);
                }
            }
            adam.step(&mut params, &g, lr);
            if params.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    loss: f64::NAN,
                });
            }
            current.set_params_flat(&params)?;
            loss_sum += loss;
            batches += 1;
        }
        let train_loss = loss_sum / batches as f64;
        let val_loss = if val_anchors.is_empty() {
            train_loss
        } else {
            current.masked_mae_loss(data, val_anchors, current.horizon, false)?.0
        };
        if !val_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: batches,
                loss: val_loss,
            });
        }
        outcome.train_curve.push(train_loss);
        outcome.val_curve.push(val_loss);
        outcome.epoch_seconds.push(started.elapsed().as_secs_f64());
        if val_loss < best_val {
            best_val = val_loss;
            outcome.best_epoch = Some(epoch);
            outcome.model = current.clone();
        }
        if early_stop(&outcome.val_curve, cfg.patience) == EarlyStop::Stop {
            break;
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ForecasterKind, ForecasterSpec};

    #[test]
    fn early_stop_examples() {
        assert_eq!(early_stop(&[3.0, 2.0, 2.0, 2.0], 2), EarlyStop::Stop);
        assert_eq!(early_stop(&[3.0, 2.0, 2.0], 2), EarlyStop::Continue);
        assert_eq!(early_stop(&[5.0, 4.0, 3.0, 2.0, 1.0], 1), EarlyStop::Continue);
        assert_eq!(early_stop(&[5.0, 5.0], 1), EarlyStop::Stop);
        assert_eq!(early_stop(&[], 1), EarlyStop::Continue);
    }

    #[test]
    fn curriculum_horizon() {
        let cfg = TrainerConfig {
            curriculum: Some(Curriculum { start: 1, step: 2 }),
            ..Default::default()
        };
        assert_eq!(cfg.horizon_at(0, 6), 1);
        assert_eq!(cfg.horizon_at(1, 6), 3);
        assert_eq!(cfg.horizon_at(9, 6), 6);
        assert_eq!(TrainerConfig::default().horizon_at(0, 6), 6);
    }

    #[test]
    fn config_validation() {
        let bad = TrainerConfig {
            lr: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainerConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainerConfig {
            clip_norm: Some(-1.0),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn batch_size_probe() {
        assert_eq!(fit_batch_size(64, 10).unwrap(), 64);
        assert_eq!(fit_batch_size(64, usize::MAX / 4).unwrap_err().to_string().contains("8"), true);
    }

    #[test]
    fn flat_params_round_trip() {
        let spec = ForecasterSpec::new(ForecasterKind::Nlinear, 3, 2);
        let mut m = LinearModel::init_uniform(&spec, 1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let p = m.params_flat();
        assert_eq!(p.len(), 8);
        let doubled: Vec<f64> = p.iter().map(|v| v * 2.0).collect();
        m.set_params_flat(&doubled).unwrap();
        assert_eq!(m.params_flat(), doubled);
        assert!(m.set_params_flat(&[1.0]).is_err());
    }
}
