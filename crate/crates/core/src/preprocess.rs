//! Normalization, temporal features and sliding-window sampling.

use std::ops::Range;

use chrono::{Datelike, Timelike};
use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::{ChronologicalSplit, TimeSeriesDataset};
use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Per-channel z-score normalization fitted on observed training entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScoreScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub epsilon: f64,
}

impl ZScoreScaler {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn n_channels(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, block: &ArrayView2<'_, f64>) -> Result<()> {
        if block.ncols() != self.n_channels() {
            return Err(Error::Shape(format!(
                "block has {} columns, scaler has {} channels",
                block.ncols(),
                self.n_channels()
            )));
        }
        Ok(())
    }

    pub fn transform(&self, block: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check(&block)?;
        let mut out = block.to_owned();
        for (mut col, (m, s)) in out.axis_iter_mut(Axis(1)).zip(self.mean.iter().zip(&self.std)) {
            col.mapv_inplace(|x| (x - m) / s);
        }
        Ok(out)
    }

    pub fn inverse_transform(&self, block: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check(&block)?;
        let mut out = block.to_owned();
        for (mut col, (m, s)) in out.axis_iter_mut(Axis(1)).zip(self.mean.iter().zip(&self.std)) {
            col.mapv_inplace(|x| x * s + m);
        }
        Ok(out)
    }

    /// Inverse transform of a single value on `channel`.
    #[inline]
    pub fn denormalize(&self, channel: usize, x: f64) -> f64 {
        x * self.std[channel] + self.mean[channel]
    }

    /// Normalizes the whole dataset. Masked cells become 0, the training mean.
    pub fn normalize_dataset(&self, ds: &TimeSeriesDataset) -> Result<Array2<f64>> {
        let mut z = self.transform(ds.values().view())?;
        ndarray::Zip::from(&mut z)
            .and(ds.mask().flags())
            .for_each(|v, &observed| {
                if !observed {
                    *v = 0.0;
                }
            });
        Ok(z)
    }
}

/// Fits mean and population standard deviation per channel over the observed
/// entries of the training range. Standard deviations are floored at `epsilon`.
pub fn fit_scaler(ds: &TimeSeriesDataset, split: &ChronologicalSplit, epsilon: f64) -> ZScoreScaler {
    fit_scaler_on(ds, split.train.clone(), epsilon)
}

pub fn fit_scaler_on(ds: &TimeSeriesDataset, range: Range<usize>, epsilon: f64) -> ZScoreScaler {
    let values = ds.values().slice(s![range.clone(), ..]);
    let flags = ds.mask().flags().slice(s![range, ..]);
    let mut mean = Vec::with_capacity(ds.n_channels());
    let mut std = Vec::with_capacity(ds.n_channels());
    for (col, obs) in values.axis_iter(Axis(1)).zip(flags.axis_iter(Axis(1))) {
        let observed = || col.iter().zip(obs.iter()).filter(|(_, &o)| o).map(|(&v, _)| v);
        let n = observed().count();
        if n == 0 {
            mean.push(0.0);
            std.push(epsilon);
            continue;
        }
        let m = observed().sum::<f64>() / n as f64;
        let var = observed().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
        mean.push(m);
        std.push(var.sqrt().max(epsilon));
    }
    ZScoreScaler { mean, std, epsilon }
}

/// Calendar attributes for every time step of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalFeatures {
    /// Fraction of the day elapsed, in `[0, 1)`.
    pub time_of_day: Vec<f64>,
    /// Monday = 0 through Sunday = 6.
    pub day_of_week: Vec<u8>,
}

impl TemporalFeatures {
    pub fn from_dataset(ds: &TimeSeriesDataset) -> Self {
        let (time_of_day, day_of_week) = (0..ds.n_steps())
            .map(|t| {
                let ts = ds.time_at(t);
                let secs = ts.num_seconds_from_midnight() as f64 + ts.nanosecond() as f64 * 1e-9;
                (secs / 86_400.0, ts.weekday().num_days_from_monday() as u8)
            })
            .unzip();
        Self {
            time_of_day,
            day_of_week,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FeatureFlags {
    pub time_of_day: bool,
    pub day_of_week: bool,
}

impl FeatureFlags {
    pub fn count(&self) -> usize {
        self.time_of_day as usize + self.day_of_week as usize
    }
}

/// One `(history, future)` pair in normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub anchor: usize,
    /// `T_p x C`, where the first `N` columns are variates and any further
    /// columns are shared temporal features.
    pub history: Array2<f64>,
    pub future: Array2<f64>,
    pub history_mask: Array2<bool>,
    pub future_mask: Array2<bool>,
}

/// Anchors `t` with history `[t - T_p, t)` and future `[t, t + T_f)` inside
/// `range`, in ascending order.
pub fn make_windows(
    range: Range<usize>,
    history: usize,
    horizon: usize,
    stride: usize,
) -> Result<Vec<usize>> {
    if history == 0 || horizon == 0 || stride == 0 {
        return Err(Error::Window(format!(
            "T_p={history}, T_f={horizon} and stride={stride} must all be positive"
        )));
    }
    let len = range.len();
    if len < history + horizon {
        return Err(Error::Window(format!(
            "range of length {len} cannot hold T_p={history} + T_f={horizon}"
        )));
    }
    Ok((range.start + history..=range.end - horizon)
        .step_by(stride)
        .collect())
}

/// Cuts window samples out of a normalized value matrix.
#[derive(Debug, Clone, Copy)]
pub struct WindowSampler<'a> {
    pub normalized: &'a Array2<f64>,
    pub mask: &'a Array2<bool>,
    pub history: usize,
    pub horizon: usize,
}

impl WindowSampler<'_> {
    pub fn sample(&self, anchor: usize) -> WindowSample {
        let past = anchor - self.history..anchor;
        let future = anchor..anchor + self.horizon;
        WindowSample {
            anchor,
            history: self.normalized.slice(s![past.clone(), ..]).to_owned(),
            future: self.normalized.slice(s![future.clone(), ..]).to_owned(),
            history_mask: self.mask.slice(s![past, ..]).to_owned(),
            future_mask: self.mask.slice(s![future, ..]).to_owned(),
        }
    }
}

/// Appends `time_of_day` and `day_of_week / 7` as shared history channels.
pub fn augment_features(
    sample: WindowSample,
    features: &TemporalFeatures,
    flags: FeatureFlags,
) -> WindowSample {
    if flags.count() == 0 {
        return sample;
    }
    let rows = sample.history.nrows();
    let start = sample.anchor - rows;
    let base = sample.history.ncols();
    let mut history = Array2::zeros((rows, base + flags.count()));
    history.slice_mut(s![.., ..base]).assign(&sample.history);
    for r in 0..rows {
        let mut c = base;
        if flags.time_of_day {
            history[[r, c]] = features.time_of_day[start + r];
            c += 1;
        }
        if flags.day_of_week {
            history[[r, c]] = features.day_of_week[start + r] as f64 / 7.0;
        }
    }
    WindowSample { history, ..sample }
}
