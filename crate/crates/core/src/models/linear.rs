//! The linear forecaster family and its closed-form ridge fit.
//!
//! Each channel's history `h` (length `T_p`) is mapped to a feature vector
//! `phi` and an additive offset `o`:
//!
//! * Linear: `phi = h`, `o = 0`
//! * NLinear: `phi = h - h[T_p-1]`, `o = h[T_p-1]`
//! * DLinear: `phi = [trend(h), h - trend(h)]`, `o = 0`
//!
//! and the forecast is `W^T phi + b + o`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::decompose::moving_average;
use super::solve::solve_normal_equations;
use super::{ChannelMode, ForecasterKind, ForecasterSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinearFamily {
    Linear,
    DLinear { kernel: usize },
    NLinear,
}

impl LinearFamily {
    pub fn from_spec(spec: &ForecasterSpec) -> Result<Self> {
        match spec.kind {
            ForecasterKind::Linear => Ok(LinearFamily::Linear),
            ForecasterKind::Nlinear => Ok(LinearFamily::NLinear),
            ForecasterKind::Dlinear => Ok(LinearFamily::DLinear {
                kernel: spec.kernel,
            }),
            other => Err(Error::Spec(format!("{other} is not a linear model"))),
        }
    }

    pub fn kind(&self) -> ForecasterKind {
        match self {
            LinearFamily::Linear => ForecasterKind::Linear,
            LinearFamily::DLinear { .. } => ForecasterKind::Dlinear,
            LinearFamily::NLinear => ForecasterKind::Nlinear,
        }
    }

    pub fn feature_dim(&self, history: usize) -> usize {
        match self {
            LinearFamily::DLinear { .. } => 2 * history,
            _ => history,
        }
    }
}

/// `w` is `in_dim x T_f`, `b` has length `T_f`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearWeights {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl LinearWeights {
    pub fn zeros(in_dim: usize, horizon: usize) -> Self {
        Self {
            w: Array2::zeros((in_dim, horizon)),
            b: Array1::zeros(horizon),
        }
    }

    pub fn len(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(self.b.iter()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub family: LinearFamily,
    pub history: usize,
    pub horizon: usize,
    pub channel_mode: ChannelMode,
    /// One set in independent mode, one per channel otherwise.
    pub weights: Vec<LinearWeights>,
}

impl LinearModel {
    pub fn zeros(spec: &ForecasterSpec, n_channels: usize) -> Result<Self> {
        spec.validate()?;
        let family = LinearFamily::from_spec(spec)?;
        let sets = match spec.channel_mode {
            ChannelMode::Independent => 1,
            ChannelMode::PerChannelWeights => n_channels.max(1),
        };
        let in_dim = family.feature_dim(spec.history);
        Ok(Self {
            family,
            history: spec.history,
            horizon: spec.horizon,
            channel_mode: spec.channel_mode,
            weights: vec![LinearWeights::zeros(in_dim, spec.horizon); sets],
        })
    }

    /// Uniform initialization in `[-1/sqrt(T_p), 1/sqrt(T_p)]`.
    pub fn init_uniform<R: Rng>(spec: &ForecasterSpec, n_channels: usize, rng: &mut R) -> Result<Self> {
        let mut m = Self::zeros(spec, n_channels)?;
        let bound = 1.0 / (spec.history as f64).sqrt();
        for set in &mut m.weights {
            set.w.mapv_inplace(|_| rng.random_range(-bound..=bound));
            set.b.mapv_inplace(|_| rng.random_range(-bound..=bound));
        }
        Ok(m)
    }

    pub fn spec(&self) -> ForecasterSpec {
        let mut spec = ForecasterSpec::new(self.family.kind(), self.history, self.horizon);
        spec.channel_mode = self.channel_mode;
        if let LinearFamily::DLinear { kernel } = self.family {
            spec.kernel = kernel;
        }
        spec
    }

    pub fn in_dim(&self) -> usize {
        self.family.feature_dim(self.history)
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(LinearWeights::len).sum()
    }

    #[inline]
    pub fn set_for(&self, channel: usize) -> usize {
        match self.channel_mode {
            ChannelMode::Independent => 0,
            ChannelMode::PerChannelWeights => channel,
        }
    }

    /// Writes the feature vector of one channel history into `phi` and
    /// returns the additive output offset.
    pub fn features_into(&self, h: &[f64], phi: &mut [f64]) -> Result<f64> {
        let p = self.history;
        if h.len() != p || phi.len() != self.in_dim() {
            return Err(Error::Shape(format!(
                "history of length {} (expected {p}), feature buffer {} (expected {})",
                h.len(),
                phi.len(),
                self.in_dim()
            )));
        }
        match self.family {
            LinearFamily::Linear => {
                phi.copy_from_slice(h);
                Ok(0.0)
            }
            LinearFamily::NLinear => {
                let last = h[p - 1];
                for (f, x) in phi.iter_mut().zip(h) {
                    *f = x - last;
                }
                Ok(last)
            }
            LinearFamily::DLinear { kernel } => {
                let trend = moving_average(h, kernel)?;
                for i in 0..p {
                    phi[i] = trend[i];
                    phi[p + i] = h[i] - trend[i];
                }
                Ok(0.0)
            }
        }
    }

    fn check_channels(&self, channels: usize) -> Result<()> {
        if self.channel_mode == ChannelMode::PerChannelWeights && channels > self.weights.len() {
            return Err(Error::Shape(format!(
                "model has weights for {} channels, input has {channels}",
                self.weights.len()
            )));
        }
        Ok(())
    }

    /// Forecasts a `T_p x N` block. In per-channel mode only the first
    /// `weights.len()` columns are used.
    pub fn predict(&self, history: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if history.nrows() != self.history {
            return Err(Error::Shape(format!(
                "history has {} rows, model expects {}",
                history.nrows(),
                self.history
            )));
        }
        let channels = match self.channel_mode {
            ChannelMode::Independent => history.ncols(),
            ChannelMode::PerChannelWeights => self.weights.len(),
        };
        self.check_channels(channels)?;
        let mut out = Array2::zeros((self.horizon, channels));
        let mut phi = vec![0.0; self.in_dim()];
        for c in 0..channels {
            let h = history.column(c).to_vec();
            let offset = self.features_into(&h, &mut phi)?;
            let set = &self.weights[self.set_for(c)];
            let y = set.w.t().dot(&Array1::from(phi.clone())) + &set.b;
            for (s, v) in y.iter().enumerate() {
                out[[s, c]] = v + offset;
            }
        }
        Ok(out)
    }

    /// Forecasts every anchor in `anchors` from the normalized matrix. Returns
    /// one `T_f x N` block per anchor.
    pub fn predict_anchors(&self, normalized: &Array2<f64>, anchors: &[usize]) -> Result<Vec<Array2<f64>>> {
        let n = match self.channel_mode {
            ChannelMode::Independent => normalized.ncols(),
            ChannelMode::PerChannelWeights => self.weights.len(),
        };
        self.check_channels(n)?;
        if anchors.iter().any(|&t| t < self.history || t + self.horizon > normalized.nrows()) {
            return Err(Error::Window("anchor outside the value matrix".into()));
        }
        let d = self.in_dim();
        let mut out = vec![Array2::zeros((self.horizon, n)); anchors.len()];
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
                        *v = normalized[[t - self.history + i, c]];
                    }
                    let r = a * channels.len() + ci;
                    let row = phi.row_mut(r);
                    offsets[r] = self.features_into(&h, row.into_slice().expect("row-major"))?;
                }
            }
            let y = phi.dot(&set.w);
            for (a, block) in out.iter_mut().enumerate() {
                for (ci, &c) in channels.iter().enumerate() {
                    let r = a * channels.len() + ci;
                    for s in 0..self.horizon {
                        block[[s, c]] = y[[r, s]] + set.b[s] + offsets[r];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Linear map from a raw history vector to the feature vector (`d x T_p`)
    /// and the offset coefficients (length `T_p`).
    fn feature_map(&self) -> (DMatrix<f64>, DVector<f64>) {
        let p = self.history;
        let mut offset = DVector::zeros(p);
        let a = match self.family {
            LinearFamily::Linear => DMatrix::identity(p, p),
            LinearFamily::NLinear => {
                offset[p - 1] = 1.0;
                let mut a = DMatrix::identity(p, p);
                for i in 0..p {
                    a[(i, p - 1)] -= 1.0;
                }
                a
            }
            LinearFamily::DLinear { kernel } => {
                let half = (kernel / 2) as isize;
                let mut k = DMatrix::zeros(p, p);
                for i in 0..p as isize {
                    for j in i - half..=i + half {
                        let col = j.clamp(0, p as isize - 1) as usize;
                        k[(i as usize, col)] += 1.0 / kernel as f64;
                    }
                }
                let mut a = DMatrix::zeros(2 * p, p);
                a.view_mut((0, 0), (p, p)).copy_from(&k);
                a.view_mut((p, 0), (p, p)).copy_from(&(DMatrix::identity(p, p) - k));
                a
            }
        };
        (a, offset)
    }
}

/// Second moments of the stride-1 joint windows `z = x[s .. s + L]`.
struct WindowMoments {
    gram: DMatrix<f64>,
    sum: DVector<f64>,
    count: f64,
}

impl WindowMoments {
    fn zeros(len: usize) -> Self {
        Self {
            gram: DMatrix::zeros(len, len),
            sum: DVector::zeros(len),
            count: 0.0,
        }
    }

    fn add(&mut self, o: &WindowMoments) {
        self.gram += &o.gram;
        self.sum += &o.sum;
        self.count += o.count;
    }
}

/// Accumulates `sum_s z_s z_s^T` over window starts `s0..=s1` for a group of
/// channel series, using the diagonal recurrence
/// `G[a][b] = G[a-1][b-1] - x[s0+a-1] x[s0+b-1] + x[s1+a] x[s1+b]`.
fn window_moments(series: &[&[f64]], starts: Range<usize>, len: usize) -> WindowMoments {
    let s0 = starts.start;
    let s1 = starts.end - 1;
    let mut m = WindowMoments::zeros(len);
    m.count = (starts.len() * series.len()) as f64;

    let mut first = DMatrix::zeros(len, len);
    let mut last = DMatrix::zeros(len, len);
    for x in series {
        for b in 0..len {
            let mut acc = 0.0;
            for s in starts.clone() {
                acc += x[s] * x[s + b];
            }
            m.gram[(0, b)] += acc;
        }
        let mut prefix = Vec::with_capacity(x.len() + 1);
        prefix.push(0.0);
        for v in x.iter() {
            prefix.push(prefix.last().unwrap() + v);
        }
        for a in 0..len {
            m.sum[a] += prefix[s1 + a + 1] - prefix[s0 + a];
        }
        let tail = DVector::from_column_slice(&x[s1..s1 + len]);
        last.ger(1.0, &tail, &tail, 1.0);
        // head[i] = x[s0 - 1 + i]; head[0] is never read by the recurrence.
        let head = DVector::from_fn(len, |i, _| if i == 0 { 0.0 } else { x[s0 + i - 1] });
        first.ger(1.0, &head, &head, 1.0);
    }
    for a in 1..len {
        for b in a..len {
            m.gram[(a, b)] = m.gram[(a - 1, b - 1)] - first[(a, b)] + last[(a, b)];
        }
    }
    for a in 0..len {
        for b in 0..a {
            m.gram[(a, b)] = m.gram[(b, a)];
        }
    }
    m
}

const CHANNEL_CHUNK: usize = 8;

/// Ridge least-squares fit over every stride-1 window inside `range` of the
/// normalized matrix. Solves `(H^T H + ridge I) W = H^T F` with a bias column
/// (not penalized), where each (window, channel) pair is one row of `H`.
pub fn fit_linear_closed_form(
    normalized: &Array2<f64>,
    range: Range<usize>,
    spec: &ForecasterSpec,
) -> Result<LinearModel> {
    let mut model = LinearModel::zeros(spec, normalized.ncols())?;
    let p = spec.history;
    let f = spec.horizon;
    let len = p + f;
    if range.end > normalized.nrows() || range.len() < len {
        return Err(Error::Window(format!(
            "training range of {} steps cannot hold T_p={p} + T_f={f}",
            range.len()
        )));
    }
    let starts = range.start..range.end - len + 1;
    let steps = normalized.nrows();
    let series: Vec<Vec<f64>> = (0..normalized.ncols())
        .map(|c| normalized.column(c).to_vec())
        .collect();
    debug_assert!(series.iter().all(|s| s.len() == steps));

    let groups: Vec<Vec<usize>> = match spec.channel_mode {
        ChannelMode::Independent => vec![(0..series.len()).collect()],
        ChannelMode::PerChannelWeights => (0..series.len()).map(|c| vec![c]).collect(),
    };

    let (a, offset) = model.feature_map();
    let d = a.nrows();
    // Joint-window feature map [A | 0] and target map [-1 offset^T | I].
    let mut a_joint = DMatrix::zeros(d, len);
    a_joint.view_mut((0, 0), (d, p)).copy_from(&a);
    let mut b_joint = DMatrix::zeros(f, len);
    for s in 0..f {
        for i in 0..p {
            b_joint[(s, i)] = -offset[i];
        }
        b_joint[(s, p + s)] = 1.0;
    }

    for (k, group) in groups.iter().enumerate() {
        let partials: Vec<WindowMoments> = group
            .par_chunks(CHANNEL_CHUNK)
            .map(|chunk| {
                let xs: Vec<&[f64]> = chunk.iter().map(|&c| series[c].as_slice()).collect();
                window_moments(&xs, starts.clone(), len)
            })
            .collect();
        let mut moments = WindowMoments::zeros(len);
        for part in &partials {
            moments.add(part);
        }

        let ga = &moments.gram * a_joint.transpose();
        let mut lhs = DMatrix::zeros(d + 1, d + 1);
        lhs.view_mut((0, 0), (d, d)).copy_from(&(&a_joint * &ga));
        let am = &a_joint * &moments.sum;
        lhs.view_mut((0, d), (d, 1)).copy_from(&am);
        lhs.view_mut((d, 0), (1, d)).copy_from(&am.transpose());
        lhs[(d, d)] = moments.count;
        for i in 0..d {
            lhs[(i, i)] += spec.ridge;
        }
        let mut rhs = DMatrix::zeros(d + 1, f);
        rhs.view_mut((0, 0), (d, f))
            .copy_from(&(&a_joint * &moments.gram * b_joint.transpose()));
        rhs.view_mut((d, 0), (1, f))
            .copy_from(&(moments.sum.transpose() * b_joint.transpose()));

        let theta = solve_normal_equations(&lhs, &rhs)?;
        let set = &mut model.weights[k];
        for i in 0..d {
            for s in 0..f {
                set.w[[i, s]] = theta[(i, s)];
            }
        }
        for s in 0..f {
            set.b[s] = theta[(d, s)];
        }
        if !set.is_finite() {
            return Err(Error::SingularSystem("solution is not finite".into()));
        }
    }
    Ok(model)
}
