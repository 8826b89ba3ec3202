//! Reference forecasters.
//!
//! Every model maps a normalized `T_p x N` history block to a normalized
//! `T_f x N` forecast block. The linear family (Linear, DLinear, NLinear) can
//! be fitted either in closed form (ridge least squares) or by mini-batch
//! gradient descent on masked MAE.

mod baselines;
pub mod checkpoint;
mod decompose;
mod linear;
mod solve;
mod train;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use baselines::{predict_historical_average, predict_naive_last, predict_seasonal_naive};
pub use decompose::{
    dlinear_decompose, dlinear_decompose_block, moving_average, nlinear_shift, nlinear_unshift,
};
pub use linear::{fit_linear_closed_form, LinearFamily, LinearModel, LinearWeights};
pub use solve::solve_normal_equations;
pub use train::{early_stop, sgd_fit, Curriculum, EarlyStop, TrainOutcome, TrainerConfig, WindowData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForecasterKind {
    NaiveLast,
    SeasonalNaive,
    HistoricalAverage,
    Linear,
    Dlinear,
    Nlinear,
}

impl ForecasterKind {
    pub const ALL: [ForecasterKind; 6] = [
        ForecasterKind::NaiveLast,
        ForecasterKind::SeasonalNaive,
        ForecasterKind::HistoricalAverage,
        ForecasterKind::Linear,
        ForecasterKind::Dlinear,
        ForecasterKind::Nlinear,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ForecasterKind::NaiveLast => "naive-last",
            ForecasterKind::SeasonalNaive => "seasonal-naive",
            ForecasterKind::HistoricalAverage => "historical-average",
            ForecasterKind::Linear => "linear",
            ForecasterKind::Dlinear => "dlinear",
            ForecasterKind::Nlinear => "nlinear",
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(
            self,
            ForecasterKind::Linear | ForecasterKind::Dlinear | ForecasterKind::Nlinear
        )
    }
}

impl fmt::Display for ForecasterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ForecasterKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ForecasterKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown model kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelMode {
    /// One weight set shared by every channel.
    #[default]
    Independent,
    PerChannelWeights,
}

impl FromStr for ChannelMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "independent" => Ok(ChannelMode::Independent),
            "per-channel-weights" | "per-channel" => Ok(ChannelMode::PerChannelWeights),
            other => Err(Error::Config(format!("unknown channel mode {other:?}"))),
        }
    }
}

impl fmt::Display for ChannelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelMode::Independent => "independent",
            ChannelMode::PerChannelWeights => "per-channel-weights",
        })
    }
}

pub const DEFAULT_KERNEL: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecasterSpec {
    pub kind: ForecasterKind,
    pub history: usize,
    pub horizon: usize,
    pub channel_mode: ChannelMode,
    /// Moving-average kernel, DLinear only.
    pub kernel: usize,
    /// Season length, seasonal naive only.
    pub season: usize,
    /// Ridge penalty for the closed-form fit.
    pub ridge: f64,
}

impl ForecasterSpec {
    pub fn new(kind: ForecasterKind, history: usize, horizon: usize) -> Self {
        Self {
            kind,
            history,
            horizon,
            channel_mode: ChannelMode::Independent,
            kernel: DEFAULT_KERNEL,
            season: 1,
            ridge: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.history == 0 || self.horizon == 0 {
            return Err(Error::Spec(format!(
                "history ({}) and horizon ({}) must be positive",
                self.history, self.horizon
            )));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::Spec(format!("kernel must be odd and positive, got {}", self.kernel)));
        }
        if self.season == 0 {
            return Err(Error::Spec("season must be positive".into()));
        }
        if self.kind == ForecasterKind::SeasonalNaive && self.season > self.history {
            return Err(Error::Spec(format!(
                "season {} exceeds history length {}",
                self.season, self.history
            )));
        }
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return Err(Error::Spec(format!("ridge must be non-negative, got {}", self.ridge)));
        }
        Ok(())
    }
}

/// A ready-to-use forecaster.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    NaiveLast { horizon: usize },
    SeasonalNaive { horizon: usize, season: usize },
    HistoricalAverage { horizon: usize },
    Linear(LinearModel),
}

impl Model {
    /// Builds an untrained model. Linear weights start at zero for `n_channels`.
    pub fn from_spec(spec: &ForecasterSpec, n_channels: usize) -> Result<Model> {
        spec.validate()?;
        Ok(match spec.kind {
            ForecasterKind::NaiveLast => Model::NaiveLast {
                horizon: spec.horizon,
            },
            ForecasterKind::SeasonalNaive => Model::SeasonalNaive {
                horizon: spec.horizon,
                season: spec.season,
            },
            ForecasterKind::HistoricalAverage => Model::HistoricalAverage {
                horizon: spec.horizon,
            },
            ForecasterKind::Linear | ForecasterKind::Dlinear | ForecasterKind::Nlinear => {
                Model::Linear(LinearModel::zeros(spec, n_channels)?)
            }
        })
    }

    pub fn horizon(&self) -> usize {
        match self {
            Model::NaiveLast { horizon }
            | Model::SeasonalNaive { horizon, .. }
            | Model::HistoricalAverage { horizon } => *horizon,
            Model::Linear(m) => m.horizon,
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            Model::Linear(m) => m.parameter_count(),
            _ => 0,
        }
    }

    /// Forecasts from a normalized history block. Columns beyond the
    /// model's channel count are ignored; `mask` is only consulted by the
    /// historical average.
    pub fn predict(&self, history: ArrayView2<'_, f64>, mask: Option<ArrayView2<'_, bool>>) -> Result<Array2<f64>> {
        match self {
            Model::NaiveLast { horizon } => predict_naive_last(history, *horizon),
            Model::SeasonalNaive { horizon, season } => predict_seasonal_naive(history, *season, *horizon),
            Model::HistoricalAverage { horizon } => predict_historical_average(history, mask, *horizon),
            Model::Linear(m) => m.predict(history),
        }
    }
}
