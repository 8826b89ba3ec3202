//! Masked error metrics, M4-style metrics and the cross-study gap statistic.
//!
//! Every masked metric aggregates only over entries whose mask flag is set.
//! MAPE additionally skips entries with zero ground truth. Ratios (MAPE, WAPE)
//! are fractions here; percentage rendering happens in the report layer.

use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::ZScoreScaler;

fn check_lengths(truth: &[f64], pred: &[f64], mask: Option<&[bool]>) -> Result<()> {
    if truth.len() != pred.len() || mask.is_some_and(|m| m.len() != truth.len()) {
        return Err(Error::Shape(format!(
            "truth has {} entries, pred {}, mask {:?}",
            truth.len(),
            pred.len(),
            mask.map(<[bool]>::len)
        )));
    }
    Ok(())
}

fn masked_accumulate(truth: &[f64], pred: &[f64], mask: &[bool]) -> Result<MetricAccumulator> {
    check_lengths(truth, pred, Some(mask))?;
    let mut acc = MetricAccumulator::default();
    for ((&y, &p), &m) in truth.iter().zip(pred).zip(mask) {
        if m {
            acc.push(y, p);
        }
    }
    Ok(acc)
}

pub fn masked_mae(truth: &[f64], pred: &[f64], mask: &[bool]) -> Result<f64> {
    masked_accumulate(truth, pred, mask)?.mae()
}

pub fn masked_mse(truth: &[f64], pred: &[f64], mask: &[bool]) -> Result<f64> {
    masked_accumulate(truth, pred, mask)?.mse()
}

pub fn masked_rmse(truth: &[f64], pred: &[f64], mask: &[bool]) -> Result<f64> {
    masked_accumulate(truth, pred, mask)?.rmse()
}

pub fn masked_mape(truth: &[f64], pred: &[f64], mask: &[bool]) -> Result<f64> {
    masked_accumulate(truth, pred, mask)?.mape()
}

pub fn masked_wape(truth: &[f64], pred: &[f64], mask: &[bool]) -> Result<f64> {
    masked_accumulate(truth, pred, mask)?.wape()
}

/// Running sums for the masked metrics, so large evaluations never have to
/// materialize every prediction block at once.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricAccumulator {
    pub count: usize,
    pub abs_err: f64,
    pub sq_err: f64,
    pub abs_truth: f64,
    pub ape: f64,
    pub ape_count: usize,
}

impl MetricAccumulator {
    #[inline]
    pub fn push(&mut self, truth: f64, pred: f64) {
        let e = (truth - pred).abs();
        self.count += 1;
        self.abs_err += e;
        self.sq_err += e * e;
        self.abs_truth += truth.abs();
        if truth != 0.0 {
            self.ape += e / truth.abs();
            self.ape_count += 1;
        }
    }

    pub fn merge(&mut self, other: &MetricAccumulator) {
        self.count += other.count;
        self.abs_err += other.abs_err;
        self.sq_err += other.sq_err;
        self.abs_truth += other.abs_truth;
        self.ape += other.ape;
        self.ape_count += other.ape_count;
    }

    /// Inverts the scaler on both normalized blocks, then accumulates observed entries.
    pub fn push_renormalized(
        &mut self,
        scaler: &ZScoreScaler,
        truth_norm: ArrayView2<'_, f64>,
        pred_norm: ArrayView2<'_, f64>,
        mask: ArrayView2<'_, bool>,
    ) -> Result<()> {
        if truth_norm.dim() != pred_norm.dim() || truth_norm.dim() != mask.dim() {
            return Err(Error::Shape(format!(
                "truth {:?}, pred {:?}, mask {:?}",
                truth_norm.dim(),
                pred_norm.dim(),
                mask.dim()
            )));
        }
        if truth_norm.ncols() != scaler.n_channels() {
            return Err(Error::Shape(format!(
                "blocks have {} columns, scaler has {} channels",
                truth_norm.ncols(),
                scaler.n_channels()
            )));
        }
        for ((row_t, row_p), row_m) in truth_norm.rows().into_iter().zip(pred_norm.rows()).zip(mask.rows()) {
            for (c, ((&y, &p), &m)) in row_t.iter().zip(row_p).zip(row_m).enumerate() {
                if m {
                    self.push(scaler.denormalize(c, y), scaler.denormalize(c, p));
                }
            }
        }
        Ok(())
    }

    fn nonempty(&self) -> Result<f64> {
        if self.count == 0 {
            Err(Error::EmptyMask)
        } else {
            Ok(self.count as f64)
        }
    }

    pub fn mae(&self) -> Result<f64> {
        Ok(self.abs_err / self.nonempty()?)
    }

    pub fn mse(&self) -> Result<f64> {
        Ok(self.sq_err / self.nonempty()?)
    }

    pub fn rmse(&self) -> Result<f64> {
        Ok(self.mse()?.sqrt())
    }

    pub fn mape(&self) -> Result<f64> {
        if self.ape_count == 0 {
            return Err(Error::EmptyMask);
        }
        Ok(self.ape / self.ape_count as f64)
    }

    pub fn wape(&self) -> Result<f64> {
        self.nonempty()?;
        if self.abs_truth == 0.0 {
            return Err(Error::DegenerateScale("WAPE with all-zero ground truth".into()));
        }
        Ok(self.abs_err / self.abs_truth)
    }

    pub fn report(&self, metrics: &[Metric]) -> Result<MetricReport> {
        let mut report = MetricReport {
            n_evaluated: self.count,
            ..MetricReport::default()
        };
        for m in metrics {
            match m {
                Metric::Mae => report.mae = Some(self.mae()?),
                Metric::Rmse => report.rmse = Some(self.rmse()?),
                Metric::Mse => report.mse = Some(self.mse()?),
                Metric::Mape => report.mape = Some(self.mape()?),
                Metric::Wape => report.wape = Some(self.wape()?),
            }
        }
        Ok(report)
    }
}

/// Masked metrics that can be computed from a [`MetricAccumulator`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Mae,
    Rmse,
    Mse,
    Mape,
    Wape,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Mae, Metric::Rmse, Metric::Mse, Metric::Mape, Metric::Wape];
    /// MAE, RMSE, MAPE, WAPE.
    pub const STANDARD: [Metric; 4] = [Metric::Mae, Metric::Rmse, Metric::Mape, Metric::Wape];

    pub fn key(&self) -> &'static str {
        match self {
            Metric::Mae => "mae",
            Metric::Rmse => "rmse",
            Metric::Mse => "mse",
            Metric::Mape => "mape",
            Metric::Wape => "wape",
        }
    }

    pub fn is_percentage(&self) -> bool {
        matches!(self, Metric::Mape | Metric::Wape)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.key().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown metric {s:?}")))
    }
}

/// Averages over every evaluated forecast step and variate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub mse: Option<f64>,
    pub mape: Option<f64>,
    pub wape: Option<f64>,
    pub smape: Option<f64>,
    pub mase: Option<f64>,
    pub owa: Option<f64>,
    pub n_evaluated: usize,
}

impl MetricReport {
    pub fn get(&self, key: &str) -> Option<f64> {
        match key {
            "mae" => self.mae,
            "rmse" => self.rmse,
            "mse" => self.mse,
            "mape" => self.mape,
            "wape" => self.wape,
            "smape" => self.smape,
            "mase" => self.mase,
            "owa" => self.owa,
            _ => None,
        }
    }

    /// Keys of the metrics present in this report, in fixed order.
    pub fn keys(&self) -> Vec<&'static str> {
        ["mae", "rmse", "mse", "mape", "wape", "smape", "mase", "owa"]
            .into_iter()
            .filter(|k| self.get(k).is_some())
            .collect()
    }
}

/// De-normalizes both blocks with `scaler` and computes the requested metrics
/// over the observed entries.
pub fn evaluate_renormalized(
    scaler: &ZScoreScaler,
    truth_norm: ArrayView2<'_, f64>,
    pred_norm: ArrayView2<'_, f64>,
    mask: ArrayView2<'_, bool>,
    metrics: &[Metric],
) -> Result<MetricReport> {
    let mut acc = MetricAccumulator::default();
    acc.push_renormalized(scaler, truth_norm, pred_norm, mask)?;
    acc.report(metrics)
}

/// Symmetric MAPE on the 0..200 scale. Terms with `|y| + |ŷ| = 0` contribute 0.
pub fn smape(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_lengths(truth, pred, None)?;
    if truth.is_empty() {
        return Err(Error::EmptyMask);
    }
    let sum: f64 = truth
        .iter()
        .zip(pred)
        .map(|(&y, &p)| {
            let denom = y.abs() + p.abs();
            if denom == 0.0 {
                0.0
            } else {
                (y - p).abs() / denom
            }
        })
        .sum();
    Ok(200.0 * sum / truth.len() as f64)
}

/// Mean absolute error scaled by the in-sample seasonal-naive MAE.
pub fn mase(truth: &[f64], pred: &[f64], insample: &[f64], season: usize) -> Result<f64> {
    check_lengths(truth, pred, None)?;
    if truth.is_empty() {
        return Err(Error::EmptyMask);
    }
    if season == 0 {
        return Err(Error::Spec("season must be positive".into()));
    }
    if insample.len() <= season {
        return Err(Error::InsufficientInsample {
            len: insample.len(),
            season,
        });
    }
    let scale = insample
        .windows(season + 1)
        .map(|w| (w[season] - w[0]).abs())
        .sum::<f64>()
        / (insample.len() - season) as f64;
    if scale == 0.0 {
        return Err(Error::DegenerateScale(
            "in-sample seasonal-naive error is zero".into(),
        ));
    }
    let mae = truth.iter().zip(pred).map(|(y, p)| (y - p).abs()).sum::<f64>() / truth.len() as f64;
    Ok(mae / scale)
}

/// Overall weighted average of sMAPE and MASE relative to a reference forecaster.
pub fn owa(smape_model: f64, mase_model: f64, smape_naive2: f64, mase_naive2: f64) -> Result<f64> {
    if smape_naive2 == 0.0 || mase_naive2 == 0.0 {
        return Err(Error::DegenerateScale("reference forecaster has zero error".into()));
    }
    Ok(0.5 * (smape_model / smape_naive2 + mase_model / mase_naive2))
}

/// Repeats the last observed season of `insample` over `horizon` steps.
pub fn seasonal_naive_forecast(insample: &[f64], season: usize, horizon: usize) -> Result<Vec<f64>> {
    if season == 0 || insample.len() < season {
        return Err(Error::InsufficientInsample {
            len: insample.len(),
            season,
        });
    }
    let last = &insample[insample.len() - season..];
    Ok((0..horizon).map(|h| last[h % season]).collect())
}

/// sMAPE, MASE and OWA of `pred`, using plain seasonal naive (no
/// deseasonalization) as the OWA reference.
pub fn m4_report(truth: &[f64], pred: &[f64], insample: &[f64], season: usize) -> Result<MetricReport> {
    let reference = seasonal_naive_forecast(insample, season, truth.len())?;
    let s = smape(truth, pred)?;
    let m = mase(truth, pred, insample, season)?;
    let s_ref = smape(truth, &reference)?;
    let m_ref = mase(truth, &reference, insample, season)?;
    Ok(MetricReport {
        smape: Some(s),
        mase: Some(m),
        owa: Some(owa(s, m, s_ref, m_ref)?),
        n_evaluated: truth.len(),
        ..MetricReport::default()
    })
}

/// Relative gap `(reported - reproduced) / reported * 100`, in percent.
pub fn gap(reported: f64, reproduced: f64) -> Result<f64> {
    if reported == 0.0 || !reported.is_finite() {
        return Err(Error::DegenerateScale(format!("reported value {reported}")));
    }
    Ok((reported - reproduced) / reported * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    const FULL: [bool; 4] = [true; 4];
    const Y: [f64; 4] = [1.0, 2.0, 3.0, 4.0];
    const P: [f64; 4] = [1.0, 2.0, 3.0, 0.0];

    #[test]
    fn mae_examples() {
        assert_eq!(masked_mae(&Y, &P, &FULL).unwrap(), 1.0);
        assert_eq!(masked_mae(&Y, &Y, &FULL).unwrap(), 0.0);
        assert_eq!(masked_mae(&[0.0, 2.0], &[5.0, 3.0], &[false, true]).unwrap(), 1.0);
    }

    #[test]
    fn rmse_and_mse_examples() {
        assert_eq!(masked_rmse(&Y, &P, &FULL).unwrap(), 2.0);
        assert_eq!(masked_rmse(&Y, &Y, &FULL).unwrap(), 0.0);
        assert_eq!(masked_rmse(&[3.0], &[1.0], &[true]).unwrap(), 2.0);
        assert_eq!(masked_mse(&Y, &P, &FULL).unwrap(), 4.0);
        assert_eq!(masked_mse(&Y, &Y, &FULL).unwrap(), 0.0);
        assert_eq!(masked_mse(&[3.0], &[1.0], &[true]).unwrap(), 4.0);
    }

    #[test]
    fn mape_examples() {
        assert_relative_eq!(masked_mape(&[100.0], &[90.0], &[true]).unwrap(), 0.10);
        assert_eq!(masked_mape(&Y, &P, &FULL).unwrap(), 0.25);
        assert_eq!(masked_mape(&[0.0, 2.0], &[9.0, 2.0], &[true, true]).unwrap(), 0.0);
        assert!(matches!(
            masked_mape(&[0.0], &[1.0], &[true]),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn wape_examples() {
        assert_eq!(masked_wape(&Y, &P, &FULL).unwrap(), 0.4);
        assert_eq!(masked_wape(&Y, &Y, &FULL).unwrap(), 0.0);
        assert_eq!(masked_wape(&[-2.0, 2.0], &[0.0, 0.0], &[true, true]).unwrap(), 1.0);
    }

    #[test]
    fn empty_mask_and_shape_errors() {
        assert!(matches!(masked_mae(&Y, &P, &[false; 4]), Err(Error::EmptyMask)));
        assert!(matches!(masked_rmse(&[], &[], &[]), Err(Error::EmptyMask)));
        assert!(matches!(masked_wape(&Y, &P[..3], &FULL), Err(Error::Shape(_))));
    }

    #[test]
    fn smape_examples() {
        assert_eq!(smape(&[100.0], &[100.0]).unwrap(), 0.0);
        assert_eq!(smape(&[100.0], &[0.0]).unwrap(), 200.0);
        // Hand evaluation of the formula: 200 * (1/3 + 1/5) / 2.
        let expected = 200.0 * (1.0 / 3.0 + 1.0 / 5.0) / 2.0;
        assert_relative_eq!(smape(&[2.0, 2.0], &[1.0, 3.0]).unwrap(), expected, max_relative = 1e-15);
        assert_relative_eq!(expected, 53.333_333_333_333_336, max_relative = 1e-15);
        assert_eq!(smape(&[0.0], &[0.0]).unwrap(), 0.0);
    }

    fn mase_oracle(truth: &[f64], pred: &[f64], insample: &[f64], m: usize) -> f64 {
        let mut num = 0.0;
        for i in 0..truth.len() {
            num += (truth[i] - pred[i]).abs();
        }
        num /= truth.len() as f64;
        let mut den = 0.0;
        for t in m..insample.len() {
            den += (insample[t] - insample[t - m]).abs();
        }
        den /= (insample.len() - m) as f64;
        num / den
    }

    #[test]
    fn mase_seasonal_naive_continuation() {
        // Period-4 pattern with a constant level step per cycle: every seasonal
        // difference has magnitude 1, in-sample and out-of-sample alike.
        let pattern = [3.0, -1.0, 4.0, 0.5];
        let series: Vec<f64> = (0..12).map(|t| pattern[t % 4] + (t / 4) as f64).collect();
        let (insample, truth) = series.split_at(8);
        let pred = seasonal_naive_forecast(insample, 4, 4).unwrap();
        let got = mase(truth, &pred, insample, 4).unwrap();
        assert_relative_eq!(got, mase_oracle(truth, &pred, insample, 4), max_relative = 1e-15);
        assert_relative_eq!(got, 1.0, max_relative = 1e-15);
    }

    #[test]
    fn mase_edge_cases() {
        assert_eq!(mase(&[1.0, 2.0], &[1.0, 2.0], &[1.0, 3.0, 2.0], 1).unwrap(), 0.0);
        assert!(matches!(
            mase(&[1.0], &[1.0], &[1.0, 1.0, 1.0], 1),
            Err(Error::DegenerateScale(_))
        ));
        assert!(matches!(
            mase(&[1.0], &[1.0], &[1.0, 2.0], 2),
            Err(Error::InsufficientInsample { .. })
        ));
    }

    #[test]
    fn owa_examples() {
        assert_eq!(owa(10.0, 2.0, 10.0, 2.0).unwrap(), 1.0);
        assert_eq!(owa(5.0, 1.0, 10.0, 2.0).unwrap(), 0.5);
        assert_eq!(owa(10.0, 2.0, 20.0, 2.0).unwrap(), 0.75);
        assert!(owa(1.0, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn m4_report_self_reference() {
        let insample = [1.0, 5.0, 2.0, 6.0, 1.5, 5.5];
        let truth = [2.0, 6.5, 1.0];
        let naive = seasonal_naive_forecast(&insample, 2, 3).unwrap();
        assert_eq!(naive, vec![1.5, 5.5, 1.5]);
        let r = m4_report(&truth, &naive, &insample, 2).unwrap();
        assert_eq!(r.owa, Some(1.0));
    }

    #[test]
    fn gap_examples() {
        assert_relative_eq!(gap(28.15, 18.80).unwrap(), 33.214_920_071_047_95, max_relative = 1e-12);
        assert_relative_eq!(gap(24.70, 19.66).unwrap(), 20.404_858_299_595_14, max_relative = 1e-12);
        assert_eq!(gap(3.0, 3.0).unwrap(), 0.0);
        assert!(matches!(gap(0.0, 1.0), Err(Error::DegenerateScale(_))));
    }

    #[test]
    fn renormalized_identity_scaler_matches_raw() {
        let truth = array![[1.0, 2.0], [3.0, 4.0]];
        let pred = array![[1.0, 2.0], [3.0, 0.0]];
        let mask = ndarray::Array2::from_elem((2, 2), true);
        let r = evaluate_renormalized(
            &ZScoreScaler::identity(2),
            truth.view(),
            pred.view(),
            mask.view(),
            &Metric::ALL,
        )
        .unwrap();
        assert_eq!(r.mae, Some(1.0));
        assert_eq!(r.rmse, Some(2.0));
        assert_eq!(r.mape, Some(0.25));
        assert_eq!(r.wape, Some(0.4));
        assert_eq!(r.n_evaluated, 4);
        assert_eq!(r.smape, None);
    }

    #[test]
    fn renormalized_perfect_prediction() {
        let scaler = ZScoreScaler {
            mean: vec![10.0, -3.0],
            std: vec![2.0, 0.5],
            epsilon: 1e-8,
        };
        let truth = array![[0.3, -1.0], [1.2, 0.4]];
        let mask = ndarray::Array2::from_elem((2, 2), true);
        let r = evaluate_renormalized(&scaler, truth.view(), truth.view(), mask.view(), &Metric::STANDARD)
            .unwrap();
        assert_eq!((r.mae, r.rmse, r.mape, r.wape), (Some(0.0), Some(0.0), Some(0.0), Some(0.0)));
    }

    #[test]
    fn report_json_keys() {
        let r = MetricReport {
            mae: Some(1.5),
            n_evaluated: 3,
            ..Default::default()
        };
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        for k in ["mae", "rmse", "mse", "mape", "wape", "smape", "mase", "owa", "n_evaluated"] {
            assert!(keys.contains(&k.to_string()), "{k}");
        }
        assert_eq!(r.keys(), vec!["mae"]);
    }
}
