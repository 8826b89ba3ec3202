//! Dataset heterogeneity diagnostics.
//!
//! Spatial side: for every anchor `t` and every ordered channel pair `(i, j)`
//! the cosine similarity of the two history windows and of the two future
//! windows is compared with the thresholds `e_u` and `e_l`. A pair is
//! "similar in the past" when the history similarity exceeds `e_u`, and
//! "indistinguishable" when in addition the future similarity falls below
//! `e_l`. `r1` normalizes the indistinguishable count by all pairs, `r2` by
//! the similar-past pairs. Counts are accumulated per anchor block and never
//! materialize the `T x N x N` similarity tensors.
//!
//! Temporal side: lag autocorrelation at candidate periods and an energy
//! distance between train-range and test-range window summaries.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{chronological_split, SplitRatios, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::preprocess::{fit_scaler_on, make_windows, DEFAULT_EPSILON};

/// Cosine similarity, or 0 when either window has zero norm.
pub fn pair_similarity(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "windows have lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(cosine_with_norms(x, y, norm(x), norm(y)))
}

#[inline]
fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[inline]
fn cosine_with_norms(x: &[f64], y: &[f64], nx: f64, ny: f64) -> f64 {
    if nx == 0.0 || ny == 0.0 {
        return 0.0;
    }
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (dot / (nx * ny)).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndistinguishabilityParams {
    pub history: usize,
    pub horizon: usize,
    pub e_u: f64,
    pub e_l: f64,
    pub stride: usize,
}

impl Default for IndistinguishabilityParams {
    fn default() -> Self {
        Self {
            history: 12,
            horizon: 12,
            e_u: 0.9,
            e_l: 0.5,
            stride: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PairCounts {
    pub total_pairs: u64,
    pub similar_past: u64,
    pub indistinguishable: u64,
}

impl std::ops::Add for PairCounts {
    type Output = PairCounts;
    fn add(self, o: PairCounts) -> PairCounts {
        PairCounts {
            total_pairs: self.total_pairs + o.total_pairs,
            similar_past: self.similar_past + o.similar_past,
            indistinguishable: self.indistinguishable + o.indistinguishable,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndistinguishabilityCounts {
    pub total_pairs: u64,
    pub similar_past: u64,
    pub indistinguishable: u64,
    pub valid_steps: u64,
    pub params: IndistinguishabilityParams,
}

const ANCHOR_BLOCK: usize = 64;

/// Counts similar-past and indistinguishable ordered channel pairs (diagonal
/// included) over every anchor `T_p, T_p + stride, ..., T - T_f`. Masked cells
/// enter as their stored value, 0.
pub fn indistinguishability_counts(
    ds: &TimeSeriesDataset,
    params: IndistinguishabilityParams,
) -> Result<IndistinguishabilityCounts> {
    if !(params.e_l < params.e_u) {
        return Err(Error::Config(format!(
            "lower threshold e_l={} must be below e_u={}",
            params.e_l, params.e_u
        )));
    }
    let steps = ds.n_steps();
    let n = ds.n_channels();
    let anchors = make_windows(0..steps, params.history, params.horizon, params.stride)?;

    // Channel-major copy so every window is a contiguous slice.
    let series: Vec<f64> = (0..n).flat_map(|c| ds.channel(c).to_vec()).collect();
    let window = |c: usize, r: Range<usize>| &series[c * steps + r.start..c * steps + r.end];

    let counts = anchors
        .par_chunks(ANCHOR_BLOCK)
        .map(|block| {
            let mut acc = PairCounts::default();
            let mut past_norms = vec![0.0; n];
            let mut future_norms = vec![0.0; n];
            for &t in block {
                let past = t - params.history..t;
                let future = t..t + params.horizon;
                for c in 0..n {
                    past_norms[c] = norm(window(c, past.clone()));
                    future_norms[c] = norm(window(c, future.clone()));
                }
                for i in 0..n {
                    let pi = window(i, past.clone());
                    let fi = window(i, future.clone());
                    for j in i..n {
                        let weight = if i == j { 1 } else { 2 };
                        let sim_past =
                            cosine_with_norms(pi, window(j, past.clone()), past_norms[i], past_norms[j]);
                        if sim_past > params.e_u {
                            acc.similar_past += weight;
                            let sim_future = cosine_with_norms(
                                fi,
                                window(j, future.clone()),
                                future_norms[i],
                                future_norms[j],
                            );
                            if sim_future < params.e_l {
                                acc.indistinguishable += weight;
                            }
                        }
                    }
                }
                acc.total_pairs += (n * n) as u64;
            }
            acc
        })
        .reduce(PairCounts::default, |a, b| a + b);

    Ok(IndistinguishabilityCounts {
        total_pairs: counts.total_pairs,
        similar_past: counts.similar_past,
        indistinguishable: counts.indistinguishable,
        valid_steps: anchors.len() as u64,
        params,
    })
}

/// `(indistinguishable / total_pairs, indistinguishable / similar_past)`, with
/// each ratio 0 when its denominator is 0.
pub fn r1_r2(counts: &IndistinguishabilityCounts) -> (f64, f64) {
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    (
        ratio(counts.indistinguishable, counts.total_pairs),
        ratio(counts.indistinguishable, counts.similar_past),
    )
}

/// Autocorrelation of one channel at `lag`, over observed entries. Returns 0
/// for a constant channel.
fn autocorrelation(values: &[f64], observed: &[bool], lag: usize) -> f64 {
    let n = observed.iter().filter(|&&o| o).count();
    if n == 0 || lag >= values.len() {
        return 0.0;
    }
    let mean = values
        .iter()
        .zip(observed)
        .filter(|(_, &o)| o)
        .map(|(v, _)| v)
        .sum::<f64>()
        / n as f64;
    let denom: f64 = values
        .iter()
        .zip(observed)
        .filter(|(_, &o)| o)
        .map(|(v, _)| (v - mean) * (v - mean))
        .sum();
    if denom <= f64::EPSILON * mean.abs().max(1.0) * n as f64 {
        return 0.0;
    }
    let num: f64 = (0..values.len() - lag)
        .filter(|&t| observed[t] && observed[t + lag])
        .map(|t| (values[t] - mean) * (values[t + lag] - mean))
        .sum();
    num / denom
}

/// Channel-mean of the best autocorrelation among `candidates`, and the
/// period most channels pick (ties go to the shorter period).
pub fn periodicity_strength(ds: &TimeSeriesDataset, candidates: &[usize]) -> Result<(f64, usize)> {
    let max_period = candidates
        .iter()
        .copied()
        .max()
        .ok_or_else(|| Error::Config("no candidate periods".into()))?;
    if candidates.contains(&0) {
        return Err(Error::Config("candidate periods must be positive".into()));
    }
    if ds.n_steps() <= 2 * max_period {
        return Err(Error::InsufficientData(format!(
            "T={} must exceed twice the longest candidate period {max_period}",
            ds.n_steps()
        )));
    }
    let mut votes = vec![0usize; candidates.len()];
    let per_channel: Vec<(f64, Option<usize>)> = (0..ds.n_channels())
        .into_par_iter()
        .map(|c| {
            let values = ds.channel(c).to_vec();
            let observed = ds.mask().flags().column(c).to_vec();
            let acfs: Vec<f64> = candidates
                .iter()
                .map(|&p| autocorrelation(&values, &observed, p))
                .collect();
            if acfs.iter().all(|&a| a == 0.0) {
                return (0.0, None);
            }
            let (best, acf) = acfs
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
            (acf, Some(best))
        })
        .collect();
    for (_, best) in &per_channel {
        if let Some(b) = best {
            votes[*b] += 1;
        }
    }
    let strength = per_channel.iter().map(|(a, _)| a).sum::<f64>() / per_channel.len() as f64;
    let dominant = (0..candidates.len())
        .max_by(|&a, &b| {
            votes[a]
                .cmp(&votes[b])
                .then(candidates[b].cmp(&candidates[a]))
        })
        .map(|i| candidates[i])
        .unwrap_or(candidates[0]);
    Ok((strength, dominant))
}

/// Per-window (channel means, channel stds) over observed entries of the
/// normalized matrix, for non-overlapping windows inside `range`.
fn window_summaries(
    normalized: &ndarray::Array2<f64>,
    mask: &ndarray::Array2<bool>,
    range: Range<usize>,
    window: usize,
) -> Vec<Vec<f64>> {
    let n = normalized.ncols();
    (range.start..range.end)
        .step_by(window)
        .filter(|s| s + window <= range.end)
        .map(|s| {
            let mut summary = vec![0.0; 2 * n];
            for c in 0..n {
                let vals: Vec<f64> = (s..s + window)
                    .filter(|&t| mask[[t, c]])
                    .map(|t| normalized[[t, c]])
                    .collect();
                if vals.is_empty() {
                    continue;
                }
                let m = vals.iter().sum::<f64>() / vals.len() as f64;
                let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64;
                summary[c] = m;
                summary[n + c] = var.sqrt();
            }
            summary
        })
        .collect()
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn mean_pairwise(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let sum: f64 = a
        .par_iter()
        .map(|x| b.iter().map(|y| euclidean(x, y)).sum::<f64>())
        .collect::<Vec<_>>()
        .iter()
        .sum();
    sum / (a.len() * b.len()) as f64
}

/// V-statistic energy distance between two sets of summary vectors.
pub fn energy_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let d = 2.0 * mean_pairwise(a, b) - mean_pairwise(a, a) - mean_pairwise(b, b);
    d.max(0.0)
}

struct DriftInputs {
    train: Vec<Vec<f64>>,
    test: Vec<Vec<f64>>,
}

fn drift_inputs(
    ds: &TimeSeriesDataset,
    train: Range<usize>,
    test: Range<usize>,
    window: usize,
) -> Result<DriftInputs> {
    if window == 0 || train.len() < window || test.len() < window {
        return Err(Error::InsufficientData(format!(
            "window {window} does not fit train range of {} and test range of {} steps",
            train.len(),
            test.len()
        )));
    }
    let scaler = fit_scaler_on(ds, train.clone(), DEFAULT_EPSILON);
    let normalized = scaler.normalize_dataset(ds)?;
    let mask = ds.mask().flags();
    Ok(DriftInputs {
        train: window_summaries(&normalized, mask, train, window),
        test: window_summaries(&normalized, mask, test, window),
    })
}

/// Energy distance between train-range and test-range window summaries
/// (per-window channel mean and std of train-normalized values).
pub fn drift_score(
    ds: &TimeSeriesDataset,
    train: Range<usize>,
    test: Range<usize>,
    window: usize,
) -> Result<f64> {
    let inputs = drift_inputs(ds, train, test, window)?;
    Ok(energy_distance(&inputs.train, &inputs.test))
}

const BOOTSTRAP_REPS: usize = 20;

/// Mean energy distance between two bootstrap resamples of the train
/// summaries, sized like the train and test summary sets.
fn bootstrap_baseline(inputs: &DriftInputs, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = inputs.train.len();
    let total: f64 = (0..BOOTSTRAP_REPS)
        .map(|_| {
            let a: Vec<Vec<f64>> = (0..k).map(|_| inputs.train[rng.random_range(0..k)].clone()).collect();
            let b: Vec<Vec<f64>> = (0..inputs.test.len())
                .map(|_| inputs.train[rng.random_range(0..k)].clone())
                .collect();
            energy_distance(&a, &b)
        })
        .sum();
    total / BOOTSTRAP_REPS as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpatialLabel {
    Significant,
    NotSignificant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemporalLabel {
    ClearStable,
    DistributionDrift,
    Unclear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyThresholds {
    pub r1: f64,
    pub r2: f64,
    pub strength: f64,
    /// Absolute drift-score threshold.
    pub drift: f64,
}

impl Default for ClassifyThresholds {
    fn default() -> Self {
        Self {
            r1: 0.01,
            r2: 0.2,
            strength: 0.5,
            drift: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileInputs {
    pub r1: f64,
    pub r2: f64,
    pub periodicity_strength: f64,
    pub drift_score: f64,
}

pub fn classify(inputs: &ProfileInputs, th: &ClassifyThresholds) -> (SpatialLabel, TemporalLabel) {
    let spatial = if inputs.r1 >= th.r1 || inputs.r2 >= th.r2 {
        SpatialLabel::Significant
    } else {
        SpatialLabel::NotSignificant
    };
    let temporal = if inputs.drift_score > th.drift {
        TemporalLabel::DistributionDrift
    } else if inputs.periodicity_strength >= th.strength {
        TemporalLabel::ClearStable
    } else {
        TemporalLabel::Unclear
    };
    (spatial, temporal)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileConfig {
    pub pairs: IndistinguishabilityParams,
    /// Empty means daily and weekly periods derived from the sampling frequency.
    pub candidate_periods: Vec<usize>,
    /// 0 means one day of steps (at least 2).
    pub drift_window: usize,
    pub split: Option<SplitRatios>,
    pub r1_threshold: f64,
    pub r2_threshold: f64,
    pub strength_threshold: f64,
    /// Drift threshold as a multiple of the train-vs-train bootstrap score.
    pub drift_multiplier: f64,
    pub seed: u64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            pairs: IndistinguishabilityParams::default(),
            candidate_periods: Vec::new(),
            drift_window: 0,
            split: None,
            r1_threshold: 0.01,
            r2_threshold: 0.2,
            strength_threshold: 0.5,
            drift_multiplier: 3.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityProfile {
    pub dataset: String,
    pub n_steps: usize,
    pub n_channels: usize,
    pub counts: IndistinguishabilityCounts,
    pub r1: f64,
    pub r2: f64,
    pub periodicity_strength: f64,
    pub dominant_period: usize,
    pub candidate_periods: Vec<usize>,
    pub drift_score: f64,
    pub drift_window: usize,
    pub drift_baseline: f64,
    pub thresholds: ClassifyThresholds,
    pub spatial_label: SpatialLabel,
    pub temporal_label: TemporalLabel,
}

fn steps_per(seconds: u64, frequency: u64) -> Option<usize> {
    (seconds % frequency == 0).then(|| (seconds / frequency) as usize).filter(|&p| p >= 2)
}

/// Runs every diagnostic and labels the dataset.
pub fn profile(ds: &TimeSeriesDataset, cfg: &ProfileConfig) -> Result<HeterogeneityProfile> {
    let counts = indistinguishability_counts(ds, cfg.pairs)?;
    let (r1, r2) = r1_r2(&counts);

    let freq = ds.frequency();
    let mut candidates = cfg.candidate_periods.clone();
    if candidates.is_empty() {
        candidates = [86_400, 7 * 86_400]
            .into_iter()
            .filter_map(|s| steps_per(s, freq))
            .filter(|&p| ds.n_steps() > 2 * p)
            .collect();
    }
    let (strength, dominant) = if candidates.is_empty() {
        (0.0, 0)
    } else {
        periodicity_strength(ds, &candidates)?
    };

    let split = chronological_split(
        ds.n_steps(),
        cfg.split.unwrap_or_else(|| SplitRatios::default_for(ds.name())),
    )?;
    let window = if cfg.drift_window > 0 {
        cfg.drift_window
    } else {
        steps_per(86_400, freq).unwrap_or(2)
    };
    let inputs = drift_inputs(ds, split.train.clone(), split.test.clone(), window)?;
    let drift = energy_distance(&inputs.train, &inputs.test);
    let baseline = bootstrap_baseline(&inputs, cfg.seed);

    let thresholds = ClassifyThresholds {
        r1: cfg.r1_threshold,
        r2: cfg.r2_threshold,
        strength: cfg.strength_threshold,
        drift: cfg.drift_multiplier * baseline,
    };
    let (spatial_label, temporal_label) = classify(
        &ProfileInputs {
            r1,
            r2,
            periodicity_strength: strength,
            drift_score: drift,
        },
        &thresholds,
    );
    Ok(HeterogeneityProfile {
        dataset: ds.name().to_string(),
        n_steps: ds.n_steps(),
        n_channels: ds.n_channels(),
        counts,
        r1,
        r2,
        periodicity_strength: strength,
        dominant_period: dominant,
        candidate_periods: candidates,
        drift_score: drift,
        drift_window: window,
        drift_baseline: baseline,
        thresholds,
        spatial_label,
        temporal_label,
    })
}
