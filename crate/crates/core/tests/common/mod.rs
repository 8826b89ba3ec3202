#![allow(dead_code)]

use mtsbench::dataset::{ObservationMask, TimeSeriesDataset};
use mtsbench::models::{LinearModel, WindowData};
use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn dataset(name: &str, values: Array2<f64>) -> TimeSeriesDataset {
    TimeSeriesDataset::from_values(name, values, 3600).unwrap()
}

pub fn masked_dataset(name: &str, values: Array2<f64>, mask: Array2<bool>) -> TimeSeriesDataset {
    TimeSeriesDataset::new(
        name,
        values,
        ObservationMask::new(mask),
        chrono::DateTime::UNIX_EPOCH.naive_utc(),
        3600,
    )
    .unwrap()
}

/// x_t = sum_k phi_k x_{t-k} + noise, per channel with its own level.
pub fn ar_series(steps: usize, channels: usize, phi: &[f64], noise: f64, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    let normal = Normal::new(0.0, noise).unwrap();
    let mut out = Array2::zeros((steps, channels));
    for c in 0..channels {
        let level = 10.0 * (c as f64 + 1.0);
        let mut x = vec![0.0; steps];
        for t in 0..steps {
            let mut v = normal.sample(&mut r);
            for (k, p) in phi.iter().enumerate() {
                if t > k {
                    v += p * x[t - k - 1];
                }
            }
            x[t] = v;
            out[[t, c]] = level + v;
        }
    }
    out
}

pub fn seasonal_series(steps: usize, channels: usize, period: usize, noise: f64, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    let normal = Normal::new(0.0, noise).unwrap();
    Array2::from_shape_fn((steps, channels), |(t, c)| {
        let phase = 2.0 * std::f64::consts::PI * (t as f64 / period as f64 + c as f64 * 0.1);
        5.0 + c as f64 + 2.0 * phase.sin() + normal.sample(&mut r)
    })
}

pub fn random_mask(r: &mut impl Rng, rows: usize, cols: usize, p_observed: f64) -> Array2<bool> {
    Array2::from_shape_fn((rows, cols), |_| r.random_bool(p_observed))
}

// ---- metric oracles: plain double loops over (row, column) ----

pub struct OracleMetrics {
    pub mae: Option<f64>,
    pub mse: Option<f64>,
    pub rmse: Option<f64>,
    pub mape: Option<f64>,
    pub wape: Option<f64>,
}

pub fn oracle_metrics(truth: &Array2<f64>, pred: &Array2<f64>, mask: &Array2<bool>) -> OracleMetrics {
    let (rows, cols) = truth.dim();
    let mut n = 0usize;
    let (mut abs, mut sq, mut tabs) = (0.0, 0.0, 0.0);
    let (mut ape, mut n_ape) = (0.0, 0usize);
    for i in 0..rows {
        for j in 0..cols {
            if !mask[[i, j]] {
                continue;
            }
            let e = truth[[i, j]] - pred[[i, j]];
            n += 1;
            abs += e.abs();
            sq += e * e;
            tabs += truth[[i, j]].abs();
            if truth[[i, j]] != 0.0 {
                ape += (e / truth[[i, j]]).abs();
                n_ape += 1;
            }
        }
    }
    let mean = |x: f64, k: usize| (k > 0).then(|| x / k as f64);
    OracleMetrics {
        mae: mean(abs, n),
        mse: mean(sq, n),
        rmse: mean(sq, n).map(f64::sqrt),
        mape: mean(ape, n_ape),
        wape: (n > 0 && tabs > 0.0).then(|| abs / tabs),
    }
}

// ---- r1/r2 oracle: naive loop over anchors and ordered pairs ----

fn cosine(x: &[f64], y: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut xx = 0.0;
    let mut yy = 0.0;
    for k in 0..x.len() {
        dot += x[k] * y[k];
    }
    for k in 0..x.len() {
        xx += x[k] * x[k];
    }
    for k in 0..y.len() {
        yy += y[k] * y[k];
    }
    let (nx, ny) = (xx.sqrt(), yy.sqrt());
    if nx == 0.0 || ny == 0.0 {
        0.0
    } else {
        (dot / (nx * ny)).clamp(-1.0, 1.0)
    }
}

/// (total, similar_past, indistinguishable)
pub fn oracle_pair_counts(
    values: &Array2<f64>,
    history: usize,
    horizon: usize,
    stride: usize,
    e_u: f64,
    e_l: f64,
) -> (u64, u64, u64) {
    let (steps, n) = values.dim();
    let col = |c: usize, a: usize, b: usize| -> Vec<f64> { (a..b).map(|t| values[[t, c]]).collect() };
    let (mut total, mut similar, mut indist) = (0, 0, 0);
    let mut t = history;
    while t + horizon <= steps {
        for i in 0..n {
            for j in 0..n {
                total += 1;
                if cosine(&col(i, t - history, t), &col(j, t - history, t)) > e_u {
                    similar += 1;
                    if cosine(&col(i, t, t + horizon), &col(j, t, t + horizon)) < e_l {
                        indist += 1;
                    }
                }
            }
        }
        t += stride;
    }
    (total, similar, indist)
}

// ---- least squares oracle: explicit design matrix + Gaussian elimination ----

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = a.len();
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| a[i][k].abs().partial_cmp(&a[j][k].abs()).unwrap())
            .unwrap();
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            for j in 0..b[i].len() {
                b[i][j] -= f * b[k][j];
            }
        }
    }
    let m = b[0].len();
    let mut x = vec![vec![0.0; m]; n];
    for i in (0..n).rev() {
        for c in 0..m {
            let mut s = b[i][c];
            for j in i + 1..n {
                s -= a[i][j] * x[j][c];
            }
            x[i][c] = s / a[i][i];
        }
    }
    x
}

/// Ridge fit of a shared vanilla linear map with bias over every window
/// fully inside `range`, built from the explicit design matrix.
/// Returns `(W, b)` with `W` of shape `history x horizon`.
pub fn oracle_linear_fit(
    normalized: &Array2<f64>,
    range: std::ops::Range<usize>,
    history: usize,
    horizon: usize,
    ridge: f64,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let d = history + 1;
    let mut hth = vec![vec![0.0; d]; d];
    let mut htf = vec![vec![0.0; horizon]; d];
    for start in range.start..=range.end - history - horizon {
        for c in 0..normalized.ncols() {
            let mut row: Vec<f64> = (0..history).map(|k| normalized[[start + k, c]]).collect();
            row.push(1.0);
            for i in 0..d {
                for j in 0..d {
                    hth[i][j] += row[i] * row[j];
                }
                for f in 0..horizon {
                    htf[i][f] += row[i] * normalized[[start + history + f, c]];
                }
            }
        }
    }
    for i in 0..history {
        hth[i][i] += ridge;
    }
    let x = gauss_solve(hth, htf);
    let b = x[history].clone();
    (x[..history].to_vec(), b)
}

// ---- finite-difference gradient of masked MAE ----

pub fn numeric_gradient(model: &LinearModel, data: &WindowData<'_>, anchors: &[usize], h: f64) -> Vec<f64> {
    let base = model.params_flat();
    let mut probe = model.clone();
    (0..base.len())
        .map(|k| {
            let mut p = base.clone();
            p[k] = base[k] + h;
            probe.set_params_flat(&p).unwrap();
            let up = probe.masked_mae_loss(data, anchors, model.horizon, false).unwrap().0;
            p[k] = base[k] - h;
            probe.set_params_flat(&p).unwrap();
            let down = probe.masked_mae_loss(data, anchors, model.horizon, false).unwrap().0;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Smallest |prediction - truth| over observed forecast cells.
pub fn min_abs_residual(model: &LinearModel, data: &WindowData<'_>, anchors: &[usize]) -> f64 {
    let mut min = f64::INFINITY;
    for &t in anchors {
        let hist = data.normalized.slice(s![t - model.history..t, ..]);
        let pred = model.predict(hist).unwrap();
        for f in 0..model.horizon {
            for c in 0..pred.ncols() {
                if data.mask[[t + f, c]] {
                    min = min.min((pred[[f, c]] - data.normalized[[t + f, c]]).abs());
                }
            }
        }
    }
    min
}

/// Strips wall-clock fields so runs can be compared byte for byte.
pub fn without_timing(mut json: serde_json::Value) -> String {
    if let Some(obj) = json.as_object_mut() {
        obj.remove("seconds_per_epoch");
        obj.remove("mean_seconds_per_epoch");
    }
    serde_json::to_string(&json).unwrap()
}
