use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

fn nonempty(history: &ArrayView2<'_, f64>) -> Result<()> {
    if history.nrows() == 0 {
        return Err(Error::Shape("history block has no rows".into()));
    }
    Ok(())
}

/// Repeats the last history row `horizon` times.
pub fn predict_naive_last(history: ArrayView2<'_, f64>, horizon: usize) -> Result<Array2<f64>> {
    predict_seasonal_naive(history, 1, horizon)
}

/// `future[t] = history[T_p - season + (t mod season)]`.
pub fn predict_seasonal_naive(
    history: ArrayView2<'_, f64>,
    season: usize,
    horizon: usize,
) -> Result<Array2<f64>> {
    nonempty(&history)?;
    let rows = history.nrows();
    if season == 0 || season > rows {
        return Err(Error::Spec(format!(
            "season {season} must be in 1..={rows} (history length)"
        )));
    }
    let base = rows - season;
    Ok(Array2::from_shape_fn((horizon, history.ncols()), |(t, c)| {
        history[[base + t % season, c]]
    }))
}

/// Column means of the observed history entries; a fully masked column predicts 0.
pub fn predict_historical_average(
    history: ArrayView2<'_, f64>,
    mask: Option<ArrayView2<'_, bool>>,
    horizon: usize,
) -> Result<Array2<f64>> {
    nonempty(&history)?;
    if let Some(m) = &mask {
        if m.nrows() != history.nrows() || m.ncols() > history.ncols() {
            return Err(Error::Shape(format!(
                "mask {:?} does not fit history {:?}",
                m.dim(),
                history.dim()
            )));
        }
    }
    let means: Vec<f64> = history
        .axis_iter(Axis(1))
        .enumerate()
        .map(|(c, col)| {
            let (sum, n) = col.iter().enumerate().fold((0.0, 0usize), |(s, n), (t, &v)| {
                let observed = mask
                    .as_ref()
                    .is_none_or(|m| c >= m.ncols() || m[[t, c]]);
                if observed {
                    (s + v, n + 1)
                } else {
                    (s, n)
                }
            });
            if n == 0 {
                0.0
            } else {
                sum / n as f64
            }
        })
        .collect();
    Ok(Array2::from_shape_fn((horizon, history.ncols()), |(_, c)| means[c]))
}
