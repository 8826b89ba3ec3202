use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Centered moving average with the series edges replicated `(kernel - 1) / 2`
/// times on both sides.
pub fn moving_average(series: &[f64], kernel: usize) -> Result<Vec<f64>> {
    if kernel == 0 || kernel % 2 == 0 {
        return Err(Error::Spec(format!("kernel must be odd and positive, got {kernel}")));
    }
    if series.is_empty() {
        return Ok(Vec::new());
    }
    let half = kernel / 2;
    let last = series.len() - 1;
    let at = |i: isize| series[i.clamp(0, last as isize) as usize];
    Ok((0..series.len() as isize)
        .map(|i| (i - half as isize..=i + half as isize).map(at).sum::<f64>() / kernel as f64)
        .collect())
}

/// Splits a series into (trend, remainder) with `trend + remainder == series`.
pub fn dlinear_decompose(series: &[f64], kernel: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let trend = moving_average(series, kernel)?;
    let remainder = series.iter().zip(&trend).map(|(x, t)| x - t).collect();
    Ok((trend, remainder))
}

/// Column-wise [`dlinear_decompose`] of a `T_p x N` block.
pub fn dlinear_decompose_block(
    history: ArrayView2<'_, f64>,
    kernel: usize,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut trend = Array2::zeros(history.raw_dim());
    for (c, col) in history.axis_iter(Axis(1)).enumerate() {
        let t = moving_average(&col.to_vec(), kernel)?;
        trend.column_mut(c).assign(&Array1::from(t));
    }
    let remainder = &history - &trend;
    Ok((trend, remainder))
}

/// Subtracts the last history row from every row; returns the shifted block
/// and the removed offset.
pub fn nlinear_shift(history: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    let rows = history.nrows();
    if rows == 0 {
        return Err(Error::Shape("history block has no rows".into()));
    }
    let offset = history.row(rows - 1).to_owned();
    let shifted = &history - &offset.view().insert_axis(Axis(0));
    Ok((shifted, offset))
}

/// Adds the offset back to every predicted row.
pub fn nlinear_unshift(pred: ArrayView2<'_, f64>, offset: &Array1<f64>) -> Array2<f64> {
    &pred + &offset.view().insert_axis(Axis(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_kernel() {
        let x = [3.0, -1.0, 2.5];
        let (trend, rem) = dlinear_decompose(&x, 1).unwrap();
        assert_eq!(trend, x.to_vec());
        assert_eq!(rem, vec![0.0; 3]);
    }

    #[test]
    fn ramp_with_replicate_padding() {
        // Padded ramp is [1,1,2,3,4,5,5]; window means by hand.
        let trend = moving_average(&[1.0, 2.0, 3.0, 4.0, 5.0], 3).unwrap();
        let expected = [4.0 / 3.0, 2.0, 3.0, 4.0, 14.0 / 3.0];
        for (a, b) in trend.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn reconstruction() {
        let x: Vec<f64> = (0..17).map(|i| ((i * 13) % 7) as f64 * 0.3 - 1.0).collect();
        let (t, r) = dlinear_decompose(&x, 5).unwrap();
        for i in 0..x.len() {
            assert!((t[i] + r[i] - x[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(matches!(moving_average(&[1.0], 4), Err(Error::Spec(_))));
        assert!(matches!(moving_average(&[1.0], 0), Err(Error::Spec(_))));
    }

    #[test]
    fn kernel_wider_than_series() {
        let t = moving_average(&[1.0, 3.0], 7).unwrap();
        assert_eq!(t, vec![(4.0 * 1.0 + 3.0 * 3.0) / 7.0, (3.0 * 1.0 + 4.0 * 3.0) / 7.0]);
    }

    #[test]
    fn nlinear_shift_examples() {
        let c = Array2::from_elem((3, 2), 4.0);
        let (s, off) = nlinear_shift(c.view()).unwrap();
        assert_eq!(s, Array2::<f64>::zeros((3, 2)));
        assert_eq!(off, array![4.0, 4.0]);
        // Zero weights predict zeros in shifted space; unshifting yields the offset.
        assert_eq!(nlinear_unshift(Array2::zeros((2, 2)).view(), &off), Array2::from_elem((2, 2), 4.0));

        let h = array![[1.0, 5.0], [2.0, 7.0]];
        let (s, off) = nlinear_shift(h.view()).unwrap();
        assert_eq!(s, array![[-1.0, -2.0], [0.0, 0.0]]);
        // Identity map from the last shifted row is the naive-last forecast.
        let pred = nlinear_unshift(s.slice(ndarray::s![1..2, ..]), &off);
        assert_eq!(pred, array![[2.0, 7.0]]);
    }

    #[test]
    fn block_decomposition() {
        let h = array![[1.0, 10.0], [2.0, 10.0], [3.0, 10.0]];
        let (t, r) = dlinear_decompose_block(h.view(), 3).unwrap();
        assert_eq!(t.column(1).to_vec(), vec![10.0; 3]);
        assert_eq!(&t + &r, h);
    }
}
