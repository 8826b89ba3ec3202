mod common;

use common::*;
use mtsbench::dataset::{chronological_split, read_cache, write_cache, SplitRatios};
use mtsbench::heterogeneity::{indistinguishability_counts, r1_r2, IndistinguishabilityParams};
use mtsbench::metrics::{masked_mae, masked_mape, masked_rmse, masked_wape};
use mtsbench::models::{ForecasterKind, ForecasterSpec, LinearModel};
use mtsbench::preprocess::fit_scaler_on;
use ndarray::Array2;
use proptest::prelude::*;

fn matrix(rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> impl Strategy<Value = Array2<f64>> {
    (rows, cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-1e3f64..1e3, r * c).prop_map(move |v| Array2::from_shape_vec((r, c), v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scaler_round_trip(values in matrix(2..40, 1..6)) {
        let ds = dataset("p", values.clone());
        let scaler = fit_scaler_on(&ds, 0..values.nrows(), 1e-8);
        let back = scaler.inverse_transform(scaler.transform(values.view()).unwrap().view()).unwrap();
        for (a, b) in back.iter().zip(values.iter()) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn split_partitions_the_range(steps in 3usize..5000, a in 1u32..100, b in 1u32..100, c in 1u32..100) {
        let total = (a + b + c) as f64;
        let ratios = SplitRatios::new(a as f64 / total, b as f64 / total, c as f64 / total);
        if let Ok(split) = chronological_split(steps, ratios) {
            prop_assert_eq!(split.train.start, 0);
            prop_assert_eq!(split.train.end, split.val.start);
            prop_assert_eq!(split.val.end, split.test.start);
            prop_assert_eq!(split.test.end, steps);
            prop_assert!(!split.train.is_empty() && !split.val.is_empty() && !split.test.is_empty());
        }
    }

    #[test]
    fn cache_round_trip_is_bit_exact(values in matrix(1..30, 1..5), seed in any::<u64>()) {
        let mut r = rng(seed);
        let mask = random_mask(&mut r, values.nrows(), values.ncols(), 0.8);
        let ds = masked_dataset("cache-test", values, mask);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.tsb");
        write_cache(&ds, &path).unwrap();
        let back = read_cache(&path).unwrap();
        prop_assert_eq!(back.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        ds.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn metric_scale_properties(truth in prop::collection::vec(-100f64..100.0, 1..60), seed in any::<u64>(), k in 0.01f64..100.0) {
        let mut r = rng(seed);
        let pred: Vec<f64> = truth.iter().map(|t| t + rand::Rng::random_range(&mut r, -5.0..5.0)).collect();
        let mut mask: Vec<bool> = truth.iter().map(|_| rand::Rng::random_bool(&mut r, 0.7)).collect();
        mask[0] = true;
        let scale = |v: &[f64]| v.iter().map(|x| x * k).collect::<Vec<_>>();
        let (ts, ps) = (scale(&truth), scale(&pred));
        let mae = masked_mae(&truth, &pred, &mask).unwrap();
        let rmse = masked_rmse(&truth, &pred, &mask).unwrap();
        prop_assert!(rmse >= mae * (1.0 - 1e-12));
        let mae_k = masked_mae(&ts, &ps, &mask).unwrap();
        prop_assert!((mae_k - k * mae).abs() <= 1e-9 * (k * mae).max(1e-12));
        if let (Ok(a), Ok(b)) = (masked_wape(&truth, &pred, &mask), masked_wape(&ts, &ps, &mask)) {
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1e-12));
        }
        if let (Ok(a), Ok(b)) = (masked_mape(&truth, &pred, &mask), masked_mape(&ts, &ps, &mask)) {
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1e-12));
        }
    }

    #[test]
    fn r1_r2_invariant_to_channel_order_and_scale(
        values in matrix(10..40, 2..7),
        seed in any::<u64>(),
        e_u in 0.0f64..0.99,
        gap in 0.01f64..1.5,
    ) {
        let params = IndistinguishabilityParams { history: 4, horizon: 3, e_u, e_l: e_u - gap, stride: 1 };
        let base = r1_r2(&indistinguishability_counts(&dataset("a", values.clone()), params.clone()).unwrap());

        let mut r = rng(seed);
        let mut order: Vec<usize> = (0..values.ncols()).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut r);
        let permuted = Array2::from_shape_fn(values.dim(), |(t, c)| values[[t, order[c]]]);
        let p = r1_r2(&indistinguishability_counts(&dataset("b", permuted), params.clone()).unwrap());
        prop_assert_eq!(p, base);

        // Powers of two keep every product exact, so cosines are unchanged bit for bit.
        let scaled = Array2::from_shape_fn(values.dim(), |(t, c)| values[[t, c]] * 2f64.powi(c as i32 - 2));
        let s = r1_r2(&indistinguishability_counts(&dataset("c", scaled), params).unwrap());
        prop_assert_eq!(s, base);
    }

    #[test]
    fn threshold_monotonicity(values in matrix(10..40, 1..6), e_u in 0.0f64..0.9, raise in 0.0f64..0.1, e_l in -1.0f64..0.0, lower in 0.0f64..0.5) {
        let ds = dataset("m", values);
        let count = |e_u: f64, e_l: f64| {
            indistinguishability_counts(&ds, IndistinguishabilityParams { history: 3, horizon: 3, e_u, e_l, stride: 1 }).unwrap()
        };
        let a = count(e_u, e_l);
        let b = count(e_u + raise, e_l);
        prop_assert!(b.similar_past <= a.similar_past);
        let c = count(e_u, e_l - lower);
        prop_assert!(c.indistinguishable <= a.indistinguishable);
    }

    #[test]
    fn nlinear_level_shift_equivariance(history in matrix(6..7, 1..4), c in -50f64..50.0, seed in any::<u64>()) {
        let spec = ForecasterSpec::new(ForecasterKind::Nlinear, 6, 3);
        let model = LinearModel::init_uniform(&spec, history.ncols(), &mut rng(seed)).unwrap();
        let a = model.predict(history.view()).unwrap();
        let b = model.predict(history.mapv(|v| v + c).view()).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            prop_assert!((x + c - y).abs() <= 1e-9 * (1.0 + y.abs()));
        }
    }
}
