use intreg::bench::{read_reports_jsonl, write_reports_jsonl, FoldReport, REPORT_SCHEMA};
use intreg::dataset::{make_folds, Dataset};
use intreg::leaf::best_constant;
use intreg::loss::mean_hinge_loss;
use intreg::mmif::compute_weights;
use intreg::{hinge_loss, hinge_subgrad, HingeLossSpec, IntervalTarget};
use proptest::prelude::*;

fn target() -> impl Strategy<Value = IntervalTarget> {
    (-50.0..50.0f64, 0.0..10.0f64, 0..4u8).prop_map(|(a, w, kind)| {
        let (lo, hi) = match kind {
            0 => (a, a + w),
            1 => (f64::NEG_INFINITY, a),
            2 => (a, f64::INFINITY),
            _ => (a, a),
        };
        IntervalTarget::new(lo, hi).unwrap()
    })
}

fn spec() -> impl Strategy<Value = HingeLossSpec> {
    (1..=2u8, 0.0..2.0f64).prop_map(|(p, eps)| HingeLossSpec::new(p, eps).unwrap())
}

proptest! {
    #[test]
    fn hinge_is_nonnegative_and_zero_inside_the_margin(t in target(), s in spec(), y in -100.0..100.0f64) {
        prop_assert!(hinge_loss(y, &t, &s) >= 0.0);
        let (lo, hi) = (t.lower() + s.epsilon(), t.upper() - s.epsilon());
        if lo <= y && y <= hi {
            prop_assert_eq!(hinge_loss(y, &t, &s), 0.0);
        }
    }

    #[test]
    fn hinge_is_continuous(t in target(), s in spec(), y in -100.0..100.0f64) {
        let d = 1e-7;
        let jump = (hinge_loss(y + d, &t, &s) - hinge_loss(y, &t, &s)).abs();
        // residuals stay below 170 here, so the slope is below 2 * 2 * 170
        prop_assert!(jump <= d * 680.0 * (1.0 + 1e-9));
    }

    #[test]
    fn subgradient_matches_one_sided_slopes(t in target(), s in spec(), y in -100.0..100.0f64) {
        let eps = s.epsilon();
        prop_assume!([t.lower() + eps, t.upper() - eps].iter().all(|k| (y - k).abs() > 1e-3));
        let h = 1e-6;
        let fd = (hinge_loss(y + h, &t, &s) - hinge_loss(y - h, &t, &s)) / (2.0 * h);
        let g = hinge_subgrad(y, &t, &s);
        prop_assert!((fd - g).abs() <= 1e-5 * g.abs().max(1.0), "fd {} vs {}", fd, g);
    }

    #[test]
    fn best_constant_beats_every_bound(ts in prop::collection::vec(target(), 1..30), s in spec()) {
        let c = best_constant(&ts, &s).unwrap();
        let at = |v: f64| mean_hinge_loss(&vec![v; ts.len()], &ts, &s).unwrap();
        let best = at(c);
        for t in &ts {
            for b in [t.lower(), t.upper()] {
                if b.is_finite() {
                    prop_assert!(best <= at(b) + 1e-9 * at(b).max(1.0));
                }
            }
        }
    }

    #[test]
    fn folds_partition_rows_evenly(n in 5usize..300, k in 2usize..6, seed in any::<u64>()) {
        let folds = make_folds(n, k, seed).unwrap();
        let mut sizes = vec![0; k];
        for &f in folds.fold_of() {
            sizes[f] += 1;
        }
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for f in 0..k {
            let mut all = folds.train_rows(f);
            all.extend(folds.test_rows(f));
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn weights_sum_to_one_and_favor_small_errors(errors in prop::collection::vec(0.0..1e3f64, 1..100)) {
        let w = compute_weights(&errors);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for i in 0..errors.len() {
            for j in 0..errors.len() {
                if errors[i].max(1e-12) < errors[j].max(1e-12) {
                    prop_assert!(w[i] >= w[j]);
                }
            }
        }
    }

    #[test]
    fn csv_roundtrip_keeps_rows_and_targets(
        rows in prop::collection::vec(prop::collection::vec(-1e6..1e6f64, 3), 1..20),
        ts in prop::collection::vec(target(), 20),
    ) {
        let targets = ts[..rows.len()].to_vec();
        let data = Dataset::from_rows("roundtrip", &rows, targets).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        data.save_csv(&path).unwrap();
        let back = Dataset::load_csv(&path).unwrap();
        prop_assert_eq!(back.n_rows(), data.n_rows());
        prop_assert_eq!(back.feature_names(), data.feature_names());
        for i in 0..data.n_rows() {
            prop_assert_eq!(back.row(i), data.row(i));
            prop_assert_eq!(back.target(i), data.target(i));
        }
    }

    #[test]
    fn report_errors_survive_jsonl_exactly(errors in prop::collection::vec(any::<f64>(), 1..50)) {
        let reports: Vec<FoldReport> = errors
            .iter()
            .enumerate()
            .map(|(i, &e)| FoldReport {
                schema: REPORT_SCHEMA,
                dataset: "d".into(),
                model: "m".into(),
                fold: i,
                test_error: e.is_finite().then_some(e),
                train_seconds: None,
                selected_hyperparams: Default::default(),
                error: None,
            })
            .collect();
        let mut buf = Vec::new();
        write_reports_jsonl(&reports, &mut buf).unwrap();
        let back = read_reports_jsonl(buf.as_slice()).unwrap();
        prop_assert_eq!(back, reports);
    }
}
