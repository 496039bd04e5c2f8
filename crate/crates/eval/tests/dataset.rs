mod oracle;

use std::path::Path;

use ndarray::Array2;
use oracle::Pair;
use proptest::prelude::*;
use sodkit_core::imageops::write_gray;
use sodkit_core::{write_mask, BinaryMask};
use sodkit_eval::{evaluate, evaluate_dataset, write_evaluation, EvalError, FlagKind, MetricReport, PRCurve, Sample};

fn blob(h: usize, w: usize, k: usize) -> BinaryMask {
    let (r0, c0) = (k % 5, (k * 3) % 7);
    BinaryMask::from_fn(h, w, |r, c| {
        let (dr, dc) = (r as f64 - (r0 + 4) as f64, c as f64 - (c0 + 5) as f64);
        dr * dr + dc * dc <= (9 + k) as f64
    })
}

fn fixture(dir: &Path) -> Vec<(String, Array2<f64>, BinaryMask)> {
    let gt_dir = dir.join("gt");
    let pred_dir = dir.join("pred");
    std::fs::create_dir_all(&gt_dir).unwrap();
    std::fs::create_dir_all(&pred_dir).unwrap();
    let mut out = Vec::new();
    for k in 0..10 {
        let g = if k == 9 {
            BinaryMask::zeros(16, 16)
        } else {
            blob(16, 16, k)
        };
        // Blurry, shifted prediction quantized to the 8-bit grid it is stored on.
        let pred = Array2::from_shape_fn((16, 16), |(r, c)| {
            let near = (r.saturating_sub(1)..=(r + 1).min(15))
                .flat_map(|rr| (c.saturating_sub(1)..=(c + 1).min(15)).map(move |cc| (rr, cc)))
                .filter(|&(rr, cc)| g.get(rr, (cc + k % 2).min(15)))
                .count();
            (near as f64 * 255.0 / 9.0).round() / 255.0
        });
        let name = format!("img{k:02}");
        write_mask(&g, gt_dir.join(format!("{name}.png"))).unwrap();
        write_gray(pred.view(), pred_dir.join(format!("{name}.png"))).unwrap();
        out.push((name, pred, g));
    }
    out
}

fn pair_of(y: &Array2<f64>, g: &BinaryMask) -> Pair {
    let (h, w) = y.dim();
    Pair {
        h,
        w,
        y: y.iter().copied().collect(),
        g: (0..h * w).map(|i| g.get(i / w, i % w)).collect(),
    }
}

#[test]
fn ten_image_fixture_matches_hand_aggregated_oracles() {
    let dir = tempfile::tempdir().unwrap();
    let items = fixture(dir.path());
    let ev = evaluate_dataset(dir.path().join("pred"), dir.path().join("gt")).unwrap();
    let pairs: Vec<Pair> = items.iter().map(|(_, y, g)| pair_of(y, g)).collect();
    let n = pairs.len() as f64;
    let mae = pairs.iter().map(oracle::mae).sum::<f64>() / n;
    let s = pairs.iter().map(oracle::s_measure).sum::<f64>() / n;
    let e = pairs.iter().map(oracle::e_sweep).sum::<f64>() / n;
    let sweeps: Vec<Vec<f64>> = pairs.iter().filter_map(oracle::f_sweep).collect();
    assert_eq!(sweeps.len(), 9);
    let per_t: Vec<f64> = (0..256)
        .map(|k| sweeps.iter().map(|f| f[k]).sum::<f64>() / sweeps.len() as f64)
        .collect();
    let mean_f = per_t.iter().sum::<f64>() / 256.0;
    let max_f = per_t.iter().copied().fold(0.0, f64::max);
    let r = &ev.report;
    for (got, want) in r.vector().into_iter().zip([s, mean_f, max_f, e, mae]) {
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }
    assert_eq!(r.n_images, 10);
    assert_eq!(r.n_scored_f, 9);
    assert!(r
        .flags
        .iter()
        .any(|f| f.image == "img09" && f.kind == FlagKind::EmptyGroundTruth));
}

#[test]
fn self_evaluation_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    // Drop the empty mask so every image has foreground.
    std::fs::remove_file(dir.path().join("gt/img09.png")).unwrap();
    let gt = dir.path().join("gt");
    let ev = evaluate_dataset(&gt, &gt).unwrap();
    for (got, want) in ev.report.vector().into_iter().zip([1.0, 1.0, 1.0, 1.0, 0.0]) {
        assert!((got - want).abs() < 1e-10, "{:?}", ev.report);
    }
}

#[test]
fn missing_counterpart_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    std::fs::remove_file(dir.path().join("pred/img03.png")).unwrap();
    let err = evaluate_dataset(dir.path().join("pred"), dir.path().join("gt")).unwrap_err();
    assert!(matches!(&err, EvalError::MissingCounterpart(p) if p.ends_with("pred/img03.png")));
    assert!(err.to_string().contains("img03.png"));
}

#[test]
fn mismatched_prediction_is_resized_and_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let (gt, pred) = (dir.path().join("gt"), dir.path().join("pred"));
    std::fs::create_dir_all(&gt).unwrap();
    std::fs::create_dir_all(&pred).unwrap();
    let g = blob(16, 16, 2);
    write_mask(&g, gt.join("a.png")).unwrap();
    write_mask(
        &BinaryMask::from_fn(32, 32, |r, c| g.get(r / 2, c / 2)),
        pred.join("a.png"),
    )
    .unwrap();
    let ev = evaluate_dataset(&pred, &gt).unwrap();
    assert_eq!(
        ev.report.flags[0].kind,
        FlagKind::Resized {
            from: (32, 32),
            to: (16, 16)
        }
    );
    assert!(ev.report.mae < 0.05);
}

#[test]
fn outputs_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let ev = evaluate_dataset(dir.path().join("pred"), dir.path().join("gt")).unwrap();
    let paths = write_evaluation(&ev, dir.path().join("out/report.json"), "fixture").unwrap();
    assert_eq!(MetricReport::read_json(&paths[0]).unwrap(), ev.report);
    assert_eq!(PRCurve::read_csv(&paths[1]).unwrap(), ev.pr);
    let svg = std::fs::read_to_string(&paths[2]).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("polyline"));
}

fn sample_strategy() -> impl Strategy<Value = Sample> {
    (2usize..10, 2usize..10).prop_flat_map(|(h, w)| {
        (
            proptest::collection::vec(0u8..=255, h * w),
            proptest::collection::vec(any::<bool>(), h * w),
        )
            .prop_map(move |(y, g)| Sample {
                name: String::new(),
                pred: Array2::from_shape_fn((h, w), |(r, c)| y[r * w + c] as f64 / 255.0),
                gt: BinaryMask::from_fn(h, w, |r, c| g[r * w + c]),
            })
    })
}

fn flipped(s: &Sample) -> Sample {
    let mut pred = s.pred.clone();
    pred.invert_axis(ndarray::Axis(1));
    Sample {
        name: s.name.clone(),
        pred,
        gt: s.gt.flip_horizontal(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dataset_order_does_not_matter(samples in proptest::collection::vec(sample_strategy(), 1..6), rot in 0usize..6) {
        let a = evaluate(&samples).unwrap().report;
        let mut shuffled = samples.clone();
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
        shuffled.reverse();
        let b = evaluate(&shuffled).unwrap().report;
        for (x, y) in a.vector().into_iter().zip(b.vector()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn flip_leaves_mae_f_e_unchanged(samples in proptest::collection::vec(sample_strategy(), 1..4)) {
        let a = evaluate(&samples).unwrap().report;
        let b = evaluate(&samples.iter().map(flipped).collect::<Vec<_>>()).unwrap().report;
        prop_assert!((a.mae - b.mae).abs() < 1e-10);
        prop_assert!((a.mean_f - b.mean_f).abs() < 1e-10);
        prop_assert!((a.max_f - b.max_f).abs() < 1e-10);
        prop_assert!((a.e_measure - b.e_measure).abs() < 1e-10);
    }

    #[test]
    fn reports_are_bounded_and_ordered(samples in proptest::collection::vec(sample_strategy(), 1..4)) {
        let ev = evaluate(&samples).unwrap();
        prop_assert!(ev.report.max_f >= ev.report.mean_f);
        for v in ev.report.vector() {
            prop_assert!((0.0..=1.0).contains(&v), "{v}");
        }
        prop_assert_eq!(ev.pr.thresholds.len(), 256);
        for k in 1..256 {
            prop_assert!(ev.pr.recall[k] <= ev.pr.recall[k - 1]);
        }
        for v in ev.pr.precision.iter().chain(&ev.pr.recall) {
            prop_assert!((0.0..=1.0).contains(v));
        }
    }
}
