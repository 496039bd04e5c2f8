mod oracle;

use ndarray::Array2;
use oracle::Pair;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sodkit_core::BinaryMask;
use sodkit_eval::{e_measure, f_measure_at, image_e_measure, mae, mean_max_f, pr_curve, s_measure};

const TOL: f64 = 1e-10;

fn random_pair(rng: &mut ChaCha8Rng) -> (Array2<f64>, BinaryMask, Pair) {
    let h = rng.random_range(1..=16);
    let w = rng.random_range(1..=16);
    let g_kind = rng.random_range(0..6);
    let (r0, c0) = (rng.random_range(0..h), rng.random_range(0..w));
    let (r1, c1) = (rng.random_range(r0..h) + 1, rng.random_range(c0..w) + 1);
    let density = rng.random_range(0.1..0.9);
    let mut g = vec![false; h * w];
    for r in 0..h {
        for c in 0..w {
            g[r * w + c] = match g_kind {
                0 => false,
                1 => true,
                2 | 3 => (r0..r1).contains(&r) && (c0..c1).contains(&c),
                _ => rng.random_bool(density),
            };
        }
    }
    let y_kind = rng.random_range(0..4);
    let y: Vec<f64> = (0..h * w)
        .map(|i| match y_kind {
            0 => rng.random_range(0.0..=1.0),
            1 => rng.random_range(0..=255) as f64 / 255.0,
            2 => {
                if rng.random_bool(0.3) {
                    0.0
                } else {
                    rng.random_range(0.0..=1.0)
                }
            }
            _ => {
                let noisy = if rng.random_bool(0.2) { !g[i] } else { g[i] };
                if noisy {
                    1.0
                } else {
                    0.0
                }
            }
        })
        .collect();
    let arr = Array2::from_shape_vec((h, w), y.clone()).unwrap();
    let mask = BinaryMask::from_fn(h, w, |r, c| g[r * w + c]);
    (arr, mask, Pair { h, w, y, g })
}

#[test]
fn every_metric_matches_straight_loop_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let ts = [0.0, 0.25, 100.0 / 255.0, 0.5, 1.0];
    for case in 0..200 {
        let (y, g, pair) = random_pair(&mut rng);
        let d = (mae(y.view(), &g).unwrap() - oracle::mae(&pair)).abs();
        assert!(d < TOL, "case {case}: MAE off by {d}");
        for t in ts {
            match (f_measure_at(y.view(), &g, t), oracle::prf(&pair, t)) {
                (Ok(p), Some((op, or, of))) => {
                    assert!((p.precision - op).abs() < TOL, "case {case} t {t}");
                    assert!((p.recall - or).abs() < TOL, "case {case} t {t}");
                    assert!((p.f - of).abs() < TOL, "case {case} t {t}");
                }
                (Err(_), None) => {}
                (a, b) => panic!("case {case}: library {a:?} vs oracle {b:?}"),
            }
        }
        let d = (image_e_measure(y.view(), &g).unwrap() - oracle::e_sweep(&pair)).abs();
        assert!(d < TOL, "case {case}: E off by {d}");
        let d = (s_measure(y.view(), &g).unwrap() - oracle::s_measure(&pair)).abs();
        assert!(d < TOL, "case {case}: S off by {d}");
    }
}

#[test]
fn single_pair_sweep_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    while checked < 20 {
        let (y, g, pair) = random_pair(&mut rng);
        let Some(fs) = oracle::f_sweep(&pair) else { continue };
        let (mean_f, max_f) = mean_max_f(&[y.clone()], &[g.clone()]).unwrap();
        let om = fs.iter().sum::<f64>() / 256.0;
        let ox = fs.iter().copied().fold(0.0, f64::max);
        assert!((mean_f - om).abs() < 1e-12 && (max_f - ox).abs() < 1e-12);
        let pr = pr_curve(&[y.clone()], &[g.clone()]).unwrap();
        for k in [0usize, 1, 64, 128, 255] {
            let (p, r, _) = oracle::prf(&pair, k as f64 / 255.0).unwrap();
            assert!((pr.precision[k] - p).abs() < 1e-12 && (pr.recall[k] - r).abs() < 1e-12);
        }
        let e = e_measure(&[y], &[g]).unwrap();
        assert!((e - oracle::e_sweep(&pair)).abs() < 1e-12);
        checked += 1;
    }
}

#[test]
fn fixed_s_measure_fixture() {
    // 8x8 blob with a graded prediction.
    let g = BinaryMask::from_fn(8, 8, |r, c| (2..6).contains(&r) && (1..5).contains(&c));
    let y = Array2::from_shape_fn((8, 8), |(r, c)| ((r * 8 + c) % 7) as f64 / 6.0);
    let pair = Pair {
        h: 8,
        w: 8,
        y: y.iter().copied().collect(),
        g: (0..64).map(|i| g.get(i / 8, i % 8)).collect(),
    };
    let s = s_measure(y.view(), &g).unwrap();
    assert!((s - oracle::s_measure(&pair)).abs() < TOL);
    assert!((0.0..=1.0).contains(&s));
}
