mod oracles;

use latent_depth::codec::DepthMap;
use latent_depth::grid::Grid;
use latent_depth::metrics;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_pair(seed: u64) -> (DepthMap, DepthMap) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (rng.random_range(2..30), rng.random_range(2..30));
    let gt = Grid::from_fn(w, h, |_, _| rng.random_range(0.2..20.0));
    let gt_valid = Grid::from_fn(w, h, |_, _| rng.random::<f64>() > 0.1);
    let pred = Grid::from_fn(w, h, |x, y| gt.get(x, y) * rng.random_range(0.5..1.6) + rng.random_range(-0.3..0.3));
    let mut pred_valid = Grid::from_fn(w, h, |_, _| rng.random::<f64>() > 0.1);
    pred_valid.set(0, 0, true);
    let mut gt_valid = gt_valid;
    gt_valid.set(0, 0, true);
    let gt = DepthMap::new(gt.clone(), gt_valid).unwrap();
    let pred = DepthMap::new(pred.map(|&v| v.max(0.01)), pred_valid).unwrap();
    (pred, gt)
}

fn as_array(r: &metrics::MetricReport) -> [f64; 7] {
    [r.rmse, r.abs_rel, r.sq_rel, r.si_rmse, r.delta_acc[0], r.delta_acc[1], r.delta_acc[2]]
}

proptest! {
    #[test]
    fn evaluate_matches_the_pixel_loop(seed in 0u64..100_000, median in any::<bool>()) {
        let (pred, gt) = random_pair(seed);
        let got = as_array(&metrics::evaluate(&pred, &gt, median).unwrap());
        let want = oracles::naive_metrics(&pred, &gt, median);
        for k in 0..7 {
            prop_assert!((got[k] - want[k]).abs() <= 1e-10 * (1.0 + want[k].abs()), "metric {}: {} vs {}", k, got[k], want[k]);
        }
    }

    #[test]
    fn si_rmse_ignores_global_scale(seed in 0u64..100_000, c in 0.01f64..100.0) {
        let (pred, gt) = random_pair(seed);
        let a = metrics::evaluate(&pred, &gt, false).unwrap().si_rmse;
        let b = metrics::evaluate(&pred.scaled(c), &gt, false).unwrap().si_rmse;
        prop_assert!((a - b).abs() <= 1e-10);
    }

    #[test]
    fn median_scaling_removes_a_global_factor(seed in 0u64..100_000, c in 0.05f64..20.0) {
        let (_, gt) = random_pair(seed);
        let r = metrics::evaluate(&gt.scaled(c), &gt, true).unwrap();
        prop_assert!(r.rmse <= 1e-10 * 20.0 && r.abs_rel <= 1e-10 && r.si_rmse <= 1e-10);
        prop_assert_eq!(r.delta_acc, [1.0; 3]);
    }
}

#[test]
fn frame_mean_averages_per_frame_values() {
    let frames: Vec<(DepthMap, DepthMap)> = (0..5).map(random_pair).collect();
    let reports = metrics::evaluate_frames(&frames, false).unwrap();
    let mean = metrics::mean_report(&reports).unwrap();
    let naive: Vec<[f64; 7]> = frames.iter().map(|(p, g)| oracles::naive_metrics(p, g, false)).collect();
    let expected_rmse = naive.iter().map(|m| m[0]).sum::<f64>() / 5.0;
    assert!((mean.rmse - expected_rmse).abs() <= 1e-12);
}
