use latent_depth::grid::Grid;
use latent_depth::masking::{self, MaskConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn gaussian_pair(seed: u64, w: usize, h: usize, sigma: f64) -> (Grid<f64>, Grid<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, sigma).unwrap();
    let projected = Grid::from_fn(w, h, |x, y| 3.0 + 0.01 * x as f64 + 0.02 * y as f64);
    let sampled = projected.map(|&p| p + n.sample(&mut rng));
    (sampled, projected)
}

fn with_occluders(mut sampled: Grid<f64>, every: usize) -> Grid<f64> {
    for (i, v) in sampled.as_mut_slice().iter_mut().enumerate() {
        if i % every == 0 {
            *v -= 1.5;
        }
    }
    sampled
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mask_ignores_a_common_offset(seed in 0u64..1000, offset in -5.0f64..5.0) {
        let (s, p) = gaussian_pair(seed, 20, 15, 0.05);
        let s = with_occluders(s, 17);
        let valid = Grid::filled(20, 15, true);
        let cfg = MaskConfig::default();
        let a = masking::occlusion_mask(&s, &p, &valid, &cfg).unwrap();
        let shifted = s.map(|v| v + offset);
        let b = masking::occlusion_mask(&shifted, &p, &valid, &cfg).unwrap();
        prop_assert_eq!(a.keep, b.keep);
    }

    #[test]
    fn mask_ignores_a_joint_scale(seed in 0u64..1000, c in 0.1f64..10.0) {
        let (s, p) = gaussian_pair(seed, 20, 15, 0.05);
        let s = with_occluders(s, 13);
        let valid = Grid::filled(20, 15, true);
        let cfg = MaskConfig::default();
        let a = masking::occlusion_mask(&s, &p, &valid, &cfg).unwrap();
        let b = masking::occlusion_mask(&s.map(|v| v * c), &p.map(|v| v * c), &valid, &cfg).unwrap();
        prop_assert_eq!(a.keep, b.keep);
    }
}

#[test]
fn gaussian_residuals_are_rarely_masked() {
    let cfg = MaskConfig::default();
    let (w, h) = (64, 48);
    let valid = Grid::filled(w, h, true);
    let mut total = 0.0;
    for seed in 0..20 {
        let (s, p) = gaussian_pair(seed, w, h, 0.1);
        let r = masking::occlusion_mask(&s, &p, &valid, &cfg).unwrap();
        let masked = r.keep.iter().filter(|&&k| !k).count() as f64 / (w * h) as f64;
        assert!((0.0..=1.0).contains(&masked));
        total += masked;
    }
    assert!(total / 20.0 < 0.05, "mean masked fraction {}", total / 20.0);
}
