mod oracles;

use latent_depth::covisibility::{self, CovisConfig};
use oracles::{random_rig, CovisOracle};
use proptest::prelude::*;

const VOXEL: f64 = 0.25;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn overlaps_match_the_quadratic_oracle(seed in 0u64..10_000, n in 2usize..=10) {
        let views = random_rig(seed, n);
        let map = covisibility::build_voxel_map(&views, VOXEL).unwrap();
        let expected = oracles::oracle_overlaps(&views, VOXEL);
        for v in &views {
            let got = covisibility::overlapping_cameras(&map, v.id).unwrap();
            let want: Vec<(usize, usize, f64)> = expected
                .iter()
                .filter(|((a, _), (shared, _))| *a == v.id && *shared > 0)
                .map(|((_, b), (shared, f))| (*b, *shared, *f))
                .collect();
            let got: Vec<(usize, usize, f64)> = got.iter().map(|o| (o.id, o.shared_cells, o.fraction)).collect();
            prop_assert_eq!(got, want);
        }
    }

    #[test]
    fn each_greedy_step_is_the_exhaustive_best(seed in 0u64..10_000, n in 2usize..=6, size in 2usize..=6) {
        let views = random_rig(seed, n);
        let map = covisibility::build_voxel_map(&views, VOXEL).unwrap();
        let oracle = CovisOracle::new(&views, VOXEL);
        let cfg = CovisConfig { set_size: size, ..CovisConfig::default() };
        for reference in oracle.ids() {
            let set = covisibility::select_covisible(&map, reference, &cfg).unwrap();
            for step in 1..set.members.len() {
                let (best, score) = oracle.best_extension(&set.members[..step], &cfg).unwrap();
                prop_assert_eq!(set.members[step], best);
                prop_assert!((set.parallaxes[step] - score).abs() <= 1e-9);
            }
            if set.members.len() < size {
                prop_assert!(set.incomplete);
                prop_assert!(oracle.best_extension(&set.members, &cfg).is_none());
            }
        }
    }

    #[test]
    fn pairs_are_globally_optimal(seed in 0u64..10_000, n in 2usize..=6) {
        let views = random_rig(seed, n);
        let map = covisibility::build_voxel_map(&views, VOXEL).unwrap();
        let oracle = CovisOracle::new(&views, VOXEL);
        let cfg = CovisConfig { set_size: 2, ..CovisConfig::default() };
        for reference in oracle.ids() {
            let set = covisibility::select_covisible(&map, reference, &cfg).unwrap();
            let best = oracle
                .feasible_sets(reference, 2, &cfg)
                .into_iter()
                .map(|(_, s)| s)
                .fold(f64::NEG_INFINITY, f64::max);
            if set.members.len() == 2 {
                prop_assert!((oracle.min_parallax(&set.members) - best).abs() <= 1e-9);
            } else {
                prop_assert!(best == f64::NEG_INFINITY);
            }
        }
    }

    #[test]
    fn selected_sets_satisfy_the_overlap_constraint(seed in 0u64..10_000, n in 3usize..=8) {
        let views = random_rig(seed, n);
        let map = covisibility::build_voxel_map(&views, VOXEL).unwrap();
        let cfg = CovisConfig { set_size: 4, ..CovisConfig::default() };
        for v in &views {
            let set = covisibility::select_covisible(&map, v.id, &cfg).unwrap();
            for &a in &set.members {
                for &b in &set.members {
                    if a != b {
                        prop_assert!(map.overlap_fraction(a, b).unwrap() >= cfg.overlap_min);
                    }
                }
            }
        }
    }

    #[test]
    fn selection_ignores_input_order(seed in 0u64..10_000, n in 3usize..=7, rot in 1usize..7) {
        let views = random_rig(seed, n);
        let mut shuffled = views.clone();
        shuffled.rotate_left(rot % n);
        shuffled.reverse();
        let a = covisibility::build_voxel_map(&views, VOXEL).unwrap();
        let b = covisibility::build_voxel_map(&shuffled, VOXEL).unwrap();
        let cfg = CovisConfig::default();
        for v in &views {
            prop_assert_eq!(
                covisibility::select_covisible(&a, v.id, &cfg).unwrap(),
                covisibility::select_covisible(&b, v.id, &cfg).unwrap()
            );
        }
    }
}

#[test]
fn voxel_map_is_filled_in_one_pass() {
    let views = random_rig(3, 6);
    let map = covisibility::build_voxel_map(&views, VOXEL).unwrap();
    let distinct: usize = views.iter().map(|v| oracles::oracle_cells(v, VOXEL).len()).sum();
    assert_eq!(map.insertions, distinct);
}

proptest! {
    #[test]
    fn shared_point_ranking_matches_counting(
        tracks in prop::collection::vec(prop::collection::btree_set(0usize..6, 1..5), 1..60), n in 2usize..6,
    ) {
        let tracks: Vec<Vec<usize>> = tracks.into_iter().map(|t| t.into_iter().collect()).collect();
        let reference = tracks[0][0];
        let set = covisibility::select_by_shared_points(&tracks, reference, n).unwrap();
        let mut counts: Vec<(usize, usize)> = (0..6)
            .filter(|&c| c != reference)
            .map(|c| (c, tracks.iter().filter(|t| t.contains(&reference) && t.contains(&c)).count()))
            .filter(|&(_, k)| k > 0)
            .collect();
        counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut want = vec![reference];
        want.extend(counts.iter().take(n - 1).map(|&(c, _)| c));
        prop_assert_eq!(set.members, want);
    }
}
