mod oracles;

use latent_depth::synth::{self, BenchmarkConfig};

fn small() -> BenchmarkConfig {
    BenchmarkConfig {
        width: 64,
        height: 48,
        focal: 50.0,
        ..BenchmarkConfig::default()
    }
}

#[test]
fn ground_truth_is_consistent_across_views() {
    let mut scenes = synth::make_benchmark(&small()).unwrap();
    scenes.push(synth::random_scene(21, 3, &small()).unwrap());
    for scene in &scenes {
        let gt: Vec<_> = (0..scene.cameras.len()).map(|c| scene.view(c).unwrap().1).collect();
        for i in 0..scene.cameras.len() {
            for j in 0..scene.cameras.len() {
                if i == j {
                    continue;
                }
                let (checked, worst) = oracles::cross_view_consistency(scene, &gt, i, j);
                assert!(checked > 0, "{} {i}->{j}: nothing checked", scene.name);
                assert!(worst <= 1e-6, "{} {i}->{j}: {worst}", scene.name);
            }
        }
    }
}

#[test]
fn rendered_images_stay_in_the_unit_range() {
    let cfg = BenchmarkConfig {
        noise_sigma: 0.2,
        ..small()
    };
    for scene in synth::make_benchmark(&cfg).unwrap() {
        for c in 0..scene.cameras.len() {
            let r = scene.render(c).unwrap();
            assert!(r.image.data().iter().all(|v| (0.0..=1.0).contains(v)), "{}", scene.name);
        }
    }
}
