use latent_depth::linear_model::{self, StackedData};
use nalgebra::DMatrix;

fn noiseless(seed: u64) -> StackedData {
    linear_model::generate_scenes(50, 20, 0.0, seed).unwrap()
}

fn descending_singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

#[test]
fn noiseless_ranks_have_large_gaps() {
    for seed in 0..3 {
        let d = noiseless(seed);
        let sy = descending_singular_values(&d.y);
        let sx = descending_singular_values(&d.x);
        assert!(sy[12] / sy[13].max(f64::MIN_POSITIVE) >= 1e6, "Y gap {:?}", &sy[11..15]);
        assert!(sx[9] / sx[10].max(f64::MIN_POSITIVE) >= 1e6, "X gap {:?}", &sx[8..12]);
        for k in 0..d.objects {
            let s = descending_singular_values(&d.object_block(k));
            assert!(s[4] / s[5].max(f64::MIN_POSITIVE) >= 1e6, "object {k}: {:?}", &s[3..7]);
        }
    }
}

#[test]
fn latent_fit_splits_into_orthogonal_parts() {
    let (train, _) = linear_model::generate_split(50, 10, 20, 0.05, 11).unwrap();
    let k = 10;
    let (model, z) = linear_model::fit_with_z(&train, k, 3).unwrap();

    // independent truncation of the noisy images
    let svd = train.x_noisy.clone().svd(true, true);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let uk = DMatrix::from_fn(u.nrows(), k, |r, c| u[(r, order[c])]);
    let mut xk = DMatrix::zeros(train.x_noisy.nrows(), train.x_noisy.ncols());
    for &i in &order[..k] {
        xk += u.column(i) * vt.row(i) * svd.singular_values[i];
    }
    let py = &uk * (uk.transpose() * &train.y);
    let perp = &train.y - &py;

    let part_x = (&xk * &model.fg_x - &py).norm_squared();
    let part_z = (&z * &model.g_z - &perp).norm_squared();
    let total = model.ssd(&train.x_noisy, &train.y, Some(&z)).unwrap();
    assert!((total - (part_x + part_z)).abs() <= 1e-8 * total.max(1.0), "{total} vs {}", part_x + part_z);
}

#[test]
fn train_residual_does_not_grow_with_latent_dim() {
    let (train, _) = linear_model::generate_split(50, 10, 20, 0.05, 5).unwrap();
    let mut previous = f64::INFINITY;
    for l in 0..=6 {
        let (model, z) = linear_model::fit_with_z(&train, 10, l).unwrap();
        let r = model.ssd(&train.x_noisy, &train.y, Some(&z)).unwrap();
        assert!(r <= previous * (1.0 + 1e-12), "latent_dim {l}: {r} > {previous}");
        previous = r;
    }
}

#[test]
fn larger_feature_space_overfits_on_every_seed() {
    for seed in 0..10 {
        let (train, test) = linear_model::generate_split(50, 50, 20, 0.05, seed).unwrap();
        let ten = linear_model::fit_without_z(&train, 10).unwrap();
        let thirteen = linear_model::fit_reduced_rank(&train, 13).unwrap();
        let train13 = thirteen.ssd(&train.x_noisy, &train.y, None).unwrap();
        assert!(train13 <= 1e-6, "seed {seed}: {train13}");
        assert!(thirteen.evaluate(&test).unwrap() > ten.evaluate(&test).unwrap(), "seed {seed}");
    }
}
