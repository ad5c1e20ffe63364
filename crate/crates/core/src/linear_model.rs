//! Linear shape model on an orthographic toy problem.
//!
//! A predictor maps an image row vector `x` and a latent vector `z` to a
//! scene row vector `x·FG_x + z·G_z`. Scenes are three rigid objects moving
//! in the `xy`-plane; images keep the `x` and `z` coordinates and discard `y`
//! (depth), so each object's distance to the camera is invisible in the image.
//! The latent block `G_z` captures exactly that missing information.
//!
//! Layout: a scene row stores, per object, the column-stacked coordinate rows
//! `(w₁, w₂, w₃)` of `W = R·S + t·1`; an image row stores `(w₁, w₃)` per object.

use nalgebra::{DMatrix, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Relative singular-value threshold below which a direction counts as zero.
pub const RANK_TOLERANCE: f64 = 1e-8;

/// Number of rigid objects in a scene.
pub const OBJECTS_PER_SCENE: usize = 3;

/// In-plane rigid motion of one object.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanarPose {
    pub angle: f64,
    pub t1: f64,
    pub t2: f64,
}

impl PlanarPose {
    pub const IDENTITY: PlanarPose = PlanarPose {
        angle: 0.0,
        t1: 0.0,
        t2: 0.0,
    };

    /// Parameter row `(a, −b, b, a, 1, t₁, t₂)` with `a = cos θ`, `b = sin θ`.
    pub fn parameter_vector(&self) -> [f64; 7] {
        let (b, a) = self.angle.sin_cos();
        [a, -b, b, a, 1.0, self.t1, self.t2]
    }
}

/// One generated scene: the object templates and a pose per object.
#[derive(Clone, Debug)]
pub struct OrthoScene {
    /// `3 × p` point matrices, one per object.
    pub objects: Vec<DMatrix<f64>>,
    pub poses: Vec<PlanarPose>,
    pub noise_sigma: f64,
}

impl OrthoScene {
    /// Scene row vector built from the block structure `v·S̄` of every object.
    pub fn scene_row(&self) -> RowDVector<f64> {
        let p = self.objects[0].ncols();
        let mut row = RowDVector::zeros(3 * p * self.objects.len());
        for (k, (s, pose)) in self.objects.iter().zip(&self.poses).enumerate() {
            let v = RowDVector::from_row_slice(&pose.parameter_vector());
            let block = &v * structure_block(s);
            row.columns_mut(3 * p * k, 3 * p).copy_from(&block);
        }
        row
    }
}

/// The `7 × 3p` structure matrix `S̄` of an object with rows `s₁, s₂, s₃`.
///
/// Row order matches the parameter vector `(a, −b, b, a, 1, t₁, t₂)`.
pub fn structure_block(s: &DMatrix<f64>) -> DMatrix<f64> {
    let p = s.ncols();
    let mut block = DMatrix::zeros(7, 3 * p);
    for j in 0..p {
        block[(0, j)] = s[(0, j)];
        block[(1, j)] = s[(1, j)];
        block[(2, p + j)] = s[(0, j)];
        block[(3, p + j)] = s[(1, j)];
        block[(4, 2 * p + j)] = s[(2, j)];
        block[(5, j)] = 1.0;
        block[(6, p + j)] = 1.0;
    }
    block
}

/// The selection matrix `Π̄` that keeps the `w₁` and `w₃` columns of every object.
pub fn projection_matrix(points_per_object: usize, objects: usize) -> DMatrix<f64> {
    let p = points_per_object;
    let mut pi = DMatrix::zeros(3 * p * objects, 2 * p * objects);
    for k in 0..objects {
        for j in 0..p {
            pi[(3 * p * k + j, 2 * p * k + j)] = 1.0;
            pi[(3 * p * k + 2 * p + j, 2 * p * k + p + j)] = 1.0;
        }
    }
    pi
}

/// Fixed polyline templates, one per object, each with `p` points.
///
/// The shapes are generic: `s₁`, `s₂` and the all-ones row are linearly
/// independent and `s₃` is non-constant.
pub fn object_templates(p: usize) -> Vec<DMatrix<f64>> {
    let curve = |k: usize, s: f64| -> [f64; 3] {
        let tau = std::f64::consts::TAU;
        match k {
            0 => [
                0.5 * (tau * 0.8 * s).cos(),
                0.3 * (tau * 0.8 * s).sin() + 0.2 * s,
                s - 0.5,
            ],
            1 => [
                s - 0.5,
                0.4 * (tau * 1.3 * s).sin(),
                0.3 * (tau * s).cos() + 0.1 * s * s,
            ],
            _ => [
                0.4 * s * s - 0.2 + 0.1 * (tau * 2.0 * s).sin(),
                0.6 * s - 0.3,
                0.25 * (tau * 0.6 * s + 0.4).sin(),
            ],
        }
    };
    (0..OBJECTS_PER_SCENE)
        .map(|k| {
            DMatrix::from_fn(3, p, |r, c| {
                let s = if p > 1 { c as f64 / (p - 1) as f64 } else { 0.0 };
                curve(k, s)[r]
            })
        })
        .collect()
}

/// Row-stacked scene and image matrices.
#[derive(Clone, Debug)]
pub struct StackedData {
    /// `n × 3p·objects` scene matrix.
    pub y: DMatrix<f64>,
    /// `n × 2p·objects` noiseless image matrix, `X = Y·Π̄`.
    pub x: DMatrix<f64>,
    /// `X + N` with i.i.d. Gaussian `N`.
    pub x_noisy: DMatrix<f64>,
    pub points_per_object: usize,
    pub objects: usize,
    pub noise_sigma: f64,
}

impl StackedData {
    pub fn n_scenes(&self) -> usize {
        self.y.nrows()
    }

    /// Columns of `Y` belonging to object `k`.
    pub fn object_block(&self, k: usize) -> DMatrix<f64> {
        let p = self.points_per_object;
        self.y.columns(3 * p * k, 3 * p).into_owned()
    }
}

/// Draws `n_scenes` random scenes: angle uniform on `[0, 2π)`, translations
/// uniform on `[−1, 1]²`, fixed templates, Gaussian image noise.
pub fn generate_scenes(
    n_scenes: usize,
    p_per_object: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<StackedData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_with_rng(n_scenes, p_per_object, noise_sigma, &mut rng)
}

/// Training and test sets drawn from one seeded stream.
pub fn generate_split(
    n_train: usize,
    n_test: usize,
    p_per_object: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<(StackedData, StackedData)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = generate_with_rng(n_train, p_per_object, noise_sigma, &mut rng)?;
    let test = generate_with_rng(n_test, p_per_object, noise_sigma, &mut rng)?;
    Ok((train, test))
}

pub fn generate_with_rng<R: Rng>(
    n_scenes: usize,
    p_per_object: usize,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<StackedData> {
    if n_scenes == 0 {
        return Err(Error::invalid("n_scenes must be positive"));
    }
    if p_per_object < 4 {
        return Err(Error::invalid("p_per_object must be at least 4"));
    }
    if !(noise_sigma >= 0.0) {
        return Err(Error::invalid("noise_sigma must be non-negative"));
    }
    let templates = object_templates(p_per_object);
    let scenes: Vec<OrthoScene> = (0..n_scenes)
        .map(|_| OrthoScene {
            objects: templates.clone(),
            poses: (0..OBJECTS_PER_SCENE)
                .map(|_| PlanarPose {
                    angle: rng.random_range(0.0..std::f64::consts::TAU),
                    t1: rng.random_range(-1.0..=1.0),
                    t2: rng.random_range(-1.0..=1.0),
                })
                .collect(),
            noise_sigma,
        })
        .collect();
    Ok(stack_scenes(&scenes, noise_sigma, rng))
}

/// Stacks scene rows into `Y`, projects to `X` and adds image noise.
pub fn stack_scenes<R: Rng>(scenes: &[OrthoScene], noise_sigma: f64, rng: &mut R) -> StackedData {
    let p = scenes[0].objects[0].ncols();
    let objects = scenes[0].objects.len();
    let mut y = DMatrix::zeros(scenes.len(), 3 * p * objects);
    for (i, scene) in scenes.iter().enumerate() {
        y.row_mut(i).copy_from(&scene.scene_row());
    }
    let x = &y * projection_matrix(p, objects);
    let mut x_noisy = x.clone();
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).expect("finite sigma");
        for v in x_noisy.iter_mut() {
            *v += normal.sample(rng);
        }
    }
    StackedData {
        y,
        x,
        x_noisy,
        points_per_object: p,
        objects,
        noise_sigma,
    }
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Number of singular values at least `rel_tol × σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let s = singular_values(m);
    match s.first() {
        Some(&max) if max > 0.0 => s.iter().filter(|&&v| v >= rel_tol * max).count(),
        _ => 0,
    }
}

/// Ratio between the last retained singular value and the first discarded one.
pub fn singular_gap(m: &DMatrix<f64>, rank: usize) -> f64 {
    let s = singular_values(m);
    if rank == 0 || rank >= s.len() {
        return f64::INFINITY;
    }
    if s[rank] == 0.0 {
        f64::INFINITY
    } else {
        s[rank - 1] / s[rank]
    }
}

/// Thin SVD factors sorted by descending singular value: `(U, σ, Vᵀ)`.
fn sorted_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let u_sorted = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let vt_sorted = DMatrix::from_fn(order.len(), vt.ncols(), |r, c| vt[(order[r], c)]);
    let s: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    (u_sorted, s, vt_sorted)
}

/// Moore–Penrose pseudo-inverse with the relative rank tolerance.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (u, s, vt) = sorted_svd(m);
    let cutoff = s.first().copied().unwrap_or(0.0) * RANK_TOLERANCE;
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    for (k, &sigma) in s.iter().enumerate() {
        if sigma > cutoff && sigma > 0.0 {
            out += vt.row(k).transpose() * u.column(k).transpose() / sigma;
        }
    }
    out
}

/// Squared Frobenius distance.
pub fn ssd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm_squared()
}

/// Linear predictor `x ↦ x·FG_x + z·G_z`.
///
/// `F` and `G_x` are only ever used as a product and are stored as one matrix.
#[derive(Clone, Debug)]
pub struct LinearPredictor {
    /// Orthonormal `2P × k` basis of the row space of the truncated image
    /// matrix `[X]_k`; `None` when images are used without projection.
    pub image_basis: Option<DMatrix<f64>>,
    pub fg_x: DMatrix<f64>,
    /// `latent_dim × 3P`; zero rows for a model without latent variables.
    pub g_z: DMatrix<f64>,
    pub feature_dim: usize,
    pub latent_dim: usize,
}

impl LinearPredictor {
    fn project_rows(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.image_basis {
            Some(v) => x * v * v.transpose(),
            None => x.clone(),
        }
    }

    /// Predictions for every row of `x` with latent rows `z` (or `z = 0`).
    pub fn predict_rows(&self, x: &DMatrix<f64>, z: Option<&DMatrix<f64>>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.fg_x.nrows() {
            return Err(Error::mismatch(self.fg_x.nrows(), x.ncols()));
        }
        let mut out = self.project_rows(x) * &self.fg_x;
        if let Some(z) = z {
            if z.ncols() != self.latent_dim || z.nrows() != x.nrows() {
                return Err(Error::mismatch(
                    format!("{}x{}", x.nrows(), self.latent_dim),
                    format!("{}x{}", z.nrows(), z.ncols()),
                ));
            }
            if self.latent_dim > 0 {
                out += z * &self.g_z;
            }
        }
        Ok(out)
    }

    /// Scene prediction for one image row and latent vector.
    pub fn predict(&self, x: &RowDVector<f64>, z: &RowDVector<f64>) -> Result<RowDVector<f64>> {
        if z.len() != self.latent_dim {
            return Err(Error::mismatch(self.latent_dim, z.len()));
        }
        let xm = DMatrix::from_row_slice(1, x.len(), x.as_slice());
        let zm = DMatrix::from_row_slice(1, z.len(), z.as_slice());
        let out = self.predict_rows(&xm, Some(&zm))?;
        Ok(RowDVector::from_row_slice(out.as_slice()))
    }

    /// Least-squares latent vector for a known scene, minimum norm when `G_z`
    /// is rank deficient.
    pub fn best_z_for_scene(&self, x: &RowDVector<f64>, y_true: &RowDVector<f64>) -> Result<RowDVector<f64>> {
        if self.latent_dim == 0 {
            return Err(Error::invalid("predictor has no latent variables"));
        }
        if y_true.len() != self.fg_x.ncols() {
            return Err(Error::mismatch(self.fg_x.ncols(), y_true.len()));
        }
        let base = self.predict(x, &RowDVector::zeros(self.latent_dim))?;
        let residual = y_true - base;
        let gz_pinv = pseudo_inverse(&self.g_z);
        Ok(residual * gz_pinv)
    }

    /// Best latent rows for every scene in `data`.
    pub fn best_z_rows(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if self.latent_dim == 0 {
            return Ok(DMatrix::zeros(x.nrows(), 0));
        }
        let base = self.predict_rows(x, None)?;
        Ok((y - base) * pseudo_inverse(&self.g_z))
    }

    /// SSD of predictions against `y` using latent rows `z` (or zero).
    pub fn ssd(&self, x: &DMatrix<f64>, y: &DMatrix<f64>, z: Option<&DMatrix<f64>>) -> Result<f64> {
        Ok(ssd(&self.predict_rows(x, z)?, y))
    }

    /// Test-time SSD: noisy images, latent vector fitted per scene when present.
    pub fn evaluate(&self, data: &StackedData) -> Result<f64> {
        let z = self.best_z_rows(&data.x_noisy, &data.y)?;
        self.ssd(&data.x_noisy, &data.y, Some(&z))
    }
}

/// Truncated image subspace: `([X]_k, V_k)` from the noisy image matrix.
fn truncated_images(x: &DMatrix<f64>, k: usize) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let max_dim = x.nrows().min(x.ncols());
    if k == 0 || k > max_dim {
        return Err(Error::invalid(format!(
            "feature_dim {k} must be in 1..={max_dim}"
        )));
    }
    let (u, s, vt) = sorted_svd(x);
    if s[k - 1] < RANK_TOLERANCE * s[0] {
        return Err(Error::invalid(format!(
            "feature_dim {k} exceeds the numerical rank of the image matrix"
        )));
    }
    let uk = u.columns(0, k).into_owned();
    let vk = vt.rows(0, k).transpose();
    let sk = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(k, s[..k].iter().copied()));
    let xk = &uk * sk * vk.transpose();
    Ok((xk, uk, vk))
}

/// Model without latent variables on the rank-`feature_dim` approximation of
/// the noisy images: `FG_x = [X]_k^† Y`.
pub fn fit_without_z(data: &StackedData, feature_dim: usize) -> Result<LinearPredictor> {
    let (xk, _, vk) = truncated_images(&data.x_noisy, feature_dim)?;
    let fg_x = pseudo_inverse(&xk) * &data.y;
    Ok(LinearPredictor {
        image_basis: Some(vk),
        g_z: DMatrix::zeros(0, fg_x.ncols()),
        fg_x,
        feature_dim,
        latent_dim: 0,
    })
}

/// The naive enlargement of the feature space: regress `Y` on the raw noisy
/// images with the product `FG_x` restricted to rank `feature_dim`
/// (reduced-rank regression). Fits noise once `feature_dim` exceeds the clean
/// image rank.
pub fn fit_reduced_rank(data: &StackedData, feature_dim: usize) -> Result<LinearPredictor> {
    let x = &data.x_noisy;
    let max_dim = x.nrows().min(x.ncols()).min(data.y.ncols());
    if feature_dim == 0 || feature_dim > max_dim {
        return Err(Error::invalid(format!(
            "feature_dim {feature_dim} must be in 1..={max_dim}"
        )));
    }
    let b_ols = pseudo_inverse(x) * &data.y;
    let fitted = x * &b_ols;
    let (_, _, vt) = sorted_svd(&fitted);
    let vk = vt.rows(0, feature_dim.min(vt.nrows())).transpose();
    let fg_x = b_ols * &vk * vk.transpose();
    Ok(LinearPredictor {
        image_basis: None,
        g_z: DMatrix::zeros(0, fg_x.ncols()),
        fg_x,
        feature_dim,
        latent_dim: 0,
    })
}

/// Model with latent variables. `FG_x = [X]_k^† P·Y`, and `Z·G_z` is the best
/// rank-`latent_dim` approximation of `P⊥·Y`, where `P` projects onto the
/// column space of `[X]_k`. Returns the predictor and the training latents
/// `Z` (orthonormal columns, orthogonal to the column space of `[X]_k`).
pub fn fit_with_z(
    data: &StackedData,
    feature_dim: usize,
    latent_dim: usize,
) -> Result<(LinearPredictor, DMatrix<f64>)> {
    let n = data.n_scenes();
    if latent_dim > n {
        return Err(Error::invalid(format!(
            "latent_dim {latent_dim} exceeds the number of scenes {n}"
        )));
    }
    if latent_dim == 0 {
        return Ok((fit_without_z(data, feature_dim)?, DMatrix::zeros(n, 0)));
    }
    let (xk, uk, vk) = truncated_images(&data.x_noisy, feature_dim)?;
    let py = &uk * (uk.transpose() * &data.y);
    let perp = &data.y - &py;
    let fg_x = pseudo_inverse(&xk) * &py;

    let (u, s, vt) = sorted_svd(&perp);
    let cutoff = s.first().copied().unwrap_or(0.0) * RANK_TOLERANCE;
    let mut z = DMatrix::zeros(n, latent_dim);
    let mut g_z = DMatrix::zeros(latent_dim, data.y.ncols());
    for k in 0..latent_dim.min(s.len()) {
        if s[k] > cutoff && s[k] > 0.0 {
            z.set_column(k, &u.column(k));
            g_z.set_row(k, &(vt.row(k) * s[k]));
        }
    }
    Ok((
        LinearPredictor {
            image_basis: Some(vk),
            fg_x,
            g_z,
            feature_dim,
            latent_dim,
        },
        z,
    ))
}

/// Projection of the columns of `m` onto the column space of `basis`
/// (orthonormal columns) and its complement.
pub fn split_by_subspace(basis: &DMatrix<f64>, m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let p = basis * (basis.transpose() * m);
    let perp = m - &p;
    (p, perp)
}

/// Orthonormal basis for the column space of `[X]_k`.
pub fn image_column_basis(data: &StackedData, feature_dim: usize) -> Result<DMatrix<f64>> {
    let (_, uk, _) = truncated_images(&data.x_noisy, feature_dim)?;
    Ok(uk)
}
