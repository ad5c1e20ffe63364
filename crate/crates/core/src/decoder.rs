//! Linear latent decoder `ρ(z) = clamp(ρ̄ + Σ_k z_k B_k, ρ_min, 1)`.
//!
//! Two kinds of basis maps are supported:
//!
//! * a *coarse grid* basis, where `B_k` is the bilinear upsampling of the
//!   one-hot `k`-th cell of a small latent grid (12×16 by default), so each
//!   latent value only changes the depth map locally;
//! * a *fitted* basis, the leading right singular vectors of a stack of
//!   training maps after removing their mean (or a linear feature regression).

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::codec::{self, TransformedDepth, RHO_MIN};
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Default latent grid: 192 values.
pub const DEFAULT_LATENT_GRID: (usize, usize) = (12, 16);

/// Latent code `z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentCode(pub Vec<f64>);

impl LatentCode {
    pub fn zeros(dim: usize) -> Self {
        LatentCode(vec![0.0; dim])
    }

    pub fn norm_squared(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }
}

/// Per-axis bilinear upsampling weights with aligned corners.
#[derive(Clone, Debug, PartialEq)]
struct AxisWeights {
    cell: Vec<usize>,
    frac: Vec<f64>,
    cells: usize,
}

impl AxisWeights {
    fn new(pixels: usize, cells: usize) -> Self {
        let mut cell = Vec::with_capacity(pixels);
        let mut frac = Vec::with_capacity(pixels);
        for x in 0..pixels {
            if cells == 1 || pixels == 1 {
                cell.push(0);
                frac.push(0.0);
                continue;
            }
            let pos = x as f64 * (cells - 1) as f64 / (pixels - 1) as f64;
            let c0 = (pos.floor() as usize).min(cells - 2);
            cell.push(c0);
            frac.push(pos - c0 as f64);
        }
        AxisWeights { cell, frac, cells }
    }

    /// `(cell, weight)` pairs touching pixel `x`.
    #[inline]
    fn taps(&self, x: usize) -> [(usize, f64); 2] {
        let c = self.cell[x];
        let f = self.frac[x];
        if self.cells == 1 {
            [(0, 1.0), (0, 0.0)]
        } else {
            [(c, 1.0 - f), (c + 1, f)]
        }
    }
}

/// The basis maps of a decoder.
#[derive(Clone, Debug, PartialEq)]
pub enum BasisMaps {
    /// Explicit maps, unit Frobenius norm and mutually orthogonal when fitted.
    Dense(Vec<Grid<f64>>),
    /// Bilinear upsampling of one-hot cells of a `rows × cols` latent grid;
    /// latent index `k = row · cols + col`.
    CoarseGrid { rows: usize, cols: usize },
}

/// How a basis was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisMode {
    Fitted,
    CoarseGrid,
}

/// Output of [`ShapeBasis::decode`].
#[derive(Clone, Debug)]
pub struct Decoded {
    pub transformed: TransformedDepth,
    /// Pixels where the affine map left `[ρ_min, 1]`.
    pub clamped: Grid<bool>,
    pub clamped_count: usize,
}

/// Linear decoder standing in for an image-conditioned depth network.
#[derive(Clone, Debug)]
pub struct ShapeBasis {
    width: usize,
    height: usize,
    pub mean_rho: Grid<f64>,
    maps: BasisMaps,
    x_weights: AxisWeights,
    y_weights: AxisWeights,
    /// Optional linear regression of the mean on image features:
    /// `ρ̄(f) = C_0 + Σ_i f_i C_{i+1}`.
    pub feature_regression: Option<Vec<Grid<f64>>>,
    pub provenance: String,
}

impl ShapeBasis {
    fn with_maps(width: usize, height: usize, mean_rho: Grid<f64>, maps: BasisMaps, provenance: String) -> Self {
        let (rows, cols) = match &maps {
            BasisMaps::CoarseGrid { rows, cols } => (*rows, *cols),
            BasisMaps::Dense(_) => (1, 1),
        };
        ShapeBasis {
            width,
            height,
            mean_rho,
            x_weights: AxisWeights::new(width, cols),
            y_weights: AxisWeights::new(height, rows),
            maps,
            feature_regression: None,
            provenance,
        }
    }

    /// Decoder with explicit basis maps.
    pub fn from_dense(mean_rho: Grid<f64>, maps: Vec<Grid<f64>>, provenance: impl Into<String>) -> Result<Self> {
        for m in &maps {
            mean_rho.ensure_same_shape(m)?;
        }
        Ok(Self::with_maps(
            mean_rho.width(),
            mean_rho.height(),
            mean_rho,
            BasisMaps::Dense(maps),
            provenance.into(),
        ))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn maps(&self) -> &BasisMaps {
        &self.maps
    }

    pub fn mode(&self) -> BasisMode {
        match self.maps {
            BasisMaps::Dense(_) => BasisMode::Fitted,
            BasisMaps::CoarseGrid { .. } => BasisMode::CoarseGrid,
        }
    }

    pub fn latent_grid_shape(&self) -> Option<(usize, usize)> {
        match self.maps {
            BasisMaps::CoarseGrid { rows, cols } => Some((rows, cols)),
            BasisMaps::Dense(_) => None,
        }
    }

    pub fn latent_dim(&self) -> usize {
        match &self.maps {
            BasisMaps::Dense(maps) => maps.len(),
            BasisMaps::CoarseGrid { rows, cols } => rows * cols,
        }
    }

    /// Replaces the mean map.
    pub fn with_mean(mut self, mean_rho: Grid<f64>) -> Result<Self> {
        self.mean_rho.ensure_same_shape(&mean_rho)?;
        self.mean_rho = mean_rho;
        Ok(self)
    }

    /// Mean map predicted from image features by the fitted regression.
    pub fn conditioned_on(&self, features: &[f64]) -> Result<ShapeBasis> {
        let coeffs = self
            .feature_regression
            .as_ref()
            .ok_or_else(|| Error::invalid("basis has no feature regression"))?;
        if features.len() + 1 != coeffs.len() {
            return Err(Error::mismatch(coeffs.len() - 1, features.len()));
        }
        let mut mean = coeffs[0].clone();
        for (f, c) in features.iter().zip(&coeffs[1..]) {
            for (m, v) in mean.as_mut_slice().iter_mut().zip(c.iter()) {
                *m += f * v;
            }
        }
        let mut out = self.clone();
        out.mean_rho = mean;
        Ok(out)
    }

    /// The `k`-th basis map as a dense grid.
    pub fn basis_map(&self, k: usize) -> Grid<f64> {
        match &self.maps {
            BasisMaps::Dense(maps) => maps[k].clone(),
            BasisMaps::CoarseGrid { .. } => {
                let mut z = vec![0.0; self.latent_dim()];
                z[k] = 1.0;
                self.apply_basis(&z)
            }
        }
    }

    /// `Σ_k z_k B_k` without the mean.
    pub fn apply_basis(&self, z: &[f64]) -> Grid<f64> {
        let mut out = Grid::filled(self.width, self.height, 0.0);
        self.add_basis(z, out.as_mut_slice());
        out
    }

    fn add_basis(&self, z: &[f64], out: &mut [f64]) {
        match &self.maps {
            BasisMaps::Dense(maps) => {
                for (zk, map) in z.iter().zip(maps) {
                    if *zk != 0.0 {
                        for (o, b) in out.iter_mut().zip(map.iter()) {
                            *o += zk * b;
                        }
                    }
                }
            }
            BasisMaps::CoarseGrid { cols, .. } => {
                for y in 0..self.height {
                    let ty = self.y_weights.taps(y);
                    for x in 0..self.width {
                        let tx = self.x_weights.taps(x);
                        let mut acc = 0.0;
                        for &(cy, wy) in &ty {
                            for &(cx, wx) in &tx {
                                acc += wy * wx * z[cy * cols + cx];
                            }
                        }
                        out[y * self.width + x] += acc;
                    }
                }
            }
        }
    }

    /// `ρ̄ + Σ z_k B_k` before clamping.
    pub fn affine(&self, z: &[f64]) -> Result<Grid<f64>> {
        if z.len() != self.latent_dim() {
            return Err(Error::mismatch(self.latent_dim(), z.len()));
        }
        let mut out = self.mean_rho.clone();
        self.add_basis(z, out.as_mut_slice());
        Ok(out)
    }

    /// Transformed depth for code `z` and mean depth `alpha`.
    pub fn decode(&self, z: &LatentCode, alpha: f64) -> Result<Decoded> {
        let raw = self.affine(&z.0)?;
        let clamped = raw.map(|&r| !(RHO_MIN..=1.0).contains(&r));
        let clamped_count = clamped.count_true();
        let rho = raw.map(|&r| codec::clamp_rho(r));
        Ok(Decoded {
            transformed: TransformedDepth::dense(rho, alpha),
            clamped,
            clamped_count,
        })
    }

    /// `Bᵀ g`: gradient with respect to `z` of a linear functional with
    /// per-pixel weights `g` on `ρ`.
    pub fn adjoint(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.latent_dim()];
        match &self.maps {
            BasisMaps::Dense(maps) => {
                for (o, map) in out.iter_mut().zip(maps) {
                    *o = map.iter().zip(g).map(|(b, v)| b * v).sum();
                }
            }
            BasisMaps::CoarseGrid { cols, .. } => {
                for y in 0..self.height {
                    let ty = self.y_weights.taps(y);
                    for x in 0..self.width {
                        let v = g[y * self.width + x];
                        if v == 0.0 {
                            continue;
                        }
                        let tx = self.x_weights.taps(x);
                        for &(cy, wy) in &ty {
                            for &(cx, wx) in &tx {
                                out[cy * cols + cx] += wy * wx * v;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Gram matrix `BᵀB`.
    pub fn gram(&self) -> DMatrix<f64> {
        let l = self.latent_dim();
        match &self.maps {
            BasisMaps::Dense(maps) => DMatrix::from_fn(l, l, |a, b| {
                maps[a].iter().zip(maps[b].iter()).map(|(x, y)| x * y).sum()
            }),
            BasisMaps::CoarseGrid { cols, .. } => {
                let mut g = DMatrix::zeros(l, l);
                for y in 0..self.height {
                    let ty = self.y_weights.taps(y);
                    for x in 0..self.width {
                        let tx = self.x_weights.taps(x);
                        let mut taps = [(0usize, 0.0f64); 4];
                        let mut n = 0;
                        for &(cy, wy) in &ty {
                            for &(cx, wx) in &tx {
                                taps[n] = (cy * cols + cx, wy * wx);
                                n += 1;
                            }
                        }
                        for &(a, wa) in &taps {
                            for &(b, wb) in &taps {
                                g[(a, b)] += wa * wb;
                            }
                        }
                    }
                }
                g
            }
        }
    }

    /// Least-squares code reproducing `target` (before clamping); minimum norm
    /// when the basis is rank deficient.
    pub fn project(&self, target: &Grid<f64>) -> Result<LatentCode> {
        self.mean_rho.ensure_same_shape(target)?;
        let l = self.latent_dim();
        if l == 0 {
            return Ok(LatentCode(Vec::new()));
        }
        let residual: Vec<f64> = target.iter().zip(self.mean_rho.iter()).map(|(t, m)| t - m).collect();
        let rhs = DVector::from_vec(self.adjoint(&residual));
        let svd = self.gram().svd(true, true);
        let tol = svd.singular_values.max() * 1e-12;
        let z = svd.solve(&rhs, tol).map_err(Error::invalid)?;
        Ok(LatentCode(z.iter().copied().collect()))
    }

    /// Squared Frobenius norm of all decoder parameters (mean and maps).
    pub fn parameter_norm_squared(&self) -> f64 {
        let maps: f64 = (0..self.latent_dim())
            .map(|k| self.basis_map(k).iter().map(|v| v * v).sum::<f64>())
            .sum();
        maps + self.mean_rho.iter().map(|v| v * v).sum::<f64>()
    }

    /// `Σ_k ‖B_k‖_∞`, a Lipschitz constant of the affine map in the max norm.
    pub fn lipschitz_bound(&self) -> f64 {
        (0..self.latent_dim())
            .map(|k| self.basis_map(k).iter().fold(0.0f64, |m, v| m.max(v.abs())))
            .sum()
    }
}

/// Image-independent basis: bilinear upsampling of one-hot cells of a
/// `coarse.0 × coarse.1` latent grid to `width × height`. The mean is zero.
pub fn coarse_grid_basis(height: usize, width: usize, coarse: (usize, usize)) -> Result<ShapeBasis> {
    if height == 0 || width == 0 || coarse.0 == 0 || coarse.1 == 0 {
        return Err(Error::invalid("grid dimensions must be positive"));
    }
    Ok(ShapeBasis::with_maps(
        width,
        height,
        Grid::filled(width, height, 0.0),
        BasisMaps::CoarseGrid {
            rows: coarse.0,
            cols: coarse.1,
        },
        format!("coarse-grid {}x{}", coarse.0, coarse.1),
    ))
}

/// Diagnostics of a basis fit.
#[derive(Clone, Debug)]
pub struct FitReport {
    pub requested_dim: usize,
    /// Singular values of the residual stack, descending.
    pub singular_values: Vec<f64>,
    /// Sum of squared residuals of the training grids after projection.
    pub training_residual: f64,
}

/// Fits mean and basis to training maps by truncated SVD of the residual
/// stack. With `features`, the mean is a linear regression on the features
/// and the basis spans what the features cannot explain.
pub fn fit_basis(
    train_rho: &[Grid<f64>],
    features: Option<&[Vec<f64>]>,
    latent_dim: usize,
) -> Result<(ShapeBasis, FitReport)> {
    let first = train_rho
        .first()
        .ok_or_else(|| Error::invalid("fit_basis needs at least one training map"))?;
    for g in train_rho {
        first.ensure_same_shape(g)?;
    }
    let (w, h) = (first.width(), first.height());
    let n = train_rho.len();
    if n < latent_dim + 1 {
        warn!("fit_basis: {n} training maps for latent_dim {latent_dim}; the basis will have reduced rank");
    }
    let y = DMatrix::from_fn(n, w * h, |r, c| train_rho[r].as_slice()[c]);

    let (explained, regression) = match features {
        None => {
            let mean = y.row_mean();
            let explained = DMatrix::from_fn(n, w * h, |_, c| mean[c]);
            (explained, None)
        }
        Some(feats) => {
            if feats.len() != n {
                return Err(Error::mismatch(n, feats.len()));
            }
            let f = feats[0].len();
            if feats.iter().any(|v| v.len() != f) {
                return Err(Error::invalid("feature vectors differ in length"));
            }
            let design = DMatrix::from_fn(n, f + 1, |r, c| if c == 0 { 1.0 } else { feats[r][c - 1] });
            let coef = crate::linear_model::pseudo_inverse(&design) * &y;
            let explained = &design * &coef;
            let grids = (0..=f)
                .map(|k| Grid::from_vec(w, h, coef.row(k).iter().copied().collect()).expect("shape"))
                .collect::<Vec<_>>();
            (explained, Some(grids))
        }
    };
    let residual = &y - &explained;
    let svd = residual.clone().svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sing: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    // directions below this carry only rounding noise of the data
    let cutoff = y.norm().max(f64::MIN_POSITIVE) * 1e-10;

    let mut maps = Vec::new();
    for (&idx, &s) in order.iter().zip(&sing).take(latent_dim) {
        if s <= cutoff {
            break;
        }
        maps.push(Grid::from_vec(w, h, vt.row(idx).iter().copied().collect())?);
    }
    if maps.len() < latent_dim {
        warn!(
            "fit_basis: residual stack supports only {} of {latent_dim} requested directions",
            maps.len()
        );
    }
    let training_residual: f64 = sing.iter().skip(maps.len()).map(|s| s * s).sum();

    let mean_grid = match &regression {
        Some(grids) => grids[0].clone(),
        None => Grid::from_vec(w, h, explained.row(0).iter().copied().collect())?,
    };
    let mut basis = ShapeBasis::from_dense(mean_grid, maps, format!("svd fit on {n} maps"))?;
    basis.feature_regression = regression;
    Ok((
        basis,
        FitReport {
            requested_dim: latent_dim,
            singular_values: sing,
            training_residual,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coarse_basis_is_partition_of_unity() {
        let b = coarse_grid_basis(24, 32, (4, 5)).unwrap();
        assert_eq!(b.latent_dim(), 20);
        let ones = b.apply_basis(&[1.0; 20]);
        assert!(ones.iter().all(|v| (v - 1.0).abs() < 1e-9));
        let corner = b.basis_map(0);
        assert_eq!(*corner.get(0, 0), 1.0);
        let c = b.apply_basis(&[0.37; 20]);
        assert!(c.iter().all(|v| (v - 0.37).abs() < 1e-12));
    }

    #[test]
    fn default_grid_has_192_values() {
        let b = coarse_grid_basis(192, 256, DEFAULT_LATENT_GRID).unwrap();
        assert_eq!(b.latent_dim(), 192);
        assert_eq!(b.width() * b.height(), 49152);
    }

    #[test]
    fn zero_code_decodes_to_mean() {
        let b = coarse_grid_basis(10, 12, (3, 4))
            .unwrap()
            .with_mean(Grid::from_fn(12, 10, |x, y| 0.3 + 0.01 * (x + y) as f64))
            .unwrap();
        let d = b.decode(&LatentCode::zeros(12), 2.0).unwrap();
        assert_eq!(d.transformed.rho, b.mean_rho);
        assert_eq!(d.clamped_count, 0);
    }

    #[test]
    fn decode_rejects_wrong_dimension() {
        let b = coarse_grid_basis(10, 12, (3, 4)).unwrap();
        assert!(b.decode(&LatentCode::zeros(5), 1.0).is_err());
    }

    #[test]
    fn adjoint_matches_dense_maps() {
        let b = coarse_grid_basis(9, 11, (3, 3)).unwrap();
        let g: Vec<f64> = (0..99).map(|i| ((i * 7) % 13) as f64 - 6.0).collect();
        let adj = b.adjoint(&g);
        for (k, a) in adj.iter().enumerate() {
            let dense: f64 = b.basis_map(k).iter().zip(&g).map(|(m, v)| m * v).sum();
            assert!((a - dense).abs() < 1e-10);
        }
    }

    #[test]
    fn fit_identical_maps_gives_that_mean() {
        let g = Grid::from_fn(5, 4, |x, y| 0.4 + 0.02 * (x * y) as f64);
        let (b, report) = fit_basis(&vec![g.clone(); 6], None, 3).unwrap();
        for (a, e) in b.mean_rho.iter().zip(g.iter()) {
            assert!((a - e).abs() < 1e-12);
        }
        assert_eq!(b.latent_dim(), 0);
        assert!(report.training_residual < 1e-20);
    }

    #[test]
    fn zero_latent_dim_is_constant_mean() {
        let maps: Vec<Grid<f64>> = (0..4).map(|k| Grid::filled(3, 3, 0.2 + 0.1 * k as f64)).collect();
        let (b, _) = fit_basis(&maps, None, 0).unwrap();
        assert_eq!(b.latent_dim(), 0);
        let d = b.decode(&LatentCode::zeros(0), 1.0).unwrap();
        assert!(d.transformed.rho.iter().all(|v| (v - 0.35).abs() < 1e-12));
    }

    #[test]
    fn project_recovers_code() {
        let b = coarse_grid_basis(16, 20, (4, 5)).unwrap().with_mean(Grid::filled(20, 16, 0.5)).unwrap();
        let z: Vec<f64> = (0..20).map(|k| 0.01 * k as f64 - 0.1).collect();
        let target = b.affine(&z).unwrap();
        let back = b.project(&target).unwrap();
        for (a, e) in back.0.iter().zip(&z) {
            assert!((a - e).abs() < 1e-9);
        }
    }
}
