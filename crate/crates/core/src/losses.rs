//! Photometric, depth-consistency, mean-depth and supervised losses.
//!
//! These are the reference (value-only) evaluations. The refinement objective
//! in [`crate::objective`] computes the same quantities together with their
//! gradients and is checked against these functions.

use serde::{Deserialize, Serialize};

use crate::codec::DepthMap;
use crate::error::{Error, Result};
use crate::geometry::{self, PosedView, RigidTransform};
use crate::grid::Grid;
use crate::stats::pairwise_sum;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_photo: f64,
    pub lambda_depth: f64,
    /// Huber threshold on intensity residuals (intensities in `[0, 1]`).
    pub huber_delta_photo: f64,
    /// Huber threshold on `α`-normalized depth residuals.
    pub huber_delta_depth: f64,
    /// Weight of `‖z‖²`.
    pub lambda_z: f64,
    /// Weight of the decoder parameter norm.
    pub lambda_w: f64,
    /// Sum per-pixel terms instead of averaging them per neighbour.
    pub raw_sum: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_photo: 100.0,
            lambda_depth: 10.0,
            huber_delta_photo: 0.1,
            huber_delta_depth: 0.1,
            lambda_z: 1e-4,
            lambda_w: 1e-4,
            raw_sum: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.huber_delta_photo > 0.0 && self.huber_delta_depth > 0.0) {
            return Err(Error::invalid("Huber thresholds must be positive"));
        }
        let weights = [self.lambda_photo, self.lambda_depth, self.lambda_z, self.lambda_w];
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("loss weights must be non-negative"));
        }
        Ok(())
    }

    /// Per-neighbour normalization factor for `kept` pixels.
    #[inline]
    pub fn normalizer(&self, kept: usize) -> f64 {
        if self.raw_sum || kept == 0 {
            1.0
        } else {
            1.0 / kept as f64
        }
    }
}

/// Huber penalty: `e²/(2δ)` inside `|e| ≤ δ`, `|e| − δ/2` outside.
pub fn huber(e: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::invalid(format!("Huber delta must be positive, got {delta}")));
    }
    Ok(huber_unchecked(e, delta))
}

#[inline]
pub fn huber_unchecked(e: f64, delta: f64) -> f64 {
    let a = e.abs();
    if a <= delta {
        e * e / (2.0 * delta)
    } else {
        a - 0.5 * delta
    }
}

/// Derivative of [`huber_unchecked`] with respect to `e`.
#[inline]
pub fn huber_derivative(e: f64, delta: f64) -> f64 {
    if e.abs() <= delta {
        e / delta
    } else {
        e.signum()
    }
}

/// Element-wise Huber penalty of a grid.
pub fn huber_grid(e: &Grid<f64>, delta: f64) -> Result<Grid<f64>> {
    huber(0.0, delta)?;
    Ok(e.map(|&v| huber_unchecked(v, delta)))
}

/// One neighbour's contribution to a loss term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NeighbourTerm {
    pub value: f64,
    pub kept: usize,
}

/// A per-view loss term and its per-neighbour parts.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TermValue {
    pub value: f64,
    pub neighbours: Vec<NeighbourTerm>,
    /// Neighbours that contributed nothing because no pixel was kept.
    pub empty_neighbours: Vec<usize>,
}

impl TermValue {
    pub fn kept(&self) -> usize {
        self.neighbours.iter().map(|n| n.kept).sum()
    }
}

fn finish_term(lambda: f64, neighbours: Vec<NeighbourTerm>) -> TermValue {
    let empty_neighbours = neighbours
        .iter()
        .enumerate()
        .filter(|(_, n)| n.kept == 0)
        .map(|(k, _)| k)
        .collect();
    let value = lambda * neighbours.iter().map(|n| n.value).sum::<f64>();
    TermValue {
        value,
        neighbours,
        empty_neighbours,
    }
}

/// `λ_p Σ_j ‖M_ij ⊙ (I_j ∘ q_ij − I_i)‖_δ` with channel-averaged residuals,
/// each neighbour normalized by its kept-pixel count.
pub fn photometric_loss(
    view_i: &PosedView,
    views_j: &[&PosedView],
    depth_i: &DepthMap,
    masks: &[&Grid<bool>],
    config: &LossConfig,
) -> Result<TermValue> {
    config.validate()?;
    if views_j.is_empty() {
        return Err(Error::invalid("photometric loss needs at least one neighbour"));
    }
    if masks.len() != views_j.len() {
        return Err(Error::mismatch(views_j.len(), masks.len()));
    }
    let gray_i = view_i.image.gray();
    let points = geometry::backproject(&view_i.coords, depth_i)?;
    let mut neighbours = Vec::with_capacity(views_j.len());
    for (view_j, mask) in views_j.iter().zip(masks) {
        points.ensure_same_shape(mask)?;
        let gray_j = view_j.image.gray();
        let t_ij = RigidTransform::relative(&view_i.pose, &view_j.pose);
        let warped = geometry::warp(&points, &t_ij);
        let mut terms = Vec::new();
        for (p, &keep) in mask.iter().enumerate() {
            if !keep || !warped.chirality.as_slice()[p] {
                continue;
            }
            let q = view_j.intrinsics.to_pixel(warped.coords.as_slice()[p]);
            if let Some(sample) = geometry::sample_scalar(&gray_j, q[0], q[1]) {
                let e = sample - gray_i.as_slice()[p];
                terms.push(huber_unchecked(e, config.huber_delta_photo));
            }
        }
        let kept = terms.len();
        neighbours.push(NeighbourTerm {
            value: config.normalizer(kept) * pairwise_sum(&terms),
            kept,
        });
    }
    Ok(finish_term(config.lambda_photo, neighbours))
}

/// Depth inputs for one neighbour `j` of view `i`.
#[derive(Clone, Copy, Debug)]
pub struct DepthNeighbour<'a> {
    /// `D_j ∘ q_ij`.
    pub sampled: &'a Grid<f64>,
    /// `D_ij`, the depth of `X_i` in camera `j`.
    pub projected: &'a Grid<f64>,
    pub alpha_j: f64,
    pub mask: &'a Grid<bool>,
}

/// `λ_d Σ_j ‖(1/α_j) M_ij ⊙ (D_j ∘ q_ij − D_ij)‖_δ`, each neighbour
/// normalized by its kept-pixel count.
pub fn depth_consistency_loss(neighbours: &[DepthNeighbour<'_>], config: &LossConfig) -> Result<TermValue> {
    config.validate()?;
    if neighbours.is_empty() {
        return Err(Error::invalid("depth loss needs at least one neighbour"));
    }
    let mut parts = Vec::with_capacity(neighbours.len());
    for nb in neighbours {
        if !(nb.alpha_j > 0.0) {
            return Err(Error::invalid("alpha_j must be positive"));
        }
        nb.sampled.ensure_same_shape(nb.projected)?;
        nb.sampled.ensure_same_shape(nb.mask)?;
        let terms: Vec<f64> = nb
            .mask
            .iter()
            .enumerate()
            .filter(|(_, &keep)| keep)
            .map(|(p, _)| {
                let r = (nb.sampled.as_slice()[p] - nb.projected.as_slice()[p]) / nb.alpha_j;
                huber_unchecked(r, config.huber_delta_depth)
            })
            .collect();
        let kept = terms.len();
        parts.push(NeighbourTerm {
            value: config.normalizer(kept) * pairwise_sum(&terms),
            kept,
        });
    }
    Ok(finish_term(config.lambda_depth, parts))
}

/// `‖D − D_gt‖² + λ₁‖z‖² + λ₂·‖W‖²` over pixels valid in both maps.
pub fn supervised_loss(
    d: &DepthMap,
    d_gt: &DepthMap,
    z: &[f64],
    weights_norm: f64,
    lambda1: f64,
    lambda2: f64,
) -> Result<f64> {
    d.depth.ensure_same_shape(&d_gt.depth)?;
    if !(lambda1 >= 0.0 && lambda2 >= 0.0) {
        return Err(Error::invalid("regularization weights must be non-negative"));
    }
    let terms: Vec<f64> = (0..d.depth.len())
        .filter(|&p| d.valid.as_slice()[p] && d_gt.valid.as_slice()[p])
        .map(|p| (d.depth.as_slice()[p] - d_gt.depth.as_slice()[p]).powi(2))
        .collect();
    if terms.is_empty() {
        return Err(Error::EmptyOverlap("supervised loss".into()));
    }
    let z2: f64 = z.iter().map(|v| v * v).sum();
    Ok(pairwise_sum(&terms) + lambda1 * z2 + lambda2 * weights_norm * weights_norm)
}

/// Per-term decomposition of the self-supervised objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub photo: f64,
    pub depth: f64,
    pub alpha: f64,
    pub z_reg: f64,
    pub w_reg: f64,
    pub total: f64,
    pub photo_pixels: usize,
    pub depth_pixels: usize,
}

/// Already-evaluated terms of one view in a co-visible set.
#[derive(Clone, Copy, Debug)]
pub struct ViewTerms<'a> {
    pub photo: &'a TermValue,
    pub depth: &'a TermValue,
    pub alpha: f64,
    pub z: &'a [f64],
}

/// `Σ_i (L_photo_i + L_depth_i + L_α_i + λ₁‖z_i‖²) + λ₂‖W‖²`.
pub fn total_self_supervised(views: &[ViewTerms<'_>], weights_norm: f64, config: &LossConfig) -> Result<LossBreakdown> {
    if views.len() < 2 {
        return Err(Error::invalid("a co-visible set needs at least two views"));
    }
    let mut b = LossBreakdown::default();
    for v in views {
        b.photo += v.photo.value;
        b.depth += v.depth.value;
        b.alpha += v.alpha;
        b.z_reg += config.lambda_z * v.z.iter().map(|x| x * x).sum::<f64>();
        b.photo_pixels += v.photo.kept();
        b.depth_pixels += v.depth.kept();
    }
    b.w_reg = config.lambda_w * weights_norm * weights_norm;
    b.total = b.photo + b.depth + b.alpha + b.z_reg + b.w_reg;
    Ok(b)
}
