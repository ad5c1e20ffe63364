//! Per-pixel validity masks for transferring a view into a neighbour:
//! field of view, chirality, robust occlusion rejection and shallow viewing
//! angles.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::codec::DepthMap;
use crate::error::Result;
use crate::geometry::{self, Intrinsics, RigidTransform, Vec3};
use crate::grid::Grid;
use crate::stats;

/// Which side of the robust band counts as occluded.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OcclusionRule {
    /// Occluded when `Δ < median − τ·MAD`: the neighbour sees something in
    /// front of the transferred point.
    #[default]
    OneSided,
    /// Occluded when `Δ ≥ median − τ·MAD`, the inequality as literally
    /// printed. Masks most pixels; kept for comparison only.
    Literal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskConfig {
    /// Width of the accepted band in raw MAD units.
    pub tau: f64,
    /// Largest accepted angle between surface normal and viewing ray.
    pub max_view_angle_deg: f64,
    /// Below this many valid pixels the occlusion test is skipped.
    pub min_samples: usize,
    pub occlusion_rule: OcclusionRule,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            tau: 4.44,
            max_view_angle_deg: 85.0,
            min_samples: 16,
            occlusion_rule: OcclusionRule::OneSided,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OcclusionResult {
    /// `true` = keep.
    pub keep: Grid<bool>,
    pub median: f64,
    pub mad: f64,
    /// Too few valid pixels; everything kept.
    pub skipped: bool,
}

/// Robust occlusion classification of `Δ = sampled − projected` over the
/// `valid` pixels, with median and raw MAD taken over the whole image pair.
pub fn occlusion_mask(
    sampled: &Grid<f64>,
    projected: &Grid<f64>,
    valid: &Grid<bool>,
    config: &MaskConfig,
) -> Result<OcclusionResult> {
    sampled.ensure_same_shape(projected)?;
    sampled.ensure_same_shape(valid)?;
    let mut keep = Grid::filled(sampled.width(), sampled.height(), true);
    let deltas: Vec<(usize, f64)> = valid
        .iter()
        .enumerate()
        .filter(|(_, &ok)| ok)
        .map(|(i, _)| (i, sampled.as_slice()[i] - projected.as_slice()[i]))
        .collect();
    if deltas.len() < config.min_samples.max(1) {
        warn!(
            "occlusion test skipped: {} valid pixels (< {})",
            deltas.len(),
            config.min_samples
        );
        return Ok(OcclusionResult {
            keep,
            median: f64::NAN,
            mad: f64::NAN,
            skipped: true,
        });
    }
    let values: Vec<f64> = deltas.iter().map(|&(_, d)| d).collect();
    let (median, mad) = stats::median_mad(&values).expect("non-empty");
    let threshold = median - config.tau * mad;
    for &(i, d) in &deltas {
        let occluded = match config.occlusion_rule {
            OcclusionRule::OneSided => d < threshold,
            OcclusionRule::Literal => d >= threshold,
        };
        if occluded {
            keep.as_mut_slice()[i] = false;
        }
    }
    Ok(OcclusionResult {
        keep,
        median,
        mad,
        skipped: false,
    })
}

/// Keeps pixels whose normal is within `max_angle_deg` of the direction back
/// to the camera; invalid normals are rejected.
pub fn viewing_angle_mask(normals: &Grid<Option<Vec3>>, points: &Grid<Vec3>, max_angle_deg: f64) -> Result<Grid<bool>> {
    normals.ensure_same_shape(points)?;
    let mut keep = Grid::filled(points.width(), points.height(), false);
    for (i, n) in normals.iter().enumerate() {
        if let Some(n) = n {
            keep.as_mut_slice()[i] = geometry::viewing_angle_deg(n, &points.as_slice()[i]) <= max_angle_deg;
        }
    }
    Ok(keep)
}

/// Number of pixels rejected by each test.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskCounts {
    pub total: usize,
    pub bounds: usize,
    pub chirality: usize,
    pub occlusion: usize,
    pub viewing_angle: usize,
    pub kept: usize,
}

/// Combined validity `M_ij` and its components (`true` = keep).
#[derive(Clone, Debug)]
pub struct MaskGrid {
    pub bounds: Grid<bool>,
    pub chirality: Grid<bool>,
    pub occlusion: Grid<bool>,
    pub viewing_angle: Grid<bool>,
    pub combined: Grid<bool>,
    pub counts: MaskCounts,
}

pub fn combine(
    bounds: Grid<bool>,
    chirality: Grid<bool>,
    occlusion: Grid<bool>,
    viewing_angle: Grid<bool>,
) -> Result<MaskGrid> {
    bounds.ensure_same_shape(&chirality)?;
    bounds.ensure_same_shape(&occlusion)?;
    bounds.ensure_same_shape(&viewing_angle)?;
    let mut combined = bounds.clone();
    for (i, c) in combined.as_mut_slice().iter_mut().enumerate() {
        *c = *c && chirality.as_slice()[i] && occlusion.as_slice()[i] && viewing_angle.as_slice()[i];
    }
    let rejected = |g: &Grid<bool>| g.len() - g.count_true();
    let counts = MaskCounts {
        total: bounds.len(),
        bounds: rejected(&bounds),
        chirality: rejected(&chirality),
        occlusion: rejected(&occlusion),
        viewing_angle: rejected(&viewing_angle),
        kept: combined.count_true(),
    };
    Ok(MaskGrid {
        bounds,
        chirality,
        occlusion,
        viewing_angle,
        combined,
        counts,
    })
}

/// Everything needed to mask one ordered view pair.
#[derive(Clone, Debug)]
pub struct PairMask {
    pub mask: MaskGrid,
    /// `D_j ∘ q_ij` where in bounds, `0` elsewhere.
    pub sampled_depth: Grid<f64>,
    /// `D_ij`.
    pub projected_depth: Grid<f64>,
    pub occlusion: OcclusionResult,
}

/// Builds `M_ij` from the current depth estimates of both views.
///
/// `viewing_angle` is the per-view mask of view `i` (see
/// [`viewing_angle_mask`]); it does not depend on the neighbour.
pub fn build_pair_mask(
    points_i: &Grid<Vec3>,
    valid_i: &Grid<bool>,
    viewing_angle: &Grid<bool>,
    depth_j: &DepthMap,
    intrinsics_j: &Intrinsics,
    t_ij: &RigidTransform,
    config: &MaskConfig,
) -> Result<PairMask> {
    let warped = geometry::warp(points_i, t_ij);
    let (w, h) = (points_i.width(), points_i.height());
    let mut bounds = Grid::filled(w, h, false);
    let mut sampled = Grid::filled(w, h, 0.0);
    let mut chirality = warped.chirality.clone();
    for i in 0..points_i.len() {
        if !valid_i.as_slice()[i] {
            chirality.as_mut_slice()[i] = false;
            continue;
        }
        if !warped.chirality.as_slice()[i] {
            continue;
        }
        let p = intrinsics_j.to_pixel(warped.coords.as_slice()[i]);
        if let Some(taps) = geometry::bilinear_taps(depth_j.width(), depth_j.height(), p[0], p[1]) {
            // every tap must carry a valid depth in the neighbour
            let weights = taps.weights(depth_j.width());
            if weights.iter().all(|&(k, _)| depth_j.valid.as_slice()[k]) {
                bounds.as_mut_slice()[i] = true;
                sampled.as_mut_slice()[i] = weights
                    .iter()
                    .map(|&(k, wt)| wt * depth_j.depth.as_slice()[k])
                    .sum();
            }
        }
    }
    let valid: Grid<bool> = Grid::from_fn(w, h, |x, y| *bounds.get(x, y) && *chirality.get(x, y));
    let occlusion = occlusion_mask(&sampled, &warped.depth, &valid, config)?;
    let mask = combine(bounds, chirality, occlusion.keep.clone(), viewing_angle.clone())?;
    Ok(PairMask {
        mask,
        sampled_depth: sampled,
        projected_depth: warped.depth,
        occlusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(values: &[f64]) -> Grid<f64> {
        Grid::from_vec(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn constant_delta_masks_nothing() {
        let sampled = grid(&[3.0; 20]);
        let projected = grid(&[2.0; 20]);
        let valid = Grid::filled(20, 1, true);
        let r = occlusion_mask(&sampled, &projected, &valid, &MaskConfig::default()).unwrap();
        assert_eq!(r.mad, 0.0);
        assert_eq!(r.keep.count_true(), 20);
    }

    #[test]
    fn single_outlier_is_masked() {
        // Δ: nine at 0, ten at ±0.1, one at -10
        let mut delta = vec![0.0; 9];
        delta.extend([0.1, -0.1, 0.1, -0.1, 0.1, -0.1, 0.1, -0.1, 0.1, -0.1]);
        delta.push(-10.0);
        let n = delta.len();
        let (med, mad) = stats::median_mad(&delta).unwrap();
        assert_eq!(med, 0.0);
        assert!((mad - 0.1).abs() < 1e-15);
        let r = occlusion_mask(&grid(&delta), &grid(&vec![0.0; n]), &Grid::filled(n, 1, true), &MaskConfig::default()).unwrap();
        assert!(!r.keep.get(n - 1, 0));
        assert_eq!(r.keep.count_true(), n - 1);
    }

    #[test]
    fn positive_outliers_are_kept_by_one_sided_rule() {
        let mut delta = vec![0.0; 20];
        delta[3] = 10.0;
        let r = occlusion_mask(&grid(&delta), &grid(&[0.0; 20]), &Grid::filled(20, 1, true), &MaskConfig::default()).unwrap();
        assert!(r.keep.get(3, 0));
    }

    #[test]
    fn literal_rule_masks_the_majority() {
        let delta: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let cfg = MaskConfig {
            occlusion_rule: OcclusionRule::Literal,
            ..MaskConfig::default()
        };
        let r = occlusion_mask(&grid(&delta), &grid(&[0.0; 40]), &Grid::filled(40, 1, true), &cfg).unwrap();
        assert!(r.keep.count_true() < 20);
    }

    #[test]
    fn too_few_samples_keeps_everything() {
        let valid = Grid::filled(20, 1, false);
        let r = occlusion_mask(&grid(&[0.0; 20]), &grid(&[5.0; 20]), &valid, &MaskConfig::default()).unwrap();
        assert!(r.skipped);
        assert_eq!(r.keep.count_true(), 20);
    }

    #[test]
    fn combine_is_elementwise_and() {
        let t = Grid::filled(3, 2, true);
        let f = Grid::filled(3, 2, false);
        let all = combine(t.clone(), t.clone(), t.clone(), t.clone()).unwrap();
        assert_eq!(all.combined.count_true(), 6);
        let none = combine(t.clone(), t.clone(), f.clone(), t.clone()).unwrap();
        assert_eq!(none.combined.count_true(), 0);
        assert_eq!(none.counts.occlusion, 6);
        assert!(combine(t.clone(), Grid::filled(2, 3, true), t.clone(), t).is_err());
    }

    #[test]
    fn viewing_angle_threshold() {
        let pts = Grid::filled(1, 1, Vec3::new(0.0, 0.0, 4.0));
        let tilted = |deg: f64| {
            let r = deg.to_radians();
            Grid::filled(1, 1, Some(Vec3::new(r.sin(), 0.0, -r.cos())))
        };
        assert!(viewing_angle_mask(&tilted(0.0), &pts, 85.0).unwrap().get(0, 0));
        assert!(viewing_angle_mask(&tilted(84.0), &pts, 85.0).unwrap().get(0, 0));
        assert!(!viewing_angle_mask(&tilted(86.0), &pts, 85.0).unwrap().get(0, 0));
        assert!(!viewing_angle_mask(&Grid::filled(1, 1, None), &pts, 85.0).unwrap().get(0, 0));
    }
}
