//! Depth evaluation metrics with optional median scaling.
//!
//! Over the pixels valid in both maps with positive ground truth:
//!
//! * `rmse = sqrt(mean (d − g)²)`
//! * `abs_rel = mean |d − g| / g`, `sq_rel = mean (d − g)² / g`
//! * `si_rmse = sqrt(mean (r − mean r)²)` with `r = ln d − ln g`
//! * `δ_k` = fraction of pixels with `max(d/g, g/d) < 1.25^k`, `k = 1, 2, 3`
//!
//! The log and threshold metrics need `d > 0`; non-positive predictions are
//! left out of them and counted in [`MetricReport::non_positive`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::DepthMap;
use crate::error::{Error, Result};
use crate::stats;

pub const DELTA_BASE: f64 = 1.25;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub si_rmse: f64,
    pub delta_acc: [f64; 3],
    /// Factor applied to the prediction (1 without median scaling).
    pub scale: f64,
    pub n_pixels: usize,
    /// Predictions `≤ 0` excluded from the log and threshold metrics.
    pub non_positive: usize,
}

fn overlap(pred: &DepthMap, gt: &DepthMap) -> Result<Vec<(f64, f64)>> {
    pred.depth.ensure_same_shape(&gt.depth)?;
    let pairs: Vec<(f64, f64)> = (0..pred.depth.len())
        .filter(|&p| pred.valid.as_slice()[p] && gt.valid.as_slice()[p] && gt.depth.as_slice()[p] > 0.0)
        .map(|p| (pred.depth.as_slice()[p], gt.depth.as_slice()[p]))
        .collect();
    if pairs.is_empty() {
        return Err(Error::EmptyOverlap("no pixel is valid in both depth maps".into()));
    }
    Ok(pairs)
}

/// `Median(D_gt / D_pred)` over the valid overlap with positive depths.
pub fn median_scale(pred: &DepthMap, gt: &DepthMap) -> Result<f64> {
    let mut ratios: Vec<f64> = overlap(pred, gt)?
        .into_iter()
        .filter(|(d, _)| *d > 0.0)
        .map(|(d, g)| g / d)
        .collect();
    stats::median_in_place(&mut ratios)
        .ok_or_else(|| Error::EmptyOverlap("no positive prediction in the overlap".into()))
}

pub fn evaluate(pred: &DepthMap, gt: &DepthMap, apply_median_scale: bool) -> Result<MetricReport> {
    let scale = if apply_median_scale { median_scale(pred, gt)? } else { 1.0 };
    let pairs = overlap(pred, gt)?;
    let n = pairs.len() as f64;
    let mut sq = Vec::with_capacity(pairs.len());
    let mut abs_rel = Vec::with_capacity(pairs.len());
    let mut sq_rel = Vec::with_capacity(pairs.len());
    let mut logs = Vec::with_capacity(pairs.len());
    let mut hits = [0usize; 3];
    for &(d, g) in &pairs {
        let d = d * scale;
        let e = d - g;
        sq.push(e * e);
        abs_rel.push(e.abs() / g);
        sq_rel.push(e * e / g);
        if d > 0.0 {
            logs.push(d.ln() - g.ln());
            let ratio = (d / g).max(g / d);
            for (k, h) in hits.iter_mut().enumerate() {
                if ratio < DELTA_BASE.powi(k as i32 + 1) {
                    *h += 1;
                }
            }
        }
    }
    let positive = logs.len();
    let (si_rmse, delta_acc) = if positive == 0 {
        (f64::NAN, [0.0; 3])
    } else {
        let m = positive as f64;
        let mean = stats::pairwise_sum(&logs) / m;
        let centered: Vec<f64> = logs.iter().map(|r| (r - mean) * (r - mean)).collect();
        (
            (stats::pairwise_sum(&centered) / m).sqrt(),
            hits.map(|h| h as f64 / m),
        )
    };
    Ok(MetricReport {
        rmse: (stats::pairwise_sum(&sq) / n).sqrt(),
        abs_rel: stats::pairwise_sum(&abs_rel) / n,
        sq_rel: stats::pairwise_sum(&sq_rel) / n,
        si_rmse,
        delta_acc,
        scale,
        n_pixels: pairs.len(),
        non_positive: pairs.len() - positive,
    })
}

/// Evaluates frames in parallel (results in input order).
pub fn evaluate_frames(frames: &[(DepthMap, DepthMap)], apply_median_scale: bool) -> Result<Vec<MetricReport>> {
    frames
        .par_iter()
        .map(|(p, g)| evaluate(p, g, apply_median_scale))
        .collect()
}

/// Per-frame metrics averaged over frames (not pooled over pixels). Pixel
/// counts are summed.
pub fn mean_report(reports: &[MetricReport]) -> Result<MetricReport> {
    if reports.is_empty() {
        return Err(Error::invalid("no frames to average"));
    }
    let n = reports.len() as f64;
    let avg = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Ok(MetricReport {
        rmse: avg(|r| r.rmse),
        abs_rel: avg(|r| r.abs_rel),
        sq_rel: avg(|r| r.sq_rel),
        si_rmse: avg(|r| r.si_rmse),
        delta_acc: [avg(|r| r.delta_acc[0]), avg(|r| r.delta_acc[1]), avg(|r| r.delta_acc[2])],
        scale: avg(|r| r.scale),
        n_pixels: reports.iter().map(|r| r.n_pixels).sum(),
        non_positive: reports.iter().map(|r| r.non_positive).sum(),
    })
}
