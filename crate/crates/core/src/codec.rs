//! Bounded depth parameterization `ρ = α / (D + α)`.
//!
//! Metric depth `D ∈ [0, ∞)` maps to `ρ ∈ (0, 1]`, with `ρ = 1/2` exactly at the
//! mean depth `α`. Decoding clamps `ρ` to `[RHO_MIN, 1]` so depth stays finite.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Clamp floor for transformed depth; decoded depth never exceeds `α·(1/RHO_MIN − 1)`.
pub const RHO_MIN: f64 = 1e-4;

/// Metric depth with an explicit validity mask. Invalid pixels hold `0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthMap {
    pub depth: Grid<f64>,
    pub valid: Grid<bool>,
}

impl DepthMap {
    /// All pixels valid.
    pub fn dense(depth: Grid<f64>) -> Self {
        let valid = depth.map(|d| d.is_finite());
        DepthMap { depth, valid }
    }

    pub fn new(depth: Grid<f64>, valid: Grid<bool>) -> Result<Self> {
        depth.ensure_same_shape(&valid)?;
        for (d, &ok) in depth.iter().zip(valid.iter()) {
            if ok && !d.is_finite() {
                return Err(Error::invalid("valid depth pixel is not finite"));
            }
        }
        Ok(DepthMap { depth, valid })
    }

    pub fn width(&self) -> usize {
        self.depth.width()
    }

    pub fn height(&self) -> usize {
        self.depth.height()
    }

    /// Mean over valid pixels.
    pub fn mean(&self) -> Option<f64> {
        let (sum, n) = self
            .depth
            .iter()
            .zip(self.valid.iter())
            .filter(|(_, &ok)| ok)
            .fold((0.0, 0usize), |(s, n), (d, _)| (s + d, n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    pub fn scaled(&self, factor: f64) -> DepthMap {
        DepthMap {
            depth: self.depth.map(|d| d * factor),
            valid: self.valid.clone(),
        }
    }
}

/// Transformed depth `ρ` together with the mean depth `α` that anchors it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformedDepth {
    pub rho: Grid<f64>,
    pub alpha: f64,
    pub valid: Grid<bool>,
}

impl TransformedDepth {
    /// All pixels valid.
    pub fn dense(rho: Grid<f64>, alpha: f64) -> Self {
        let valid = Grid::filled(rho.width(), rho.height(), true);
        TransformedDepth { rho, alpha, valid }
    }
}

#[inline]
pub fn encode_value(depth: f64, alpha: f64) -> f64 {
    alpha / (depth + alpha)
}

#[inline]
pub fn clamp_rho(rho: f64) -> f64 {
    rho.clamp(RHO_MIN, 1.0)
}

#[inline]
pub fn decode_value(rho: f64, alpha: f64) -> f64 {
    let rho = clamp_rho(rho);
    alpha * (1.0 - rho) / rho
}

/// Encodes a depth map; invalid pixels become `ρ = 1` and stay flagged.
pub fn encode(d: &DepthMap, alpha: f64) -> Result<TransformedDepth> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    let mut rho = Grid::filled(d.width(), d.height(), 1.0);
    for (i, (&depth, &ok)) in d.depth.iter().zip(d.valid.iter()).enumerate() {
        if ok {
            if depth < 0.0 {
                return Err(Error::invalid(format!("negative depth {depth} at pixel {i}")));
            }
            rho.as_mut_slice()[i] = encode_value(depth, alpha);
        }
    }
    Ok(TransformedDepth {
        rho,
        alpha,
        valid: d.valid.clone(),
    })
}

/// Inverse of [`encode`] on the clamped range. Invalid pixels decode to `0`.
pub fn decode(t: &TransformedDepth) -> DepthMap {
    let mut depth = Grid::filled(t.rho.width(), t.rho.height(), 0.0);
    for (i, (&rho, &ok)) in t.rho.iter().zip(t.valid.iter()).enumerate() {
        if ok {
            depth.as_mut_slice()[i] = decode_value(rho, t.alpha);
        }
    }
    DepthMap {
        depth,
        valid: t.valid.clone(),
    }
}

/// Mean-consistency penalty `(1 − (1/N) Σ (1−ρ)/ρ)²` over valid pixels.
///
/// Zero exactly when `α` equals the mean of the decoded depth.
pub fn alpha_loss(t: &TransformedDepth) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (&rho, &ok) in t.rho.iter().zip(t.valid.iter()) {
        if ok {
            let rho = clamp_rho(rho);
            sum += (1.0 - rho) / rho;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyOverlap("alpha loss needs at least one valid pixel".into()));
    }
    let inner = 1.0 - sum / n as f64;
    Ok(inner * inner)
}
