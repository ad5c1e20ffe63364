//! Depth maps parameterized by a low-dimensional latent code and refined by
//! multiview photoconsistency.
//!
//! The crate is organized bottom-up:
//!
//! * [`linear_model`]: the orthographic matrix model that motivates a latent
//!   code next to image features;
//! * [`codec`]: the bounded `ρ = α/(D+α)` depth parameterization;
//! * [`geometry`], [`masking`], [`losses`]: warping between posed views,
//!   validity masks and the photometric and depth-consistency losses;
//! * [`decoder`], [`objective`], [`optimizer`]: a linear latent decoder and
//!   AdaMax refinement of codes over a co-visible set;
//! * [`covisibility`], [`metrics`], [`synth`], [`io`]: view selection,
//!   evaluation, a ray-cast scene generator and file formats.

pub mod codec;
pub mod covisibility;
pub mod decoder;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod linear_model;
pub mod losses;
pub mod masking;
pub mod metrics;
pub mod objective;
pub mod optimizer;
pub mod stats;
pub mod synth;

pub use codec::{DepthMap, TransformedDepth};
pub use decoder::{LatentCode, ShapeBasis};
pub use error::{Error, Result};
pub use geometry::{Image, Intrinsics, PosedView, RigidTransform, Vec3};
pub use grid::Grid;

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/matrix-model.md")]
    mod matrix_model {}
    #[doc = include_str!("../../../book/src/depth-codec.md")]
    mod depth_codec {}
    #[doc = include_str!("../../../book/src/warping-and-masks.md")]
    mod warping_and_masks {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/refinement.md")]
    mod refinement {}
    #[doc = include_str!("../../../book/src/covisibility.md")]
    mod covisibility {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
}
