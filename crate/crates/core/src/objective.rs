//! The refinement objective over a co-visible set, with analytic gradients
//! with respect to every latent code and mean depth.
//!
//! Masks are computed from the current estimates by [`Problem::compute_masks`]
//! and then held fixed; the evaluation intersects them with the current field
//! of view and chirality so a pixel whose warp leaves the neighbour simply
//! stops contributing. Bilinear tap selection is frozen per evaluation.
//!
//! Every ordered pair `(i, j)` is evaluated independently (in parallel) and
//! the results are reduced sequentially in pair order, so values and
//! gradients are bit-identical for any thread count.

use rayon::prelude::*;

use crate::codec::{self, DepthMap, TransformedDepth};
use crate::decoder::{Decoded, LatentCode, ShapeBasis};
use crate::error::{Error, Result};
use crate::geometry::{self, PosedView, RigidTransform, Vec3};
use crate::grid::Grid;
use crate::losses::{huber_derivative, huber_unchecked, LossBreakdown, LossConfig};
use crate::masking::{self, MaskConfig, MaskCounts};
use crate::stats::pairwise_sum;

/// Optimization variables of a co-visible set.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub z: Vec<LatentCode>,
    pub alpha: Vec<f64>,
}

impl Params {
    pub fn zeros(views: usize, latent_dim: usize, alpha: Vec<f64>) -> Self {
        Params {
            z: vec![LatentCode::zeros(latent_dim); views],
            alpha,
        }
    }
}

/// Masks of every ordered pair, in [`Problem::pairs`] order.
#[derive(Clone, Debug)]
pub struct FrozenMasks {
    pub masks: Vec<Grid<bool>>,
    pub counts: Vec<MaskCounts>,
}

/// Loss value and (optionally) gradient.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub breakdown: LossBreakdown,
    /// `∂L/∂z_i`; empty when no gradient was requested.
    pub grad_z: Vec<Vec<f64>>,
    /// `∂L/∂α_i`; empty when no gradient was requested.
    pub grad_alpha: Vec<f64>,
    /// Pairs with no kept pixel.
    pub empty_pairs: Vec<(usize, usize)>,
    /// Pixels clamped by the decoder, summed over views.
    pub clamped: usize,
}

/// A co-visible set with its decoders and loss settings.
pub struct Problem<'a> {
    views: &'a [PosedView],
    bases: Vec<&'a ShapeBasis>,
    grays: Vec<Grid<f64>>,
    pairs: Vec<(usize, usize)>,
    pub loss: LossConfig,
    pub mask: MaskConfig,
}

struct PairResult {
    photo: f64,
    depth: f64,
    kept: usize,
    grad_i: Vec<f64>,
    grad_j: Vec<f64>,
    grad_alpha_j: f64,
}

impl<'a> Problem<'a> {
    /// `bases` holds either one decoder shared by all views or one per view.
    pub fn new(views: &'a [PosedView], bases: &[&'a ShapeBasis], loss: LossConfig, mask: MaskConfig) -> Result<Self> {
        loss.validate()?;
        if views.len() < 2 {
            return Err(Error::invalid("refinement needs at least two views"));
        }
        let bases: Vec<&ShapeBasis> = match bases.len() {
            1 => vec![bases[0]; views.len()],
            n if n == views.len() => bases.to_vec(),
            n => return Err(Error::mismatch(views.len(), n)),
        };
        for (v, b) in views.iter().zip(&bases) {
            if v.width() != b.width() || v.height() != b.height() {
                return Err(Error::mismatch(
                    format!("{}x{}", v.width(), v.height()),
                    format!("{}x{}", b.width(), b.height()),
                ));
            }
        }
        let grays = views.iter().map(|v| v.image.gray()).collect();
        let pairs = (0..views.len())
            .flat_map(|i| (0..views.len()).filter(move |&j| j != i).map(move |j| (i, j)))
            .collect();
        Ok(Problem {
            views,
            bases,
            grays,
            pairs,
            loss,
            mask,
        })
    }

    pub fn views(&self) -> &[PosedView] {
        self.views
    }

    pub fn basis(&self, view: usize) -> &ShapeBasis {
        self.bases[view]
    }

    /// Ordered pairs `(i, j)`, `i ≠ j`, in evaluation order.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    fn check(&self, params: &Params) -> Result<()> {
        if params.z.len() != self.views.len() || params.alpha.len() != self.views.len() {
            return Err(Error::mismatch(self.views.len(), params.z.len().min(params.alpha.len())));
        }
        if let Some(a) = params.alpha.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return Err(Error::invalid(format!("alpha must be positive, got {a}")));
        }
        Ok(())
    }

    pub fn decode_all(&self, params: &Params) -> Result<Vec<Decoded>> {
        self.check(params)?;
        params
            .z
            .iter()
            .zip(&params.alpha)
            .zip(&self.bases)
            .map(|((z, &a), b)| b.decode(z, a))
            .collect()
    }

    /// Decoded metric depth of every view.
    pub fn depth_maps(&self, params: &Params) -> Result<Vec<DepthMap>> {
        Ok(self
            .decode_all(params)?
            .iter()
            .map(|d| codec::decode(&d.transformed))
            .collect())
    }

    /// Recomputes all pair masks from the current depth estimates.
    pub fn compute_masks(&self, params: &Params) -> Result<FrozenMasks> {
        let depths = self.depth_maps(params)?;
        self.masks_for_depths(&depths)
    }

    /// Pair masks for explicitly given depth maps.
    pub fn masks_for_depths(&self, depths: &[DepthMap]) -> Result<FrozenMasks> {
        let built = self.pair_masks(depths)?;
        Ok(FrozenMasks {
            counts: built.iter().map(|b| b.mask.counts).collect(),
            masks: built.into_iter().map(|b| b.mask.combined).collect(),
        })
    }

    /// Full per-category masks of every pair, in the order of [`Problem::pairs`].
    pub fn pair_masks(&self, depths: &[DepthMap]) -> Result<Vec<masking::PairMask>> {
        if depths.len() != self.views.len() {
            return Err(Error::mismatch(self.views.len(), depths.len()));
        }
        let per_view: Vec<(Grid<Vec3>, Grid<bool>)> = self
            .views
            .par_iter()
            .zip(depths)
            .map(|(v, d)| {
                let points = geometry::backproject(&v.coords, d)?;
                let normals = geometry::estimate_normals(&points)?;
                let angle = masking::viewing_angle_mask(&normals, &points, self.mask.max_view_angle_deg)?;
                Ok((points, angle))
            })
            .collect::<Result<_>>()?;
        self.pairs
            .par_iter()
            .map(|&(i, j)| {
                let t_ij = RigidTransform::relative(&self.views[i].pose, &self.views[j].pose);
                masking::build_pair_mask(
                    &per_view[i].0,
                    &depths[i].valid,
                    &per_view[i].1,
                    &depths[j],
                    &self.views[j].intrinsics,
                    &t_ij,
                    &self.mask,
                )
            })
            .collect()
    }

    /// Every pair mask set to `true`; bounds and chirality still apply.
    pub fn open_masks(&self) -> FrozenMasks {
        let (w, h) = (self.views[0].width(), self.views[0].height());
        FrozenMasks {
            masks: vec![Grid::filled(w, h, true); self.pairs.len()],
            counts: vec![MaskCounts::default(); self.pairs.len()],
        }
    }

    fn pair_terms(
        &self,
        (i, j): (usize, usize),
        depth_i: &Grid<f64>,
        depth_j: &Grid<f64>,
        alpha_j: f64,
        mask: &Grid<bool>,
        with_grad: bool,
    ) -> PairResult {
        let cfg = &self.loss;
        let (vi, vj) = (&self.views[i], &self.views[j]);
        let t = RigidTransform::relative(&vi.pose, &vj.pose);
        let k = vj.intrinsics;
        let (wj, hj) = (vj.width(), vj.height());
        let gray_i = self.grays[i].as_slice();
        let gray_j = self.grays[j].as_slice();
        let dj = depth_j.as_slice();

        struct Record {
            p: usize,
            taps: geometry::Taps,
            photo_slope: f64,
            depth_slope: f64,
            r: f64,
            du: f64,
            dv: f64,
            az: f64,
            su: f64,
            sv: f64,
            du_depth: f64,
            dv_depth: f64,
        }

        let mut photo_terms = Vec::new();
        let mut depth_terms = Vec::new();
        let mut records = Vec::new();
        for (p, &keep) in mask.iter().enumerate() {
            if !keep {
                continue;
            }
            let q = vi.coords.as_slice()[p];
            let d = depth_i.as_slice()[p];
            let a = t.rotation * Vec3::new(q[0], q[1], 1.0);
            let y = a * d + t.translation;
            if !(y.z > 0.0) {
                continue;
            }
            let u = k.fx * y.x / y.z + k.cx;
            let v = k.fy * y.y / y.z + k.cy;
            let Some(taps) = geometry::bilinear_taps(wj, hj, u, v) else {
                continue;
            };
            let (s, su, sv) = taps.eval_with_gradient(gray_j, wj);
            let e = s - gray_i[p];
            photo_terms.push(huber_unchecked(e, cfg.huber_delta_photo));
            let (sd, sdu, sdv) = taps.eval_with_gradient(dj, wj);
            let r = (sd - y.z) / alpha_j;
            depth_terms.push(huber_unchecked(r, cfg.huber_delta_depth));
            if with_grad {
                let z2 = y.z * y.z;
                records.push(Record {
                    p,
                    taps,
                    photo_slope: huber_derivative(e, cfg.huber_delta_photo),
                    depth_slope: huber_derivative(r, cfg.huber_delta_depth),
                    r,
                    du: k.fx * (a.x * y.z - y.x * a.z) / z2,
                    dv: k.fy * (a.y * y.z - y.y * a.z) / z2,
                    az: a.z,
                    su,
                    sv,
                    du_depth: sdu,
                    dv_depth: sdv,
                });
            }
        }
        let kept = photo_terms.len();
        let wp = cfg.lambda_photo * cfg.normalizer(kept);
        let wd = cfg.lambda_depth * cfg.normalizer(kept);
        let mut out = PairResult {
            photo: wp * pairwise_sum(&photo_terms),
            depth: wd * pairwise_sum(&depth_terms),
            kept,
            grad_i: Vec::new(),
            grad_j: Vec::new(),
            grad_alpha_j: 0.0,
        };
        if with_grad {
            out.grad_i = vec![0.0; depth_i.len()];
            out.grad_j = vec![0.0; depth_j.len()];
            for rec in &records {
                let gd = wd * rec.depth_slope / alpha_j;
                out.grad_i[rec.p] += wp * rec.photo_slope * (rec.su * rec.du + rec.sv * rec.dv)
                    + gd * (rec.du_depth * rec.du + rec.dv_depth * rec.dv - rec.az);
                for (idx, w) in rec.taps.weights(wj) {
                    out.grad_j[idx] += gd * w;
                }
                out.grad_alpha_j -= gd * rec.r;
            }
        }
        out
    }

    /// Loss over the set with `masks` frozen; gradient when `with_grad`.
    pub fn evaluate(&self, params: &Params, masks: &FrozenMasks, with_grad: bool) -> Result<Evaluation> {
        let decoded = self.decode_all(params)?;
        if masks.masks.len() != self.pairs.len() {
            return Err(Error::mismatch(self.pairs.len(), masks.masks.len()));
        }
        let depths: Vec<Grid<f64>> = decoded.iter().map(|d| codec::decode(&d.transformed).depth).collect();

        let results: Vec<PairResult> = self
            .pairs
            .par_iter()
            .zip(&masks.masks)
            .map(|(&(i, j), mask)| self.pair_terms((i, j), &depths[i], &depths[j], params.alpha[j], mask, with_grad))
            .collect();

        let n_views = self.views.len();
        let mut b = LossBreakdown::default();
        let mut empty_pairs = Vec::new();
        let mut grad_depth: Vec<Vec<f64>> = if with_grad {
            depths.iter().map(|d| vec![0.0; d.len()]).collect()
        } else {
            Vec::new()
        };
        let mut grad_alpha = vec![0.0; if with_grad { n_views } else { 0 }];
        for (&(i, j), r) in self.pairs.iter().zip(&results) {
            b.photo += r.photo;
            b.depth += r.depth;
            b.photo_pixels += r.kept;
            b.depth_pixels += r.kept;
            if r.kept == 0 {
                empty_pairs.push((i, j));
            }
            if with_grad {
                for (g, v) in grad_depth[i].iter_mut().zip(&r.grad_i) {
                    *g += v;
                }
                for (g, v) in grad_depth[j].iter_mut().zip(&r.grad_j) {
                    *g += v;
                }
                grad_alpha[j] += r.grad_alpha_j;
            }
        }

        let mut grad_z = Vec::new();
        for (v, dec) in decoded.iter().enumerate() {
            b.alpha += codec::alpha_loss(&dec.transformed)?;
            let z = &params.z[v].0;
            b.z_reg += self.loss.lambda_z * z.iter().map(|x| x * x).sum::<f64>();
            if with_grad {
                let (g_rho, g_alpha) =
                    rho_gradient(&dec.transformed, &dec.clamped, &depths[v], &grad_depth[v]);
                grad_alpha[v] += g_alpha;
                let mut gz = self.bases[v].adjoint(&g_rho);
                for (g, zk) in gz.iter_mut().zip(z) {
                    *g += 2.0 * self.loss.lambda_z * zk;
                }
                grad_z.push(gz);
            }
        }
        b.total = b.photo + b.depth + b.alpha + b.z_reg + b.w_reg;
        Ok(Evaluation {
            breakdown: b,
            grad_z,
            grad_alpha,
            empty_pairs,
            clamped: decoded.iter().map(|d| d.clamped_count).sum(),
        })
    }
}

/// Chains a depth gradient (plus the mean-depth penalty) back to `ρ` and `α`.
fn rho_gradient(t: &TransformedDepth, clamped: &Grid<bool>, depth: &Grid<f64>, grad_depth: &[f64]) -> (Vec<f64>, f64) {
    let n = t.rho.len() as f64;
    let s: f64 = t.rho.iter().map(|&r| (1.0 - r) / r).sum::<f64>() / n;
    let alpha_coeff = 2.0 * (1.0 - s) / n;
    let mut g_alpha = 0.0;
    let mut g_rho = vec![0.0; t.rho.len()];
    for (p, g) in g_rho.iter_mut().enumerate() {
        g_alpha += grad_depth[p] * depth.as_slice()[p] / t.alpha;
        if clamped.as_slice()[p] {
            continue;
        }
        let r = t.rho.as_slice()[p];
        *g = (alpha_coeff - grad_depth[p] * t.alpha) / (r * r);
    }
    (g_rho, g_alpha)
}
