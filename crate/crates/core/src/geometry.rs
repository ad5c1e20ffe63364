//! Pinhole camera machinery: normalized coordinates, backprojection, rigid
//! transforms, projection into a neighbouring view, bilinear sampling and
//! surface normals.
//!
//! Conventions: camera frames have `x` right, `y` down and `z` forward. A pose
//! maps world points into the camera frame. Pixel `(u, v)` is column `u`, row
//! `v`, and integer coordinates are pixel centers.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::codec::DepthMap;
use crate::error::{Error, Result};
use crate::grid::Grid;

pub type Vec3 = Vector3<f64>;

/// Tolerance for the orthonormality check on rotations.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || !cx.is_finite() || !cy.is_finite() {
            return Err(Error::invalid("focal lengths must be positive and finite"));
        }
        Ok(Intrinsics { fx, fy, cx, cy })
    }

    /// Centered principal point for a `width × height` image.
    pub fn centered(focal: f64, width: usize, height: usize) -> Self {
        Intrinsics {
            fx: focal,
            fy: focal,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
        }
    }

    /// `K⁻¹ (u, v, 1)ᵀ`, dropping the homogeneous one.
    #[inline]
    pub fn normalize(&self, u: f64, v: f64) -> [f64; 2] {
        [(u - self.cx) / self.fx, (v - self.cy) / self.fy]
    }

    #[inline]
    pub fn to_pixel(&self, q: [f64; 2]) -> [f64; 2] {
        [self.fx * q[0] + self.cx, self.fy * q[1] + self.cy]
    }

    /// Normalized coordinates `Q` of every pixel.
    pub fn coords_grid(&self, width: usize, height: usize) -> Grid<[f64; 2]> {
        Grid::from_fn(width, height, |x, y| self.normalize(x as f64, y as f64))
    }
}

/// Rigid transform `p ↦ R p + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Checks that `rotation` is orthonormal with determinant `+1`.
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let orth = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if orth > ROTATION_TOLERANCE || (rotation.determinant() - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::invalid(format!(
                "rotation is not orthonormal with det +1 (deviation {orth:e})"
            )));
        }
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("translation is not finite"));
        }
        Ok(RigidTransform {
            rotation,
            translation,
        })
    }

    pub fn from_translation(t: Vec3) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation by `angle` radians about the unit `axis`.
    pub fn from_axis_angle(axis: Vec3, angle: f64, translation: Vec3) -> Self {
        let axis = nalgebra::Unit::new_normalize(axis);
        RigidTransform {
            rotation: *nalgebra::Rotation3::from_axis_angle(&axis, angle).matrix(),
            translation,
        }
    }

    /// World→camera pose of a camera at `eye` looking at `target`; `up`
    /// points roughly toward negative image `y`.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() == 0.0 {
            return Err(Error::invalid("eye and target coincide"));
        }
        let z = forward.normalize();
        let x = z.cross(&-up);
        if x.norm() < 1e-12 {
            return Err(Error::invalid("up vector is parallel to the viewing direction"));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Ok(RigidTransform {
            rotation,
            translation: -(rotation * eye),
        })
    }

    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Position of the camera center in world coordinates, for a world→camera pose.
    pub fn camera_center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// `T_ij`: camera `i` coordinates to camera `j` coordinates, from the two
    /// world→camera poses.
    pub fn relative(pose_i: &RigidTransform, pose_j: &RigidTransform) -> RigidTransform {
        pose_j.compose(&pose_i.inverse())
    }
}

/// Intensity image with interleaved channels, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || data.len() != width * height * channels {
            return Err(Error::mismatch(width * height * channels.max(1), data.len()));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_gray(grid: Grid<f64>) -> Self {
        Image {
            width: grid.width(),
            height: grid.height(),
            channels: 1,
            data: grid.into_vec(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Channel mean per pixel.
    pub fn gray(&self) -> Grid<f64> {
        let c = self.channels;
        Grid::from_fn(self.width, self.height, |x, y| {
            let base = (y * self.width + x) * c;
            self.data[base..base + c].iter().sum::<f64>() / c as f64
        })
    }

    pub fn scaled(&self, factor: f64) -> Image {
        Image {
            data: self.data.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }
}

/// An image with its calibration and world→camera pose.
#[derive(Clone, Debug)]
pub struct PosedView {
    pub image: Image,
    /// Normalized pixel coordinates `Q = K⁻¹ p`.
    pub coords: Grid<[f64; 2]>,
    pub pose: RigidTransform,
    pub intrinsics: Intrinsics,
}

impl PosedView {
    pub fn new(image: Image, intrinsics: Intrinsics, pose: RigidTransform) -> Self {
        let coords = intrinsics.coords_grid(image.width(), image.height());
        PosedView {
            image,
            coords,
            pose,
            intrinsics,
        }
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }
}

/// `X(p) = (Q(p); 1)·D(p)`. Invalid depth pixels map to the origin.
pub fn backproject(coords: &Grid<[f64; 2]>, depth: &DepthMap) -> Result<Grid<Vec3>> {
    coords.ensure_same_shape(&depth.depth)?;
    let mut out = Grid::filled(coords.width(), coords.height(), Vec3::zeros());
    for (i, q) in coords.iter().enumerate() {
        if depth.valid.as_slice()[i] {
            let d = depth.depth.as_slice()[i];
            out.as_mut_slice()[i] = Vec3::new(q[0] * d, q[1] * d, d);
        }
    }
    Ok(out)
}

/// Result of moving points into another camera.
#[derive(Clone, Debug)]
pub struct Warp {
    /// Normalized coordinates `q_ij = π(T_ij X)`; NaN where chirality fails
    /// on a zero third coordinate.
    pub coords: Grid<[f64; 2]>,
    /// Third coordinate of `T_ij X`.
    pub depth: Grid<f64>,
    /// `depth > 0`.
    pub chirality: Grid<bool>,
}

/// Projects a single point: `(q, depth)`.
#[inline]
pub fn project(p: &Vec3) -> ([f64; 2], f64) {
    if p.z == 0.0 {
        return ([f64::NAN, f64::NAN], 0.0);
    }
    ([p.x / p.z, p.y / p.z], p.z)
}

pub fn warp(points: &Grid<Vec3>, t: &RigidTransform) -> Warp {
    let (w, h) = (points.width(), points.height());
    let mut coords = Grid::filled(w, h, [0.0; 2]);
    let mut depth = Grid::filled(w, h, 0.0);
    let mut chirality = Grid::filled(w, h, false);
    for (i, p) in points.iter().enumerate() {
        let (q, d) = project(&t.apply(p));
        coords.as_mut_slice()[i] = q;
        depth.as_mut_slice()[i] = d;
        chirality.as_mut_slice()[i] = d > 0.0;
    }
    Warp {
        coords,
        depth,
        chirality,
    }
}

/// The four taps of a bilinear lookup: top-left corner and fractional offsets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Taps {
    pub x0: usize,
    pub y0: usize,
    pub fx: f64,
    pub fy: f64,
}

impl Taps {
    /// `(flat index, weight)` of the four taps.
    #[inline]
    pub fn weights(&self, width: usize) -> [(usize, f64); 4] {
        let i00 = self.y0 * width + self.x0;
        let (fx, fy) = (self.fx, self.fy);
        [
            (i00, (1.0 - fx) * (1.0 - fy)),
            (i00 + 1, fx * (1.0 - fy)),
            (i00 + width, (1.0 - fx) * fy),
            (i00 + width + 1, fx * fy),
        ]
    }

    /// Interpolated value and its partial derivatives with respect to `u`, `v`
    /// (tap selection held fixed).
    #[inline]
    pub fn eval_with_gradient(&self, data: &[f64], width: usize) -> (f64, f64, f64) {
        let i00 = self.y0 * width + self.x0;
        let (v00, v10, v01, v11) = (data[i00], data[i00 + 1], data[i00 + width], data[i00 + width + 1]);
        let (fx, fy) = (self.fx, self.fy);
        let top = v00 + fx * (v10 - v00);
        let bottom = v01 + fx * (v11 - v01);
        let value = top + fy * (bottom - top);
        let du = (1.0 - fy) * (v10 - v00) + fy * (v11 - v01);
        let dv = bottom - top;
        (value, du, dv)
    }
}

/// Tap selection for continuous pixel position `(u, v)`; `None` when any tap
/// would fall outside a `width × height` grid.
#[inline]
pub fn bilinear_taps(width: usize, height: usize, u: f64, v: f64) -> Option<Taps> {
    if width < 2 || height < 2 {
        return None;
    }
    let (wmax, hmax) = ((width - 1) as f64, (height - 1) as f64);
    if !(u >= 0.0 && u <= wmax && v >= 0.0 && v <= hmax) {
        return None;
    }
    let x0 = (u.floor() as usize).min(width - 2);
    let y0 = (v.floor() as usize).min(height - 2);
    Some(Taps {
        x0,
        y0,
        fx: u - x0 as f64,
        fy: v - y0 as f64,
    })
}

/// Bilinear lookup into a scalar grid at pixel position `(u, v)`.
pub fn sample_scalar(grid: &Grid<f64>, u: f64, v: f64) -> Option<f64> {
    let taps = bilinear_taps(grid.width(), grid.height(), u, v)?;
    Some(
        taps.weights(grid.width())
            .iter()
            .map(|&(i, w)| w * grid.as_slice()[i])
            .sum(),
    )
}

/// Samples every channel of `image` at the pixel positions in `coords`.
///
/// Out-of-bounds samples are zero and flagged `false`; nothing is extrapolated.
pub fn sample_bilinear(image: &Image, coords: &Grid<[f64; 2]>) -> (Image, Grid<bool>) {
    let c = image.channels();
    let mut values = vec![0.0; coords.len() * c];
    let mut in_bounds = Grid::filled(coords.width(), coords.height(), false);
    for (i, p) in coords.iter().enumerate() {
        if let Some(taps) = bilinear_taps(image.width(), image.height(), p[0], p[1]) {
            in_bounds.as_mut_slice()[i] = true;
            for (idx, w) in taps.weights(image.width()) {
                for ch in 0..c {
                    values[i * c + ch] += w * image.data()[idx * c + ch];
                }
            }
        }
    }
    let out = Image {
        width: coords.width(),
        height: coords.height(),
        channels: c,
        data: values,
    };
    (out, in_bounds)
}

/// Converts normalized coordinates into pixel positions of a camera.
pub fn to_pixel_grid(coords: &Grid<[f64; 2]>, intrinsics: &Intrinsics) -> Grid<[f64; 2]> {
    coords.map(|&q| intrinsics.to_pixel(q))
}

/// Unit surface normals from central differences of backprojected points.
///
/// Border pixels and pixels next to invalid points (`z ≤ 0`) fall back to
/// one-sided differences. Normals face the camera (`n·X < 0`). `None` marks a
/// degenerate cross product.
pub fn estimate_normals(points: &Grid<Vec3>) -> Result<Grid<Option<Vec3>>> {
    let (w, h) = (points.width(), points.height());
    if w < 3 || h < 3 {
        return Err(Error::invalid("normal estimation needs at least a 3x3 grid"));
    }
    let valid = |x: usize, y: usize| points.get(x, y).z > 0.0;
    let tangent = |x: usize, y: usize, dx: bool| -> Option<Vec3> {
        let (prev, next) = if dx {
            (x.checked_sub(1), (x + 1 < w).then_some(x + 1))
        } else {
            (y.checked_sub(1), (y + 1 < h).then_some(y + 1))
        };
        let at = |k: usize| if dx { (k, y) } else { (x, k) };
        let prev = prev.map(at).filter(|&(a, b)| valid(a, b));
        let next = next.map(at).filter(|&(a, b)| valid(a, b));
        let here = points.get(x, y);
        match (prev, next) {
            (Some(p), Some(n)) => Some(points.get(n.0, n.1) - points.get(p.0, p.1)),
            (None, Some(n)) => Some(points.get(n.0, n.1) - here),
            (Some(p), None) => Some(here - points.get(p.0, p.1)),
            (None, None) => None,
        }
    };
    Ok(Grid::from_fn(w, h, |x, y| {
        if !valid(x, y) {
            return None;
        }
        let tu = tangent(x, y, true)?;
        let tv = tangent(x, y, false)?;
        let n = tu.cross(&tv);
        let len = n.norm();
        if !(len > 1e-12 * tu.norm() * tv.norm()) || len == 0.0 {
            return None;
        }
        let n = n / len;
        Some(if n.dot(points.get(x, y)) > 0.0 { -n } else { n })
    }))
}

/// Angle in degrees between a camera-facing normal and the direction from the
/// point back to the camera center; `0°` for a surface facing the camera.
#[inline]
pub fn viewing_angle_deg(normal: &Vec3, point: &Vec3) -> f64 {
    let ray = point.normalize();
    (-normal.dot(&ray)).clamp(-1.0, 1.0).acos().to_degrees()
}
