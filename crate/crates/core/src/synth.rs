//! Deterministic ray-cast scenes with ground-truth depth.
//!
//! Primitives are planes (optionally bounded to a rectangle) and spheres with
//! a procedural solid texture (value noise plus stripes) evaluated at the
//! surface point and Lambertian shading under a directional light, so a
//! surface point has the same intensity in every view. The ray through pixel
//! `(u, v)` of a camera is `C + t·Rᵀ(Q, 1)`, which makes the ray parameter `t`
//! equal to the depth.

use log::debug;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::DepthMap;
use crate::error::{Error, Result};
use crate::geometry::{Image, Intrinsics, PosedView, RigidTransform, Vec3};
use crate::grid::Grid;

/// Smallest ray parameter accepted as a hit.
const MIN_HIT: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Shape {
    /// Plane through `origin` spanned by the orthonormal axes `u_axis`,
    /// `v_axis`; bounded to `|s| ≤ half_extent[0]`, `|t| ≤ half_extent[1]`
    /// in those axes when `half_extent` is given.
    Plane {
        origin: Vec3,
        u_axis: Vec3,
        v_axis: Vec3,
        half_extent: Option<[f64; 2]>,
    },
    Sphere { center: Vec3, radius: f64 },
}

impl Shape {
    /// Plane with the given unit normal through `origin`.
    pub fn plane(origin: Vec3, normal: Vec3, half_extent: Option<[f64; 2]>) -> Shape {
        let n = normal.normalize();
        let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        let u_axis = helper.cross(&n).normalize();
        let v_axis = n.cross(&u_axis);
        Shape::Plane {
            origin,
            u_axis,
            v_axis,
            half_extent,
        }
    }

    /// Ray parameter of the nearest hit beyond [`MIN_HIT`].
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        match self {
            Shape::Plane {
                origin: o,
                u_axis,
                v_axis,
                half_extent,
            } => {
                let n = u_axis.cross(v_axis);
                let denom = n.dot(dir);
                if denom == 0.0 {
                    return None;
                }
                let t = n.dot(&(o - origin)) / denom;
                if !(t > MIN_HIT) {
                    return None;
                }
                if let Some([a, b]) = half_extent {
                    let rel = origin + dir * t - o;
                    if rel.dot(u_axis).abs() > *a || rel.dot(v_axis).abs() > *b {
                        return None;
                    }
                }
                Some(t)
            }
            Shape::Sphere { center, radius } => {
                let oc = origin - center;
                let a = dir.dot(dir);
                let b = 2.0 * oc.dot(dir);
                let c = oc.dot(&oc) - radius * radius;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                // numerically stable roots
                let qv = -0.5 * (b + b.signum() * sq);
                let (mut t0, mut t1) = if qv != 0.0 { (qv / a, c / qv) } else { (0.0, 0.0) };
                if t0 > t1 {
                    std::mem::swap(&mut t0, &mut t1);
                }
                if t0 > MIN_HIT {
                    Some(t0)
                } else if t1 > MIN_HIT {
                    Some(t1)
                } else {
                    None
                }
            }
        }
    }

    /// Outward unit normal at a surface point.
    pub fn normal_at(&self, p: &Vec3) -> Vec3 {
        match self {
            Shape::Plane { u_axis, v_axis, .. } => u_axis.cross(v_axis).normalize(),
            Shape::Sphere { center, .. } => (p - center).normalize(),
        }
    }
}

/// Procedural solid texture.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Texture {
    pub seed: u64,
    /// Albedo spread around 0.5; 0 gives a uniform surface.
    pub contrast: f64,
    /// Feature size of the value noise in scene units.
    pub feature_size: f64,
    /// Stripe period in scene units (0 disables stripes).
    pub stripe_period: f64,
}

impl Default for Texture {
    fn default() -> Self {
        Texture {
            seed: 1,
            contrast: 0.8,
            feature_size: 0.4,
            stripe_period: 0.7,
        }
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn lattice(seed: u64, i: i64, j: i64, k: i64) -> f64 {
    let h = splitmix(seed ^ splitmix((i as u64) ^ splitmix((j as u64) ^ splitmix(k as u64))));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Trilinearly interpolated lattice noise in `[0, 1]`.
fn value_noise(seed: u64, p: Vec3) -> f64 {
    let (fx, fy, fz) = (p.x.floor(), p.y.floor(), p.z.floor());
    let (i, j, k) = (fx as i64, fy as i64, fz as i64);
    let (tx, ty, tz) = (smooth(p.x - fx), smooth(p.y - fy), smooth(p.z - fz));
    let mut acc = 0.0;
    for (di, wx) in [(0, 1.0 - tx), (1, tx)] {
        for (dj, wy) in [(0, 1.0 - ty), (1, ty)] {
            for (dk, wz) in [(0, 1.0 - tz), (1, tz)] {
                acc += wx * wy * wz * lattice(seed, i + di, j + dj, k + dk);
            }
        }
    }
    acc
}

impl Texture {
    /// Albedo at a world point, in `[0, 1]`.
    pub fn albedo(&self, p: &Vec3) -> f64 {
        let f = self.feature_size.max(1e-6);
        let n1 = value_noise(self.seed, p / f);
        let n2 = value_noise(self.seed.wrapping_add(17), p * (2.0 / f));
        let mut t = 0.65 * n1 + 0.35 * n2;
        if self.stripe_period > 0.0 {
            let phase = (p.x + 0.6 * p.y + 0.3 * p.z) * std::f64::consts::TAU / self.stripe_period;
            t = 0.7 * t + 0.3 * (0.5 + 0.5 * phase.sin());
        }
        (0.5 + self.contrast * (t - 0.5) * 2.0).clamp(0.0, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub texture: Texture,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub pose: RigidTransform,
    pub intrinsics: Intrinsics,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Lighting {
    /// Direction towards the light (world frame).
    pub direction: Vec3,
    pub ambient: f64,
}

impl Default for Lighting {
    fn default() -> Self {
        Lighting {
            direction: Vec3::new(0.3, -0.5, -1.0).normalize(),
            ambient: 0.35,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthScene {
    pub name: String,
    pub primitives: Vec<Primitive>,
    pub cameras: Vec<CameraSpec>,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    #[serde(default)]
    pub lighting: Lighting,
    /// Standard deviation of additive Gaussian image noise (0 = none).
    #[serde(default)]
    pub noise_sigma: f64,
}

/// A ray hit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub depth: f64,
    pub primitive: usize,
    pub point: Vec3,
}

/// Output of [`SynthScene::render`].
#[derive(Clone, Debug)]
pub struct Rendered {
    pub image: Image,
    pub depth: DepthMap,
    /// Index of the visible primitive per pixel.
    pub primitive: Grid<Option<usize>>,
}

impl SynthScene {
    fn camera(&self, cam: usize) -> Result<&CameraSpec> {
        self.cameras.get(cam).ok_or(Error::UnknownCamera(cam))
    }

    /// Nearest hit along the ray through continuous pixel position `(u, v)`.
    pub fn cast(&self, cam: usize, u: f64, v: f64) -> Result<Option<Hit>> {
        let c = self.camera(cam)?;
        let q = c.intrinsics.normalize(u, v);
        let origin = c.pose.camera_center();
        let dir = c.pose.rotation.transpose() * Vec3::new(q[0], q[1], 1.0);
        let mut best: Option<(f64, usize)> = None;
        for (k, prim) in self.primitives.iter().enumerate() {
            if let Some(t) = prim.shape.intersect(&origin, &dir) {
                if best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, k));
                }
            }
        }
        Ok(best.map(|(t, k)| Hit {
            depth: t,
            primitive: k,
            point: origin + dir * t,
        }))
    }

    /// Ray-cast depth at a continuous pixel position.
    pub fn depth_at(&self, cam: usize, u: f64, v: f64) -> Result<Option<f64>> {
        Ok(self.cast(cam, u, v)?.map(|h| h.depth))
    }

    fn shade(&self, cam: usize, hit: &Hit) -> f64 {
        let prim = &self.primitives[hit.primitive];
        let mut n = prim.shape.normal_at(&hit.point);
        // light the side facing the camera
        let to_cam = self.cameras[cam].pose.camera_center() - hit.point;
        if n.dot(&to_cam) < 0.0 {
            n = -n;
        }
        let l = self.lighting.direction.normalize();
        let diffuse = n.dot(&l).max(0.0);
        let a = self.lighting.ambient;
        (prim.texture.albedo(&hit.point) * (a + (1.0 - a) * diffuse)).clamp(0.0, 1.0)
    }

    /// Image, ground-truth depth and primitive ids of camera `cam`.
    pub fn render(&self, cam: usize) -> Result<Rendered> {
        self.camera(cam)?;
        let (w, h) = (self.width, self.height);
        let rows: Vec<Vec<Option<Hit>>> = (0..h)
            .into_par_iter()
            .map(|y| {
                (0..w)
                    .map(|x| self.cast(cam, x as f64, y as f64).expect("camera checked"))
                    .collect()
            })
            .collect();
        let hits: Vec<Option<Hit>> = rows.into_iter().flatten().collect();
        let mut intensity: Vec<f64> = hits
            .iter()
            .map(|hit| hit.as_ref().map_or(0.0, |hit| self.shade(cam, hit)))
            .collect();
        if self.noise_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(1000).wrapping_add(cam as u64));
            let normal = Normal::new(0.0, self.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
            for v in &mut intensity {
                *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
            }
        }
        let depth = Grid::from_vec(w, h, hits.iter().map(|h| h.map_or(0.0, |h| h.depth)).collect())?;
        let valid = Grid::from_vec(w, h, hits.iter().map(Option::is_some).collect())?;
        let primitive = Grid::from_vec(w, h, hits.iter().map(|h| h.map(|h| h.primitive)).collect())?;
        Ok(Rendered {
            image: Image::from_gray(Grid::from_vec(w, h, intensity)?),
            depth: DepthMap::new(depth, valid)?,
            primitive,
        })
    }

    /// Posed view (image, calibration, pose) of camera `cam`.
    pub fn view(&self, cam: usize) -> Result<(PosedView, DepthMap)> {
        let r = self.render(cam)?;
        let c = self.camera(cam)?;
        Ok((PosedView::new(r.image, c.intrinsics, c.pose), r.depth))
    }

    /// Fraction of pixels of camera `cam` that hit geometry.
    pub fn coverage(&self, cam: usize) -> Result<f64> {
        let r = self.render(cam)?;
        Ok(r.depth.valid.count_true() as f64 / r.depth.valid.len() as f64)
    }

    pub fn validate_coverage(&self, min_fraction: f64) -> Result<()> {
        for cam in 0..self.cameras.len() {
            let c = self.coverage(cam)?;
            if c < min_fraction {
                return Err(Error::invalid(format!(
                    "scene {}: camera {cam} covers {:.1}% of the image (< {:.0}%)",
                    self.name,
                    100.0 * c,
                    100.0 * min_fraction
                )));
            }
        }
        Ok(())
    }
}

/// Settings shared by the benchmark suites.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub seed: u64,
    pub noise_sigma: f64,
    /// Texture contrast of the low-texture suite.
    pub low_contrast: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            width: 256,
            height: 192,
            focal: 200.0,
            seed: 7,
            noise_sigma: 0.0,
            low_contrast: 0.04,
        }
    }
}

/// Minimum fraction of pixels every benchmark camera must cover.
pub const MIN_COVERAGE: f64 = 0.5;

fn look_at_cameras(cfg: &BenchmarkConfig, eyes: &[Vec3], target: Vec3) -> Result<Vec<CameraSpec>> {
    let intrinsics = Intrinsics::centered(cfg.focal, cfg.width, cfg.height);
    eyes.iter()
        .map(|&eye| {
            Ok(CameraSpec {
                pose: RigidTransform::look_at(eye, target, -Vec3::y())?,
                intrinsics,
            })
        })
        .collect()
}

fn texture(cfg: &BenchmarkConfig, salt: u64, contrast: f64) -> Texture {
    Texture {
        seed: splitmix(cfg.seed ^ salt),
        contrast,
        ..Texture::default()
    }
}

/// Plane through `(0, 0, depth)` tilted by `deg` about the x axis.
fn slanted_plane(depth: f64, deg: f64) -> Shape {
    let a = deg.to_radians();
    Shape::plane(Vec3::new(0.0, 0.0, depth), Vec3::new(0.0, a.sin(), -a.cos()), None)
}

fn scene(cfg: &BenchmarkConfig, name: &str, primitives: Vec<Primitive>, cameras: Vec<CameraSpec>) -> SynthScene {
    SynthScene {
        name: name.to_string(),
        primitives,
        cameras,
        width: cfg.width,
        height: cfg.height,
        seed: cfg.seed,
        lighting: Lighting::default(),
        noise_sigma: cfg.noise_sigma,
    }
}

/// Suite (a): one textured slanted plane seen by three cameras.
pub fn textured_plane(cfg: &BenchmarkConfig) -> Result<SynthScene> {
    let eyes = [
        Vec3::new(-0.35, 0.0, 0.0),
        Vec3::new(0.0, 0.05, 0.0),
        Vec3::new(0.35, -0.05, 0.0),
    ];
    Ok(scene(
        cfg,
        "textured-plane",
        vec![Primitive {
            shape: slanted_plane(5.5, 30.0),
            texture: texture(cfg, 0xA, 0.8),
        }],
        look_at_cameras(cfg, &eyes, Vec3::new(0.0, 0.0, 5.5))?,
    ))
}

/// Suite (b): a sphere in front of a slanted background plane.
pub fn plane_and_sphere(cfg: &BenchmarkConfig) -> Result<SynthScene> {
    let eyes = [
        Vec3::new(-0.4, 0.0, 0.0),
        Vec3::new(0.0, 0.05, 0.0),
        Vec3::new(0.4, -0.05, 0.0),
    ];
    Ok(scene(
        cfg,
        "plane-sphere",
        vec![
            Primitive {
                shape: slanted_plane(6.5, 25.0),
                texture: texture(cfg, 0xB1, 0.8),
            },
            Primitive {
                shape: Shape::Sphere {
                    center: Vec3::new(0.3, 0.1, 4.5),
                    radius: 0.9,
                },
                texture: Texture {
                    feature_size: 0.3,
                    ..texture(cfg, 0xB2, 0.8)
                },
            },
        ],
        look_at_cameras(cfg, &eyes, Vec3::new(0.0, 0.0, 5.5))?,
    ))
}

/// Centre of the grazing strip of suite (c).
pub const GRAZING_STRIP_CENTER: [f64; 3] = [0.0, 0.5, 7.65];

/// Suite (c): a bounded horizontal strip seen at about 86° in front of a
/// fronto-parallel wall. Every point of the strip is viewed at more than 85°
/// from the first camera.
pub fn grazing_plane(cfg: &BenchmarkConfig) -> Result<SynthScene> {
    let intrinsics = Intrinsics::centered(cfg.focal, cfg.width, cfg.height);
    let cameras = vec![
        CameraSpec {
            pose: RigidTransform::identity(),
            intrinsics,
        },
        CameraSpec {
            pose: RigidTransform::from_translation(Vec3::new(-0.3, 0.0, 0.0)),
            intrinsics,
        },
    ];
    let [cx, cy, cz] = GRAZING_STRIP_CENTER;
    Ok(scene(
        cfg,
        "grazing-plane",
        vec![
            Primitive {
                shape: Shape::Plane {
                    origin: Vec3::new(cx, cy, cz),
                    u_axis: Vec3::x(),
                    v_axis: Vec3::z(),
                    half_extent: Some([1.5, 1.85]),
                },
                texture: texture(cfg, 0xC1, 0.8),
            },
            Primitive {
                shape: Shape::plane(Vec3::new(0.0, 0.0, 10.0), -Vec3::z(), None),
                texture: texture(cfg, 0xC2, 0.8),
            },
        ],
        cameras,
    ))
}

/// Suite (d): the geometry of suite (a) with almost no texture.
pub fn low_texture_plane(cfg: &BenchmarkConfig) -> Result<SynthScene> {
    let eyes = [Vec3::new(-0.35, 0.0, 0.0), Vec3::new(0.35, 0.0, 0.0)];
    Ok(scene(
        cfg,
        "low-texture-plane",
        vec![Primitive {
            shape: slanted_plane(5.5, 30.0),
            texture: texture(cfg, 0xD, cfg.low_contrast),
        }],
        look_at_cameras(cfg, &eyes, Vec3::new(0.0, 0.0, 5.5))?,
    ))
}

/// The four benchmark suites, in order (a)–(d), coverage-checked.
pub fn make_benchmark(cfg: &BenchmarkConfig) -> Result<Vec<SynthScene>> {
    let scenes = vec![
        textured_plane(cfg)?,
        plane_and_sphere(cfg)?,
        grazing_plane(cfg)?,
        low_texture_plane(cfg)?,
    ];
    for s in &scenes {
        s.validate_coverage(MIN_COVERAGE)?;
        debug!("benchmark scene {} with {} cameras", s.name, s.cameras.len());
    }
    Ok(scenes)
}

/// A random scene: textured ground wall plus spheres, cameras on an arc
/// looking at the scene centre. Regenerated (with a derived seed) until every
/// camera covers at least [`MIN_COVERAGE`].
pub fn random_scene(seed: u64, cameras: usize, cfg: &BenchmarkConfig) -> Result<SynthScene> {
    use rand::Rng;
    if cameras == 0 {
        return Err(Error::invalid("a scene needs at least one camera"));
    }
    for attempt in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt.wrapping_mul(0x9E37)));
        let wall_depth = rng.random_range(6.0..9.0);
        let mut primitives = vec![Primitive {
            shape: slanted_plane(wall_depth, rng.random_range(-20.0..20.0)),
            texture: texture(cfg, rng.random(), 0.8),
        }];
        for _ in 0..rng.random_range(1..4) {
            primitives.push(Primitive {
                shape: Shape::Sphere {
                    center: Vec3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-0.7..0.7),
                        rng.random_range(3.5..wall_depth - 1.0),
                    ),
                    radius: rng.random_range(0.3..0.8),
                },
                texture: texture(cfg, rng.random(), 0.8),
            });
        }
        let target = Vec3::new(0.0, 0.0, wall_depth * 0.8);
        let eyes: Vec<Vec3> = (0..cameras)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let s = SynthScene {
            name: format!("random-{seed}"),
            primitives,
            cameras: look_at_cameras(cfg, &eyes, target)?,
            width: cfg.width,
            height: cfg.height,
            seed,
            lighting: Lighting::default(),
            noise_sigma: cfg.noise_sigma,
        };
        if s.validate_coverage(MIN_COVERAGE).is_ok() {
            return Ok(s);
        }
    }
    Err(Error::invalid("could not generate a scene with sufficient coverage"))
}
