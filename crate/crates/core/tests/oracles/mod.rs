//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use latent_depth::codec::DepthMap;
use latent_depth::covisibility::{CovisConfig, PosedDepth};
use latent_depth::geometry::{Intrinsics, RigidTransform, Vec3};
use latent_depth::grid::Grid;
use latent_depth::synth::SynthScene;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// rmse, abs_rel, sq_rel, si_rmse, δ1, δ2, δ3, computed pixel by pixel.
pub fn naive_metrics(pred: &DepthMap, gt: &DepthMap, median_scale: bool) -> [f64; 7] {
    let mut pairs = Vec::new();
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            if *pred.valid.get(x, y) && *gt.valid.get(x, y) && *gt.depth.get(x, y) > 0.0 {
                pairs.push((*pred.depth.get(x, y), *gt.depth.get(x, y)));
            }
        }
    }
    let scale = if median_scale {
        let mut r: Vec<f64> = pairs
            .iter()
            .filter(|p| p.0 > 0.0)
            .map(|p| p.1 / p.0)
            .collect();
        r.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = r.len();
        if n % 2 == 1 {
            r[n / 2]
        } else {
            0.5 * (r[n / 2 - 1] + r[n / 2])
        }
    } else {
        1.0
    };
    let n = pairs.len() as f64;
    let (mut se, mut ar, mut sr) = (0.0, 0.0, 0.0);
    let mut logs = Vec::new();
    let mut hits = [0.0; 3];
    for &(d, g) in &pairs {
        let d = d * scale;
        se += (d - g).powi(2);
        ar += (d - g).abs() / g;
        sr += (d - g).powi(2) / g;
        if d > 0.0 {
            logs.push((d / g).ln());
            let ratio = if d > g { d / g } else { g / d };
            for k in 0..3 {
                if ratio < 1.25f64.powi(k as i32 + 1) {
                    hits[k] += 1.0;
                }
            }
        }
    }
    let m = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / m;
    let var = logs.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / m;
    [
        (se / n).sqrt(),
        ar / n,
        sr / n,
        var.sqrt(),
        hits[0] / m,
        hits[1] / m,
        hits[2] / m,
    ]
}

/// Analytic depth of the plane `n·X = c` seen by a camera; invalid where the
/// ray misses it or hits it behind the camera.
pub fn plane_depth(
    pose: &RigidTransform,
    k: &Intrinsics,
    w: usize,
    h: usize,
    normal: Vec3,
    c: f64,
) -> DepthMap {
    let center = pose.camera_center();
    let rt = pose.rotation.transpose();
    let mut valid = Grid::filled(w, h, false);
    let depth = Grid::from_fn(w, h, |x, y| {
        // camera ray with unit third coordinate, in world axes
        let ray_cam = Vec3::new((x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy, 1.0);
        let ray = rt * ray_cam;
        let denom = normal.dot(&ray);
        if denom.abs() < 1e-12 {
            return 0.0;
        }
        let s = (c - normal.dot(&center)) / denom;
        if s > 0.0 {
            valid.set(x, y, true);
            s
        } else {
            0.0
        }
    });
    DepthMap::new(depth, valid).unwrap()
}

/// Cameras around `target` looking at a tilted plane through it.
pub fn ring_of_cameras(eyes: &[Vec3], target: Vec3, w: usize, h: usize) -> Vec<PosedDepth> {
    let k = Intrinsics::centered(0.8 * w as f64, w, h);
    let normal = Vec3::new(0.1, -0.2, -1.0).normalize();
    let c = normal.dot(&target);
    eyes.iter()
        .enumerate()
        .map(|(id, &eye)| {
            let pose = RigidTransform::look_at(eye, target, -Vec3::y()).unwrap();
            PosedDepth {
                id,
                pose,
                intrinsics: k,
                depth: plane_depth(&pose, &k, w, h, normal, c),
            }
        })
        .collect()
}

/// `n` cameras at random positions in front of a tilted plane, all looking
/// at one point of it.
pub fn random_rig(seed: u64, n: usize) -> Vec<PosedDepth> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = Vec3::new(0.0, 0.0, 6.0);
    let eyes: Vec<Vec3> = (0..n)
        .map(|_| {
            Vec3::new(
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.0..1.0),
                rng.random_range(-0.5..1.5),
            )
        })
        .collect();
    ring_of_cameras(&eyes, target, 24, 18)
}

pub type CellSet = BTreeSet<[i64; 3]>;

/// Occupied cells of one camera, from its own back-projection.
pub fn oracle_cells(view: &PosedDepth, voxel: f64) -> CellSet {
    let r = view.pose.rotation;
    let t = view.pose.translation;
    let mut out = CellSet::new();
    for y in 0..view.depth.height() {
        for x in 0..view.depth.width() {
            if !*view.depth.valid.get(x, y) {
                continue;
            }
            let d = *view.depth.depth.get(x, y);
            let k = &view.intrinsics;
            let p_cam = Vec3::new(
                (x as f64 - k.cx) / k.fx * d,
                (y as f64 - k.cy) / k.fy * d,
                d,
            );
            let p = r.transpose() * (p_cam - t);
            out.insert([
                (p.x / voxel).floor() as i64,
                (p.y / voxel).floor() as i64,
                (p.z / voxel).floor() as i64,
            ]);
        }
    }
    out
}

/// Pairwise overlap fractions `|a ∩ b| / |a|` for every ordered pair, by
/// direct set intersection.
pub fn oracle_overlaps(views: &[PosedDepth], voxel: f64) -> BTreeMap<(usize, usize), (usize, f64)> {
    let cells: Vec<CellSet> = views.iter().map(|v| oracle_cells(v, voxel)).collect();
    let mut out = BTreeMap::new();
    for (a, va) in views.iter().enumerate() {
        for (b, vb) in views.iter().enumerate() {
            if a != b {
                let shared = cells[a].intersection(&cells[b]).count();
                out.insert(
                    (va.id, vb.id),
                    (shared, shared as f64 / cells[a].len() as f64),
                );
            }
        }
    }
    out
}

pub struct CovisOracle {
    cells: BTreeMap<usize, CellSet>,
    centers: BTreeMap<usize, Vec3>,
    voxel: f64,
}

impl CovisOracle {
    pub fn new(views: &[PosedDepth], voxel: f64) -> Self {
        CovisOracle {
            cells: views
                .iter()
                .map(|v| (v.id, oracle_cells(v, voxel)))
                .collect(),
            centers: views
                .iter()
                .map(|v| (v.id, -(v.pose.rotation.transpose() * v.pose.translation)))
                .collect(),
            voxel,
        }
    }

    pub fn ids(&self) -> Vec<usize> {
        self.cells.keys().copied().collect()
    }

    fn overlap(&self, a: usize, b: usize) -> f64 {
        let (ca, cb) = (&self.cells[&a], &self.cells[&b]);
        if ca.is_empty() {
            return 0.0;
        }
        ca.intersection(cb).count() as f64 / ca.len() as f64
    }

    pub fn parallax(&self, a: usize, b: usize) -> Option<f64> {
        let shared: Vec<&[i64; 3]> = self.cells[&a].intersection(&self.cells[&b]).collect();
        if shared.is_empty() {
            return None;
        }
        let mut centroid = Vec3::zeros();
        for c in &shared {
            centroid +=
                Vec3::new(c[0] as f64 + 0.5, c[1] as f64 + 0.5, c[2] as f64 + 0.5) * self.voxel;
        }
        centroid /= shared.len() as f64;
        let ra = centroid - self.centers[&a];
        let rb = centroid - self.centers[&b];
        Some(
            (ra.dot(&rb) / (ra.norm() * rb.norm()))
                .clamp(-1.0, 1.0)
                .acos()
                .to_degrees(),
        )
    }

    /// Both cameras see at least `overlap_min` of each other and have a
    /// parallax above `min_parallax_deg`.
    pub fn compatible(&self, a: usize, b: usize, cfg: &CovisConfig) -> bool {
        self.overlap(a, b) >= cfg.overlap_min
            && self.overlap(b, a) >= cfg.overlap_min
            && self
                .parallax(a, b)
                .is_some_and(|p| p > cfg.min_parallax_deg)
    }

    /// Smallest pairwise parallax of a set.
    pub fn min_parallax(&self, set: &[usize]) -> f64 {
        let mut m = f64::INFINITY;
        for (i, &a) in set.iter().enumerate() {
            for &b in &set[i + 1..] {
                m = m.min(self.parallax(a, b).unwrap_or(0.0));
            }
        }
        m
    }

    /// Exhaustive choice of the next member: every candidate is scored by
    /// its minimum parallax to `members`; the best feasible score wins, the
    /// smallest id on ties.
    pub fn best_extension(&self, members: &[usize], cfg: &CovisConfig) -> Option<(usize, f64)> {
        let mut scored: Vec<(usize, f64)> = self
            .ids()
            .into_iter()
            .filter(|c| !members.contains(c))
            .filter(|&c| members.iter().all(|&m| self.compatible(c, m, cfg)))
            .map(|c| {
                (
                    c,
                    members
                        .iter()
                        .map(|&m| self.parallax(c, m).unwrap())
                        .fold(f64::INFINITY, f64::min),
                )
            })
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        scored.first().copied()
    }

    /// Every subset of `size` cameras containing `reference` whose pairs are
    /// all compatible, with its minimum pairwise parallax.
    pub fn feasible_sets(
        &self,
        reference: usize,
        size: usize,
        cfg: &CovisConfig,
    ) -> Vec<(Vec<usize>, f64)> {
        let others: Vec<usize> = self.ids().into_iter().filter(|&i| i != reference).collect();
        let mut out = Vec::new();
        for mask in 0u32..(1 << others.len()) {
            if mask.count_ones() as usize != size - 1 {
                continue;
            }
            let mut set = vec![reference];
            set.extend(
                others
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| mask & (1 << k) != 0)
                    .map(|(_, &i)| i),
            );
            let ok = set
                .iter()
                .enumerate()
                .all(|(i, &a)| set[i + 1..].iter().all(|&b| self.compatible(a, b, cfg)));
            if ok {
                let score = self.min_parallax(&set);
                out.push((set, score));
            }
        }
        out
    }
}

/// Whether anything in `scene` lies strictly between the camera center and
/// `x`, tested against every primitive directly.
pub fn segment_occluded(scene: &SynthScene, center: &Vec3, x: &Vec3) -> bool {
    let dir = x - center;
    scene.primitives.iter().any(|p| {
        p.shape
            .intersect(center, &dir)
            .is_some_and(|t| t < 1.0 - 1e-9)
    })
}

/// True when the ray-cast depth of camera `cam` jumps within 1e-6 px of
/// `(u, v)`: the position lies on a silhouette edge, where the transfer is
/// decided by rounding.
fn on_silhouette(scene: &SynthScene, cam: usize, u: f64, v: f64, depth: f64) -> bool {
    let e = 1e-6;
    [(e, 0.0), (-e, 0.0), (0.0, e), (0.0, -e)]
        .iter()
        .any(|&(du, dv)| {
            scene
                .depth_at(cam, u + du, v + dv)
                .unwrap()
                .is_none_or(|d| (d - depth).abs() > 1e-3 * depth)
        })
}

/// Transfers every valid pixel of view `i` into view `j` and compares the
/// transferred depth with the ray-cast depth of `j` at the same continuous
/// position. Pixels landing on a silhouette edge of `j` are skipped. Returns
/// the number of unoccluded in-bounds pixels checked and the largest error
/// divided by the mean depth of `j`.
pub fn cross_view_consistency(
    scene: &SynthScene,
    gt: &[DepthMap],
    i: usize,
    j: usize,
) -> (usize, f64) {
    let ci = &scene.cameras[i];
    let cj = &scene.cameras[j];
    let alpha_j = gt[j].mean().unwrap();
    let to_world = ci.pose.inverse();
    let center_j = cj.pose.camera_center();
    let (w, h) = (scene.width as f64, scene.height as f64);
    let mut checked = 0;
    let mut worst = 0.0f64;
    for y in 0..scene.height {
        for x in 0..scene.width {
            if !*gt[i].valid.get(x, y) {
                continue;
            }
            let d = *gt[i].depth.get(x, y);
            let k = &ci.intrinsics;
            let p_cam = Vec3::new(
                (x as f64 - k.cx) / k.fx * d,
                (y as f64 - k.cy) / k.fy * d,
                d,
            );
            let world = to_world.apply(&p_cam);
            let y_j = cj.pose.apply(&world);
            if y_j.z <= 0.0 {
                continue;
            }
            let u = cj.intrinsics.fx * y_j.x / y_j.z + cj.intrinsics.cx;
            let v = cj.intrinsics.fy * y_j.y / y_j.z + cj.intrinsics.cy;
            if !(u >= 0.0 && v >= 0.0 && u <= w - 1.0 && v <= h - 1.0) {
                continue;
            }
            if segment_occluded(scene, &center_j, &world) {
                continue;
            }
            let Some(cast) = scene.depth_at(j, u, v).unwrap() else {
                worst = f64::INFINITY;
                continue;
            };
            if on_silhouette(scene, j, u, v, cast) {
                continue;
            }
            checked += 1;
            worst = worst.max((cast - y_j.z).abs() / alpha_j);
        }
    }
    (checked, worst)
}
