//! Selection of co-visible view sets.
//!
//! Every valid depth pixel of every camera is un-projected into the world and
//! hashed into a voxel; the camera id is recorded in that voxel. Cameras that
//! share voxels overlap. Sets are then grown greedily from a reference by
//! adding the camera with the largest minimum parallax to the members, among
//! candidates that overlap enough with every member.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::codec::DepthMap;
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, RigidTransform, Vec3};
use crate::stats;

pub type Cell = [i64; 3];

/// A camera's depth map with its calibration and world→camera pose.
#[derive(Clone, Debug)]
pub struct PosedDepth {
    pub id: usize,
    pub pose: RigidTransform,
    pub intrinsics: Intrinsics,
    pub depth: DepthMap,
}

#[derive(Clone, Debug, Default)]
pub struct VoxelMap {
    pub voxel_size: f64,
    /// Camera ids per occupied cell.
    pub cells: BTreeMap<Cell, BTreeSet<usize>>,
    /// Occupied cells per camera.
    pub camera_cells: BTreeMap<usize, BTreeSet<Cell>>,
    /// Camera centers in world coordinates.
    pub centers: BTreeMap<usize, Vec3>,
    /// Number of (camera, cell) insertions performed.
    pub insertions: usize,
}

pub fn cell_of(p: &Vec3, voxel_size: f64) -> Cell {
    [
        (p.x / voxel_size).floor() as i64,
        (p.y / voxel_size).floor() as i64,
        (p.z / voxel_size).floor() as i64,
    ]
}

pub fn cell_center(c: &Cell, voxel_size: f64) -> Vec3 {
    Vec3::new(c[0] as f64 + 0.5, c[1] as f64 + 0.5, c[2] as f64 + 0.5) * voxel_size
}

/// World points of every valid pixel.
pub fn world_points(view: &PosedDepth) -> Vec<Vec3> {
    let to_world = view.pose.inverse();
    let (w, h) = (view.depth.width(), view.depth.height());
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            if *view.depth.valid.get(x, y) {
                let d = *view.depth.depth.get(x, y);
                let q = view.intrinsics.normalize(x as f64, y as f64);
                out.push(to_world.apply(&Vec3::new(q[0] * d, q[1] * d, d)));
            }
        }
    }
    out
}

/// Median valid depth over all views divided by 20.
pub fn default_voxel_size(views: &[PosedDepth]) -> Result<f64> {
    let depths: Vec<f64> = views
        .iter()
        .flat_map(|v| {
            v.depth
                .depth
                .iter()
                .zip(v.depth.valid.iter())
                .filter(|(_, &ok)| ok)
                .map(|(d, _)| *d)
        })
        .collect();
    stats::median(&depths)
        .map(|m| m / 20.0)
        .ok_or_else(|| Error::EmptyOverlap("no valid depth to size voxels".into()))
}

/// One pass over all cameras and pixels.
pub fn build_voxel_map(views: &[PosedDepth], voxel_size: f64) -> Result<VoxelMap> {
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(Error::invalid(format!("voxel size must be positive, got {voxel_size}")));
    }
    let mut map = VoxelMap {
        voxel_size,
        ..VoxelMap::default()
    };
    for view in views {
        if map.centers.insert(view.id, view.pose.camera_center()).is_some() {
            return Err(Error::invalid(format!("camera id {} appears twice", view.id)));
        }
        let own = map.camera_cells.entry(view.id).or_default();
        for p in world_points(view) {
            let c = cell_of(&p, voxel_size);
            if own.insert(c) {
                map.cells.entry(c).or_default().insert(view.id);
                map.insertions += 1;
            }
        }
    }
    Ok(map)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub id: usize,
    pub shared_cells: usize,
    /// Shared cells over the query camera's cells.
    pub fraction: f64,
}

impl VoxelMap {
    fn cells_of(&self, cam: usize) -> Result<&BTreeSet<Cell>> {
        self.camera_cells.get(&cam).ok_or(Error::UnknownCamera(cam))
    }

    pub fn camera_ids(&self) -> Vec<usize> {
        self.camera_cells.keys().copied().collect()
    }

    /// Cells occupied by both cameras.
    pub fn shared_cells(&self, a: usize, b: usize) -> Result<Vec<Cell>> {
        let ca = self.cells_of(a)?;
        let cb = self.cells_of(b)?;
        Ok(ca.intersection(cb).copied().collect())
    }

    /// `|cells(a) ∩ cells(b)| / |cells(a)|`.
    pub fn overlap_fraction(&self, a: usize, b: usize) -> Result<f64> {
        let own = self.cells_of(a)?.len();
        if own == 0 {
            return Ok(0.0);
        }
        Ok(self.shared_cells(a, b)?.len() as f64 / own as f64)
    }

    /// Angle in degrees between the rays from both camera centers to the
    /// centroid of their shared cells; `None` without shared cells.
    pub fn parallax_deg(&self, a: usize, b: usize) -> Result<Option<f64>> {
        let shared = self.shared_cells(a, b)?;
        if shared.is_empty() {
            return Ok(None);
        }
        let centroid = shared
            .iter()
            .fold(Vec3::zeros(), |acc, c| acc + cell_center(c, self.voxel_size))
            / shared.len() as f64;
        let ra = centroid - self.centers[&a];
        let rb = centroid - self.centers[&b];
        let denom = ra.norm() * rb.norm();
        if denom == 0.0 {
            return Ok(Some(0.0));
        }
        Ok(Some((ra.dot(&rb) / denom).clamp(-1.0, 1.0).acos().to_degrees()))
    }
}

/// Cameras sharing at least one cell with `cam` (excluding `cam`), by id.
pub fn overlapping_cameras(map: &VoxelMap, cam: usize) -> Result<Vec<Overlap>> {
    let own = map.cells_of(cam)?;
    let mut shared: BTreeMap<usize, usize> = BTreeMap::new();
    for c in own {
        for &id in &map.cells[c] {
            if id != cam {
                *shared.entry(id).or_default() += 1;
            }
        }
    }
    Ok(shared
        .into_iter()
        .map(|(id, n)| Overlap {
            id,
            shared_cells: n,
            fraction: n as f64 / own.len() as f64,
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovisConfig {
    /// Set size including the reference.
    pub set_size: usize,
    /// Required overlap fraction in both directions with every member.
    pub overlap_min: f64,
    /// Candidates whose minimum parallax does not exceed this are redundant.
    pub min_parallax_deg: f64,
    /// Voxel edge length; median depth / 20 when absent.
    pub voxel_size: Option<f64>,
}

impl Default for CovisConfig {
    fn default() -> Self {
        CovisConfig {
            set_size: 3,
            overlap_min: 0.3,
            min_parallax_deg: 0.1,
            voxel_size: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovisibleSet {
    pub reference: usize,
    /// Reference first, then in order of selection.
    pub members: Vec<usize>,
    /// Overlap fraction of each member with the reference (1 for itself).
    pub overlaps: Vec<f64>,
    /// Minimum parallax to the earlier members at selection time (0 for the
    /// reference), or the shared-point count for [`select_by_shared_points`].
    pub parallaxes: Vec<f64>,
    /// Fewer than the requested number of cameras qualified.
    pub incomplete: bool,
}

/// Score of adding `cand` to `members`: its minimum parallax to them, or
/// `None` when it fails the overlap requirement with any member.
pub fn candidate_score(map: &VoxelMap, members: &[usize], cand: usize, overlap_min: f64) -> Result<Option<f64>> {
    let mut score = f64::INFINITY;
    for &m in members {
        let ok = map.overlap_fraction(cand, m)? >= overlap_min && map.overlap_fraction(m, cand)? >= overlap_min;
        if !ok {
            return Ok(None);
        }
        match map.parallax_deg(cand, m)? {
            Some(p) => score = score.min(p),
            None => return Ok(None),
        }
    }
    Ok(Some(score))
}

/// Greedy growth from `reference` (ties broken by ascending camera id).
pub fn select_covisible(map: &VoxelMap, reference: usize, config: &CovisConfig) -> Result<CovisibleSet> {
    if config.set_size < 2 {
        return Err(Error::invalid("a co-visible set needs at least two cameras"));
    }
    map.cells_of(reference)?;
    let mut members = vec![reference];
    let mut overlaps = vec![1.0];
    let mut parallaxes = vec![0.0];
    while members.len() < config.set_size {
        let mut best: Option<(f64, usize)> = None;
        for &cand in map.camera_cells.keys() {
            if members.contains(&cand) {
                continue;
            }
            let Some(score) = candidate_score(map, &members, cand, config.overlap_min)? else {
                continue;
            };
            if score <= config.min_parallax_deg {
                continue;
            }
            // keys ascend, so a strict comparison keeps the smallest id on ties
            if best.is_none_or(|(s, _)| score > s) {
                best = Some((score, cand));
            }
        }
        let Some((score, cand)) = best else { break };
        members.push(cand);
        overlaps.push(map.overlap_fraction(cand, reference)?);
        parallaxes.push(score);
    }
    Ok(CovisibleSet {
        reference,
        incomplete: members.len() < config.set_size,
        members,
        overlaps,
        parallaxes,
    })
}

/// The `n − 1` cameras observing the most 3D points in common with the
/// reference; `tracks[k]` lists the cameras that observe point `k`.
pub fn select_by_shared_points(tracks: &[Vec<usize>], reference: usize, n: usize) -> Result<CovisibleSet> {
    if tracks.is_empty() {
        return Err(Error::invalid("empty visibility table"));
    }
    if n < 2 {
        return Err(Error::invalid("a co-visible set needs at least two cameras"));
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut own = 0usize;
    for track in tracks {
        let cams: BTreeSet<usize> = track.iter().copied().collect();
        if cams.contains(&reference) {
            own += 1;
            for &c in &cams {
                if c != reference {
                    *counts.entry(c).or_default() += 1;
                }
            }
        }
    }
    if own == 0 {
        return Err(Error::UnknownCamera(reference));
    }
    let mut ranked: Vec<(usize, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(n - 1);
    let mut members = vec![reference];
    let mut overlaps = vec![1.0];
    let mut parallaxes = vec![own as f64];
    for (id, count) in ranked {
        members.push(id);
        overlaps.push(count as f64 / own as f64);
        parallaxes.push(count as f64);
    }
    Ok(CovisibleSet {
        reference,
        incomplete: members.len() < n,
        members,
        overlaps,
        parallaxes,
    })
}
