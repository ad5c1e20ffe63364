//! File formats.
//!
//! * Depth maps: PFM (`Pf`, little-endian, rows stored bottom to top).
//!   Invalid pixels are written as `0` and every non-positive or non-finite
//!   value reads back as invalid.
//! * Images: binary PGM (`P5`, one channel) or PPM (`P6`, three channels),
//!   16 bits per sample when written, 8 or 16 when read.
//! * Masks: 8-bit PGM with `0` = rejected and `255` = kept.
//! * Trajectories: one camera per line,
//!   `id r00 r01 r02 t0 r10 r11 r12 t1 r20 r21 r22 t2 fx fy cx cy`, where
//!   `[R | t]` maps world to camera coordinates; `#` starts a comment.
//! * Shape bases: see [`write_basis`].
//! * Co-visible sets: JSON lines.
//! * CSV logs start with a `# <schema> v<version>` comment line.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use crate::codec::DepthMap;
use crate::covisibility::CovisibleSet;
use crate::decoder::{coarse_grid_basis, BasisMaps, ShapeBasis};
use crate::error::{Error, Result};
use crate::geometry::{Image, Intrinsics, PosedView, RigidTransform};
use crate::grid::Grid;
use crate::metrics::MetricReport;
use crate::optimizer::TraceRow;
use crate::synth::SynthScene;

fn ctx(path: &Path) -> String {
    path.display().to_string()
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::format(ctx(path), e.to_string()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    Ok(())
}

/// Splits a netpbm/PFM style header into `count` whitespace-separated tokens
/// (skipping `#` comments) and returns them with the offset of the payload.
fn header_tokens(bytes: &[u8], count: usize, context: &str) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::format(context, "truncated header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // exactly one whitespace byte separates header and payload
    Ok((tokens, i + 1))
}

fn parse<T: std::str::FromStr>(s: &str, context: &str) -> Result<T> {
    s.parse().map_err(|_| Error::format(context, format!("cannot parse '{s}'")))
}

pub fn write_pfm(path: &Path, depth: &DepthMap) -> Result<()> {
    ensure_parent(path)?;
    let (w, h) = (depth.width(), depth.height());
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            let v = if *depth.valid.get(x, y) { *depth.depth.get(x, y) as f32 } else { 0.0 };
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_pfm(path: &Path) -> Result<DepthMap> {
    let bytes = read_file(path)?;
    let c = ctx(path);
    let (tok, offset) = header_tokens(&bytes, 4, &c)?;
    if tok[0] != "Pf" {
        return Err(Error::format(&c, format!("expected single-channel PFM, found '{}'", tok[0])));
    }
    let (w, h): (usize, usize) = (parse(&tok[1], &c)?, parse(&tok[2], &c)?);
    let scale: f64 = parse(&tok[3], &c)?;
    let little = scale < 0.0;
    let payload = bytes.get(offset..).unwrap_or_default();
    if payload.len() < w * h * 4 {
        return Err(Error::format(&c, "truncated payload"));
    }
    let mut depth = Grid::filled(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let k = ((h - 1 - y) * w + x) * 4;
            let raw: [u8; 4] = payload[k..k + 4].try_into().expect("4 bytes");
            let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
            depth.set(x, y, v as f64);
        }
    }
    let valid = depth.map(|d| d.is_finite() && *d > 0.0);
    let depth = Grid::from_fn(w, h, |x, y| if *valid.get(x, y) { *depth.get(x, y) } else { 0.0 });
    DepthMap::new(depth, valid)
}

/// Writes a 1- or 3-channel image with 16-bit samples (values clamped to
/// `[0, 1]`).
pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    ensure_parent(path)?;
    let magic = match image.channels() {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::invalid(format!("cannot write a {c}-channel image"))),
    };
    let mut out = format!("{magic}\n{} {}\n65535\n", image.width(), image.height()).into_bytes();
    for v in image.data() {
        let s = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&s.to_be_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = read_file(path)?;
    let c = ctx(path);
    let (tok, offset) = header_tokens(&bytes, 4, &c)?;
    let channels = match tok[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        m => return Err(Error::format(&c, format!("unsupported image type '{m}'"))),
    };
    let (w, h): (usize, usize) = (parse(&tok[1], &c)?, parse(&tok[2], &c)?);
    let maxval: u32 = parse(&tok[3], &c)?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(&c, format!("bad maxval {maxval}")));
    }
    let n = w * h * channels;
    let payload = bytes.get(offset..).unwrap_or_default();
    let wide = maxval > 255;
    if payload.len() < n * if wide { 2 } else { 1 } {
        return Err(Error::format(&c, "truncated payload"));
    }
    let data = (0..n)
        .map(|k| {
            let s = if wide {
                u16::from_be_bytes([payload[2 * k], payload[2 * k + 1]]) as f64
            } else {
                payload[k] as f64
            };
            s / maxval as f64
        })
        .collect();
    Image::new(w, h, channels, data)
}

pub fn write_mask(path: &Path, mask: &Grid<bool>) -> Result<()> {
    ensure_parent(path)?;
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.iter().map(|&k| if k { 255u8 } else { 0 }));
    fs::write(path, out)?;
    Ok(())
}

pub fn read_mask(path: &Path) -> Result<Grid<bool>> {
    let img = read_image(path)?;
    Grid::from_vec(img.width(), img.height(), img.gray().iter().map(|&v| v >= 0.5).collect())
}

/// A camera entry of a trajectory file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryEntry {
    pub id: usize,
    pub pose: RigidTransform,
    pub intrinsics: Intrinsics,
}

pub fn format_trajectory(entries: &[TrajectoryEntry]) -> String {
    let mut s = String::from("# id r00 r01 r02 t0 r10 r11 r12 t1 r20 r21 r22 t2 fx fy cx cy\n");
    for e in entries {
        let r = &e.pose.rotation;
        let t = &e.pose.translation;
        let _ = write!(s, "{}", e.id);
        for row in 0..3 {
            let _ = write!(s, " {} {} {} {}", r[(row, 0)], r[(row, 1)], r[(row, 2)], t[row]);
        }
        let k = &e.intrinsics;
        let _ = writeln!(s, " {} {} {} {}", k.fx, k.fy, k.cx, k.cy);
    }
    s
}

pub fn parse_trajectory(text: &str, context: &str) -> Result<Vec<TrajectoryEntry>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let where_ = format!("{context}:{}", lineno + 1);
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 17 {
            return Err(Error::format(&where_, format!("expected 17 fields, found {}", fields.len())));
        }
        let id: usize = parse(fields[0], &where_)?;
        let v: Vec<f64> = fields[1..].iter().map(|f| parse(f, &where_)).collect::<Result<_>>()?;
        let rotation = nalgebra::Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        let translation = crate::geometry::Vec3::new(v[3], v[7], v[11]);
        let pose = RigidTransform::new(rotation, translation).map_err(|e| Error::format(&where_, e.to_string()))?;
        let intrinsics = Intrinsics::new(v[12], v[13], v[14], v[15]).map_err(|e| Error::format(&where_, e.to_string()))?;
        out.push(TrajectoryEntry { id, pose, intrinsics });
    }
    Ok(out)
}

pub fn write_trajectory(path: &Path, entries: &[TrajectoryEntry]) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, format_trajectory(entries))?;
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::format(ctx(path), e.to_string()))?;
    parse_trajectory(&text, &ctx(path))
}

const BASIS_MAGIC: &[u8; 8] = b"LDBASIS\0";
const BASIS_VERSION: u32 = 1;

/// Writes a shape basis.
///
/// Layout (all little-endian): the 8 magic bytes `LDBASIS\0`, then `u32`
/// fields `version, height, width, latent_dim, mode, coarse_rows,
/// coarse_cols, regression_maps`, then `f32` grids in row-major order: the
/// mean map, the `latent_dim` basis maps (fitted mode only; coarse-grid maps
/// are rebuilt from `coarse_rows × coarse_cols`), and the `regression_maps`
/// feature-regression maps. `mode` is 0 for fitted and 1 for coarse-grid.
pub fn write_basis(path: &Path, basis: &ShapeBasis) -> Result<()> {
    ensure_parent(path)?;
    let (rows, cols, mode) = match basis.maps() {
        BasisMaps::Dense(_) => (0, 0, 0u32),
        BasisMaps::CoarseGrid { rows, cols } => (*rows, *cols, 1),
    };
    let regression = basis.feature_regression.as_deref().unwrap_or_default();
    let mut out = BASIS_MAGIC.to_vec();
    for v in [
        BASIS_VERSION,
        basis.height() as u32,
        basis.width() as u32,
        basis.latent_dim() as u32,
        mode,
        rows as u32,
        cols as u32,
        regression.len() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut push = |g: &Grid<f64>| {
        for v in g.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    };
    push(&basis.mean_rho);
    if let BasisMaps::Dense(maps) = basis.maps() {
        maps.iter().for_each(&mut push);
    }
    regression.iter().for_each(&mut push);
    fs::write(path, out)?;
    Ok(())
}

pub fn read_basis(path: &Path) -> Result<ShapeBasis> {
    let bytes = read_file(path)?;
    let c = ctx(path);
    if bytes.len() < 40 || &bytes[..8] != BASIS_MAGIC {
        return Err(Error::format(&c, "not a shape basis file"));
    }
    let field = |k: usize| u32::from_le_bytes(bytes[8 + 4 * k..12 + 4 * k].try_into().expect("4 bytes")) as usize;
    if field(0) as u32 != BASIS_VERSION {
        return Err(Error::format(&c, format!("unsupported version {}", field(0))));
    }
    let (h, w, latent, mode, rows, cols, nreg) = (field(1), field(2), field(3), field(4), field(5), field(6), field(7));
    let mut offset = 40;
    let mut grid = || -> Result<Grid<f64>> {
        let end = offset + w * h * 4;
        let chunk = bytes.get(offset..end).ok_or_else(|| Error::format(&c, "truncated grid data"))?;
        offset = end;
        let data = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        Grid::from_vec(w, h, data)
    };
    let mean = grid()?;
    let mut basis = match mode {
        0 => {
            let maps = (0..latent).map(|_| grid()).collect::<Result<Vec<_>>>()?;
            ShapeBasis::from_dense(mean, maps, format!("loaded from {c}"))?
        }
        1 => {
            if rows * cols != latent {
                return Err(Error::format(&c, "latent grid does not match latent_dim"));
            }
            let mut b = coarse_grid_basis(h, w, (rows, cols))?.with_mean(mean)?;
            b.provenance = format!("loaded from {c}");
            b
        }
        m => return Err(Error::format(&c, format!("unknown basis mode {m}"))),
    };
    if nreg > 0 {
        basis.feature_regression = Some((0..nreg).map(|_| grid()).collect::<Result<_>>()?);
    }
    Ok(basis)
}

pub fn write_covis_jsonl(path: &Path, sets: &[CovisibleSet]) -> Result<()> {
    ensure_parent(path)?;
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for s in sets {
        serde_json::to_writer(&mut f, s)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_covis_jsonl(path: &Path) -> Result<Vec<CovisibleSet>> {
    let f = std::io::BufReader::new(fs::File::open(path).map_err(|e| Error::format(ctx(path), e.to_string()))?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub const TRACE_CSV_HEADER: &str =
    "# loss-trace v1\niteration,photo,depth,alpha,z_reg,w_reg,total,photo_pixels,depth_pixels,clamped\n";

pub fn format_trace_csv(trace: &[TraceRow]) -> String {
    let mut s = String::from(TRACE_CSV_HEADER);
    for r in trace {
        let l = &r.loss;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.iteration, l.photo, l.depth, l.alpha, l.z_reg, l.w_reg, l.total, l.photo_pixels, l.depth_pixels, r.clamped
        );
    }
    s
}

pub const METRICS_CSV_HEADER: &str =
    "# depth-metrics v1\nframe,rmse,abs_rel,sq_rel,si_rmse,delta1,delta2,delta3,scale,n_pixels,non_positive\n";

/// One row per frame followed by a `mean` row (per-frame average).
pub fn format_metrics_csv(frames: &[(String, MetricReport)], mean: Option<&MetricReport>) -> String {
    let mut s = String::from(METRICS_CSV_HEADER);
    let mut row = |name: &str, r: &MetricReport| {
        let _ = writeln!(
            s,
            "{name},{},{},{},{},{},{},{},{},{},{}",
            r.rmse, r.abs_rel, r.sq_rel, r.si_rmse, r.delta_acc[0], r.delta_acc[1], r.delta_acc[2], r.scale, r.n_pixels, r.non_positive
        );
    };
    for (name, r) in frames {
        row(name, r);
    }
    if let Some(m) = mean {
        row("mean", m);
    }
    s
}

/// Paths of a scene directory.
#[derive(Clone, Debug)]
pub struct SceneLayout {
    pub root: PathBuf,
}

impl SceneLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        SceneLayout { root: root.into() }
    }

    pub fn scene_json(&self) -> PathBuf {
        self.root.join("scene.json")
    }

    pub fn trajectory(&self) -> PathBuf {
        self.root.join("poses.txt")
    }

    pub fn image(&self, id: usize, channels: usize) -> PathBuf {
        let ext = if channels == 3 { "ppm" } else { "pgm" };
        self.root.join("images").join(format!("{id:04}.{ext}"))
    }

    pub fn depth(&self, id: usize) -> PathBuf {
        self.root.join("depth").join(format!("{id:04}.pfm"))
    }
}

/// Renders every camera of `scene` into `dir`: `scene.json`, `poses.txt`,
/// `images/NNNN.pgm` and ground truth `depth/NNNN.pfm`.
pub fn write_scene_dir(scene: &SynthScene, dir: &Path) -> Result<()> {
    let layout = SceneLayout::new(dir);
    fs::create_dir_all(dir)?;
    fs::write(layout.scene_json(), serde_json::to_string_pretty(scene)? + "\n")?;
    let mut entries = Vec::new();
    for cam in 0..scene.cameras.len() {
        let r = scene.render(cam)?;
        write_image(&layout.image(cam, r.image.channels()), &r.image)?;
        write_pfm(&layout.depth(cam), &r.depth)?;
        entries.push(TrajectoryEntry {
            id: cam,
            pose: scene.cameras[cam].pose,
            intrinsics: scene.cameras[cam].intrinsics,
        });
    }
    write_trajectory(&layout.trajectory(), &entries)
}

/// Views (and ground truth where present) loaded from a scene directory.
#[derive(Clone, Debug)]
pub struct SceneData {
    pub ids: Vec<usize>,
    pub views: Vec<PosedView>,
    pub ground_truth: Option<Vec<DepthMap>>,
}

pub fn read_scene_dir(dir: &Path) -> Result<SceneData> {
    let layout = SceneLayout::new(dir);
    let traj = layout.trajectory();
    if !traj.exists() {
        return Err(Error::format(ctx(&traj), "missing trajectory file"));
    }
    let entries = read_trajectory(&traj)?;
    let mut views = Vec::new();
    let mut gts = Vec::new();
    for e in &entries {
        let gray = layout.image(e.id, 1);
        let color = layout.image(e.id, 3);
        let path = if gray.exists() { gray } else { color };
        if !path.exists() {
            return Err(Error::format(ctx(&path), "missing image"));
        }
        let image = read_image(&path)?;
        views.push(PosedView::new(image, e.intrinsics, e.pose));
        let dpath = layout.depth(e.id);
        if dpath.exists() {
            gts.push(read_pfm(&dpath)?);
        }
    }
    let ground_truth = if gts.len() == entries.len() && !gts.is_empty() { Some(gts) } else { None };
    Ok(SceneData {
        ids: entries.iter().map(|e| e.id).collect(),
        views,
        ground_truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    #[test]
    fn pfm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.pfm");
        let depth = Grid::from_fn(5, 3, |x, y| 1.0 + x as f64 * 0.5 + y as f64);
        let valid = Grid::from_fn(5, 3, |x, _| x != 2);
        let d = DepthMap::new(Grid::from_fn(5, 3, |x, y| if x != 2 { *depth.get(x, y) } else { 0.0 }), valid).unwrap();
        write_pfm(&p, &d).unwrap();
        let back = read_pfm(&p).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn image_round_trip_is_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_gray(Grid::from_fn(4, 3, |x, y| (x + 4 * y) as f64 / 11.0));
        let p = dir.path().join("i.pgm");
        write_image(&p, &img).unwrap();
        let back = read_image(&p).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-12);
        }
    }

    #[test]
    fn trajectory_round_trip_is_exact() {
        let pose = RigidTransform::from_axis_angle(Vec3::new(0.2, 1.0, -0.3), 0.7, Vec3::new(0.1, -2.0, 1.0 / 3.0));
        let e = TrajectoryEntry {
            id: 12,
            pose,
            intrinsics: Intrinsics::new(200.0, 201.5, 127.5, 95.5).unwrap(),
        };
        let back = parse_trajectory(&format_trajectory(&[e]), "mem").unwrap();
        assert_eq!(back, vec![e]);
        assert!(parse_trajectory("1 2 3", "mem").is_err());
    }

    #[test]
    fn basis_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.bin");
        let b = coarse_grid_basis(12, 16, (3, 4)).unwrap().with_mean(Grid::filled(16, 12, 0.5)).unwrap();
        write_basis(&p, &b).unwrap();
        let back = read_basis(&p).unwrap();
        assert_eq!(back.latent_dim(), 12);
        assert_eq!(back.mean_rho, b.mean_rho);
        let dense = ShapeBasis::from_dense(Grid::filled(4, 2, 0.25), vec![Grid::filled(4, 2, 0.5)], "t").unwrap();
        write_basis(&p, &dense).unwrap();
        let back = read_basis(&p).unwrap();
        assert_eq!(back.basis_map(0), dense.basis_map(0));
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        let m = Grid::from_fn(7, 2, |x, y| (x + y) % 3 == 0);
        write_mask(&p, &m).unwrap();
        assert_eq!(read_mask(&p).unwrap(), m);
    }
}
