//! Refines the latent codes of one co-visible set of a scene directory.
//!
//! Output layout below `out`:
//!
//! ```text
//! depth/NNNN.pfm      refined depth of every refined view
//! codes.json          latent codes and mean depths
//! trace.csv           loss trace
//! metrics.csv         per-frame and mean metrics (ground truth only)
//! summary.json        the returned report
//! masks/I_J_KIND.pgm  pair masks (with export_masks)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use latent_depth::covisibility::{self, CovisibleSet, PosedDepth};
use latent_depth::decoder::{self, LatentCode, ShapeBasis};
use latent_depth::grid::Grid;
use latent_depth::io::{self, SceneData};
use latent_depth::metrics::{self, MetricReport};
use latent_depth::objective::{Params, Problem};
use latent_depth::optimizer::{self, StopReason};
use latent_depth::DepthMap;

use crate::config::RefineConfig;
use crate::CliError;

#[derive(Clone, Debug, Serialize)]
pub struct CodesFile {
    pub ids: Vec<usize>,
    pub alpha: Vec<f64>,
    pub z: Vec<LatentCode>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RefineReport {
    pub scene: PathBuf,
    pub out: PathBuf,
    /// Ids of the refined views, reference first.
    pub ids: Vec<usize>,
    pub covisible: Option<CovisibleSet>,
    pub latent_dim: usize,
    pub iterations: usize,
    pub best_iteration: usize,
    pub stop: StopReason,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Metrics of the `z = 0` decode.
    pub initial_metrics: Option<MetricReport>,
    pub final_metrics: Option<MetricReport>,
}

/// Runs [`run`] inside a pool of `cfg.threads` workers (rayon's default pool
/// when 0).
pub fn run_with_threads(cfg: &RefineConfig) -> Result<RefineReport, CliError> {
    if cfg.threads == 0 {
        return run(cfg);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(|| run(cfg))
}

fn load_basis(cfg: &RefineConfig, width: usize, height: usize) -> Result<ShapeBasis, CliError> {
    let basis = match &cfg.basis {
        Some(path) => io::read_basis(path)?,
        None => {
            decoder::coarse_grid_basis(height, width, (cfg.latent_grid[0], cfg.latent_grid[1]))?
                .with_mean(Grid::filled(width, height, cfg.mean_rho))?
        }
    };
    if basis.width() != width || basis.height() != height {
        return Err(CliError::Data(format!(
            "basis is {}x{} but the views are {width}x{height}",
            basis.width(),
            basis.height()
        )));
    }
    Ok(basis)
}

fn initial_alphas(cfg: &RefineConfig, scene: &SceneData) -> Result<Vec<f64>, CliError> {
    if let Some(a) = cfg.initial_alpha {
        if !(a > 0.0 && a.is_finite()) {
            return Err(CliError::Config(format!(
                "initial_alpha must be positive, got {a}"
            )));
        }
        return Ok(vec![a; scene.views.len()]);
    }
    let gts = scene.ground_truth.as_ref().ok_or_else(|| {
        CliError::Config(
            "initial_alpha is required when the scene has no ground-truth depth".into(),
        )
    })?;
    gts.iter()
        .zip(&scene.ids)
        .map(|(d, id)| {
            d.mean()
                .ok_or_else(|| CliError::Data(format!("view {id}: empty ground-truth depth")))
        })
        .collect()
}

/// View indices to refine: the co-visible set of the reference when the
/// scene has more than two views, otherwise both views.
fn select_views(
    cfg: &RefineConfig,
    scene: &SceneData,
    depths: &[DepthMap],
) -> Result<(Vec<usize>, Option<CovisibleSet>), CliError> {
    if scene.views.len() < 2 {
        return Err(CliError::Data(format!(
            "{}: refinement needs at least two views, found {}",
            cfg.scene.display(),
            scene.views.len()
        )));
    }
    let index_of = |id: usize| scene.ids.iter().position(|&x| x == id);
    if index_of(cfg.reference).is_none() {
        return Err(CliError::Config(format!(
            "reference view {} is not in the scene",
            cfg.reference
        )));
    }
    if scene.views.len() == 2 {
        let mut order = vec![index_of(cfg.reference).unwrap_or(0)];
        order.push(1 - order[0]);
        return Ok((order, None));
    }
    let posed: Vec<PosedDepth> = scene
        .views
        .iter()
        .zip(&scene.ids)
        .zip(depths)
        .map(|((v, &id), d)| PosedDepth {
            id,
            pose: v.pose,
            intrinsics: v.intrinsics,
            depth: d.clone(),
        })
        .collect();
    let voxel = match cfg.covis.voxel_size {
        Some(v) => v,
        None => covisibility::default_voxel_size(&posed)?,
    };
    let map = covisibility::build_voxel_map(&posed, voxel)?;
    let set = covisibility::select_covisible(&map, cfg.reference, &cfg.covis)?;
    if set.members.len() < 2 {
        return Err(CliError::Data(format!(
            "no view overlaps reference {} by at least {}",
            cfg.reference, cfg.covis.overlap_min
        )));
    }
    if set.incomplete {
        log::warn!(
            "co-visible set of {} has only {} views",
            cfg.reference,
            set.members.len()
        );
    }
    let order = set.members.iter().filter_map(|&id| index_of(id)).collect();
    Ok((order, Some(set)))
}

fn write_masks(
    dir: &Path,
    problem: &Problem<'_>,
    ids: &[usize],
    depths: &[DepthMap],
) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    let masks = problem.pair_masks(depths)?;
    for (&(i, j), pm) in problem.pairs().iter().zip(&masks) {
        let m = &pm.mask;
        for (kind, grid) in [
            ("bounds", &m.bounds),
            ("chirality", &m.chirality),
            ("occlusion", &m.occlusion),
            ("viewing_angle", &m.viewing_angle),
            ("combined", &m.combined),
        ] {
            io::write_mask(
                &dir.join(format!("{:04}_{:04}_{kind}.pgm", ids[i], ids[j])),
                grid,
            )?;
        }
    }
    Ok(())
}

fn evaluate_all(
    pred: &[DepthMap],
    gt: &[DepthMap],
    ids: &[usize],
    median_scale: bool,
) -> Result<(Vec<(String, MetricReport)>, MetricReport), CliError> {
    let pairs: Vec<(DepthMap, DepthMap)> = pred.iter().cloned().zip(gt.iter().cloned()).collect();
    let reports = metrics::evaluate_frames(&pairs, median_scale)?;
    let mean = metrics::mean_report(&reports)?;
    let named = ids
        .iter()
        .map(|id| format!("{id:04}"))
        .zip(reports)
        .collect();
    Ok((named, mean))
}

pub fn run(cfg: &RefineConfig) -> Result<RefineReport, CliError> {
    cfg.loss.validate()?;
    cfg.optimizer.validate()?;
    let scene = io::read_scene_dir(&cfg.scene)?;
    let first = scene
        .views
        .first()
        .ok_or_else(|| CliError::Data(format!("{}: no views", cfg.scene.display())))?;
    let (width, height) = (first.width(), first.height());
    if let Some(v) = scene
        .views
        .iter()
        .find(|v| v.width() != width || v.height() != height)
    {
        return Err(CliError::Data(format!(
            "views differ in size: {width}x{height} and {}x{}",
            v.width(),
            v.height()
        )));
    }
    let basis = load_basis(cfg, width, height)?;
    let alphas = initial_alphas(cfg, &scene)?;

    let z0_depths: Vec<DepthMap> = alphas
        .iter()
        .map(|&a| {
            Ok(latent_depth::codec::decode(
                &basis
                    .decode(&LatentCode::zeros(basis.latent_dim()), a)?
                    .transformed,
            ))
        })
        .collect::<Result<_, latent_depth::Error>>()?;
    let selection_depths = scene.ground_truth.as_deref().unwrap_or(&z0_depths);
    let (order, covisible) = select_views(cfg, &scene, selection_depths)?;

    let views: Vec<_> = order.iter().map(|&k| scene.views[k].clone()).collect();
    let ids: Vec<usize> = order.iter().map(|&k| scene.ids[k]).collect();
    let problem = Problem::new(&views, &[&basis], cfg.loss, cfg.mask)?;
    let init = Params::zeros(
        views.len(),
        basis.latent_dim(),
        order.iter().map(|&k| alphas[k]).collect(),
    );
    let initial_depths = problem.depth_maps(&init)?;
    let result = optimizer::refine_codes(&problem, init, &cfg.optimizer)?;

    fs::create_dir_all(cfg.out.join("depth"))?;
    fs::write(
        cfg.out.join("trace.csv"),
        io::format_trace_csv(&result.trace),
    )?;
    let result = result.into_result(&cfg.optimizer)?;
    let depths = problem.depth_maps(&result.params)?;
    for (id, d) in ids.iter().zip(&depths) {
        io::write_pfm(&io::SceneLayout::new(&cfg.out).depth(*id), d)?;
    }
    let codes = CodesFile {
        ids: ids.clone(),
        alpha: result.params.alpha.clone(),
        z: result.params.z.clone(),
    };
    fs::write(
        cfg.out.join("codes.json"),
        serde_json::to_string_pretty(&codes)?,
    )?;
    if cfg.export_masks {
        write_masks(&cfg.out.join("masks"), &problem, &ids, &depths)?;
    }

    let (initial_metrics, final_metrics) = match &scene.ground_truth {
        Some(gts) => {
            let gt: Vec<DepthMap> = order.iter().map(|&k| gts[k].clone()).collect();
            let (_, before) = evaluate_all(&initial_depths, &gt, &ids, cfg.median_scale)?;
            let (frames, after) = evaluate_all(&depths, &gt, &ids, cfg.median_scale)?;
            fs::write(
                cfg.out.join("metrics.csv"),
                io::format_metrics_csv(&frames, Some(&after)),
            )?;
            (Some(before), Some(after))
        }
        None => {
            log::info!("no ground truth; metrics skipped");
            (None, None)
        }
    };

    let report = RefineReport {
        scene: cfg.scene.clone(),
        out: cfg.out.clone(),
        ids,
        covisible,
        latent_dim: basis.latent_dim(),
        iterations: result.trace.len() - 1,
        best_iteration: result.best_iteration,
        stop: result.stop,
        initial_loss: result.initial_loss(),
        final_loss: result.best_loss(),
        initial_metrics,
        final_metrics,
    };
    fs::write(
        cfg.out.join("summary.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    Ok(report)
}
