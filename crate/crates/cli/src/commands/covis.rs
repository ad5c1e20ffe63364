//! Co-visible sets of the views of a scene directory, computed from its
//! ground-truth depth maps.

use latent_depth::covisibility::{self, CovisibleSet, PosedDepth};
use latent_depth::io;

use crate::config::CovisCommandConfig;
use crate::CliError;

pub fn run(cfg: &CovisCommandConfig) -> Result<Vec<CovisibleSet>, CliError> {
    let scene = io::read_scene_dir(&cfg.scene)?;
    let gts = scene.ground_truth.ok_or_else(|| {
        CliError::Data(format!(
            "{}: covisibility needs depth maps",
            cfg.scene.display()
        ))
    })?;
    let posed: Vec<PosedDepth> = scene
        .views
        .iter()
        .zip(&scene.ids)
        .zip(gts)
        .map(|((v, &id), depth)| PosedDepth {
            id,
            pose: v.pose,
            intrinsics: v.intrinsics,
            depth,
        })
        .collect();
    let voxel = match cfg.covis.voxel_size {
        Some(v) => v,
        None => covisibility::default_voxel_size(&posed)?,
    };
    let map = covisibility::build_voxel_map(&posed, voxel)?;
    let references = if cfg.references.is_empty() {
        scene.ids.clone()
    } else {
        cfg.references.clone()
    };
    let sets = references
        .iter()
        .map(|&r| covisibility::select_covisible(&map, r, &cfg.covis))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(out) = &cfg.out {
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        io::write_covis_jsonl(out, &sets)?;
    }
    Ok(sets)
}
