//! Builds a coarse-grid basis or fits one to ground-truth depth maps.

use latent_depth::codec;
use latent_depth::decoder::{self, ShapeBasis};
use latent_depth::grid::Grid;
use latent_depth::io;

use crate::config::{BasisModeChoice, FitBasisConfig};
use crate::CliError;

pub fn run(cfg: &FitBasisConfig) -> Result<ShapeBasis, CliError> {
    let basis = build(cfg)?;
    io::write_basis(&cfg.out, &basis)?;
    Ok(basis)
}

/// The basis described by `cfg`, without writing it.
pub fn build(cfg: &FitBasisConfig) -> Result<ShapeBasis, CliError> {
    match cfg.mode {
        BasisModeChoice::CoarseGrid => {
            let (w, h) = match cfg.train.first() {
                Some(dir) => {
                    let scene = io::read_scene_dir(dir)?;
                    (scene.views[0].width(), scene.views[0].height())
                }
                None => (cfg.width, cfg.height),
            };
            let basis = decoder::coarse_grid_basis(h, w, (cfg.latent_grid[0], cfg.latent_grid[1]))?
                .with_mean(Grid::filled(w, h, cfg.mean_rho))?;
            Ok(basis)
        }
        BasisModeChoice::Fitted => {
            if cfg.train.is_empty() {
                return Err(CliError::Config(
                    "fitted mode needs at least one training scene".into(),
                ));
            }
            let mut maps = Vec::new();
            for dir in &cfg.train {
                let scene = io::read_scene_dir(dir)?;
                let gts = scene.ground_truth.ok_or_else(|| {
                    CliError::Data(format!("{}: no ground-truth depth", dir.display()))
                })?;
                for d in gts {
                    let alpha = d.mean().ok_or_else(|| {
                        CliError::Data(format!("{}: empty depth map", dir.display()))
                    })?;
                    maps.push(codec::encode(&d, alpha)?.rho);
                }
            }
            let (basis, report) = decoder::fit_basis(&maps, None, cfg.latent_dim)?;
            log::info!(
                "fitted {} of {} basis maps; residual {:.4e}",
                basis.latent_dim(),
                report.requested_dim,
                report.training_residual
            );
            Ok(basis)
        }
    }
}
