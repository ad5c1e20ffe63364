//! Experiment configuration: JSON files with per-command sections, flags on
//! top. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use latent_depth::covisibility::CovisConfig;
use latent_depth::decoder::DEFAULT_LATENT_GRID;
use latent_depth::losses::LossConfig;
use latent_depth::masking::MaskConfig;
use latent_depth::optimizer::OptimizerConfig;
use latent_depth::synth::BenchmarkConfig;

use crate::CliError;

/// Reads a command configuration, or its defaults without a file.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatrixModelConfig {
    /// Number of seeds, run as `base_seed, base_seed + 1, …`.
    pub seeds: u64,
    pub base_seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub points_per_object: usize,
    pub noise_sigma: f64,
    /// Image feature dimension of the projected models.
    pub feature_dim: usize,
    /// Feature dimension of the naive enlarged model.
    pub naive_dim: usize,
    pub latent_dim: usize,
    pub out: Option<PathBuf>,
}

impl Default for MatrixModelConfig {
    fn default() -> Self {
        MatrixModelConfig {
            seeds: 10,
            base_seed: 0,
            n_train: 50,
            n_test: 50,
            points_per_object: 20,
            noise_sigma: 0.05,
            feature_dim: 10,
            naive_dim: 13,
            latent_dim: 3,
            out: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub out: PathBuf,
    pub benchmark: BenchmarkConfig,
    /// Suites to write, by name; empty writes all four.
    pub suites: Vec<String>,
    /// Additional random scenes.
    pub random_scenes: usize,
    pub random_cameras: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            out: PathBuf::from("scenes"),
            benchmark: BenchmarkConfig::default(),
            suites: Vec::new(),
            random_scenes: 0,
            random_cameras: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisModeChoice {
    #[default]
    CoarseGrid,
    Fitted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitBasisConfig {
    pub mode: BasisModeChoice,
    /// Latent grid of the coarse-grid mode.
    pub latent_grid: [usize; 2],
    /// Number of basis maps of the fitted mode.
    pub latent_dim: usize,
    /// Constant mean map of the coarse-grid mode.
    pub mean_rho: f64,
    /// Output size of the coarse-grid mode when no training scene is given.
    pub width: usize,
    pub height: usize,
    /// Scene directories whose ground-truth depth maps are the training set.
    pub train: Vec<PathBuf>,
    pub out: PathBuf,
}

impl Default for FitBasisConfig {
    fn default() -> Self {
        FitBasisConfig {
            mode: BasisModeChoice::CoarseGrid,
            latent_grid: [DEFAULT_LATENT_GRID.0, DEFAULT_LATENT_GRID.1],
            latent_dim: 8,
            mean_rho: 0.5,
            width: 256,
            height: 192,
            train: Vec::new(),
            out: PathBuf::from("basis.bin"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub scene: PathBuf,
    pub out: PathBuf,
    /// Basis file; a coarse-grid basis with `mean_rho` is built when absent.
    pub basis: Option<PathBuf>,
    pub latent_grid: [usize; 2],
    pub mean_rho: f64,
    /// Mean depth used for every view. Without it the ground-truth mean is
    /// used when available.
    pub initial_alpha: Option<f64>,
    /// Reference view of the co-visible set.
    pub reference: usize,
    pub covis: CovisConfig,
    pub loss: LossConfig,
    pub mask: MaskConfig,
    pub optimizer: OptimizerConfig,
    /// Evaluate with median scaling.
    pub median_scale: bool,
    /// Worker threads (0 = rayon default).
    pub threads: usize,
    /// Write per-category pair masks of the final depths as PGM.
    pub export_masks: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            scene: PathBuf::from("scene"),
            out: PathBuf::from("refined"),
            basis: None,
            latent_grid: [DEFAULT_LATENT_GRID.0, DEFAULT_LATENT_GRID.1],
            mean_rho: 0.5,
            initial_alpha: None,
            reference: 0,
            covis: CovisConfig::default(),
            loss: LossConfig::default(),
            mask: MaskConfig::default(),
            optimizer: OptimizerConfig::default(),
            median_scale: false,
            threads: 0,
            export_masks: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub pred: PathBuf,
    pub gt: PathBuf,
    pub median_scale: bool,
    pub out: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            pred: PathBuf::from("refined"),
            gt: PathBuf::from("scene"),
            median_scale: false,
            out: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovisCommandConfig {
    pub scene: PathBuf,
    pub covis: CovisConfig,
    /// Reference cameras; every camera when empty.
    pub references: Vec<usize>,
    pub out: Option<PathBuf>,
}

impl Default for CovisCommandConfig {
    fn default() -> Self {
        CovisCommandConfig {
            scene: PathBuf::from("scene"),
            covis: CovisConfig::default(),
            references: Vec::new(),
            out: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RefineConfig>(r#"{"optimiser": {}}"#).is_err());
        assert!(serde_json::from_str::<RefineConfig>(
            r#"{"optimizer": {"lr": 0.01, "max_iter": 3}}"#
        )
        .is_err());
        let c: RefineConfig = serde_json::from_str(r#"{"optimizer": {"max_iters": 3}}"#).unwrap();
        assert_eq!(c.optimizer.max_iters, 3);
        assert_eq!(c.optimizer.lr, 1e-3);
    }

    #[test]
    fn defaults_carry_the_method_constants() {
        let r = RefineConfig::default();
        assert_eq!(r.loss.lambda_photo, 100.0);
        assert_eq!(r.loss.lambda_depth, 10.0);
        assert_eq!(r.mask.tau, 4.44);
        assert_eq!(r.mask.max_view_angle_deg, 85.0);
        assert_eq!(r.optimizer.lr, 1e-3);
        assert_eq!(r.latent_grid[0] * r.latent_grid[1], 192);
    }
}
