//! Train/test comparison of the orthographic matrix models.

use std::fmt::Write as _;

use serde::Serialize;

use latent_depth::linear_model::{self, LinearPredictor, StackedData};

use crate::config::MatrixModelConfig;
use crate::CliError;

pub const CSV_HEADER: &str =
    "# matrix-model v1\nseed,config,feature_dim,latent_dim,train_ssd,test_ssd\n";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelRow {
    pub seed: u64,
    pub config: String,
    pub feature_dim: usize,
    pub latent_dim: usize,
    pub train_ssd: f64,
    pub test_ssd: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct MatrixModelReport {
    pub rows: Vec<ModelRow>,
}

impl MatrixModelReport {
    pub fn csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.seed, r.config, r.feature_dim, r.latent_dim, r.train_ssd, r.test_ssd
            );
        }
        s
    }

    /// Rows of one configuration, in seed order.
    pub fn config(&self, name: &str) -> Vec<&ModelRow> {
        self.rows.iter().filter(|r| r.config == name).collect()
    }

    /// Mean train/test SSD per model.
    pub fn summary(&self) -> String {
        let mut names: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !names.contains(&r.config.as_str()) {
                names.push(&r.config);
            }
        }
        let mut s = format!("{:<14} {:>14} {:>14}\n", "config", "train SSD", "test SSD");
        for name in names {
            let rows = self.config(name);
            let n = rows.len() as f64;
            let train = rows.iter().map(|r| r.train_ssd).sum::<f64>() / n;
            let test = rows.iter().map(|r| r.test_ssd).sum::<f64>() / n;
            let _ = writeln!(s, "{name:<14} {train:>14.4} {test:>14.4}");
        }
        s
    }
}

/// Configuration names of the three rows, e.g. `10d-no-z`, `13d-no-z`,
/// `10+3d-with-z`.
pub fn config_names(cfg: &MatrixModelConfig) -> [String; 3] {
    [
        format!("{}d-no-z", cfg.feature_dim),
        format!("{}d-no-z", cfg.naive_dim),
        format!("{}+{}d-with-z", cfg.feature_dim, cfg.latent_dim),
    ]
}

fn row(
    seed: u64,
    config: &str,
    p: &LinearPredictor,
    train_ssd: f64,
    test: &StackedData,
) -> Result<ModelRow, CliError> {
    Ok(ModelRow {
        seed,
        config: config.to_string(),
        feature_dim: p.feature_dim,
        latent_dim: p.latent_dim,
        train_ssd,
        test_ssd: p.evaluate(test)?,
    })
}

/// Three rows per seed: the projected model without latents, the naive model
/// with a larger feature space, and the projected model with latents.
pub fn run_seed(cfg: &MatrixModelConfig, seed: u64) -> Result<Vec<ModelRow>, CliError> {
    let (train, test) = linear_model::generate_split(
        cfg.n_train,
        cfg.n_test,
        cfg.points_per_object,
        cfg.noise_sigma,
        seed,
    )?;
    let no_z = linear_model::fit_without_z(&train, cfg.feature_dim)?;
    let naive = linear_model::fit_reduced_rank(&train, cfg.naive_dim)?;
    let (with_z, z_train) = linear_model::fit_with_z(&train, cfg.feature_dim, cfg.latent_dim)?;
    let [a, b, c] = config_names(cfg);
    Ok(vec![
        row(
            seed,
            &a,
            &no_z,
            no_z.ssd(&train.x_noisy, &train.y, None)?,
            &test,
        )?,
        row(
            seed,
            &b,
            &naive,
            naive.ssd(&train.x_noisy, &train.y, None)?,
            &test,
        )?,
        row(
            seed,
            &c,
            &with_z,
            with_z.ssd(&train.x_noisy, &train.y, Some(&z_train))?,
            &test,
        )?,
    ])
}

pub fn run(cfg: &MatrixModelConfig) -> Result<MatrixModelReport, CliError> {
    if cfg.seeds == 0 {
        return Err(CliError::Config("seeds must be at least 1".into()));
    }
    let mut report = MatrixModelReport::default();
    for k in 0..cfg.seeds {
        report.rows.extend(run_seed(cfg, cfg.base_seed + k)?);
    }
    if let Some(out) = &cfg.out {
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(out, report.csv())?;
    }
    Ok(report)
}
