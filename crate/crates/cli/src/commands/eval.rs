//! Compares predicted depth maps with ground truth, frame by frame.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use latent_depth::io;
use latent_depth::metrics::{self, MetricReport};

use crate::config::EvalConfig;
use crate::CliError;

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub frames: Vec<(String, MetricReport)>,
    pub mean: MetricReport,
}

impl EvalReport {
    pub fn csv(&self) -> String {
        io::format_metrics_csv(&self.frames, Some(&self.mean))
    }
}

/// `NNNN.pfm` files of `dir/depth`, or of `dir` itself when it has no
/// `depth` subdirectory, keyed by frame name.
pub fn depth_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>, CliError> {
    let sub = dir.join("depth");
    let dir = if sub.is_dir() { sub } else { dir.to_path_buf() };
    let entries =
        fs::read_dir(&dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "pfm") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path.clone());
            }
        }
    }
    Ok(out)
}

pub fn run(cfg: &EvalConfig) -> Result<EvalReport, CliError> {
    let pred = depth_files(&cfg.pred)?;
    let gt = depth_files(&cfg.gt)?;
    if pred.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no depth maps",
            cfg.pred.display()
        )));
    }
    let missing: Vec<&str> = pred
        .keys()
        .filter(|k| !gt.contains_key(*k))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Data(format!(
            "frames without ground truth in {}: {}",
            cfg.gt.display(),
            missing.join(", ")
        )));
    }
    let mut names = Vec::new();
    let mut pairs = Vec::new();
    for (name, path) in &pred {
        pairs.push((io::read_pfm(path)?, io::read_pfm(&gt[name])?));
        names.push(name.clone());
    }
    let reports = metrics::evaluate_frames(&pairs, cfg.median_scale)?;
    let mean = metrics::mean_report(&reports)?;
    let report = EvalReport {
        frames: names.into_iter().zip(reports).collect(),
        mean,
    };
    if let Some(out) = &cfg.out {
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(out, report.csv())?;
    }
    Ok(report)
}
