//! Writes the benchmark suites (and optional random scenes) to disk.

use std::path::PathBuf;

use latent_depth::io;
use latent_depth::synth;

use crate::config::SynthConfig;
use crate::CliError;

/// Directories written, one per scene.
pub fn run(cfg: &SynthConfig) -> Result<Vec<PathBuf>, CliError> {
    let mut scenes = synth::make_benchmark(&cfg.benchmark)?;
    if !cfg.suites.is_empty() {
        for name in &cfg.suites {
            if !scenes.iter().any(|s| &s.name == name) {
                let known: Vec<&str> = scenes.iter().map(|s| s.name.as_str()).collect();
                return Err(CliError::Config(format!(
                    "unknown suite '{name}'; known: {}",
                    known.join(", ")
                )));
            }
        }
        scenes.retain(|s| cfg.suites.contains(&s.name));
    }
    for k in 0..cfg.random_scenes {
        scenes.push(synth::random_scene(
            cfg.benchmark.seed + k as u64,
            cfg.random_cameras,
            &cfg.benchmark,
        )?);
    }
    let mut dirs = Vec::new();
    for s in &scenes {
        let dir = cfg.out.join(&s.name);
        io::write_scene_dir(s, &dir)?;
        dirs.push(dir);
    }
    Ok(dirs)
}
