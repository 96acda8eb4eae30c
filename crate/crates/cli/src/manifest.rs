//! Reproducibility manifest written next to every command's outputs.

use std::fs;
use std::path::{Path, PathBuf};

use bilateral_il::{Config, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Serialize)]
struct Versions {
    bilateral_il: &'static str,
    cli: &'static str,
    trial_format: u32,
    model_format: u32,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    argv: Vec<String>,
    profile: &'a str,
    config_sha256: String,
    seeds: Value,
    versions: Versions,
    outputs: Vec<String>,
}

pub fn config_hash(cfg: &Config) -> String {
    Sha256::digest(cfg.to_toml().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Write `manifest.json` and the effective `config.toml` into `dir`.
pub fn write(dir: &Path, command: &str, cfg: &Config, seeds: Value, outputs: &[PathBuf]) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    let m = Manifest {
        command,
        argv: std::env::args().collect(),
        profile: &cfg.profile,
        config_sha256: config_hash(cfg),
        seeds,
        versions: Versions {
            bilateral_il: bilateral_il::VERSION,
            cli: env!("CARGO_PKG_VERSION"),
            trial_format: bilateral_il::dataset::TRIAL_VERSION,
            model_format: bilateral_il::models::MODEL_VERSION,
        },
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    let text = serde_json::to_string_pretty(&m)?;
    fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(())
}
