//! Training configuration files and command-line overrides.

use std::path::{Path, PathBuf};

use diffstereo_core::model::Profile;
use diffstereo_core::train::TrainConfig;

use crate::error::{CliError, Result};

/// Environment variable that replaces the configured seed.
pub const SEED_ENV: &str = "DIFFSTEREO_SEED";

pub fn seed_override() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::user(format!("{SEED_ENV}=`{v}` is not a non-negative integer"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(CliError::user(format!("{SEED_ENV}: {e}"))),
    }
}

/// File locations of a run, resolved against the config file's directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunPaths {
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    pub init_checkpoint: Option<PathBuf>,
    pub resume: Option<PathBuf>,
}

/// A loaded config. `config` keeps the paths as written so that it can be
/// stored in checkpoints without tying them to one machine.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: TrainConfig,
    pub paths: RunPaths,
}

pub fn parse_train_config(text: &str, origin: &Path) -> Result<TrainConfig> {
    serde_json::from_str(text).map_err(|e| CliError::user(format!("{}: {e}", origin.display())))
}

/// Read `path`, then apply `--stage`, `--profile` and the seed variable.
pub fn load_train_config(path: &Path, stage: Option<u8>, profile: Option<Profile>) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io("read config", path, e))?;
    let mut cfg = parse_train_config(&text, path)?;
    if let Some(s) = stage {
        cfg.stage = s;
    }
    if let Some(p) = profile {
        cfg.profile = p;
    }
    if let Some(seed) = seed_override()? {
        cfg.seed = seed;
    }
    cfg.validate().map_err(crate::error::with_path(path))?;
    if cfg.manifest.is_empty() {
        return Err(CliError::user(format!("{}: `manifest` is required", path.display())));
    }
    let base = path.parent().unwrap_or(Path::new(""));
    let paths = RunPaths {
        manifest: base.join(&cfg.manifest),
        out_dir: base.join(&cfg.out_dir),
        init_checkpoint: cfg.init_checkpoint.as_ref().map(|p| base.join(p)),
        resume: cfg.resume.as_ref().map(|p| base.join(p)),
    };
    Ok(LoadedConfig { config: cfg, paths })
}

/// The config as stored in checkpoints: where a run writes or resumes
/// from does not change what it computes.
pub fn portable(cfg: &TrainConfig) -> TrainConfig {
    TrainConfig {
        out_dir: String::new(),
        init_checkpoint: None,
        resume: None,
        ..cfg.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_fields_are_rejected() {
        let e = parse_train_config("{\"stage\": 1, \"learning_rate\": 0.1}", Path::new("c.json")).unwrap_err();
        assert!(e.to_string().contains("learning_rate"));
        let ok = parse_train_config("{\"stage\": 2, \"epochs\": 3}", Path::new("c.json")).unwrap();
        assert_eq!((ok.stage, ok.epochs()), (2, 3));
    }

    #[test]
    fn paths_resolve_against_the_config() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, "{\"manifest\": \"m.jsonl\", \"out_dir\": \"out\", \"seed\": 3}").unwrap();
        let c = load_train_config(&p, Some(1), Some(Profile::Desk)).unwrap();
        assert_eq!(c.paths.manifest, dir.path().join("m.jsonl"));
        assert_eq!(c.paths.out_dir, dir.path().join("out"));
        assert_eq!(c.config.manifest, "m.jsonl");
        assert_eq!(portable(&c.config).out_dir, "");
    }
}
