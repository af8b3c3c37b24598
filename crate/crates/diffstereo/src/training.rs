//! The `train` command: data loading, the JSON-lines log and periodic
//! checkpoints around the core trainer.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use diffstereo_core::train::{Observer, StepLog, Trainer};
use diffstereo_core::Error as CoreError;

use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::config::{self, LoadedConfig};
use crate::dataset;
use crate::error::{CliError, Result};

pub fn log_path(out_dir: &Path, stage: u8) -> PathBuf {
    out_dir.join(format!("train_stage{stage}.jsonl"))
}

pub fn last_checkpoint_path(out_dir: &Path, stage: u8) -> PathBuf {
    out_dir.join(format!("stage{stage}_last.ckpt"))
}

pub fn epoch_checkpoint_path(out_dir: &Path, stage: u8, epoch: usize) -> PathBuf {
    out_dir.join(format!("stage{stage}_epoch{epoch:04}.ckpt"))
}

/// Snapshot of a trainer as a checkpoint.
pub fn checkpoint_of(trainer: &Trainer) -> Checkpoint {
    let cfg = trainer.config();
    Checkpoint {
        meta: CheckpointMeta {
            profile: cfg.profile,
            stage: cfg.stage,
            model: trainer.model().clone(),
            state: Some(trainer.state()),
            train: Some(config::portable(cfg)),
        },
        tensors: trainer.checkpoint_tensors(),
    }
}

struct RunObserver {
    log: BufWriter<File>,
    log_path: PathBuf,
    out_dir: PathBuf,
    every: usize,
    last: Option<StepLog>,
    saved: Option<PathBuf>,
}

fn external(e: impl std::fmt::Display) -> CoreError {
    CoreError::External(e.to_string())
}

impl Observer for RunObserver {
    fn on_step(&mut self, _trainer: &Trainer, log: &StepLog) -> diffstereo_core::Result<()> {
        serde_json::to_writer(&mut self.log, log).map_err(external)?;
        self.log
            .write_all(b"\n")
            .and_then(|_| self.log.flush())
            .map_err(|e| external(format!("cannot write {}: {e}", self.log_path.display())))?;
        self.last = Some(*log);
        Ok(())
    }

    fn on_epoch_end(&mut self, trainer: &Trainer) -> diffstereo_core::Result<()> {
        let epoch = trainer.state().epoch;
        if !epoch.is_multiple_of(self.every) && !trainer.finished() {
            return Ok(());
        }
        let ckpt = checkpoint_of(trainer);
        let stage = trainer.config().stage;
        ckpt.save(&epoch_checkpoint_path(&self.out_dir, stage, epoch)).map_err(external)?;
        let last = last_checkpoint_path(&self.out_dir, stage);
        ckpt.save(&last).map_err(external)?;
        self.saved = Some(last);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub stage: u8,
    pub steps: u64,
    pub last_loss: Option<f64>,
    pub checkpoint: Option<PathBuf>,
    pub log: PathBuf,
}

fn build_trainer(loaded: &LoadedConfig) -> Result<Trainer> {
    let cfg = loaded.config.clone();
    if let Some(path) = &loaded.paths.resume {
        let ckpt = Checkpoint::load(path)?;
        let state = ckpt
            .meta
            .state
            .ok_or_else(|| CliError::user(format!("{} holds no training state to resume", path.display())))?;
        if ckpt.meta.model != cfg.model_config() {
            return Err(CliError::user(format!("{} was trained with a different model config", path.display())));
        }
        return Trainer::resume(cfg, &ckpt.tensors, state).map_err(crate::error::with_path(path));
    }
    if let Some(path) = &loaded.paths.init_checkpoint {
        let ckpt = Checkpoint::load(path)?;
        if ckpt.meta.model != cfg.model_config() {
            return Err(CliError::user(format!(
                "{} was trained with a different model config (task {}, profile {:?})",
                path.display(),
                ckpt.meta.model.task.name(),
                ckpt.meta.profile
            )));
        }
        return Trainer::new(cfg, ckpt.weights()).map_err(crate::error::with_path(path));
    }
    Ok(Trainer::new(cfg, Default::default())?)
}

/// Run a configured training stage to completion.
pub fn run(loaded: &LoadedConfig) -> Result<TrainOutcome> {
    let cfg = &loaded.config;
    let data = dataset::load_samples(&loaded.paths.manifest, cfg)?;
    if data.is_empty() {
        return Err(CliError::user(format!(
            "{}: no {}x{} patch fits the LQ images",
            loaded.paths.manifest.display(),
            cfg.patch.patch_h,
            cfg.patch.patch_w
        )));
    }
    let mut trainer = build_trainer(loaded)?;
    let out = &loaded.paths.out_dir;
    std::fs::create_dir_all(out).map_err(|e| CliError::io("create", out, e))?;
    let log_path = log_path(out, cfg.stage);
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(loaded.paths.resume.is_some())
        .truncate(loaded.paths.resume.is_none())
        .open(&log_path)
        .map_err(|e| CliError::io("open", &log_path, e))?;
    let mut obs = RunObserver {
        log: BufWriter::new(file),
        log_path: log_path.clone(),
        out_dir: out.clone(),
        every: cfg.checkpoint_every,
        last: None,
        saved: None,
    };
    trainer.run(&data, &mut obs)?;
    Ok(TrainOutcome {
        stage: cfg.stage,
        steps: trainer.state().global_step,
        last_loss: obs.last.map(|l| l.loss),
        checkpoint: obs.saved,
        log: log_path,
    })
}
