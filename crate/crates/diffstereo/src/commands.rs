//! Inference, evaluation and LHFR dumps from a checkpoint.

use std::path::{Path, PathBuf};

use diffstereo_core::datapipe::{DegradationSpec, StereoImagePair, Task};
use diffstereo_core::diffusion::{self, ChainStart};
use diffstereo_core::lren::LatentKind;
use diffstereo_core::model::{self, Guide, Profile};
use diffstereo_core::{metrics, rng, selftest};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config;
use crate::dataset;
use crate::error::{CliError, Result};
use crate::image_io;
use crate::manifest;

/// Seed for sampling: the environment override, else the training seed.
fn sampling_seed(ckpt: &Checkpoint) -> Result<u64> {
    Ok(config::seed_override()?.unwrap_or_else(|| ckpt.meta.train.as_ref().map_or(0, |t| t.seed)))
}

/// Generator for the chain start `Z_T` of the image `id`.
pub fn chain_rng(seed: u64, id: &str) -> rng::Rng {
    rng::for_sample(seed, id)
}

fn needs_diffusion(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let cfg = &ckpt.meta.model;
    if !cfg.sirn.use_lhfr {
        return Err(CliError::user(format!("{} is an unguided model and has no latent to sample", path.display())));
    }
    if cfg.lren.latent != LatentKind::Spatial || !model::has_diffusion(&ckpt.tensors) {
        return Err(CliError::user(format!(
            "{} has no diffusion model; train stage 2 from it and use that checkpoint",
            path.display()
        )));
    }
    Ok(())
}

fn stem(p: &Path) -> String {
    p.file_stem().map_or_else(|| "input".into(), |s| s.to_string_lossy().into_owned())
}

pub struct InferOutput {
    pub left: PathBuf,
    pub right: PathBuf,
}

/// Restore an LQ pair. Guided models need a stage-2 checkpoint; ground
/// truth is never read.
pub fn infer(ckpt_path: &Path, left: &Path, right: &Path, task: Task, out: &Path, profile: Option<Profile>) -> Result<InferOutput> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    ckpt.check_compatible(Some(task), profile, ckpt_path)?;
    let id = stem(left);
    let lq = image_io::read_pair(left, right, &id)?;
    let weights = ckpt.weights();
    let cfg = &ckpt.meta.model;
    let restored = if cfg.sirn.use_lhfr {
        needs_diffusion(&ckpt, ckpt_path)?;
        let mut r = chain_rng(sampling_seed(&ckpt)?, &id);
        model::restore(cfg, &weights, &lq, Guide::Diffusion(&mut r))?
    } else {
        model::restore(cfg, &weights, &lq, Guide::None)?
    };
    let paths = InferOutput {
        left: out.join("restored_L.png"),
        right: out.join("restored_R.png"),
    };
    image_io::write_pair(&paths.left, &paths.right, &restored)?;
    Ok(paths)
}

/// Per-view and averaged metrics of one pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub psnr_l: f64,
    pub psnr_r: f64,
    pub psnr_avg: f64,
    pub ssim_l: f64,
    pub ssim_r: f64,
    pub ssim_avg: f64,
}

impl PairMetrics {
    pub fn of(out: &StereoImagePair, gt: &StereoImagePair) -> Result<Self> {
        let l = metrics::report(&out.left, &gt.left)?;
        let r = metrics::report(&out.right, &gt.right)?;
        Ok(Self {
            psnr_l: l.psnr_db,
            psnr_r: r.psnr_db,
            psnr_avg: (l.psnr_db + r.psnr_db) / 2.0,
            ssim_l: l.ssim,
            ssim_r: r.ssim,
            ssim_avg: (l.ssim + r.ssim) / 2.0,
        })
    }

    fn mean(items: &[PairMetrics]) -> Option<Self> {
        if items.is_empty() {
            return None;
        }
        let n = items.len() as f64;
        let avg = |f: fn(&PairMetrics) -> f64| items.iter().map(f).sum::<f64>() / n;
        Some(Self {
            psnr_l: avg(|m| m.psnr_l),
            psnr_r: avg(|m| m.psnr_r),
            psnr_avg: avg(|m| m.psnr_avg),
            ssim_l: avg(|m| m.ssim_l),
            ssim_r: avg(|m| m.ssim_r),
            ssim_avg: avg(|m| m.ssim_avg),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemReport {
    pub id: String,
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<PairMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    /// `none`, `oracle` (LREN on the ground truth, stage-1 checkpoints) or
    /// `diffusion`.
    pub guide: String,
    pub items: Vec<ItemReport>,
    /// Over the items without errors.
    pub mean: Option<PairMetrics>,
    pub errors: usize,
}

fn eval_one(ckpt: &Checkpoint, spec: &DegradationSpec, seed: u64, entry: &manifest::ManifestEntry) -> Result<PairMetrics> {
    let hq = dataset::load_entry(entry)?;
    let lq = dataset::degrade(&hq, spec)?;
    let cfg = &ckpt.meta.model;
    let weights = &ckpt.tensors;
    let out = if !cfg.sirn.use_lhfr {
        model::restore(cfg, weights, &lq, Guide::None)?
    } else if model::has_diffusion(weights) {
        let mut r = chain_rng(seed, &entry.id);
        model::restore(cfg, weights, &lq, Guide::Diffusion(&mut r))?
    } else {
        model::restore(cfg, weights, &lq, Guide::Oracle(&hq))?
    };
    PairMetrics::of(&out, &hq)
}

/// Evaluate every manifest entry. Items that fail are reported with their
/// error; the report is written either way.
pub fn eval(ckpt_path: &Path, manifest_path: &Path, report_path: &Path, profile: Option<Profile>) -> Result<EvalReport> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    ckpt.check_compatible(None, profile, ckpt_path)?;
    let entries = manifest::read(manifest_path)?;
    let seed = sampling_seed(&ckpt)?;
    let task = ckpt.meta.model.task;
    let spec = DegradationSpec {
        task,
        seed,
        ..ckpt.meta.train.as_ref().map_or_else(|| DegradationSpec::for_task(task), |t| t.degradation.clone())
    };
    let guide = match (ckpt.meta.model.sirn.use_lhfr, model::has_diffusion(&ckpt.tensors)) {
        (false, _) => "none",
        (true, true) => "diffusion",
        (true, false) => "oracle",
    };
    let mut items = Vec::with_capacity(entries.len());
    let mut ok = Vec::new();
    for e in &entries {
        match eval_one(&ckpt, &spec, seed, e) {
            Ok(m) => {
                ok.push(m);
                items.push(ItemReport {
                    id: e.id.clone(),
                    metrics: Some(m),
                    error: None,
                });
            }
            Err(err) => items.push(ItemReport {
                id: e.id.clone(),
                metrics: None,
                error: Some(err.to_string()),
            }),
        }
    }
    let report = EvalReport {
        task,
        guide: guide.into(),
        errors: items.len() - ok.len(),
        mean: PairMetrics::mean(&ok),
        items,
    };
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Internal(e.to_string()))?;
    if let Some(dir) = report_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io("create", dir, e))?;
    }
    std::fs::write(report_path, text + "\n").map_err(|e| CliError::io("write", report_path, e))?;
    Ok(report)
}

/// Write the sampled latents of both views as normalised PNGs with raw f32
/// sidecars: `left_t<t>.png` / `.f32` for `t = T..0` with `per_step`,
/// otherwise only `t = 0`.
pub fn dump_lhfr(ckpt_path: &Path, left: &Path, right: &Path, out: &Path, per_step: bool, profile: Option<Profile>) -> Result<Vec<PathBuf>> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    ckpt.check_compatible(None, profile, ckpt_path)?;
    needs_diffusion(&ckpt, ckpt_path)?;
    let id = stem(left);
    let lq = image_io::read_pair(left, right, &id)?;
    let sched = ckpt.meta.model.diffusion.schedule()?;
    let mut r = chain_rng(sampling_seed(&ckpt)?, &id);
    let traj = diffusion::sample_trajectory(&lq, &ckpt.tensors, &sched, ChainStart::Noise(&mut r))?;
    let steps = traj.len() - 1;
    std::fs::create_dir_all(out).map_err(|e| CliError::io("create", out, e))?;
    let mut written = Vec::new();
    for (k, (zl, zr)) in traj.iter().enumerate() {
        let t = steps - k;
        if !per_step && t != 0 {
            continue;
        }
        for (view, z) in [("left", zl), ("right", zr)] {
            let png = out.join(format!("{view}_t{t}.png"));
            image_io::write_normalized_gray(&png, &z.z)?;
            image_io::write_f32_raw(&png.with_extension("f32"), &z.z)?;
            written.push(png);
        }
    }
    Ok(written)
}

/// Run the invariant suite, printing one line per check.
pub fn selftest(out: &mut dyn std::io::Write) -> Result<bool> {
    let mut all = true;
    for c in selftest::run() {
        all &= c.passed;
        let tag = if c.passed { "PASS" } else { "FAIL" };
        writeln!(out, "{tag} {}: {}", c.name, c.detail).map_err(|e| CliError::Internal(e.to_string()))?;
    }
    Ok(all)
}
