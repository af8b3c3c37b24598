//! Datasets on disk.
//!
//! A prepared root holds `hq/<id>_L.png` and `hq/<id>_R.png`, a
//! `manifest.jsonl` listing them, and per task `lq_<task>/` with the
//! degraded views and `patches.jsonl`, the LQ-coordinate patch index.

use std::path::{Path, PathBuf};

use diffstereo_core::datapipe::{degrade_pair, patch_grid, prepare_samples, DegradationSpec, PatchSpec, Sample, StereoImagePair};
use diffstereo_core::rng;
use diffstereo_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::image_io;
use crate::manifest::{self, ManifestEntry};

/// One line of `patches.jsonl`. Coordinates are in LQ pixels; the HQ
/// window is the same one scaled by the task factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRecord<'a> {
    pub id: &'a str,
    pub y: usize,
    pub x: usize,
    pub h: usize,
    pub w: usize,
}

pub fn load_entry(e: &ManifestEntry) -> Result<StereoImagePair> {
    image_io::read_pair(&e.hq_left, &e.hq_right, &e.id)
}

/// Training samples for every manifest entry, degraded and patched as the
/// config says.
pub fn load_samples(manifest_path: &Path, cfg: &TrainConfig) -> Result<Vec<Sample>> {
    let spec = cfg.degradation_spec();
    let mut out = Vec::new();
    for e in manifest::read(manifest_path)? {
        let hq = load_entry(&e)?;
        let samples = prepare_samples(&hq, &spec, &cfg.patch).map_err(|err| CliError::user(format!("{}: {err}", e.id)))?;
        out.extend(samples);
    }
    Ok(out)
}

/// The LQ pair a manifest entry is evaluated on.
pub fn degrade(hq: &StereoImagePair, spec: &DegradationSpec) -> Result<StereoImagePair> {
    let mut r = rng::for_sample(spec.seed, &hq.id);
    Ok(degrade_pair(hq, spec, &mut r)?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrepareSummary {
    pub images: usize,
    pub patches: usize,
    pub manifest: PathBuf,
}

/// Copy the HQ pairs into `out/hq`, write their degraded views to
/// `out/lq_<task>` with the patch index, and a manifest of the copies.
pub fn prepare(manifest_path: &Path, spec: &DegradationSpec, patch: &PatchSpec, out: &Path) -> Result<PrepareSummary> {
    spec.validate()?;
    let entries = manifest::read(manifest_path)?;
    let hq_dir = out.join("hq");
    let lq_dir = out.join(format!("lq_{}", spec.task.name()));
    for d in [&hq_dir, &lq_dir] {
        std::fs::create_dir_all(d).map_err(|e| CliError::io("create", d, e))?;
    }
    let mut copies = Vec::with_capacity(entries.len());
    let mut index = String::new();
    let mut patches = 0;
    for e in &entries {
        let hq = load_entry(e)?;
        let lq = degrade(&hq, spec)?;
        let (l, r) = (format!("{}_L.png", e.id), format!("{}_R.png", e.id));
        image_io::write_pair(&hq_dir.join(&l), &hq_dir.join(&r), &hq)?;
        image_io::write_pair(&lq_dir.join(&l), &lq_dir.join(&r), &lq)?;
        let (_, h, w) = lq.dims();
        for y in patch_grid(h, patch.patch_h, patch.stride) {
            for x in patch_grid(w, patch.patch_w, patch.stride) {
                let rec = PatchRecord {
                    id: &e.id,
                    y,
                    x,
                    h: patch.patch_h,
                    w: patch.patch_w,
                };
                index.push_str(&serde_json::to_string(&rec).map_err(|e| CliError::Internal(e.to_string()))?);
                index.push('\n');
                patches += 1;
            }
        }
        copies.push(ManifestEntry {
            id: e.id.clone(),
            hq_left: PathBuf::from("hq").join(&l),
            hq_right: PathBuf::from("hq").join(&r),
        });
    }
    let idx = lq_dir.join("patches.jsonl");
    std::fs::write(&idx, index).map_err(|e| CliError::io("write", &idx, e))?;
    let m = out.join("manifest.jsonl");
    manifest::write(&m, &copies)?;
    Ok(PrepareSummary {
        images: entries.len(),
        patches,
        manifest: m,
    })
}
