//! Checkpoint archives.
//!
//! Layout: the 8-byte magic `DSTEREO\0`, a little-endian u32 format
//! version, a little-endian u64 manifest length, the JSON manifest, then
//! the tensor payloads as little-endian f32 in manifest order. Offsets in
//! the manifest are relative to the first payload byte. Tensors are
//! written in name order and the manifest holds no timestamps or paths of
//! the writing run, so equal states give byte-identical files.

use std::path::Path;

use diffstereo_core::model::{ModelConfig, Profile};
use diffstereo_core::train::{TrainConfig, TrainState};
use diffstereo_core::{ModelParams, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 8] = b"DSTEREO\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub profile: Profile,
    pub stage: u8,
    pub model: ModelConfig,
    /// Position of the run, for resuming.
    pub state: Option<TrainState>,
    /// Training configuration with its run-location fields cleared.
    pub train: Option<TrainConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub nbytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    /// Weights, plus optimiser moments under `adam.` when saved by a
    /// training run.
    pub tensors: ModelParams,
}

fn bad(path: &Path, what: impl std::fmt::Display) -> CliError {
    CliError::user(format!("{} is not a valid checkpoint: {what}", path.display()))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0u64;
        for (name, t) in self.tensors.iter() {
            let nbytes = 4 * t.len() as u64;
            entries.push(TensorEntry {
                name: name.clone(),
                dtype: "f32".into(),
                shape: t.shape().to_vec(),
                offset,
                nbytes,
            });
            offset += nbytes;
        }
        let manifest = serde_json::to_vec(&Manifest {
            meta: self.meta.clone(),
            tensors: entries,
        })
        .map_err(|e| CliError::Internal(format!("cannot encode checkpoint manifest: {e}")))?;
        let mut out = Vec::with_capacity(20 + manifest.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for (_, t) in self.tensors.iter() {
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    /// `path` only labels error messages.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad(path, "missing header"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(path, format!("format version {version}, this build reads {VERSION}")));
        }
        let mlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let body = &bytes[20..];
        if mlen > body.len() as u64 {
            return Err(bad(path, "truncated manifest"));
        }
        let (mbytes, payload) = body.split_at(mlen as usize);
        let manifest: Manifest = serde_json::from_slice(mbytes).map_err(|e| bad(path, e))?;
        let mut tensors = ModelParams::new();
        let mut expected = 0u64;
        for e in manifest.tensors {
            if e.dtype != "f32" {
                return Err(bad(path, format!("`{}` has dtype {}", e.name, e.dtype)));
            }
            let n: usize = e.shape.iter().product();
            if e.offset != expected || e.nbytes != 4 * n as u64 {
                return Err(bad(path, format!("`{}` has inconsistent offsets", e.name)));
            }
            let end = e.offset + e.nbytes;
            if end > payload.len() as u64 {
                return Err(bad(path, format!("`{}` is truncated", e.name)));
            }
            let data = payload[e.offset as usize..end as usize]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            let t = Tensor::new(&e.shape, data).map_err(|err| bad(path, err))?;
            tensors.insert(e.name, t);
            expected = end;
        }
        if expected != payload.len() as u64 {
            return Err(bad(path, "trailing bytes after the last tensor"));
        }
        Ok(Self {
            meta: manifest.meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io("create", dir, e))?;
        }
        // Write then rename so an interrupted save never leaves a torn file.
        let tmp = path.with_extension("ckpt.tmp");
        std::fs::write(&tmp, bytes).map_err(|e| CliError::io("write", &tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| CliError::io("write", path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io("read checkpoint", path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Model weights without optimiser state.
    pub fn weights(&self) -> ModelParams {
        let mut w = self.tensors.clone();
        w.remove_prefix("adam.");
        w
    }

    /// Fail unless the checkpoint was trained for `task` (and `profile`,
    /// when one is given).
    pub fn check_compatible(&self, task: Option<diffstereo_core::datapipe::Task>, profile: Option<Profile>, path: &Path) -> Result<()> {
        if let Some(t) = task {
            if t != self.meta.model.task {
                return Err(CliError::user(format!(
                    "{} was trained for task {}, not {}",
                    path.display(),
                    self.meta.model.task.name(),
                    t.name()
                )));
            }
        }
        if let Some(p) = profile {
            if p != self.meta.profile {
                return Err(CliError::user(format!(
                    "{} uses the {:?} profile; drop --profile or pass the matching one",
                    path.display(),
                    self.meta.profile
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use diffstereo_core::datapipe::Task;
    use diffstereo_core::model;

    fn sample() -> Checkpoint {
        let cfg = ModelConfig::new(Profile::Desk, Task::Blur);
        Checkpoint {
            meta: CheckpointMeta {
                profile: Profile::Desk,
                stage: 1,
                model: cfg.clone(),
                state: None,
                train: None,
            },
            tensors: model::init_stage1(&cfg, 4).unwrap(),
        }
    }

    #[test]
    fn bytes_roundtrip_exactly() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes, Path::new("x")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes().unwrap();
        let p = Path::new("x");
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1], p).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra, p).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert_eq!(Checkpoint::from_bytes(&magic, p).unwrap_err().exit_code(), 1);
        assert!(Checkpoint::from_bytes(b"DSTEREO\0", p).is_err());
    }

    #[test]
    fn payload_is_little_endian_f32() {
        let mut c = sample();
        c.tensors = ModelParams::new();
        c.tensors.insert("a", Tensor::new(&[2], vec![1.0, -2.5]).unwrap());
        let bytes = c.to_bytes().unwrap();
        let tail = &bytes[bytes.len() - 8..];
        assert_eq!(tail[..4], 1.0f32.to_le_bytes());
        assert_eq!(tail[4..], (-2.5f32).to_le_bytes());
    }
}
