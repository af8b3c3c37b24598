//! The three networks bundled under one configuration and parameter store.
//!
//! Parameter names are prefixed by network: `lren.`, `sirn.`, `cen.` and
//! `dm.` (denoiser).

use serde::{Deserialize, Serialize};

use crate::datapipe::{StereoImagePair, Task};
use crate::diffusion::{self, ChainStart, DiffusionConfig};
use crate::error::{bail, Result};
use crate::lren::{self, LatentKind, LrenConfig};
use crate::params::{Init, ModelParams, Session};
use crate::rng::{self, Rng};
use crate::sirn::{self, SirnConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Tiny networks that train on a CPU in minutes.
    Desk,
    /// Widths and depths of the full-size model.
    Paper,
}

impl Profile {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => bail!(Config, "unknown profile `{other}` (expected desk or paper)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub task: Task,
    pub lren: LrenConfig,
    pub sirn: SirnConfig,
    pub diffusion: DiffusionConfig,
}

impl ModelConfig {
    pub fn new(profile: Profile, task: Task) -> Self {
        let r = task.scale();
        match profile {
            Profile::Desk => Self {
                task,
                lren: LrenConfig::desk(r),
                sirn: SirnConfig::desk(r),
                diffusion: DiffusionConfig::desk(),
            },
            Profile::Paper => Self {
                task,
                lren: LrenConfig::paper(r),
                sirn: SirnConfig::paper(r),
                diffusion: DiffusionConfig::paper(),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.lren.validate()?;
        self.sirn.validate()?;
        self.diffusion.validate()?;
        let r = self.task.scale();
        if self.lren.unshuffle_factor != r || self.sirn.scale != r {
            bail!(
                Config,
                "task {} needs scale {r} in LREN and SIRN, got {} and {}",
                self.task.name(),
                self.lren.unshuffle_factor,
                self.sirn.scale
            );
        }
        if self.lren.latent == LatentKind::Vector && self.lren.vector_dim != self.sirn.channels {
            bail!(Config, "vector latent length must equal SIRN channels ({})", self.sirn.channels);
        }
        Ok(())
    }
}

/// Fresh LREN and SIRN weights for stage one. Each network draws from its
/// own stream, so changing one never changes another's initialisation.
pub fn init_stage1(cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let mut params = ModelParams::new();
    let mut r = rng::labeled(seed, "init.lren", 0);
    lren::init(&cfg.lren, &mut Init { params: &mut params, rng: &mut r });
    let mut r = rng::labeled(seed, "init.sirn", 0);
    sirn::init(&cfg.sirn, &mut Init { params: &mut params, rng: &mut r });
    Ok(params)
}

/// Add fresh CEN and denoiser weights to stage-one weights.
pub fn add_diffusion(cfg: &ModelConfig, params: &mut ModelParams, seed: u64) -> Result<()> {
    cfg.validate()?;
    if params.names().any(|n| n.starts_with("cen.") || n.starts_with("dm.")) {
        bail!(Config, "weights already contain a diffusion model");
    }
    let mut r = rng::labeled(seed, "init.diffusion", 0);
    diffusion::init(&cfg.diffusion, &mut Init { params, rng: &mut r });
    Ok(())
}

pub fn has_diffusion(params: &ModelParams) -> bool {
    params.contains("dm.out.weight")
}

/// How SIRN gets its latent guidance at inference.
pub enum Guide<'a> {
    /// Unguided model.
    None,
    /// LREN applied to the ground truth (stage-one evaluation).
    Oracle(&'a StereoImagePair),
    /// Reverse diffusion from `Z_T ~ N(0, I)` drawn from the generator.
    Diffusion(&'a mut Rng),
}

/// Restore `lq` and clamp to `[0, 1]`.
pub fn restore(cfg: &ModelConfig, weights: &ModelParams, lq: &StereoImagePair, guide: Guide<'_>) -> Result<StereoImagePair> {
    let guidance = match (cfg.sirn.use_lhfr, guide) {
        (false, _) => None,
        (true, Guide::None) => bail!(Config, "this model needs latent guidance"),
        (true, Guide::Oracle(hq)) => {
            let mut s = Session::frozen(weights);
            let l = s.input(hq.left.clone());
            let r = s.input(hq.right.clone());
            let zl = lren::forward_view(&mut s, &cfg.lren, l)?;
            let zr = lren::forward_view(&mut s, &cfg.lren, r)?;
            Some((s.value(zl).clone(), s.value(zr).clone()))
        }
        (true, Guide::Diffusion(rng)) => {
            if cfg.lren.latent != LatentKind::Spatial {
                bail!(Config, "diffusion sampling needs a spatial latent");
            }
            if !has_diffusion(weights) {
                bail!(Config, "these weights have no diffusion model; train stage 2 first");
            }
            let sched = cfg.diffusion.schedule()?;
            let (zl, zr) = diffusion::sample_lhfr(lq, weights, &sched, ChainStart::Noise(rng))?;
            Some((zl.as_map(), zr.as_map()))
        }
    };
    sirn::restore_with(lq, guidance, &cfg.sirn, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn profiles_validate() {
        for p in [Profile::Desk, Profile::Paper] {
            for t in [Task::Sr4, Task::Blur, Task::Lowlight] {
                ModelConfig::new(p, t).validate().unwrap();
            }
        }
        let mut bad = ModelConfig::new(Profile::Desk, Task::Sr4);
        bad.sirn.scale = 1;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn stage_weights_are_prefixed_and_independent() {
        let cfg = ModelConfig::new(Profile::Desk, Task::Blur);
        let mut a = init_stage1(&cfg, 3).unwrap();
        assert!(a.names().all(|n| n.starts_with("lren.") || n.starts_with("sirn.")));
        let lren_hash = a.fingerprint("lren.");
        add_diffusion(&cfg, &mut a, 3).unwrap();
        assert!(has_diffusion(&a));
        assert_eq!(a.fingerprint("lren."), lren_hash);
        assert!(add_diffusion(&cfg, &mut a, 3).is_err());

        let mut other = cfg.clone();
        other.sirn.num_cibs = 1;
        let b = init_stage1(&other, 3).unwrap();
        assert_eq!(b.fingerprint("lren."), lren_hash);
    }

    #[test]
    fn restore_modes() {
        let cfg = ModelConfig {
            sirn: SirnConfig {
                channels: 8,
                heads: 2,
                num_cibs: 1,
                ..SirnConfig::desk(1)
            },
            ..ModelConfig::new(Profile::Desk, Task::Blur)
        };
        let mut w = init_stage1(&cfg, 0).unwrap();
        let img = Tensor::full(&[3, 4, 6], 0.5);
        let lq = StereoImagePair::new(img.clone(), img, "x").unwrap();
        assert!(restore(&cfg, &w, &lq, Guide::None).is_err());
        assert!(restore(&cfg, &w, &lq, Guide::Diffusion(&mut rng::stream(0, 0))).is_err());
        let out = restore(&cfg, &w, &lq, Guide::Oracle(&lq)).unwrap();
        assert_eq!(out.dims(), (3, 4, 6));
        add_diffusion(&cfg, &mut w, 0).unwrap();
        let a = restore(&cfg, &w, &lq, Guide::Diffusion(&mut rng::stream(0, 0))).unwrap();
        let b = restore(&cfg, &w, &lq, Guide::Diffusion(&mut rng::stream(0, 0))).unwrap();
        assert_eq!(a, b);
    }
}
