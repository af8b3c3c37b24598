//! Stereo image restoration network.
//!
//! `shallow conv3x3 -> blocks (+ long skip) -> reconstruction head`, run on
//! both views with shared weights. Blocks exchange information between the
//! views (shared channel attention for CIBs, point-wise fusion for the
//! ablation blocks). Block `k` may receive the latent of each view encoded
//! with depth index `k`.
//!
//! The head is `conv3x3 -> pixel_shuffle(s)` added to the bicubic upsampled
//! LQ input for `s > 1`, and `conv3x3` added to the LQ input for `s = 1`.

mod blocks;
mod cib;
mod position;

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use blocks::{nafb_forward, rdb_forward};
pub use cib::{cib_forward, channel_attention, gdfn, CibShape, QK_NORM_EPS};
pub use position::{encode_position, modulate_normed};

use crate::autograd::Var;
use crate::datapipe::{bicubic_upsample, StereoImagePair};
use crate::error::{bail, Result};
use crate::lren::LatentHF;
use crate::nn;
use crate::params::{Init, ModelParams, Session};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockType {
    Cib,
    /// Residual dense block (ablation baseline).
    Rdb,
    /// Activation-free block (ablation baseline).
    Nafb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SirnConfig {
    pub num_cibs: usize,
    pub channels: usize,
    pub heads: usize,
    pub scale: usize,
    pub use_lhfr: bool,
    pub use_pe: bool,
    pub block_type: BlockType,
    pub ffn_expansion: f64,
}

impl SirnConfig {
    pub fn desk(scale: usize) -> Self {
        Self {
            num_cibs: 2,
            channels: 32,
            heads: 4,
            scale,
            use_lhfr: true,
            use_pe: true,
            block_type: BlockType::Cib,
            ffn_expansion: 2.66,
        }
    }

    pub fn paper(scale: usize) -> Self {
        Self {
            num_cibs: 8,
            channels: 256,
            heads: 8,
            ..Self::desk(scale)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_cibs == 0 {
            bail!(Config, "SIRN needs at least one block");
        }
        if self.channels == 0 || self.heads == 0 || !self.channels.is_multiple_of(self.heads) {
            bail!(
                Config,
                "SIRN channels ({}) must be a positive multiple of heads ({})",
                self.channels,
                self.heads
            );
        }
        if self.scale == 0 {
            bail!(Config, "SIRN scale must be positive");
        }
        if !(self.ffn_expansion > 0.0) || self.cib_shape().hidden() == 0 {
            bail!(Config, "GDFN expansion {} gives no hidden channels", self.ffn_expansion);
        }
        Ok(())
    }

    pub fn cib_shape(&self) -> CibShape {
        CibShape {
            channels: self.channels,
            heads: self.heads,
            ffn_expansion: self.ffn_expansion,
        }
    }
}

fn block_prefix(k: usize) -> alloc::string::String {
    format!("sirn.block{k}")
}

pub(crate) fn init(cfg: &SirnConfig, init: &mut Init<'_>) {
    let c = cfg.channels;
    init.conv("sirn.shallow", c, 3, 3, true);
    if cfg.use_lhfr {
        let cin = if cfg.use_pe { c + 1 } else { c };
        init.conv("sirn.pe", c, cin, 1, false);
    }
    for k in 0..cfg.num_cibs {
        let prefix = block_prefix(k);
        match cfg.block_type {
            BlockType::Cib => cib::init(&prefix, &cfg.cib_shape(), cfg.use_lhfr, init),
            BlockType::Rdb => blocks::init_rdb(&prefix, c, init),
            BlockType::Nafb => blocks::init_nafb(&prefix, c, init),
        }
        if cfg.use_lhfr && cfg.block_type != BlockType::Cib {
            blocks::init_guidance(&prefix, c, init);
        }
    }
    init.conv("sirn.tail", 3 * cfg.scale * cfg.scale, c, 3, true);
}

/// Fresh SIRN weights.
pub fn init_params(cfg: &SirnConfig, rng: &mut Rng) -> ModelParams {
    let mut params = ModelParams::new();
    init(cfg, &mut Init { params: &mut params, rng });
    params
}

/// Fresh weights of a single guided or unguided CIB named `prefix`, plus
/// the `sirn.pe` encoder when guided.
pub fn init_cib_params(prefix: &str, shape: &CibShape, guided: bool, rng: &mut Rng) -> ModelParams {
    let mut params = ModelParams::new();
    let mut init = Init { params: &mut params, rng };
    cib::init(prefix, shape, guided, &mut init);
    if guided {
        init.conv("sirn.pe", shape.channels, shape.channels + 1, 1, false);
    }
    params
}

/// Graph outputs of a SIRN pass.
#[derive(Debug, Clone, Copy)]
pub struct SirnOutput {
    /// Unclamped restored views.
    pub left: Var,
    pub right: Var,
    /// Shallow features of each view, used by the parallax loss.
    pub shallow_left: Var,
    pub shallow_right: Var,
}

/// SIRN on graph inputs. `guidance` holds one latent per view, `[1, H, W]`
/// or `[C, 1, 1]`; it must be present iff `cfg.use_lhfr`.
pub fn forward(
    s: &mut Session<'_>,
    cfg: &SirnConfig,
    lq_left: Var,
    lq_right: Var,
    guidance: Option<(Var, Var)>,
) -> Result<SirnOutput> {
    cfg.validate()?;
    let (lc, h, w) = s.value(lq_left).dims3();
    if lc != 3 || s.shape(lq_left) != s.shape(lq_right) {
        bail!(Dimension, "SIRN expects two 3-channel views of equal shape");
    }
    let guidance = match (cfg.use_lhfr, guidance) {
        (true, None) => bail!(Config, "this SIRN is guided but no latent was given"),
        (false, Some(_)) => bail!(Config, "this SIRN takes no latent guidance"),
        (_, g) => g,
    };
    if let Some((gl, gr)) = guidance {
        for g in [gl, gr] {
            let (gc, gh, gw) = s.value(g).dims3();
            let spatial = gc == 1 && (gh, gw) == (h, w);
            let vector = gc == cfg.channels && (gh, gw) == (1, 1);
            if !spatial && !vector {
                bail!(
                    Dimension,
                    "latent {:?} does not match LQ {}x{} or {} channels",
                    s.shape(g),
                    h,
                    w,
                    cfg.channels
                );
            }
        }
    }

    let shallow_left = nn::conv(s, "sirn.shallow", lq_left)?;
    let shallow_right = nn::conv(s, "sirn.shallow", lq_right)?;

    let mut encoded: Vec<(Var, Var)> = Vec::new();
    if let Some((gl, gr)) = guidance {
        let depths = if cfg.use_pe { cfg.num_cibs } else { 1 };
        for k in 0..depths {
            let el = encode_position(s, gl, k, cfg.channels, cfg.use_pe)?;
            let er = encode_position(s, gr, k, cfg.channels, cfg.use_pe)?;
            encoded.push((el, er));
        }
    }

    let shape = cfg.cib_shape();
    let (mut xl, mut xr) = (shallow_left, shallow_right);
    for k in 0..cfg.num_cibs {
        let prefix = block_prefix(k);
        let g = encoded.get(k).or(encoded.first()).copied();
        (xl, xr) = match cfg.block_type {
            BlockType::Cib => {
                let (yl, yr, _) = cib_forward(s, &prefix, &shape, xl, xr, g)?;
                (yl, yr)
            }
            BlockType::Rdb => rdb_forward(s, &prefix, xl, xr, g)?,
            BlockType::Nafb => nafb_forward(s, &prefix, xl, xr, g)?,
        };
    }
    let fl = s.add(xl, shallow_left);
    let fr = s.add(xr, shallow_right);

    let mut out = [fl, fr];
    for (o, lq) in out.iter_mut().zip([lq_left, lq_right]) {
        let t = nn::conv(s, "sirn.tail", *o)?;
        let skip = if cfg.scale > 1 {
            let up = bicubic_upsample(s.value(lq), cfg.scale)?;
            s.input(up)
        } else {
            lq
        };
        let t = if cfg.scale > 1 { s.pixel_shuffle(t, cfg.scale) } else { t };
        *o = s.add(t, skip);
    }
    Ok(SirnOutput {
        left: out[0],
        right: out[1],
        shallow_left,
        shallow_right,
    })
}

/// Restore an LQ pair, clamping the output to `[0, 1]`.
pub fn restore(
    lq: &StereoImagePair,
    latents: Option<(&LatentHF, &LatentHF)>,
    cfg: &SirnConfig,
    weights: &ModelParams,
) -> Result<StereoImagePair> {
    restore_with(lq, latents.map(|(l, r)| (l.as_map(), r.as_map())), cfg, weights)
}

/// [`restore`] with raw guidance tensors (`[1, H, W]` or `[C, 1, 1]`).
pub fn restore_with(
    lq: &StereoImagePair,
    guidance: Option<(Tensor, Tensor)>,
    cfg: &SirnConfig,
    weights: &ModelParams,
) -> Result<StereoImagePair> {
    let mut s = Session::frozen(weights);
    let l = s.input(lq.left.clone());
    let r = s.input(lq.right.clone());
    let g = guidance.map(|(gl, gr)| (s.input(gl), s.input(gr)));
    let out = forward(&mut s, cfg, l, r, g)?;
    StereoImagePair::new(
        s.value(out.left).clamp(0.0, 1.0),
        s.value(out.right).clamp(0.0, 1.0),
        lq.id.clone(),
    )
}
