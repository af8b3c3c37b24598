//! Latent representation extraction: HQ stereo views to single-channel
//! high-frequency maps at LQ resolution.
//!
//! Per view, with weights shared between views:
//! `pixel_unshuffle(r) -> conv3x3 -> residual blocks -> (conv3x3 + LeakyReLU)*
//! -> conv3x3 to one channel`. The last convolution has a bias and no
//! activation, so latent values are unbounded.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::datapipe::StereoImagePair;
use crate::error::{bail, Result};
use crate::nn;
use crate::params::{Init, ModelParams, Session};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Left,
    Right,
}

/// A latent high-frequency map `[H, W]` for one view.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentHF {
    pub z: Tensor,
    pub view: View,
}

impl LatentHF {
    pub fn new(z: Tensor, view: View) -> Result<Self> {
        if z.rank() != 2 {
            bail!(Dimension, "latent map must be [H, W], got {:?}", z.shape());
        }
        if !z.all_finite() {
            bail!(Parameter, "latent map contains non-finite values");
        }
        Ok(Self { z, view })
    }

    pub fn dims(&self) -> (usize, usize) {
        let s = self.z.shape();
        (s[0], s[1])
    }

    /// The map as a `[1, H, W]` tensor.
    pub fn as_map(&self) -> Tensor {
        let (h, w) = self.dims();
        self.z.clone().reshape(&[1, h, w]).expect("same element count")
    }
}

/// What the extractor hands to the restorer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentKind {
    /// One value per LQ pixel.
    Spatial,
    /// One global value per restorer channel (ablation baseline).
    Vector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrenConfig {
    /// HQ/LQ ratio: 4 for x4 SR, 1 otherwise.
    pub unshuffle_factor: usize,
    pub num_res_blocks: usize,
    pub width: usize,
    /// Output channels of the compression convolutions, in order.
    pub compress: Vec<usize>,
    pub latent: LatentKind,
    /// Length of the latent vector in [`LatentKind::Vector`] mode.
    pub vector_dim: usize,
}

impl LrenConfig {
    pub fn desk(unshuffle_factor: usize) -> Self {
        Self {
            unshuffle_factor,
            num_res_blocks: 2,
            width: 16,
            compress: vec![8, 4],
            latent: LatentKind::Spatial,
            vector_dim: 32,
        }
    }

    pub fn paper(unshuffle_factor: usize) -> Self {
        Self {
            unshuffle_factor,
            num_res_blocks: 4,
            width: 64,
            compress: vec![32, 16],
            latent: LatentKind::Spatial,
            vector_dim: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.unshuffle_factor == 0 || self.width == 0 || self.compress.contains(&0) {
            bail!(Config, "LREN widths and unshuffle factor must be positive");
        }
        if self.latent == LatentKind::Vector && self.vector_dim == 0 {
            bail!(Config, "LREN vector_dim must be positive");
        }
        Ok(())
    }

    fn last_width(&self) -> usize {
        self.compress.last().copied().unwrap_or(self.width)
    }
}

/// Checked space-to-depth. Output channel `c r² + dy r + dx` holds the
/// source pixels at offset `(dy, dx)` of every `r x r` cell.
pub fn pixel_unshuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    let (_, h, w) = x.dims3();
    if r == 0 || h % r != 0 || w % r != 0 {
        bail!(Dimension, "{}x{} is not divisible by {}", h, w, r);
    }
    Ok(crate::autograd::pixel_unshuffle(x, r))
}

/// Depth-to-space, inverse of [`pixel_unshuffle`].
pub fn pixel_shuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    let (c, _, _) = x.dims3();
    if r == 0 || c % (r * r) != 0 {
        bail!(Dimension, "{} channels are not divisible by {}", c, r * r);
    }
    Ok(crate::autograd::pixel_shuffle(x, r))
}

pub(crate) fn init(cfg: &LrenConfig, init: &mut Init<'_>) {
    let cin = 3 * cfg.unshuffle_factor * cfg.unshuffle_factor;
    init.conv("lren.head", cfg.width, cin, 3, true);
    for i in 0..cfg.num_res_blocks {
        init.conv(&format!("lren.res{i}.conv1"), cfg.width, cfg.width, 3, true);
        init.conv(&format!("lren.res{i}.conv2"), cfg.width, cfg.width, 3, true);
    }
    let mut c = cfg.width;
    for (j, &out) in cfg.compress.iter().enumerate() {
        init.conv(&format!("lren.compress{j}"), out, c, 3, true);
        c = out;
    }
    match cfg.latent {
        LatentKind::Spatial => init.conv("lren.out", 1, c, 3, true),
        LatentKind::Vector => init.conv("lren.out", cfg.vector_dim, c, 1, true),
    }
}

/// Fresh LREN weights.
pub fn init_params(cfg: &LrenConfig, rng: &mut Rng) -> ModelParams {
    let mut params = ModelParams::new();
    init(cfg, &mut Init { params: &mut params, rng });
    params
}

/// One view through the extractor. Returns `[1, h, w]` in spatial mode and
/// `[vector_dim, 1, 1]` in vector mode.
pub fn forward_view(s: &mut Session<'_>, cfg: &LrenConfig, hq: Var) -> Result<Var> {
    let (_, h, w) = s.value(hq).dims3();
    let r = cfg.unshuffle_factor;
    if h % r != 0 || w % r != 0 {
        bail!(Dimension, "HQ {}x{} is not divisible by unshuffle factor {}", h, w, r);
    }
    let x = if r > 1 { s.pixel_unshuffle(hq, r) } else { hq };
    let mut x = nn::conv(s, "lren.head", x)?;
    for i in 0..cfg.num_res_blocks {
        x = nn::res_block(s, &format!("lren.res{i}"), x)?;
    }
    for j in 0..cfg.compress.len() {
        x = nn::conv_lrelu(s, &format!("lren.compress{j}"), x)?;
    }
    debug_assert_eq!(s.value(x).dims3().0, cfg.last_width());
    match cfg.latent {
        LatentKind::Spatial => nn::conv(s, "lren.out", x),
        LatentKind::Vector => {
            let pooled = s.mean_trailing(x);
            nn::conv(s, "lren.out", pooled)
        }
    }
}

/// Latent maps of both views of an HQ pair.
pub fn extract_lhfr(
    hq: &StereoImagePair,
    cfg: &LrenConfig,
    weights: &ModelParams,
) -> Result<(LatentHF, LatentHF)> {
    if cfg.latent != LatentKind::Spatial {
        bail!(Config, "extract_lhfr needs a spatial LREN");
    }
    if hq.left.shape() != hq.right.shape() {
        bail!(Dimension, "left and right HQ views differ in shape");
    }
    let mut s = Session::frozen(weights);
    let l = s.input(hq.left.clone());
    let r = s.input(hq.right.clone());
    let zl = forward_view(&mut s, cfg, l)?;
    let zr = forward_view(&mut s, cfg, r)?;
    Ok((
        LatentHF::new(s.value(zl).channel(0), View::Left)?,
        LatentHF::new(s.value(zr).channel(0), View::Right)?,
    ))
}
