//! Training objectives.
//!
//! L1 terms are mean-reduced per view and summed over the two views.
//!
//! The parallax term is a reconstruction in the style of symmetric
//! parallax attention: row-wise cross-view attention `M` is computed from
//! the restorer's shallow features, and four penalties are applied to it
//! using the LQ views:
//! - photometric: `|I_L - M_{R→L} I_R|` on the valid mask, and symmetric;
//! - cycle: `|I_L - M_{R→L} M_{L→R} I_L|`, and symmetric;
//! - smoothness: `|M[h, i, j] - M[h+1, i, j]| + |M[h, i, j] - M[h, i+1, j+1]|`;
//! - consistency: `|M_{R→L} - M_{L→R}ᵀ|`.
//!
//! A pixel is valid when its left→right→left re-projected column moves by
//! less than `mask_threshold * W`.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::datapipe::StereoImagePair;
use crate::error::{bail, Result};
use crate::lren::LatentHF;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParallaxWeights {
    pub photometric: f64,
    pub cycle: f64,
    pub smoothness: f64,
    pub consistency: f64,
}

impl Default for ParallaxWeights {
    fn default() -> Self {
        Self {
            photometric: 1.0,
            cycle: 1.0,
            smoothness: 1.0,
            consistency: 1.0,
        }
    }
}

impl ParallaxWeights {
    pub fn off() -> Self {
        Self {
            photometric: 0.0,
            cycle: 0.0,
            smoothness: 0.0,
            consistency: 0.0,
        }
    }

    fn any(&self) -> bool {
        self.photometric != 0.0 || self.cycle != 0.0 || self.smoothness != 0.0 || self.consistency != 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub parallax: ParallaxWeights,
    /// Valid-mask threshold on the cycle re-projection error, as a fraction
    /// of the row width.
    pub mask_threshold: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.1,
            lambda2: 0.25,
            parallax: ParallaxWeights::default(),
            mask_threshold: 0.05,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let p = &self.parallax;
        let all = [
            self.lambda1,
            self.lambda2,
            p.photometric,
            p.cycle,
            p.smoothness,
            p.consistency,
            self.mask_threshold,
        ];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            bail!(Config, "loss weights must be finite and non-negative");
        }
        Ok(())
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        bail!(Dimension, "{what}: {:?} vs {:?}", a.shape(), b.shape());
    }
    Ok(())
}

/// Graph form of the per-view L1 sum.
pub fn l1_pair(g: &mut Graph, pl: Var, pr: Var, tl: Var, tr: Var) -> Result<Var> {
    if g.shape(pl) != g.shape(tl) || g.shape(pr) != g.shape(tr) {
        bail!(Dimension, "L1 operands differ in shape");
    }
    let a = l1(g, pl, tl);
    let b = l1(g, pr, tr);
    Ok(g.add(a, b))
}

fn l1(g: &mut Graph, a: Var, b: Var) -> Var {
    let d = g.sub(a, b);
    let d = g.abs(d);
    g.mean(d)
}

fn l1_value(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Mean L1 of each view, summed.
pub fn reconstruction_loss(pred: &StereoImagePair, gt: &StereoImagePair) -> Result<f64> {
    same_shape(&pred.left, &gt.left, "reconstruction loss")?;
    same_shape(&pred.right, &gt.right, "reconstruction loss")?;
    Ok(l1_value(&pred.left, &gt.left) + l1_value(&pred.right, &gt.right))
}

/// Mean L1 between estimated and reference latents, summed over views.
pub fn diffusion_loss(zl_hat: &LatentHF, zr_hat: &LatentHF, zl: &LatentHF, zr: &LatentHF) -> Result<f64> {
    same_shape(&zl_hat.z, &zl.z, "diffusion loss")?;
    same_shape(&zr_hat.z, &zr.z, "diffusion loss")?;
    Ok(l1_value(&zl_hat.z, &zl.z) + l1_value(&zr_hat.z, &zr.z))
}

/// Row-wise attention maps and validity masks of a stereo feature pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PamMaps {
    /// `[H, W, W]`: left pixel `i` attends to right pixel `j`.
    pub m_r2l: Tensor,
    /// `[H, W, W]`: right pixel `j` attends to left pixel `i`.
    pub m_l2r: Tensor,
    /// `[1, H, W]` in `{0, 1}`.
    pub valid_l: Tensor,
    pub valid_r: Tensor,
}

/// Graph form of [`PamMaps`]; masks are constants.
#[derive(Debug, Clone)]
pub struct PamVars {
    pub m_r2l: Var,
    pub m_l2r: Var,
    pub valid_l: Tensor,
    pub valid_r: Tensor,
}

/// `[C, H, W]` features to row-wise attention.
pub fn compute_pam_var(g: &mut Graph, feat_l: Var, feat_r: Var, mask_threshold: f64) -> Result<PamVars> {
    if g.shape(feat_l) != g.shape(feat_r) || g.value(feat_l).rank() != 3 {
        bail!(Dimension, "parallax attention needs two [C, H, W] maps of equal shape");
    }
    let fl = g.permute(feat_l, [1, 2, 0]);
    let fr = g.permute(feat_r, [1, 2, 0]);
    let lr = g.matmul(fl, fr, true);
    let m_r2l = g.softmax(lr);
    let rl = g.matmul(fr, fl, true);
    let m_l2r = g.softmax(rl);
    let valid_l = valid_mask(g.value(m_r2l), g.value(m_l2r), mask_threshold);
    let valid_r = valid_mask(g.value(m_l2r), g.value(m_r2l), mask_threshold);
    Ok(PamVars {
        m_r2l,
        m_l2r,
        valid_l,
        valid_r,
    })
}

/// Tensor form of [`compute_pam_var`].
pub fn compute_pam(feat_l: &Tensor, feat_r: &Tensor, mask_threshold: f64) -> Result<PamMaps> {
    let mut g = Graph::new();
    let l = g.constant(feat_l.clone());
    let r = g.constant(feat_r.clone());
    let v = compute_pam_var(&mut g, l, r, mask_threshold)?;
    Ok(PamMaps {
        m_r2l: g.value(v.m_r2l).clone(),
        m_l2r: g.value(v.m_l2r).clone(),
        valid_l: v.valid_l,
        valid_r: v.valid_r,
    })
}

/// Pixel `i` of the source view is valid when the expected column reached
/// through `a` and then `b` stays within `threshold * W` of `i`.
fn valid_mask(a: &Tensor, b: &Tensor, threshold: f64) -> Tensor {
    let (h, w, _) = a.dims3();
    let (ad, bd) = (a.data(), b.data());
    let mut out = Tensor::zeros(&[1, h, w]);
    for y in 0..h {
        let row_a = &ad[y * w * w..(y + 1) * w * w];
        let row_b = &bd[y * w * w..(y + 1) * w * w];
        let cols: Vec<f64> = (0..w)
            .map(|j| (0..w).map(|k| row_b[j * w + k] * k as f64).sum())
            .collect();
        for i in 0..w {
            let back: f64 = (0..w).map(|j| row_a[i * w + j] * cols[j]).sum();
            let ok = (back - i as f64).abs() < threshold * w as f64;
            out.set3(0, y, i, if ok { 1.0 } else { 0.0 });
        }
    }
    out
}

/// `warp(img, M)[c, h, i] = Σ_j M[h, i, j] img[c, h, j]`.
pub fn warp_var(g: &mut Graph, img: Var, m: Var) -> Var {
    let x = g.permute(img, [1, 2, 0]);
    let y = g.matmul(m, x, false);
    g.permute(y, [2, 0, 1])
}

/// Tensor form of [`warp_var`].
pub fn warp(img: &Tensor, m: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let i = g.constant(img.clone());
    let mv = g.constant(m.clone());
    let y = warp_var(&mut g, i, mv);
    g.value(y).clone()
}

fn masked_l1(g: &mut Graph, a: Var, b: Var, mask: &Tensor) -> Var {
    let d = g.sub(a, b);
    let d = g.abs(d);
    let c = g.shape(a)[0];
    let mask = g.constant(mask.clone());
    let mask = g.repeat_leading(mask, c);
    let d = g.mul(d, mask);
    g.mean(d)
}

/// Breakdown of the parallax term (unweighted parts).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ParallaxParts {
    pub photometric: f64,
    pub cycle: f64,
    pub smoothness: f64,
    pub consistency: f64,
}

/// Weighted parallax loss on graph values. Terms with zero weight are not
/// built.
pub fn parallax_loss_var(
    g: &mut Graph,
    img_l: Var,
    img_r: Var,
    maps: &PamVars,
    w: &ParallaxWeights,
) -> Result<(Var, ParallaxParts)> {
    let (_, h, wd) = g.value(img_l).dims3();
    if g.shape(img_l) != g.shape(img_r) || g.shape(maps.m_r2l) != [h, wd, wd] {
        bail!(Dimension, "parallax images do not match the attention maps");
    }
    let mut parts = ParallaxParts::default();
    let mut terms: Vec<Var> = Vec::new();
    let mut push = |g: &mut Graph, v: Var, weight: f64, slot: &mut f64| {
        *slot = g.value(v).data()[0];
        terms.push(g.scale(v, weight));
    };
    if w.photometric != 0.0 {
        let wl = warp_var(g, img_r, maps.m_r2l);
        let wr = warp_var(g, img_l, maps.m_l2r);
        let a = masked_l1(g, img_l, wl, &maps.valid_l);
        let b = masked_l1(g, img_r, wr, &maps.valid_r);
        let v = g.add(a, b);
        push(g, v, w.photometric, &mut parts.photometric);
    }
    if w.cycle != 0.0 {
        let to_r = warp_var(g, img_l, maps.m_l2r);
        let back_l = warp_var(g, to_r, maps.m_r2l);
        let to_l = warp_var(g, img_r, maps.m_r2l);
        let back_r = warp_var(g, to_l, maps.m_l2r);
        let a = l1(g, img_l, back_l);
        let b = l1(g, img_r, back_r);
        let v = g.add(a, b);
        push(g, v, w.cycle, &mut parts.cycle);
    }
    if w.smoothness != 0.0 {
        let mut acc = Vec::new();
        for m in [maps.m_r2l, maps.m_l2r] {
            if h > 1 {
                let a = g.slice(m, 0, 0, h - 1);
                let b = g.slice(m, 0, 1, h - 1);
                acc.push(l1(g, a, b));
            }
            if wd > 1 {
                let a = g.slice(m, 1, 0, wd - 1);
                let a = g.slice(a, 2, 0, wd - 1);
                let b = g.slice(m, 1, 1, wd - 1);
                let b = g.slice(b, 2, 1, wd - 1);
                acc.push(l1(g, a, b));
            }
        }
        if let Some(&first) = acc.first() {
            let v = acc[1..].iter().fold(first, |s, &t| g.add(s, t));
            push(g, v, w.smoothness, &mut parts.smoothness);
        }
    }
    if w.consistency != 0.0 {
        let t = g.permute(maps.m_l2r, [0, 2, 1]);
        let v = l1(g, maps.m_r2l, t);
        push(g, v, w.consistency, &mut parts.consistency);
    }
    let total = match terms.split_first() {
        Some((&first, rest)) => rest.iter().fold(first, |s, &t| g.add(s, t)),
        None => g.constant(Tensor::scalar(0.0)),
    };
    Ok((total, parts))
}

/// Tensor form of [`parallax_loss_var`] with fixed maps.
pub fn parallax_loss(pair: &StereoImagePair, maps: &PamMaps, w: &ParallaxWeights) -> Result<f64> {
    if !w.any() {
        return Ok(0.0);
    }
    let mut g = Graph::new();
    let l = g.constant(pair.left.clone());
    let r = g.constant(pair.right.clone());
    let vars = PamVars {
        m_r2l: g.constant(maps.m_r2l.clone()),
        m_l2r: g.constant(maps.m_l2r.clone()),
        valid_l: maps.valid_l.clone(),
        valid_r: maps.valid_r.clone(),
    };
    let (v, _) = parallax_loss_var(&mut g, l, r, &vars, w)?;
    Ok(g.value(v).data()[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    One,
    Two,
}

impl Stage {
    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Stage::One),
            2 => Ok(Stage::Two),
            _ => bail!(Config, "stage must be 1 or 2, got {n}"),
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
        }
    }
}

/// Loss components of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub rec: f64,
    pub para: f64,
    pub diff: Option<f64>,
}

/// `L_rec + λ1 L_para` (stage 1), plus `λ2 L_diff` (stage 2).
pub fn stage_objective(stage: Stage, parts: &LossParts, w: &LossWeights) -> Result<f64> {
    let base = parts.rec + w.lambda1 * parts.para;
    match (stage, parts.diff) {
        (Stage::One, _) => Ok(base),
        (Stage::Two, Some(d)) => Ok(base + w.lambda2 * d),
        (Stage::Two, None) => bail!(Parameter, "stage 2 objective needs the diffusion loss"),
    }
}

/// Graph form of [`stage_objective`]. With `λ2 = 0` the diffusion term is
/// left out of the graph entirely.
pub fn stage_objective_var(g: &mut Graph, stage: Stage, rec: Var, para: Option<Var>, diff: Option<Var>, w: &LossWeights) -> Result<Var> {
    let mut total = rec;
    if let Some(p) = para {
        if w.lambda1 != 0.0 {
            let p = g.scale(p, w.lambda1);
            total = g.add(total, p);
        }
    }
    if stage == Stage::Two {
        let d = diff.ok_or_else(|| crate::Error::Parameter("stage 2 objective needs the diffusion loss".into()))?;
        if w.lambda2 != 0.0 {
            let d = g.scale(d, w.lambda2);
            total = g.add(total, d);
        }
    }
    Ok(total)
}
