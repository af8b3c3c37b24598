//! Channel interaction block.
//!
//! Both views are normalised and projected to queries, keys and values
//! with a point-wise then depth-wise convolution. Queries and keys of the
//! two views are concatenated along the pixel axis, so a single
//! `heads x Ĉ x Ĉ` channel attention map is estimated from every pixel of
//! the pair and applied to each view's values. Queries and keys are
//! L2-normalised over pixels before the product and the logits are divided
//! by a per-head learnable temperature `w = exp(s)`. A gated depth-wise
//! feed-forward network follows.

use alloc::format;

use super::position::modulate_normed;
use crate::autograd::Var;
use crate::error::Result;
use crate::nn;
use crate::params::{Init, Session};

/// Norm floor of the query/key L2 normalisation.
pub const QK_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CibShape {
    pub channels: usize,
    pub heads: usize,
    pub ffn_expansion: f64,
}

impl CibShape {
    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    pub fn hidden(&self) -> usize {
        (self.channels as f64 * self.ffn_expansion) as usize
    }
}

pub(crate) fn init(prefix: &str, shape: &CibShape, guided: bool, init: &mut Init<'_>) {
    let c = shape.channels;
    let hidden = shape.hidden();
    init.layer_norm(&format!("{prefix}.norm1"), c);
    if guided {
        init.conv(&format!("{prefix}.mod_scale"), c, c, 1, false);
        init.conv(&format!("{prefix}.mod_shift"), c, c, 1, false);
    }
    init.conv(&format!("{prefix}.qkv"), 3 * c, c, 1, false);
    init.depthwise(&format!("{prefix}.qkv_dw"), 3 * c, 3, false);
    init.constant(&format!("{prefix}.temperature"), &[shape.heads], 0.0);
    init.conv(&format!("{prefix}.proj"), c, c, 1, false);
    init.layer_norm(&format!("{prefix}.norm2"), c);
    init.conv(&format!("{prefix}.ffn_in"), 2 * hidden, c, 1, false);
    init.depthwise(&format!("{prefix}.ffn_dw"), 2 * hidden, 3, false);
    init.conv(&format!("{prefix}.ffn_out"), c, hidden, 1, false);
}

/// Shared channel attention over the two views.
///
/// `in_l`/`in_r` are the (normalised, possibly modulated) block inputs.
/// Returns the projected outputs of both views and the attention map
/// `[heads, Ĉ, Ĉ]`.
pub fn channel_attention(
    s: &mut Session<'_>,
    prefix: &str,
    shape: &CibShape,
    in_l: Var,
    in_r: Var,
) -> Result<(Var, Var, Var)> {
    let (c, h, w) = s.value(in_l).dims3();
    let (heads, hd) = (shape.heads, shape.head_dim());
    let project = |s: &mut Session<'_>, x: Var| -> Result<(Var, Var, Var)> {
        let qkv = nn::conv(s, &format!("{prefix}.qkv"), x)?;
        let qkv = nn::depthwise(s, &format!("{prefix}.qkv_dw"), qkv)?;
        let mut parts = [qkv; 3];
        for (i, p) in parts.iter_mut().enumerate() {
            let t = s.slice(qkv, 0, i * c, c);
            *p = s.reshape(t, &[heads, hd, h * w]);
        }
        Ok((parts[0], parts[1], parts[2]))
    };
    let (ql, kl, vl) = project(s, in_l)?;
    let (qr, kr, vr) = project(s, in_r)?;
    let q = s.concat(&[ql, qr], 2);
    let k = s.concat(&[kl, kr], 2);
    let q = s.l2_normalize(q, QK_NORM_EPS);
    let k = s.l2_normalize(k, QK_NORM_EPS);
    let logits = s.matmul(q, k, true);
    let temp = s.p(&format!("{prefix}.temperature"))?;
    let neg = s.scale(temp, -1.0);
    let inv_w = s.exp(neg);
    let logits = s.scale_leading(logits, inv_w);
    let attn = s.softmax(logits);
    let mut outs = [vl, vr];
    for o in outs.iter_mut() {
        let y = s.matmul(attn, *o, false);
        let y = s.reshape(y, &[c, h, w]);
        *o = nn::conv(s, &format!("{prefix}.proj"), y)?;
    }
    Ok((outs[0], outs[1], attn))
}

/// `u + W_out(GELU(u1) * u2)` with `(u1, u2) = split(dw(pw(LN(u))))`.
pub fn gdfn(s: &mut Session<'_>, prefix: &str, shape: &CibShape, u: Var) -> Result<Var> {
    let hidden = shape.hidden();
    let n = nn::layer_norm(s, &format!("{prefix}.norm2"), u)?;
    let t = nn::conv(s, &format!("{prefix}.ffn_in"), n)?;
    let t = nn::depthwise(s, &format!("{prefix}.ffn_dw"), t)?;
    let a = s.slice(t, 0, 0, hidden);
    let b = s.slice(t, 0, hidden, hidden);
    let a = s.gelu(a);
    let g = s.mul(a, b);
    let out = nn::conv(s, &format!("{prefix}.ffn_out"), g)?;
    Ok(s.add(u, out))
}

/// Full block on both views. `guidance` holds the position-encoded latent
/// of each view; when present it modulates the normalised input of the
/// attention branch, while the residual path keeps the raw input.
pub fn cib_forward(
    s: &mut Session<'_>,
    prefix: &str,
    shape: &CibShape,
    xl: Var,
    xr: Var,
    guidance: Option<(Var, Var)>,
) -> Result<(Var, Var, Var)> {
    let mut nl = nn::layer_norm(s, &format!("{prefix}.norm1"), xl)?;
    let mut nr = nn::layer_norm(s, &format!("{prefix}.norm1"), xr)?;
    if let Some((gl, gr)) = guidance {
        nl = modulate_normed(s, prefix, nl, gl)?;
        nr = modulate_normed(s, prefix, nr, gr)?;
    }
    let (al, ar, attn) = channel_attention(s, prefix, shape, nl, nr)?;
    let ul = s.add(al, xl);
    let ur = s.add(ar, xr);
    let yl = gdfn(s, prefix, shape, ul)?;
    let yr = gdfn(s, prefix, shape, ur)?;
    Ok((yl, yr, attn))
}
