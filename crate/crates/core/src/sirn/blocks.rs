//! Ablation baselines: residual dense blocks and activation-free blocks
//! applied per view, followed by a point-wise cross-view fusion
//! `y_v += W [y_v, y_other]`. Guidance, when present, is added to the block
//! input as `x + W1 Z' * LN(x) + W2 Z'`.

use alloc::format;

use super::position::modulate_normed;
use crate::autograd::Var;
use crate::error::Result;
use crate::nn;
use crate::params::{Init, Session};

const RDB_LAYERS: usize = 3;

fn growth(c: usize) -> usize {
    (c / 2).max(1)
}

pub(crate) fn init_guidance(prefix: &str, c: usize, init: &mut Init<'_>) {
    init.layer_norm(&format!("{prefix}.norm1"), c);
    init.conv(&format!("{prefix}.mod_scale"), c, c, 1, false);
    init.conv(&format!("{prefix}.mod_shift"), c, c, 1, false);
}

pub(crate) fn init_rdb(prefix: &str, c: usize, init: &mut Init<'_>) {
    let g = growth(c);
    for i in 0..RDB_LAYERS {
        init.conv(&format!("{prefix}.dense{i}"), g, c + i * g, 3, true);
    }
    init.conv(&format!("{prefix}.fuse"), c, c + RDB_LAYERS * g, 1, true);
    init.conv(&format!("{prefix}.cross"), c, 2 * c, 1, true);
}

pub(crate) fn init_nafb(prefix: &str, c: usize, init: &mut Init<'_>) {
    init.layer_norm(&format!("{prefix}.norm1"), c);
    init.conv(&format!("{prefix}.conv1"), 2 * c, c, 1, true);
    init.depthwise(&format!("{prefix}.dw"), 2 * c, 3, true);
    init.conv(&format!("{prefix}.sca"), c, c, 1, true);
    init.conv(&format!("{prefix}.conv3"), c, c, 1, true);
    init.layer_norm(&format!("{prefix}.norm2"), c);
    init.conv(&format!("{prefix}.conv4"), 2 * c, c, 1, true);
    init.conv(&format!("{prefix}.conv5"), c, c, 1, true);
    init.conv(&format!("{prefix}.cross"), c, 2 * c, 1, true);
}

fn guided_input(s: &mut Session<'_>, prefix: &str, x: Var, zp: Option<Var>) -> Result<Var> {
    match zp {
        Some(zp) => {
            let n = nn::layer_norm(s, &format!("{prefix}.norm1"), x)?;
            let m = modulate_normed(s, prefix, n, zp)?;
            Ok(s.add(x, m))
        }
        None => Ok(x),
    }
}

fn rdb_view(s: &mut Session<'_>, prefix: &str, x: Var) -> Result<Var> {
    let mut feats = alloc::vec![x];
    for i in 0..RDB_LAYERS {
        let inp = s.concat(&feats, 0);
        let y = nn::conv_lrelu(s, &format!("{prefix}.dense{i}"), inp)?;
        feats.push(y);
    }
    let all = s.concat(&feats, 0);
    let fused = nn::conv(s, &format!("{prefix}.fuse"), all)?;
    Ok(s.add(x, fused))
}

fn simple_gate(s: &mut Session<'_>, x: Var) -> Var {
    let c = s.shape(x)[0] / 2;
    let a = s.slice(x, 0, 0, c);
    let b = s.slice(x, 0, c, c);
    s.mul(a, b)
}

fn nafb_view(s: &mut Session<'_>, prefix: &str, x: Var, normed: Option<Var>) -> Result<Var> {
    let n = match normed {
        Some(n) => n,
        None => nn::layer_norm(s, &format!("{prefix}.norm1"), x)?,
    };
    let t = nn::conv(s, &format!("{prefix}.conv1"), n)?;
    let t = nn::depthwise(s, &format!("{prefix}.dw"), t)?;
    let t = simple_gate(s, t);
    let pooled = s.mean_trailing(t);
    let att = nn::conv(s, &format!("{prefix}.sca"), pooled)?;
    let t = s.scale_leading(t, att);
    let t = nn::conv(s, &format!("{prefix}.conv3"), t)?;
    let y = s.add(x, t);
    let n2 = nn::layer_norm(s, &format!("{prefix}.norm2"), y)?;
    let t = nn::conv(s, &format!("{prefix}.conv4"), n2)?;
    let t = simple_gate(s, t);
    let t = nn::conv(s, &format!("{prefix}.conv5"), t)?;
    Ok(s.add(y, t))
}

fn cross_fuse(s: &mut Session<'_>, prefix: &str, yl: Var, yr: Var) -> Result<(Var, Var)> {
    let cl = s.concat(&[yl, yr], 0);
    let cr = s.concat(&[yr, yl], 0);
    let fl = nn::conv(s, &format!("{prefix}.cross"), cl)?;
    let fr = nn::conv(s, &format!("{prefix}.cross"), cr)?;
    Ok((s.add(yl, fl), s.add(yr, fr)))
}

pub fn rdb_forward(
    s: &mut Session<'_>,
    prefix: &str,
    xl: Var,
    xr: Var,
    guidance: Option<(Var, Var)>,
) -> Result<(Var, Var)> {
    let il = guided_input(s, prefix, xl, guidance.map(|g| g.0))?;
    let ir = guided_input(s, prefix, xr, guidance.map(|g| g.1))?;
    let yl = rdb_view(s, prefix, il)?;
    let yr = rdb_view(s, prefix, ir)?;
    cross_fuse(s, prefix, yl, yr)
}

pub fn nafb_forward(
    s: &mut Session<'_>,
    prefix: &str,
    xl: Var,
    xr: Var,
    guidance: Option<(Var, Var)>,
) -> Result<(Var, Var)> {
    let mut ys = [xl, xr];
    for (i, y) in ys.iter_mut().enumerate() {
        let normed = match guidance {
            Some(g) => {
                let zp = if i == 0 { g.0 } else { g.1 };
                let n = nn::layer_norm(s, &format!("{prefix}.norm1"), *y)?;
                Some(modulate_normed(s, prefix, n, zp)?)
            }
            None => None,
        };
        *y = nafb_view(s, prefix, *y, normed)?;
    }
    cross_fuse(s, prefix, ys[0], ys[1])
}
