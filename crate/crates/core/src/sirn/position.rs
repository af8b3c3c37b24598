//! Depth-aware encoding of the latent guidance and the spatial modulation
//! that injects it into a block.

use alloc::format;

use crate::autograd::Var;
use crate::error::{bail, Result};
use crate::nn;
use crate::params::Session;
use crate::tensor::Tensor;

/// Encode a latent for the block at `depth`.
///
/// A spatial latent `[1, H, W]` is repeated `channels` times; a vector
/// latent `[channels, 1, 1]` is used as is. With `use_pe` a constant plane
/// filled with `depth` is appended, and the shared point-wise convolution
/// `sirn.pe` maps the result to `[channels, H, W]` (or `[channels, 1, 1]`).
pub fn encode_position(
    s: &mut Session<'_>,
    z: Var,
    depth: usize,
    channels: usize,
    use_pe: bool,
) -> Result<Var> {
    let (zc, h, w) = s.value(z).dims3();
    let rep = if zc == 1 {
        s.repeat_leading(z, channels)
    } else if zc == channels && h == 1 && w == 1 {
        z
    } else {
        bail!(
            Dimension,
            "latent of shape {:?} cannot guide {} channels",
            s.shape(z),
            channels
        );
    };
    let input = if use_pe {
        let index = s.input(Tensor::full(&[1, h, w], depth as f64));
        s.concat(&[rep, index], 0)
    } else {
        rep
    };
    nn::conv(s, "sirn.pe", input)
}

/// `W1 Z' * norm + W2 Z'` with bias-free point-wise `W1`, `W2`. A vector
/// guidance `[C, 1, 1]` broadcasts over pixels.
pub fn modulate_normed(s: &mut Session<'_>, prefix: &str, normed: Var, zp: Var) -> Result<Var> {
    let scale = nn::conv(s, &format!("{prefix}.mod_scale"), zp)?;
    let shift = nn::conv(s, &format!("{prefix}.mod_shift"), zp)?;
    let (_, zh, zw) = s.value(zp).dims3();
    let (_, h, w) = s.value(normed).dims3();
    if (zh, zw) == (h, w) {
        let m = s.mul(scale, normed);
        Ok(s.add(m, shift))
    } else if (zh, zw) == (1, 1) {
        let m = s.scale_leading(normed, scale);
        Ok(s.shift_leading(m, shift))
    } else {
        bail!(
            Dimension,
            "guidance {}x{} does not match features {}x{}",
            zh,
            zw,
            h,
            w
        )
    }
}
