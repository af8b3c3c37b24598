//! Small layer helpers over [`Session`]: every helper resolves its weights
//! by name so network code reads as a sequence of named layers.

use alloc::format;

use crate::autograd::Var;
use crate::error::Result;
use crate::params::Session;

/// Negative slope used by every LeakyReLU in the networks.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Epsilon of the per-pixel channel layer norm.
pub const LN_EPS: f64 = 1e-6;

/// Dense convolution `name.weight` with optional `name.bias`.
pub fn conv(s: &mut Session<'_>, name: &str, x: Var) -> Result<Var> {
    let w = s.p(&format!("{name}.weight"))?;
    let b = s.p_opt(&format!("{name}.bias"))?;
    Ok(s.conv2d(x, w, b))
}

pub fn depthwise(s: &mut Session<'_>, name: &str, x: Var) -> Result<Var> {
    let w = s.p(&format!("{name}.weight"))?;
    let b = s.p_opt(&format!("{name}.bias"))?;
    Ok(s.depthwise_conv2d(x, w, b))
}

pub fn layer_norm(s: &mut Session<'_>, name: &str, x: Var) -> Result<Var> {
    let g = s.p(&format!("{name}.weight"))?;
    let b = s.p(&format!("{name}.bias"))?;
    Ok(s.layer_norm(x, g, b, LN_EPS))
}

pub fn conv_lrelu(s: &mut Session<'_>, name: &str, x: Var) -> Result<Var> {
    let y = conv(s, name, x)?;
    Ok(s.leaky_relu(y, LEAKY_SLOPE))
}

/// `x + conv2(lrelu(conv1(x)))`.
pub fn res_block(s: &mut Session<'_>, name: &str, x: Var) -> Result<Var> {
    let h = conv_lrelu(s, &format!("{name}.conv1"), x)?;
    let h = conv(s, &format!("{name}.conv2"), h)?;
    Ok(s.add(x, h))
}

/// Mean absolute difference of two same-shaped vars.
pub fn l1_mean(s: &mut Session<'_>, a: Var, b: Var) -> Var {
    let d = s.sub(a, b);
    let d = s.abs(d);
    s.mean(d)
}
