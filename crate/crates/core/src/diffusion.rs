//! Compact latent diffusion over the single-channel high-frequency maps.
//!
//! Forward: `Z_t = sqrt(ᾱ_t) Z_0 + sqrt(1 - ᾱ_t) ε`. Reverse, without the
//! stochastic term:
//! `Z_{t-1} = (Z_t - (1 - α_t) / sqrt(1 - ᾱ_t) * ε̂_t) / sqrt(α_t)`.
//!
//! The noise estimate `ε̂_t = θ([Z_t, D, t/T])` is conditioned on a map `D`
//! extracted from the LQ view by a small CNN. Both networks are shared by
//! the two views.

use alloc::format;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::datapipe::StereoImagePair;
use crate::error::{bail, Result};
use crate::lren::{LatentHF, View};
use crate::nn;
use crate::params::{Init, ModelParams, Session};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub steps: usize,
    /// `beta[t - 1]` is `β_t`; likewise for the other sequences.
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    /// Posterior standard deviation `σ_t`. Kept for reference; the
    /// deterministic sampler never uses it.
    pub sigma: Vec<f64>,
}

/// Linear `β` from `beta_start` to `beta_end` over `steps` steps.
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        bail!(Parameter, "diffusion needs at least one step");
    }
    let ordered = if steps == 1 {
        beta_start <= beta_end
    } else {
        beta_start < beta_end
    };
    if !(beta_start > 0.0 && beta_end < 1.0 && ordered) {
        bail!(
            Parameter,
            "need 0 < beta_start < beta_end < 1, got [{beta_start}, {beta_end}]"
        );
    }
    let beta: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for a in &alpha {
        acc *= a;
        alpha_bar.push(acc);
    }
    let sigma = (0..steps)
        .map(|i| {
            let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
            libm::sqrt((1.0 - prev) / (1.0 - alpha_bar[i]) * beta[i])
        })
        .collect();
    Ok(NoiseSchedule {
        steps,
        beta,
        alpha,
        alpha_bar,
        sigma,
    })
}

impl NoiseSchedule {
    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            bail!(Parameter, "timestep {t} outside 1..={}", self.steps);
        }
        Ok(())
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    /// Coefficient of `ε̂` in the reverse step.
    pub fn eps_coef(&self, t: usize) -> f64 {
        (1.0 - self.alpha(t)) / libm::sqrt(1.0 - self.alpha_bar(t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub cen_width: usize,
    /// Hidden 3x3 conv + LeakyReLU layers of the condition network.
    pub cen_layers: usize,
    pub denoiser_width: usize,
}

impl DiffusionConfig {
    pub fn desk() -> Self {
        Self {
            steps: 4,
            beta_start: 0.1,
            beta_end: 0.99,
            cen_width: 16,
            cen_layers: 2,
            denoiser_width: 16,
        }
    }

    pub fn paper() -> Self {
        Self {
            cen_width: 64,
            denoiser_width: 64,
            ..Self::desk()
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        make_schedule(self.steps, self.beta_start, self.beta_end)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cen_width == 0 || self.cen_layers == 0 || self.denoiser_width == 0 {
            bail!(Config, "diffusion network widths and depths must be positive");
        }
        self.schedule().map(|_| ())
    }
}

pub(crate) fn init(cfg: &DiffusionConfig, init: &mut Init<'_>) {
    let mut c = 3;
    for i in 0..cfg.cen_layers {
        init.conv(&format!("cen.conv{i}"), cfg.cen_width, c, 3, true);
        c = cfg.cen_width;
    }
    init.conv("cen.out", 1, c, 3, true);
    let w = cfg.denoiser_width;
    init.conv("dm.head", w, 3, 3, true);
    init.conv("dm.res0.conv1", w, w, 3, true);
    init.conv("dm.res0.conv2", w, w, 3, true);
    init.conv("dm.mid", w, w, 3, true);
    init.conv("dm.out", 1, w, 3, true);
}

/// Fresh CEN and denoiser weights.
pub fn init_params(cfg: &DiffusionConfig, rng: &mut Rng) -> ModelParams {
    let mut params = ModelParams::new();
    init(cfg, &mut Init { params: &mut params, rng });
    params
}

/// `sqrt(ᾱ_t) z0 + sqrt(1 - ᾱ_t) eps`.
pub fn forward_diffuse(z0: &Tensor, t: usize, sched: &NoiseSchedule, eps: &Tensor) -> Result<Tensor> {
    sched.check_t(t)?;
    if z0.shape() != eps.shape() {
        bail!(Dimension, "noise {:?} does not match latent {:?}", eps.shape(), z0.shape());
    }
    let (a, b) = (libm::sqrt(sched.alpha_bar(t)), libm::sqrt(1.0 - sched.alpha_bar(t)));
    Ok(z0.zip_map(eps, |z, e| a * z + b * e))
}

/// [`forward_diffuse`] on a view latent.
pub fn forward_diffuse_latent(z0: &LatentHF, t: usize, sched: &NoiseSchedule, eps: &Tensor) -> Result<LatentHF> {
    LatentHF::new(forward_diffuse(&z0.z, t, sched, eps)?, z0.view)
}

/// The single transition that [`reverse_step`] inverts exactly:
/// `sqrt(α_t) z_prev + (1 - α_t) / sqrt(1 - ᾱ_t) eps`. For `t = 1` it
/// coincides with [`forward_diffuse`].
pub fn forward_step(z_prev: &Tensor, t: usize, sched: &NoiseSchedule, eps: &Tensor) -> Result<Tensor> {
    sched.check_t(t)?;
    if z_prev.shape() != eps.shape() {
        bail!(Dimension, "noise {:?} does not match latent {:?}", eps.shape(), z_prev.shape());
    }
    let (a, c) = (libm::sqrt(sched.alpha(t)), sched.eps_coef(t));
    Ok(z_prev.zip_map(eps, |z, e| a * z + c * e))
}

/// One deterministic reverse step.
pub fn reverse_step(zt: &Tensor, eps_hat: &Tensor, t: usize, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_t(t)?;
    if zt.shape() != eps_hat.shape() {
        bail!(Dimension, "noise {:?} does not match latent {:?}", eps_hat.shape(), zt.shape());
    }
    let (inv, c) = (1.0 / libm::sqrt(sched.alpha(t)), sched.eps_coef(t));
    Ok(zt.zip_map(eps_hat, |z, e| inv * (z - c * e)))
}

/// [`reverse_step`] on graph values.
pub fn reverse_step_var(s: &mut Session<'_>, zt: Var, eps_hat: Var, t: usize, sched: &NoiseSchedule) -> Result<Var> {
    sched.check_t(t)?;
    let e = s.scale(eps_hat, sched.eps_coef(t));
    let d = s.sub(zt, e);
    Ok(s.scale(d, 1.0 / libm::sqrt(sched.alpha(t))))
}

/// Condition map `[1, H, W]` of one LQ view.
pub fn condition_var(s: &mut Session<'_>, lq: Var) -> Result<Var> {
    let mut x = lq;
    let mut i = 0;
    while s.params().contains(&format!("cen.conv{i}.weight")) {
        x = nn::conv_lrelu(s, &format!("cen.conv{i}"), x)?;
        i += 1;
    }
    nn::conv(s, "cen.out", x)
}

/// Condition map `[H, W]` of one LQ view `[3, H, W]`.
pub fn extract_condition(lq: &Tensor, weights: &ModelParams) -> Result<Tensor> {
    let mut s = Session::frozen(weights);
    let x = s.input(lq.clone());
    let d = condition_var(&mut s, x)?;
    Ok(s.value(d).channel(0))
}

/// `ε̂_t` for latent `zt` and condition `d`, both `[1, H, W]`.
pub fn predict_noise_var(s: &mut Session<'_>, zt: Var, d: Var, t: usize, sched: &NoiseSchedule) -> Result<Var> {
    sched.check_t(t)?;
    if s.shape(zt) != s.shape(d) {
        bail!(Dimension, "condition {:?} does not match latent {:?}", s.shape(d), s.shape(zt));
    }
    let (_, h, w) = s.value(zt).dims3();
    let tmap = s.input(Tensor::full(&[1, h, w], t as f64 / sched.steps as f64));
    let x = s.concat(&[zt, d, tmap], 0);
    let x = nn::conv_lrelu(s, "dm.head", x)?;
    let x = nn::res_block(s, "dm.res0", x)?;
    let x = nn::conv_lrelu(s, "dm.mid", x)?;
    nn::conv(s, "dm.out", x)
}

/// `ε̂_t` for `[H, W]` maps.
pub fn predict_noise(zt: &Tensor, d: &Tensor, t: usize, sched: &NoiseSchedule, weights: &ModelParams) -> Result<Tensor> {
    let (h, w) = dims2(zt)?;
    let mut s = Session::frozen(weights);
    let z = s.input(zt.clone().reshape(&[1, h, w])?);
    let dv = s.input(d.clone().reshape(&[1, h, w]).map_err(|_| {
        crate::Error::Dimension(format!("condition {:?} does not match latent {h}x{w}", d.shape()))
    })?);
    let e = predict_noise_var(&mut s, z, dv, t, sched)?;
    Ok(s.value(e).channel(0))
}

fn dims2(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [h, w] => Ok((*h, *w)),
        other => bail!(Dimension, "expected an [H, W] map, got {other:?}"),
    }
}

/// The reverse chain as graph values for both views.
#[derive(Debug, Clone)]
pub struct Chain {
    /// `(left, right)` for `Z_T, Z_{T-1}, ..., Z_0`.
    pub trajectory: Vec<(Var, Var)>,
}

impl Chain {
    pub fn z0(&self) -> (Var, Var) {
        *self.trajectory.last().expect("chain has a start")
    }
}

/// Run all `T` reverse steps from `(z_left, z_right)` (`[1, H, W]` each),
/// conditioned on the LQ views. Differentiable end to end.
pub fn sample_chain(
    s: &mut Session<'_>,
    sched: &NoiseSchedule,
    lq_left: Var,
    lq_right: Var,
    z_left: Var,
    z_right: Var,
) -> Result<Chain> {
    let dl = condition_var(s, lq_left)?;
    let dr = condition_var(s, lq_right)?;
    let mut cur = (z_left, z_right);
    let mut trajectory = alloc::vec![cur];
    for t in (1..=sched.steps).rev() {
        let el = predict_noise_var(s, cur.0, dl, t, sched)?;
        let er = predict_noise_var(s, cur.1, dr, t, sched)?;
        cur = (
            reverse_step_var(s, cur.0, el, t, sched)?,
            reverse_step_var(s, cur.1, er, t, sched)?,
        );
        trajectory.push(cur);
    }
    Ok(Chain { trajectory })
}

/// Where the reverse chain starts.
pub enum ChainStart<'a> {
    /// Draw `Z_T` from a standard normal, left view first.
    Noise(&'a mut Rng),
    /// Explicit `[H, W]` starts for the left and right view.
    Fixed(Tensor, Tensor),
}

/// Standard normal `[H, W]` map.
pub fn normal_map(h: usize, w: usize, rng: &mut Rng) -> Tensor {
    Tensor::from_fn(&[h, w], |_| StandardNormal.sample(rng))
}

/// Every latent of the reverse chain, `Z_T` first, as `[H, W]` maps.
pub fn sample_trajectory(
    lq: &StereoImagePair,
    weights: &ModelParams,
    sched: &NoiseSchedule,
    start: ChainStart<'_>,
) -> Result<Vec<(LatentHF, LatentHF)>> {
    let (_, h, w) = lq.dims();
    let (zl, zr) = match start {
        ChainStart::Noise(rng) => {
            let l = normal_map(h, w, rng);
            (l, normal_map(h, w, rng))
        }
        ChainStart::Fixed(l, r) => (l, r),
    };
    if zl.shape() != [h, w] || zr.shape() != [h, w] {
        bail!(Dimension, "chain start must be {h}x{w} to match the LQ views");
    }
    let mut s = Session::frozen(weights);
    let ll = s.input(lq.left.clone());
    let lr = s.input(lq.right.clone());
    let zl = s.input(zl.reshape(&[1, h, w])?);
    let zr = s.input(zr.reshape(&[1, h, w])?);
    let chain = sample_chain(&mut s, sched, ll, lr, zl, zr)?;
    chain
        .trajectory
        .iter()
        .map(|&(l, r)| {
            Ok((
                LatentHF::new(s.value(l).channel(0), View::Left)?,
                LatentHF::new(s.value(r).channel(0), View::Right)?,
            ))
        })
        .collect()
}

/// Estimated `Ẑ_0` of both views.
pub fn sample_lhfr(
    lq: &StereoImagePair,
    weights: &ModelParams,
    sched: &NoiseSchedule,
    start: ChainStart<'_>,
) -> Result<(LatentHF, LatentHF)> {
    let mut traj = sample_trajectory(lq, weights, sched, start)?;
    Ok(traj.pop().expect("chain has a start"))
}

/// Tensor-level reverse chain with a caller-supplied noise estimator
/// `eps_hat(t, z_t)`. Returns `Z_T, ..., Z_0`.
pub fn run_chain(
    z_start: &Tensor,
    sched: &NoiseSchedule,
    mut eps_hat: impl FnMut(usize, &Tensor) -> Tensor,
) -> Result<Vec<Tensor>> {
    let mut out = alloc::vec![z_start.clone()];
    for t in (1..=sched.steps).rev() {
        let z = out.last().expect("non-empty");
        let e = eps_hat(t, z);
        let next = reverse_step(z, &e, t, sched)?;
        out.push(next);
    }
    Ok(out)
}
