//! PSNR and SSIM on RGB images in `[0, 1]`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::tensor::Tensor;

/// Reported PSNR for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
}

fn check_shapes(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        bail!(Dimension, "images differ in shape: {:?} vs {:?}", a.shape(), b.shape());
    }
    if a.is_empty() {
        bail!(Dimension, "empty image");
    }
    Ok(())
}

/// `10 log10(1 / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_shapes(a, b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * libm::log10(1.0 / mse)).min(PSNR_CAP_DB))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut k: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r;
            libm::exp(-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable 'valid' filtering of an `h x w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for ox in 0..ow {
            tmp[y * ow + ox] = (0..n).map(|t| k[t] * x[y * w + ox + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for t in 0..n {
            let src = &tmp[(oy + t) * ow..(oy + t + 1) * ow];
            for (o, s) in out[oy * ow..(oy + 1) * ow].iter_mut().zip(src) {
                *o += k[t] * s;
            }
        }
    }
    out
}

/// Mean SSIM over channels and all 'valid' window positions, with an
/// 11x11 Gaussian window (σ = 1.5) and dynamic range 1.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_shapes(a, b)?;
    let (c, h, w) = a.dims3();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        bail!(Dimension, "SSIM needs at least {0}x{0} pixels, got {h}x{w}", SSIM_WINDOW);
    }
    let k = gaussian_window();
    let (c1, c2) = (K1 * K1, K2 * K2);
    let plane = h * w;
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let pa = &a.data()[ch * plane..(ch + 1) * plane];
        let pb = &b.data()[ch * plane..(ch + 1) * plane];
        let sq = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { pa.iter().zip(pb).map(|(&x, &y)| f(x, y)).collect() };
        let mu_a = filter_valid(pa, h, w, &k);
        let mu_b = filter_valid(pb, h, w, &k);
        let e_aa = filter_valid(&sq(&|x, _| x * x), h, w, &k);
        let e_bb = filter_valid(&sq(&|_, y| y * y), h, w, &k);
        let e_ab = filter_valid(&sq(&|x, y| x * y), h, w, &k);
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

pub fn report(a: &Tensor, b: &Tensor) -> Result<MetricReport> {
    Ok(MetricReport {
        psnr_db: psnr(a, b)?,
        ssim: ssim(a, b)?,
    })
}
