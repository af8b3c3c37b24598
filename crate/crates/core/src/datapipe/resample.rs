//! Separable bicubic resampling with the `a = -0.5` convolution kernel.
//!
//! Geometry follows the usual half-pixel convention: output pixel `j` maps
//! to input coordinate `(j + 0.5) * in / out - 0.5`. When shrinking, the
//! kernel is stretched by the shrink factor (antialiasing) and the taps are
//! renormalised; borders are mirrored symmetrically (`-1 -> 0`, `-2 -> 1`).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::tensor::Tensor;

const A: f64 = -0.5;

/// Bicubic convolution kernel with `a = -0.5`.
pub fn cubic_kernel(x: f64) -> f64 {
    let ax = libm::fabs(x);
    if ax <= 1.0 {
        (A + 2.0) * ax * ax * ax - (A + 3.0) * ax * ax + 1.0
    } else if ax < 2.0 {
        A * ax * ax * ax - 5.0 * A * ax * ax + 8.0 * A * ax - 4.0 * A
    } else {
        0.0
    }
}

fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Per-output-index taps `(input index, weight)` for a 1-D resize.
fn taps(in_len: usize, out_len: usize) -> Vec<Vec<(usize, f64)>> {
    let ratio = in_len as f64 / out_len as f64;
    let stretch = ratio.max(1.0);
    let support = 2.0 * stretch;
    (0..out_len)
        .map(|j| {
            let u = (j as f64 + 0.5) * ratio - 0.5;
            let lo = libm::floor(u - support) as isize;
            let hi = libm::ceil(u + support) as isize;
            let mut t: Vec<(usize, f64)> = (lo..=hi)
                .filter_map(|i| {
                    let wgt = cubic_kernel((u - i as f64) / stretch);
                    (wgt != 0.0).then(|| (mirror(i, in_len), wgt))
                })
                .collect();
            let s: f64 = t.iter().map(|&(_, w)| w).sum();
            t.iter_mut().for_each(|(_, w)| *w /= s);
            t
        })
        .collect()
}

/// Resize every channel of `[C, H, W]` to `out_h x out_w`, unclamped.
pub fn resize_bicubic(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (c, h, w) = img.dims3();
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        bail!(Dimension, "cannot resize {}x{} to {}x{}", h, w, out_h, out_w);
    }
    let tx = taps(w, out_w);
    let ty = taps(h, out_h);
    let d = img.data();
    let mut tmp = vec![0.0; c * h * out_w];
    for row in 0..c * h {
        let src = &d[row * w..(row + 1) * w];
        for (x, t) in tx.iter().enumerate() {
            tmp[row * out_w + x] = t.iter().map(|&(i, wgt)| src[i] * wgt).sum();
        }
    }
    let mut out = vec![0.0; c * out_h * out_w];
    for ci in 0..c {
        for (y, t) in ty.iter().enumerate() {
            let dst = &mut out[(ci * out_h + y) * out_w..(ci * out_h + y + 1) * out_w];
            for &(i, wgt) in t {
                let src = &tmp[(ci * h + i) * out_w..(ci * h + i + 1) * out_w];
                dst.iter_mut().zip(src).for_each(|(o, s)| *o += wgt * s);
            }
        }
    }
    Tensor::new(&[c, out_h, out_w], out)
}

/// Shrink by an integer `scale` (2 or 4); output clamped to `[0, 1]`.
pub fn bicubic_downsample(img: &Tensor, scale: usize) -> Result<Tensor> {
    if !matches!(scale, 2 | 4) {
        bail!(Parameter, "downsampling scale must be 2 or 4, got {scale}");
    }
    let (_, h, w) = img.dims3();
    if h % scale != 0 || w % scale != 0 {
        bail!(
            Dimension,
            "{}x{} is not divisible by scale {}",
            h,
            w,
            scale
        );
    }
    Ok(resize_bicubic(img, h / scale, w / scale)?.clamp(0.0, 1.0))
}

/// Enlarge by an integer `scale`, unclamped. `scale = 1` is the identity.
pub fn bicubic_upsample(img: &Tensor, scale: usize) -> Result<Tensor> {
    if scale == 0 {
        bail!(Parameter, "upsampling scale must be positive");
    }
    if scale == 1 {
        return Ok(img.clone());
    }
    let (_, h, w) = img.dims3();
    resize_bicubic(img, h * scale, w * scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent 2-D evaluation: for every output pixel, sum the product of
    /// the stretched kernel in y and x over a wide window of mirrored input
    /// pixels, normalising by the total weight.
    fn oracle(img: &Tensor, out_h: usize, out_w: usize) -> Tensor {
        let (c, h, w) = img.dims3();
        let mut out = Tensor::zeros(&[c, out_h, out_w]);
        let (ry, rx) = (h as f64 / out_h as f64, w as f64 / out_w as f64);
        let (sy, sx) = (ry.max(1.0), rx.max(1.0));
        for ci in 0..c {
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let uy = (oy as f64 + 0.5) * ry - 0.5;
                    let ux = (ox as f64 + 0.5) * rx - 0.5;
                    let (mut num, mut wy_sum, mut wx_sum) = (0.0, 0.0, 0.0);
                    for iy in -20isize..(h as isize + 20) {
                        let wy = cubic_kernel((uy - iy as f64) / sy);
                        wy_sum += wy;
                        if wy == 0.0 {
                            continue;
                        }
                        for ix in -20isize..(w as isize + 20) {
                            let wx = cubic_kernel((ux - ix as f64) / sx);
                            if wx == 0.0 {
                                continue;
                            }
                            num += wy * wx * img.at3(ci, mirror(iy, h), mirror(ix, w));
                        }
                    }
                    for ix in -20isize..(w as isize + 20) {
                        wx_sum += cubic_kernel((ux - ix as f64) / sx);
                    }
                    out.set3(ci, oy, ox, num / (wy_sum * wx_sum));
                }
            }
        }
        out
    }

    #[test]
    fn kernel_interpolates() {
        assert_eq!(cubic_kernel(0.0), 1.0);
        assert_eq!(cubic_kernel(1.0), 0.0);
        assert_eq!(cubic_kernel(2.0), 0.0);
        // Partition of unity at a half-pixel offset.
        let s: f64 = [-1.5, -0.5, 0.5, 1.5].iter().map(|&x| cubic_kernel(x)).sum();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mirror_indices() {
        assert_eq!(mirror(-1, 5), 0);
        assert_eq!(mirror(-2, 5), 1);
        assert_eq!(mirror(5, 5), 4);
        assert_eq!(mirror(6, 5), 3);
        assert_eq!(mirror(0, 1), 0);
        assert_eq!(mirror(-3, 1), 0);
    }

    #[test]
    fn constant_is_preserved() {
        let img = Tensor::full(&[3, 16, 24], 0.5);
        let out = bicubic_downsample(&img, 4).unwrap();
        assert_eq!(out.shape(), &[3, 4, 6]);
        assert!(out.data().iter().all(|v| (v - 0.5).abs() < 1e-12));
        let up = bicubic_upsample(&img, 4).unwrap();
        assert!(up.data().iter().all(|v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn lq_patch_geometry() {
        let img = Tensor::full(&[3, 120, 360], 0.25);
        assert_eq!(bicubic_downsample(&img, 4).unwrap().shape(), &[3, 30, 90]);
    }

    #[test]
    fn rejects_non_divisible_dims() {
        let img = Tensor::zeros(&[3, 10, 12]);
        assert!(bicubic_downsample(&img, 4).is_err());
        assert!(bicubic_downsample(&img, 3).is_err());
    }

    #[test]
    fn ramp_matches_direct_oracle() {
        let w = 2048;
        let img = Tensor::from_fn(&[1, 4, w], |i| (i % w) as f64 / (w - 1) as f64);
        let out = bicubic_downsample(&img, 2).unwrap();
        let reference = oracle(&img, 2, w / 2);
        assert!(out.max_abs_diff(&reference.clamp(0.0, 1.0)) < 1e-12);
        // Same endpoints as the input ramp.
        let row = &out.data()[..w / 2];
        assert!(row[0].abs() < 1e-3, "left end {}", row[0]);
        assert!((row[w / 2 - 1] - 1.0).abs() < 1e-3, "right end {}", row[w / 2 - 1]);
        // Interior stays a ramp: constant spacing of two input steps.
        let step = 2.0 / (w - 1) as f64;
        for x in 4..w / 2 - 4 {
            assert!((row[x + 1] - row[x] - step).abs() < 1e-12);
        }
    }

    #[test]
    fn random_images_match_oracle() {
        let img = Tensor::from_fn(&[2, 12, 16], |i| ((i * 37) % 23) as f64 / 22.0);
        for (oh, ow) in [(6, 8), (3, 4), (24, 32)] {
            let fast = resize_bicubic(&img, oh, ow).unwrap();
            let slow = oracle(&img, oh, ow);
            assert!(fast.max_abs_diff(&slow) < 1e-12, "{oh}x{ow}");
        }
    }

    #[test]
    fn downsample_is_linear_away_from_saturation() {
        let x = Tensor::from_fn(&[3, 16, 16], |i| 0.3 + 0.2 * (((i * 13) % 7) as f64 / 6.0));
        let y = Tensor::from_fn(&[3, 16, 16], |i| 0.3 + 0.2 * (((i * 5) % 11) as f64 / 10.0));
        let (a, b) = (0.6, 0.4);
        let mix = x.zip_map(&y, |p, q| a * p + b * q);
        let lhs = bicubic_downsample(&mix, 4).unwrap();
        let fx = bicubic_downsample(&x, 4).unwrap();
        let fy = bicubic_downsample(&y, 4).unwrap();
        let rhs = fx.zip_map(&fy, |p, q| a * p + b * q);
        assert!(lhs.max_abs_diff(&rhs) < 1e-6);
    }
}
