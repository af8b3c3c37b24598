use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::tensor::Tensor;

fn check(ksize: usize, sigma: f64) -> Result<()> {
    if ksize.is_multiple_of(2) || ksize == 0 {
        bail!(Parameter, "gaussian kernel size must be odd, got {ksize}");
    }
    if !(sigma > 0.0) {
        bail!(Parameter, "gaussian sigma must be positive, got {sigma}");
    }
    Ok(())
}

/// Normalised 1-D Gaussian taps for offsets `-k/2 ..= k/2`.
pub fn gaussian_kernel_1d(ksize: usize, sigma: f64) -> Result<Vec<f64>> {
    check(ksize, sigma)?;
    let r = (ksize / 2) as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| libm::exp(-((i * i) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    Ok(k)
}

/// The separable 2-D kernel as a row-major `ksize x ksize` grid.
pub fn gaussian_kernel(ksize: usize, sigma: f64) -> Result<Vec<f64>> {
    let k1 = gaussian_kernel_1d(ksize, sigma)?;
    Ok(k1
        .iter()
        .flat_map(|&a| k1.iter().map(move |&b| a * b))
        .collect())
}

/// Reflection without repeating the edge sample (`-1 -> 1`).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m >= n as isize { period - m } else { m }) as usize
}

/// Separable Gaussian blur of every channel with reflective borders.
pub fn gaussian_blur(img: &Tensor, ksize: usize, sigma: f64) -> Result<Tensor> {
    let k = gaussian_kernel_1d(ksize, sigma)?;
    let r = (ksize / 2) as isize;
    let (c, h, w) = img.dims3();
    let d = img.data();
    let mut tmp = vec![0.0; c * h * w];
    for row in 0..c * h {
        let src = &d[row * w..(row + 1) * w];
        for x in 0..w {
            tmp[row * w + x] = k
                .iter()
                .enumerate()
                .map(|(t, &kv)| kv * src[reflect(x as isize + t as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; c * h * w];
    for ci in 0..c {
        for y in 0..h {
            for (t, &kv) in k.iter().enumerate() {
                let sy = reflect(y as isize + t as isize - r, h);
                let src = &tmp[(ci * h + sy) * w..(ci * h + sy + 1) * w];
                let dst = &mut out[(ci * h + y) * w..(ci * h + y + 1) * w];
                dst.iter_mut().zip(src).for_each(|(o, s)| *o += kv * s);
            }
        }
    }
    Tensor::new(img.shape(), out)
}
