//! 8-bit PNG images as `[C, H, W]` tensors in `[0, 1]`.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use diffstereo_core::datapipe::StereoImagePair;
use diffstereo_core::Tensor;
use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder, ImageReader};

use crate::error::{CliError, Result};

/// Read a PNG as RGB, dividing by 255. Grey and alpha images are converted
/// to RGB first.
pub fn read_rgb(path: &Path) -> Result<Tensor> {
    let reader = ImageReader::open(path).map_err(|e| CliError::io("open", path, e))?;
    let img = reader
        .with_guessed_format()
        .map_err(|e| CliError::io("read", path, e))?
        .decode()
        .map_err(|e| CliError::user(format!("cannot decode {}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    Ok(Tensor::from_fn(&[3, h, w], |i| {
        let c = i / (h * w);
        let p = i % (h * w);
        raw[p * 3 + c] as f64 / 255.0
    }))
}

pub fn to_u8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

fn write_png(path: &Path, bytes: &[u8], w: usize, h: usize, color: ExtendedColorType) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io("create", dir, e))?;
    }
    let file = File::create(path).map_err(|e| CliError::io("create", path, e))?;
    PngEncoder::new(BufWriter::new(file))
        .write_image(bytes, w as u32, h as u32, color)
        .map_err(|e| CliError::Internal(format!("cannot encode {}: {e}", path.display())))
}

/// Write a `[3, H, W]` tensor, rounding `255 v` and clamping to `0..=255`.
pub fn write_rgb(path: &Path, img: &Tensor) -> Result<()> {
    if img.rank() != 3 || img.shape()[0] != 3 {
        return Err(CliError::Internal(format!("expected a 3-channel image, got {:?}", img.shape())));
    }
    let (_, h, w) = img.dims3();
    let mut bytes = vec![0u8; 3 * h * w];
    for (i, v) in img.data().iter().enumerate() {
        let c = i / (h * w);
        let p = i % (h * w);
        bytes[p * 3 + c] = to_u8(*v);
    }
    write_png(path, &bytes, w, h, ExtendedColorType::Rgb8)
}

/// Write an `[H, W]` map as greyscale, stretched so its minimum is black
/// and its maximum white. A constant map is written black.
pub fn write_normalized_gray(path: &Path, map: &Tensor) -> Result<()> {
    let (h, w) = match map.shape() {
        [h, w] => (*h, *w),
        s => return Err(CliError::Internal(format!("expected a 2-D map, got {s:?}"))),
    };
    let lo = map.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let bytes: Vec<u8> = map
        .data()
        .iter()
        .map(|v| if span > 0.0 { to_u8((v - lo) / span) } else { 0 })
        .collect();
    write_png(path, &bytes, w, h, ExtendedColorType::L8)
}

/// Raw little-endian f32 values, row-major.
pub fn write_f32_raw(path: &Path, map: &Tensor) -> Result<()> {
    let bytes: Vec<u8> = map.data().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    std::fs::write(path, bytes).map_err(|e| CliError::io("write", path, e))
}

pub fn read_pair(left: &Path, right: &Path, id: &str) -> Result<StereoImagePair> {
    let l = read_rgb(left)?;
    let r = read_rgb(right)?;
    StereoImagePair::new(l, r, id).map_err(|e| {
        CliError::user(format!("{} and {}: {e}", left.display(), right.display()))
    })
}

pub fn write_pair(left: &Path, right: &Path, pair: &StereoImagePair) -> Result<()> {
    write_rgb(left, &pair.left)?;
    write_rgb(right, &pair.right)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_bit_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = Tensor::from_fn(&[3, 5, 7], |i| (i % 256) as f64 / 255.0);
        write_rgb(&p, &img).unwrap();
        assert_eq!(read_rgb(&p).unwrap(), img);
    }

    #[test]
    fn writes_round_and_clamp() {
        assert_eq!(to_u8(-0.3), 0);
        assert_eq!(to_u8(1.7), 255);
        assert_eq!(to_u8(0.5), 128);
        assert_eq!(to_u8(10.4 / 255.0), 10);
    }

    #[test]
    fn missing_file_is_a_user_error() {
        let e = read_rgb(Path::new("/nonexistent/x.png")).unwrap_err();
        assert_eq!(e.exit_code(), 1);
    }
}
