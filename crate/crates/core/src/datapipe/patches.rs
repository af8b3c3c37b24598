use alloc::format;
use alloc::vec::Vec;

use super::{PatchSpec, Sample, StereoImagePair};
use crate::error::{bail, Result};

/// Offsets `0, stride, 2 stride, ...` at which a window of `patch` fits in `len`.
pub fn patch_grid(len: usize, patch: usize, stride: usize) -> Vec<usize> {
    if patch > len || stride == 0 {
        return Vec::new();
    }
    (0..=len - patch).step_by(stride).collect()
}

/// Cut aligned LQ/HQ patch pairs. Left and right views use the same crop
/// coordinates; HQ crops are the `scale`-times larger aligned windows.
pub fn extract_patches(
    lq: &StereoImagePair,
    hq: &StereoImagePair,
    spec: &PatchSpec,
    scale: usize,
) -> Result<Vec<Sample>> {
    if spec.stride == 0 {
        bail!(Parameter, "patch stride must be at least 1");
    }
    let (_, h, w) = lq.dims();
    let (_, hh, hw) = hq.dims();
    if hh != h * scale || hw != w * scale {
        bail!(
            Dimension,
            "HQ {}x{} is not {} x LQ {}x{}",
            hh,
            hw,
            scale,
            h,
            w
        );
    }
    if spec.patch_h > h || spec.patch_w > w || spec.patch_h == 0 || spec.patch_w == 0 {
        bail!(
            Parameter,
            "patch {}x{} does not fit LQ image {}x{}",
            spec.patch_h,
            spec.patch_w,
            h,
            w
        );
    }
    let mut out = Vec::new();
    for y in patch_grid(h, spec.patch_h, spec.stride) {
        for x in patch_grid(w, spec.patch_w, spec.stride) {
            let id = format!("{}_y{}_x{}", lq.id, y, x);
            let crop_lq = |t: &crate::Tensor| t.crop(y, x, spec.patch_h, spec.patch_w);
            let crop_hq = |t: &crate::Tensor| {
                t.crop(y * scale, x * scale, spec.patch_h * scale, spec.patch_w * scale)
            };
            out.push(Sample {
                lq: StereoImagePair {
                    left: crop_lq(&lq.left)?,
                    right: crop_lq(&lq.right)?,
                    id: id.clone(),
                },
                hq: StereoImagePair {
                    left: crop_hq(&hq.left)?,
                    right: crop_hq(&hq.right)?,
                    id,
                },
            });
        }
    }
    Ok(out)
}
