//! Stereo sample preparation: LQ synthesis for the three restoration tasks,
//! patch cutting and flip augmentation.
//!
//! Every transform is a pure function of its inputs and an explicit
//! generator, so a fixed seed reproduces the whole pipeline bit for bit.

mod augment;
mod blur;
mod lowlight;
mod patches;
mod resample;
mod synthetic;

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

pub use augment::{apply_flip, augment_flip, Flip};
pub use blur::{gaussian_blur, gaussian_kernel, gaussian_kernel_1d};
pub use lowlight::{synthesize_lowlight, LowlightParams};
pub use patches::{extract_patches, patch_grid};
pub use resample::{bicubic_downsample, bicubic_upsample, cubic_kernel, resize_bicubic};
pub use synthetic::synthetic_pair;

/// A left/right image pair, each `[C, H, W]` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoImagePair {
    pub left: Tensor,
    pub right: Tensor,
    pub id: String,
}

impl StereoImagePair {
    pub fn new(left: Tensor, right: Tensor, id: impl Into<String>) -> Result<Self> {
        if left.rank() != 3 {
            bail!(Dimension, "stereo views must be [C, H, W], got {:?}", left.shape());
        }
        if left.shape() != right.shape() {
            bail!(
                Dimension,
                "left {:?} and right {:?} differ in shape",
                left.shape(),
                right.shape()
            );
        }
        let (_, h, w) = left.dims3();
        if h == 0 || w == 0 {
            bail!(Dimension, "empty image");
        }
        let in_range = |t: &Tensor| t.data().iter().all(|v| (0.0..=1.0).contains(v));
        if !in_range(&left) || !in_range(&right) {
            bail!(Parameter, "pixel values must lie in [0, 1]");
        }
        Ok(Self {
            left,
            right,
            id: id.into(),
        })
    }

    /// `(C, H, W)` of each view.
    pub fn dims(&self) -> (usize, usize, usize) {
        self.left.dims3()
    }

    /// The pair with views exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            left: self.right.clone(),
            right: self.left.clone(),
            id: self.id.clone(),
        }
    }

    pub fn map_views(&self, mut f: impl FnMut(&Tensor) -> Result<Tensor>) -> Result<Self> {
        Ok(Self {
            left: f(&self.left)?,
            right: f(&self.right)?,
            id: self.id.clone(),
        })
    }
}

/// A training sample: the degraded input pair and its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub lq: StereoImagePair,
    pub hq: StereoImagePair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// x4 super-resolution from bicubic-downsampled inputs.
    Sr4,
    Blur,
    Lowlight,
}

impl Task {
    /// HQ-to-LQ spatial ratio.
    pub fn scale(self) -> usize {
        match self {
            Task::Sr4 => 4,
            Task::Blur | Task::Lowlight => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Sr4 => "sr4",
            Task::Blur => "blur",
            Task::Lowlight => "lowlight",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sr4" => Ok(Task::Sr4),
            "blur" => Ok(Task::Blur),
            "lowlight" => Ok(Task::Lowlight),
            other => bail!(Parameter, "unknown task `{other}` (expected sr4, blur or lowlight)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegradationSpec {
    pub task: Task,
    pub blur_ksize: usize,
    pub blur_sigma: f64,
    pub lowlight_gamma_range: (f64, f64),
    pub lowlight_scale_range: (f64, f64),
    pub noise_gauss_sigma: f64,
    /// Photon count at intensity 1; `None` disables shot noise.
    pub noise_poisson_peak: Option<f64>,
    pub seed: u64,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        Self {
            task: Task::Sr4,
            blur_ksize: 15,
            blur_sigma: 1.0,
            lowlight_gamma_range: (2.0, 3.0),
            lowlight_scale_range: (0.1, 0.3),
            noise_gauss_sigma: 0.01,
            noise_poisson_peak: Some(200.0),
            seed: 0,
        }
    }
}

impl DegradationSpec {
    pub fn for_task(task: Task) -> Self {
        Self {
            task,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blur_ksize < 3 || self.blur_ksize.is_multiple_of(2) {
            bail!(Parameter, "blur kernel size must be odd and >= 3, got {}", self.blur_ksize);
        }
        if !(self.blur_sigma > 0.0) {
            bail!(Parameter, "blur sigma must be positive");
        }
        let (g0, g1) = self.lowlight_gamma_range;
        let (s0, s1) = self.lowlight_scale_range;
        if !(g0 > 0.0 && g1 >= g0 && s0 > 0.0 && s1 >= s0) {
            bail!(Parameter, "low-light gamma/scale ranges must be positive and ordered");
        }
        if self.noise_gauss_sigma < 0.0 {
            bail!(Parameter, "noise sigma must be non-negative");
        }
        if let Some(p) = self.noise_poisson_peak {
            if !(p > 0.0) {
                bail!(Parameter, "poisson peak must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchSpec {
    pub patch_h: usize,
    pub patch_w: usize,
    pub stride: usize,
}

impl Default for PatchSpec {
    fn default() -> Self {
        Self {
            patch_h: 30,
            patch_w: 90,
            stride: 20,
        }
    }
}

/// Synthesize the LQ pair for `hq` with `rng`.
pub fn degrade_pair(hq: &StereoImagePair, spec: &DegradationSpec, rng: &mut Rng) -> Result<StereoImagePair> {
    spec.validate()?;
    match spec.task {
        Task::Sr4 => hq.map_views(|v| bicubic_downsample(v, 4)),
        Task::Blur => hq.map_views(|v| gaussian_blur(v, spec.blur_ksize, spec.blur_sigma)),
        Task::Lowlight => {
            let params = LowlightParams::draw(spec, rng);
            let left = synthesize_lowlight(&hq.left, &params, rng)?;
            let right = synthesize_lowlight(&hq.right, &params, rng)?;
            Ok(StereoImagePair {
                left,
                right,
                id: hq.id.clone(),
            })
        }
    }
}

/// Degrade a full-size HQ pair with its per-sample generator and cut it into
/// aligned training patches.
pub fn prepare_samples(hq: &StereoImagePair, spec: &DegradationSpec, patch: &PatchSpec) -> Result<Vec<Sample>> {
    let mut rng = rng::for_sample(spec.seed, &hq.id);
    let lq = degrade_pair(hq, spec, &mut rng)?;
    extract_patches(&lq, hq, patch, spec.task.scale())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn ramp_pair(h: usize, w: usize) -> StereoImagePair {
        let img = Tensor::from_fn(&[3, h, w], |i| ((i % w) as f64 / w as f64) * 0.8 + 0.1);
        StereoImagePair::new(img.clone(), img.flip_horizontal(), "ramp").unwrap()
    }

    #[test]
    fn pair_validation() {
        let a = Tensor::zeros(&[3, 4, 4]);
        let b = Tensor::zeros(&[3, 4, 5]);
        assert!(StereoImagePair::new(a.clone(), b, "x").is_err());
        let bad = Tensor::full(&[3, 4, 4], 1.5);
        assert!(StereoImagePair::new(a, bad, "x").is_err());
    }

    #[test]
    fn degradation_spec_rejects_even_kernel() {
        let spec = DegradationSpec {
            blur_ksize: 14,
            ..DegradationSpec::for_task(Task::Blur)
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn pipeline_is_bit_reproducible() {
        for task in [Task::Sr4, Task::Blur, Task::Lowlight] {
            let hq = ramp_pair(60, 200);
            let spec = DegradationSpec {
                seed: 11,
                ..DegradationSpec::for_task(task)
            };
            let patch = PatchSpec {
                patch_h: 10,
                patch_w: 30,
                stride: 5,
            };
            let a = prepare_samples(&hq, &spec, &patch).unwrap();
            let b = prepare_samples(&hq, &spec, &patch).unwrap();
            assert_eq!(a, b);
            let mut ra = rng::stream(3, 1);
            let mut rb = rng::stream(3, 1);
            let fa: Vec<_> = a.iter().map(|s| augment_flip(s, &mut ra)).collect();
            let fb: Vec<_> = b.iter().map(|s| augment_flip(s, &mut rb)).collect();
            assert_eq!(fa, fb);
        }
    }

    #[test]
    fn degradations_stay_in_unit_range() {
        let hq = StereoImagePair::new(
            Tensor::from_fn(&[3, 40, 40], |i| ((i * 7919) % 101) as f64 / 100.0),
            Tensor::from_fn(&[3, 40, 40], |i| ((i * 104_729) % 97) as f64 / 96.0),
            "noise",
        )
        .unwrap();
        for task in [Task::Sr4, Task::Blur, Task::Lowlight] {
            let mut rng = rng::stream(5, 0);
            let lq = degrade_pair(&hq, &DegradationSpec::for_task(task), &mut rng).unwrap();
            for v in lq.left.data().iter().chain(lq.right.data()) {
                assert!((0.0..=1.0).contains(v), "{task:?} produced {v}");
            }
        }
    }

    #[test]
    fn task_names_roundtrip() {
        for t in [Task::Sr4, Task::Blur, Task::Lowlight] {
            assert_eq!(Task::parse(t.name()).unwrap(), t);
        }
        assert!(Task::parse("x2").is_err());
        assert_eq!(vec![Task::Sr4.scale(), Task::Blur.scale()], vec![4, 1]);
    }
}
