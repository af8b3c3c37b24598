use rand::Rng as _;
use rand_distr::{Distribution, Normal, Poisson};

use super::DegradationSpec;
use crate::error::{bail, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// One realisation of the low-light transform, shared by both views of a pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowlightParams {
    pub gamma: f64,
    pub scale: f64,
    pub gauss_sigma: f64,
    pub poisson_peak: Option<f64>,
}

fn draw_in(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

impl LowlightParams {
    pub fn draw(spec: &DegradationSpec, rng: &mut Rng) -> Self {
        Self {
            gamma: draw_in(rng, spec.lowlight_gamma_range),
            scale: draw_in(rng, spec.lowlight_scale_range),
            gauss_sigma: spec.noise_gauss_sigma,
            poisson_peak: spec.noise_poisson_peak,
        }
    }
}

/// `clamp(gauss(poisson(scale * img^gamma)))`, drawing noise from `rng`.
pub fn synthesize_lowlight(img: &Tensor, p: &LowlightParams, rng: &mut Rng) -> Result<Tensor> {
    if !(p.gamma > 0.0 && p.scale > 0.0 && p.gauss_sigma >= 0.0) {
        bail!(Parameter, "invalid low-light parameters {p:?}");
    }
    if img.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        bail!(Parameter, "low-light synthesis expects values in [0, 1]");
    }
    let gauss = (p.gauss_sigma > 0.0)
        .then(|| Normal::new(0.0, p.gauss_sigma))
        .transpose()
        .map_err(|_| crate::Error::Parameter("invalid noise sigma".into()))?;
    let mut out = img.map(|v| p.scale * libm::pow(v, p.gamma));
    for v in out.data_mut() {
        if let Some(peak) = p.poisson_peak {
            let lambda = *v * peak;
            *v = if lambda > 0.0 {
                let counts: f64 = Poisson::new(lambda)
                    .map_err(|_| crate::Error::Parameter("invalid poisson rate".into()))?
                    .sample(rng);
                counts / peak
            } else {
                0.0
            };
        }
        if let Some(n) = &gauss {
            *v += n.sample(rng);
        }
        *v = v.clamp(0.0, 1.0);
    }
    Ok(out)
}
