//! Procedural stereo scenes for smoke tests and demos.

use alloc::vec::Vec;

use rand::Rng as _;

use super::StereoImagePair;
use crate::error::{bail, Result};
use crate::rng;
use crate::tensor::Tensor;

struct Shape {
    y0: f64,
    x0: f64,
    h: f64,
    w: f64,
    round: bool,
    color: [f64; 3],
}

impl Shape {
    fn covers(&self, y: f64, x: f64) -> bool {
        if self.round {
            let dy = (y - self.y0 - self.h / 2.0) / (self.h / 2.0);
            let dx = (x - self.x0 - self.w / 2.0) / (self.w / 2.0);
            dy * dy + dx * dx <= 1.0
        } else {
            y >= self.y0 && y < self.y0 + self.h && x >= self.x0 && x < self.x0 + self.w
        }
    }
}

/// A fronto-parallel scene of flat-coloured boxes and discs over a smooth
/// background, seen from two cameras. The right view sees every object
/// shifted left by `disparity` pixels; the background is at infinity.
pub fn synthetic_pair(h: usize, w: usize, disparity: usize, seed: u64, id: &str) -> Result<StereoImagePair> {
    if h == 0 || w == 0 {
        bail!(Dimension, "scene must be non-empty");
    }
    let mut r = rng::labeled(seed, "scene", 0);
    let base: Vec<[f64; 2]> = (0..3).map(|_| [r.gen_range(0.2..0.5), r.gen_range(0.1..0.3)]).collect();
    let n = 6 + (h * w) / 2400;
    let shapes: Vec<Shape> = (0..n)
        .map(|_| {
            let sh = r.gen_range(0.15..0.5) * h as f64;
            let sw = r.gen_range(0.05..0.25) * w as f64;
            Shape {
                y0: r.gen_range(-0.1..0.9) * h as f64,
                x0: r.gen_range(-0.1..1.0) * w as f64,
                h: sh,
                w: sw,
                round: r.gen_bool(0.4),
                color: [r.gen_range(0.05..0.95), r.gen_range(0.05..0.95), r.gen_range(0.05..0.95)],
            }
        })
        .collect();
    let render = |shift: f64| {
        Tensor::from_fn(&[3, h, w], |i| {
            let c = i / (h * w);
            let y = (i / w) % h;
            let x = i % w;
            let (yf, xf) = (y as f64 + 0.5, x as f64 + 0.5);
            let mut v = base[c][0] + base[c][1] * libm::sin(xf / w as f64 * 3.0 + yf / h as f64 * 2.0 + c as f64);
            for s in &shapes {
                if s.covers(yf, xf + shift) {
                    v = s.color[c];
                }
            }
            v.clamp(0.0, 1.0)
        })
    };
    StereoImagePair::new(render(0.0), render(disparity as f64), id)
}
