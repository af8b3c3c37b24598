//! Quick invariant suite behind the `selftest` command.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::datapipe::{bicubic_downsample, gaussian_kernel, patch_grid};
use crate::diffusion::{self, make_schedule};
use crate::metrics;
use crate::params::Session;
use crate::rng;
use crate::sirn::{self, CibShape};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, err: f64, tol: f64) -> Check {
    Check {
        name,
        passed: err <= tol,
        detail: format!("error {err:.3e} (tolerance {tol:.0e})"),
    }
}

pub fn run() -> Vec<Check> {
    let mut out = Vec::new();
    let mut r = rng::labeled(0, "selftest", 0);

    let sched = make_schedule(4, 0.1, 0.99).expect("valid schedule");
    let want = [0.9, 0.54300, 0.16652, 0.0016652];
    let err = sched
        .alpha_bar
        .iter()
        .zip(want)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    out.push(check("schedule alpha_bar", err, 1e-5));

    let z = diffusion::normal_map(6, 6, &mut r);
    let mut err: f64 = 0.0;
    for t in 1..=4 {
        let eps = diffusion::normal_map(6, 6, &mut r);
        let zt = diffusion::forward_step(&z, t, &sched, &eps).expect("shapes match");
        let back = diffusion::reverse_step(&zt, &eps, t, &sched).expect("shapes match");
        err = err.max(back.max_abs_diff(&z));
    }
    out.push(check("reverse step inverts forward step", err, 1e-6));

    let shape = CibShape {
        channels: 8,
        heads: 2,
        ffn_expansion: 2.66,
    };
    let w = sirn::init_cib_params("cib", &shape, false, &mut r);
    let xl = Tensor::from_fn(&[8, 4, 12], |_| r.gen_range(-1.0..1.0));
    let xr = Tensor::from_fn(&[8, 4, 12], |_| r.gen_range(-1.0..1.0));
    let mut s = Session::frozen(&w);
    let (l, rr) = (s.input(xl), s.input(xr));
    let (yl, yr, a) = sirn::channel_attention(&mut s, "cib", &shape, l, rr).expect("valid block");
    let (sl, sr, sa) = sirn::channel_attention(&mut s, "cib", &shape, rr, l).expect("valid block");
    let row_err = s
        .value(a)
        .data()
        .chunks(4)
        .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    out.push(check("attention rows sum to one", row_err, 1e-6));
    let swap_err = s
        .value(a)
        .max_abs_diff(s.value(sa))
        .max(s.value(yl).max_abs_diff(s.value(sr)))
        .max(s.value(yr).max_abs_diff(s.value(sl)));
    out.push(check("attention view-swap symmetry", swap_err, 1e-6));

    let x = Tensor::full(&[3, 16, 16], 0.5);
    let y = x.map(|v| v + 0.1);
    let p = metrics::psnr(&x, &y).unwrap_or(f64::NAN);
    out.push(check("psnr of a uniform 0.1 error", (p - 20.0).abs(), 1e-9));
    let ss = metrics::ssim(&y, &y).unwrap_or(f64::NAN);
    out.push(check("ssim of identical images", (ss - 1.0).abs(), 1e-12));

    let k: f64 = gaussian_kernel(15, 1.0).map(|k| k.iter().sum()).unwrap_or(f64::NAN);
    out.push(check("blur kernel sums to one", (k - 1.0).abs(), 1e-12));
    let c = bicubic_downsample(&Tensor::full(&[3, 16, 16], 0.5), 4)
        .map(|t| t.data().iter().map(|v| (v - 0.5).abs()).fold(0.0, f64::max))
        .unwrap_or(f64::NAN);
    out.push(check("bicubic keeps constants", c, 1e-12));
    let n = patch_grid(50, 30, 20).len() * patch_grid(130, 90, 20).len();
    out.push(Check {
        name: "patch grid on 50x130",
        passed: n == 6,
        detail: format!("{n} patches"),
    });
    out
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for c in super::run() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
