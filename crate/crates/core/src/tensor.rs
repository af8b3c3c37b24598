//! Dense row-major f64 tensors.
//!
//! Images and feature maps are `[C, H, W]`; latent maps are `[H, W]` or
//! `[1, H, W]`. No broadcasting: shape-changing operations are explicit.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{bail, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            bail!(
                Dimension,
                "shape {:?} needs {} elements, got {}",
                shape,
                n,
                data.len()
            );
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Infallible constructor for internal call sites that computed the size.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::full(&[1], value)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// `(C, H, W)` of a rank-3 tensor; a rank-2 tensor is read as `(1, H, W)`.
    pub fn dims3(&self) -> (usize, usize, usize) {
        match *self.shape.as_slice() {
            [c, h, w] => (c, h, w),
            [h, w] => (1, h, w),
            ref s => panic!("expected a rank-2 or rank-3 tensor, got shape {s:?}"),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            bail!(
                Dimension,
                "cannot reshape {:?} into {:?}",
                self.shape,
                shape
            );
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn at3(&self, c: usize, y: usize, x: usize) -> f64 {
        let (_, h, w) = self.dims3();
        self.data[(c * h + y) * w + x]
    }

    pub fn set3(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let (_, h, w) = self.dims3();
        self.data[(c * h + y) * w + x] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.shape, other.shape, "zip_map shape mismatch");
        Self::from_parts(
            self.shape.clone(),
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| libm::fabs(a - b))
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Self {
        self.map(|v| v.clamp(lo, hi))
    }

    /// Copy of channel `c` of a `[C, H, W]` tensor as `[H, W]`.
    pub fn channel(&self, c: usize) -> Tensor {
        let (_, h, w) = self.dims3();
        Tensor::from_parts(vec![h, w], self.data[c * h * w..(c + 1) * h * w].to_vec())
    }

    /// Spatial crop of a `[C, H, W]` tensor.
    pub fn crop(&self, y0: usize, x0: usize, ch: usize, cw: usize) -> Result<Tensor> {
        let (c, h, w) = self.dims3();
        if y0 + ch > h || x0 + cw > w {
            bail!(
                Dimension,
                "crop {}x{} at ({}, {}) exceeds {}x{}",
                ch,
                cw,
                y0,
                x0,
                h,
                w
            );
        }
        let mut out = Vec::with_capacity(c * ch * cw);
        for ci in 0..c {
            for y in y0..y0 + ch {
                let row = (ci * h + y) * w;
                out.extend_from_slice(&self.data[row + x0..row + x0 + cw]);
            }
        }
        Ok(Tensor::from_parts(vec![c, ch, cw], out))
    }

    /// Mirror along the width axis.
    pub fn flip_horizontal(&self) -> Tensor {
        let (c, h, w) = self.dims3();
        let mut out = self.clone();
        for row in 0..c * h {
            out.data[row * w..(row + 1) * w].reverse();
        }
        out
    }

    /// Mirror along the height axis.
    pub fn flip_vertical(&self) -> Tensor {
        let (c, h, w) = self.dims3();
        let mut out = self.clone();
        for ci in 0..c {
            for y in 0..h {
                let src = (ci * h + (h - 1 - y)) * w;
                let dst = (ci * h + y) * w;
                out.data[dst..dst + w].copy_from_slice(&self.data[src..src + w]);
            }
        }
        out
    }
}
