//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] on a scalar walks the tape in reverse and returns the
//! gradient of every node that depends on a leaf created with
//! `requires_grad = true`. Nodes that only depend on constants are never
//! differentiated.
//!
//! Shape mismatches inside the graph are programming errors and panic; the
//! public network APIs validate shapes before building graphs.

use alloc::vec;
use alloc::vec::Vec;

use crate::gemm;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Abs(Var),
    Exp(Var),
    LeakyRelu(Var, f64),
    Gelu(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Depthwise {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    LayerNorm {
        x: Var,
        g: Var,
        b: Var,
        eps: f64,
    },
    Reshape(Var),
    Permute(Var, [usize; 3]),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Softmax(Var),
    L2Normalize(Var, f64),
    ScaleLeading(Var, Var),
    ShiftLeading(Var, Var),
    PixelShuffle(Var, usize),
    PixelUnshuffle(Var, usize),
    RepeatLeading(Var, usize),
    Mean(Var),
    Sum(Var),
    MeanTrailing(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Split `shape` around `axis` into (outer, axis length, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * core::f64::consts::FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * core::f64::consts::FRAC_1_SQRT_2));
    let pdf = libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * core::f64::consts::PI);
    cdf + x * pdf
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        // Constant subgraphs keep no history.
        let op = if needs_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{what}: operand shapes differ"
        );
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s), &[a])
    }

    pub fn offset(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x + s);
        self.push(v, Op::Offset(a), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(libm::fabs);
        self.push(v, Op::Abs(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(libm::exp);
        self.push(v, Op::Exp(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).map(|x| if x >= 0.0 { x } else { slope * x });
        self.push(v, Op::LeakyRelu(a, slope), &[a])
    }

    /// Sign pattern of the inputs of every piecewise-linear op (`abs`,
    /// leaky ReLU) in the graph. Two evaluations with equal patterns lie in
    /// the same smooth piece, so finite differences between them are valid.
    pub fn kink_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for n in &self.nodes {
            if let Op::Abs(a) | Op::LeakyRelu(a, _) = n.op {
                out.extend(self.value(a).data().iter().map(|&x| x >= 0.0));
            }
        }
        out
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(gelu);
        self.push(v, Op::Gelu(a), &[a])
    }

    /// Stride-1 convolution with "same" zero padding. `x` is `[cin, h, w]`,
    /// `w` is `[cout, cin, k, k]` with odd `k`, `b` is `[cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (cin, h, wd) = self.value(x).dims3();
        let ws = self.shape(w).to_vec();
        assert!(
            ws.len() == 4 && ws[1] == cin && ws[2] == ws[3] && ws[2] % 2 == 1,
            "conv2d: weight {ws:?} incompatible with input channels {cin}"
        );
        let (cout, k) = (ws[0], ws[2]);
        if let Some(b) = b {
            assert_eq!(self.shape(b), [cout], "conv2d: bias shape");
        }
        let mut out = vec![0.0; cout * h * wd];
        gemm::conv2d_forward(
            self.value(x).data(),
            cin,
            h,
            wd,
            self.value(w).data(),
            cout,
            k,
            b.map(|b| self.value(b).data()),
            &mut out,
        );
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push(
            Tensor::from_parts(vec![cout, h, wd], out),
            Op::Conv2d { x, w, b },
            &parents,
        )
    }

    /// Depth-wise stride-1 "same" convolution; `w` is `[c, 1, k, k]`.
    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (c, h, wd) = self.value(x).dims3();
        let ws = self.shape(w).to_vec();
        assert!(
            ws.len() == 4 && ws[0] == c && ws[1] == 1 && ws[2] == ws[3] && ws[2] % 2 == 1,
            "depthwise_conv2d: weight {ws:?} incompatible with {c} channels"
        );
        let k = ws[2];
        let mut out = vec![0.0; c * h * wd];
        gemm::depthwise_forward(
            self.value(x).data(),
            c,
            h,
            wd,
            self.value(w).data(),
            k,
            b.map(|b| self.value(b).data()),
            &mut out,
        );
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push(
            Tensor::from_parts(vec![c, h, wd], out),
            Op::Depthwise { x, w, b },
            &parents,
        )
    }

    /// Layer normalization over the channel axis at every pixel, followed
    /// by a per-channel affine map.
    pub fn layer_norm(&mut self, x: Var, g: Var, b: Var, eps: f64) -> Var {
        let (c, h, w) = self.value(x).dims3();
        assert_eq!(self.shape(g), [c], "layer_norm: weight shape");
        assert_eq!(self.shape(b), [c], "layer_norm: bias shape");
        let hw = h * w;
        let xd = self.value(x).data();
        let gd = self.value(g).data();
        let bd = self.value(b).data();
        let mut out = vec![0.0; c * hw];
        for p in 0..hw {
            let (mu, rstd) = pixel_stats(xd, c, hw, p, eps);
            for ci in 0..c {
                out[ci * hw + p] = (xd[ci * hw + p] - mu) * rstd * gd[ci] + bd[ci];
            }
        }
        let shape = self.shape(x).to_vec();
        self.push(
            Tensor::from_parts(shape, out),
            Op::LayerNorm { x, g, b, eps },
            &[x, g, b],
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let v = self
            .value(x)
            .clone()
            .reshape(shape)
            .expect("reshape: element count changed");
        self.push(v, Op::Reshape(x), &[x])
    }

    /// Axis permutation of a rank-3 tensor: output axis `i` is input axis
    /// `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: [usize; 3]) -> Var {
        let v = permute3(self.value(x), perm);
        self.push(v, Op::Permute(x, perm), &[x])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty(), "concat: no inputs");
        let first = self.shape(parts[0]).to_vec();
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            assert!(
                s.len() == first.len()
                    && s.iter()
                        .zip(&first)
                        .enumerate()
                        .all(|(i, (a, b))| i == axis || a == b),
                "concat: incompatible shapes"
            );
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p).data()[o * len..(o + 1) * len]);
            }
        }
        let parts_vec = parts.to_vec();
        self.push(
            Tensor::from_parts(shape, out),
            Op::Concat {
                parts: parts_vec,
                axis,
            },
            parts,
        )
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Var {
        let shape = self.shape(x).to_vec();
        assert!(start + len <= shape[axis], "slice: out of range");
        let (outer, n, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        let d = self.value(x).data();
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&d[base..base + len * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        self.push(
            Tensor::from_parts(oshape, out),
            Op::Slice { x, axis, start },
            &[x],
        )
    }

    /// Batched product: `a` is `[b, m, k]`; `b` is `[b, k, n]`, or `[b, n, k]`
    /// when `trans_b` is set.
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Var {
        let (bs, m, k) = self.value(a).dims3();
        let (bs2, r, c) = self.value(b).dims3();
        let n = if trans_b { r } else { c };
        let kb = if trans_b { c } else { r };
        assert!(
            bs == bs2 && kb == k && self.value(a).rank() == 3 && self.value(b).rank() == 3,
            "matmul: incompatible shapes"
        );
        let mut out = vec![0.0; bs * m * n];
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        for i in 0..bs {
            gemm::gemm(
                m,
                k,
                n,
                &ad[i * m * k..],
                false,
                &bd[i * k * n..],
                trans_b,
                0.0,
                &mut out[i * m * n..],
            );
        }
        self.push(
            Tensor::from_parts(vec![bs, m, n], out),
            Op::MatMul { a, b, trans_b },
            &[a, b],
        )
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().expect("softmax: scalar input");
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(n) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = libm::exp(*v - mx);
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        self.push(Tensor::from_parts(shape, out), Op::Softmax(x), &[x])
    }

    /// `x / max(||x||, eps)` along the last axis.
    pub fn l2_normalize(&mut self, x: Var, eps: f64) -> Var {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().expect("l2_normalize: scalar input");
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(n) {
            let norm = libm::sqrt(row.iter().map(|v| v * v).sum::<f64>()).max(eps);
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
        self.push(
            Tensor::from_parts(shape, out),
            Op::L2Normalize(x, eps),
            &[x],
        )
    }

    /// `x[i, ...] * s[i]` where `s` has one entry per index of the leading axis.
    pub fn scale_leading(&mut self, x: Var, s: Var) -> Var {
        let lead = self.shape(x)[0];
        assert_eq!(self.value(s).len(), lead, "scale_leading: scale length");
        let inner = self.value(x).len() / lead;
        let sd = self.value(s).data();
        let mut out = self.value(x).data().to_vec();
        for (chunk, &sv) in out.chunks_mut(inner).zip(sd) {
            chunk.iter_mut().for_each(|v| *v *= sv);
        }
        let shape = self.shape(x).to_vec();
        self.push(
            Tensor::from_parts(shape, out),
            Op::ScaleLeading(x, s),
            &[x, s],
        )
    }

    /// `x[i, ...] + s[i]`.
    pub fn shift_leading(&mut self, x: Var, s: Var) -> Var {
        let lead = self.shape(x)[0];
        assert_eq!(self.value(s).len(), lead, "shift_leading: shift length");
        let inner = self.value(x).len() / lead;
        let sd = self.value(s).data();
        let mut out = self.value(x).data().to_vec();
        for (chunk, &sv) in out.chunks_mut(inner).zip(sd) {
            chunk.iter_mut().for_each(|v| *v += sv);
        }
        let shape = self.shape(x).to_vec();
        self.push(
            Tensor::from_parts(shape, out),
            Op::ShiftLeading(x, s),
            &[x, s],
        )
    }

    /// Depth-to-space: `[c r², h, w] -> [c, h r, w r]`.
    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Var {
        let v = pixel_shuffle(self.value(x), r);
        self.push(v, Op::PixelShuffle(x, r), &[x])
    }

    /// Space-to-depth: `[c, h r, w r] -> [c r², h, w]`.
    pub fn pixel_unshuffle(&mut self, x: Var, r: usize) -> Var {
        let v = pixel_unshuffle(self.value(x), r);
        self.push(v, Op::PixelUnshuffle(x, r), &[x])
    }

    /// Tile a `[1, ...]` tensor `n` times along the leading axis.
    pub fn repeat_leading(&mut self, x: Var, n: usize) -> Var {
        let shape = self.shape(x).to_vec();
        assert_eq!(shape[0], 1, "repeat_leading: leading axis must be 1");
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(d.len() * n);
        for _ in 0..n {
            out.extend_from_slice(d);
        }
        let mut oshape = shape;
        oshape[0] = n;
        self.push(
            Tensor::from_parts(oshape, out),
            Op::RepeatLeading(x, n),
            &[x],
        )
    }

    /// Mean of all elements, as a `[1]` tensor.
    pub fn mean(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).mean());
        self.push(v, Op::Mean(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x), &[x])
    }

    /// Mean over all but the leading axis: `[c, ...] -> [c, 1, 1]`.
    pub fn mean_trailing(&mut self, x: Var) -> Var {
        let lead = self.shape(x)[0];
        let inner = self.value(x).len() / lead;
        let out: Vec<f64> = self
            .value(x)
            .data()
            .chunks(inner)
            .map(|c| c.iter().sum::<f64>() / inner as f64)
            .collect();
        self.push(
            Tensor::from_parts(vec![lead, 1, 1], out),
            Op::MeanTrailing(x),
            &[x],
        )
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward: loss must be a scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].needs_grad {
            return Gradients { grads };
        }
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.backprop_node(i, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    /// Like `accumulate` but lets the caller write into the gradient buffer
    /// in place, avoiding a temporary for the heavy kernels.
    fn grad_buf<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> Option<&'g mut [f64]> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let shape = self.shape(v);
        Some(
            grads[v.0]
                .get_or_insert_with(|| Tensor::zeros(shape))
                .data_mut(),
        )
    }

    fn backprop_node(&self, i: usize, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &self.nodes[i].value;
        match self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, a, dy.clone());
                self.accumulate(grads, b, dy.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, a, dy.clone());
                self.accumulate(grads, b, dy.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.needs_grad(a) {
                    self.accumulate(grads, a, dy.zip_map(self.value(b), |g, y| g * y));
                }
                if self.needs_grad(b) {
                    self.accumulate(grads, b, dy.zip_map(self.value(a), |g, x| g * x));
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, a, dy.map(|g| g * s)),
            Op::Offset(a) => self.accumulate(grads, a, dy.clone()),
            Op::Abs(a) => {
                let g = dy.zip_map(self.value(a), |g, x| {
                    if x > 0.0 {
                        g
                    } else if x < 0.0 {
                        -g
                    } else {
                        0.0
                    }
                });
                self.accumulate(grads, a, g);
            }
            Op::Exp(a) => self.accumulate(grads, a, dy.zip_map(out, |g, y| g * y)),
            Op::LeakyRelu(a, slope) => {
                let g = dy.zip_map(self.value(a), |g, x| if x >= 0.0 { g } else { g * slope });
                self.accumulate(grads, a, g);
            }
            Op::Gelu(a) => {
                let g = dy.zip_map(self.value(a), |g, x| g * gelu_grad(x));
                self.accumulate(grads, a, g);
            }
            Op::Conv2d { x, w, b } => {
                let (cin, h, wd) = self.value(x).dims3();
                let ws = self.shape(w);
                let (cout, k) = (ws[0], ws[2]);
                let xv = self.value(x).data();
                let wv = self.value(w).data();
                let mut dx = self.needs_grad(x).then(|| vec![0.0; xv.len()]);
                let mut dw = self.needs_grad(w).then(|| vec![0.0; wv.len()]);
                let mut db = b
                    .filter(|&b| self.needs_grad(b))
                    .map(|_| vec![0.0; cout]);
                gemm::conv2d_backward(
                    xv,
                    cin,
                    h,
                    wd,
                    wv,
                    cout,
                    k,
                    dy.data(),
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                self.scatter(grads, x, dx);
                self.scatter(grads, w, dw);
                if let Some(b) = b {
                    self.scatter(grads, b, db);
                }
            }
            Op::Depthwise { x, w, b } => {
                let (c, h, wd) = self.value(x).dims3();
                let k = self.shape(w)[2];
                let xv = self.value(x).data();
                let wv = self.value(w).data();
                let mut dx = self.needs_grad(x).then(|| vec![0.0; xv.len()]);
                let mut dw = self.needs_grad(w).then(|| vec![0.0; wv.len()]);
                let mut db = b.filter(|&b| self.needs_grad(b)).map(|_| vec![0.0; c]);
                gemm::depthwise_backward(
                    xv,
                    c,
                    h,
                    wd,
                    wv,
                    k,
                    dy.data(),
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                self.scatter(grads, x, dx);
                self.scatter(grads, w, dw);
                if let Some(b) = b {
                    self.scatter(grads, b, db);
                }
            }
            Op::LayerNorm { x, g, b, eps } => {
                let (c, h, w) = self.value(x).dims3();
                let hw = h * w;
                let xd = self.value(x).data();
                let gd = self.value(g).data();
                let dyd = dy.data();
                let mut dx = vec![0.0; c * hw];
                let mut dg = vec![0.0; c];
                let mut db = vec![0.0; c];
                let mut xhat = vec![0.0; c];
                let mut dxhat = vec![0.0; c];
                for p in 0..hw {
                    let (mu, rstd) = pixel_stats(xd, c, hw, p, eps);
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for ci in 0..c {
                        let idx = ci * hw + p;
                        xhat[ci] = (xd[idx] - mu) * rstd;
                        dxhat[ci] = dyd[idx] * gd[ci];
                        dg[ci] += dyd[idx] * xhat[ci];
                        db[ci] += dyd[idx];
                        m1 += dxhat[ci];
                        m2 += dxhat[ci] * xhat[ci];
                    }
                    m1 /= c as f64;
                    m2 /= c as f64;
                    for ci in 0..c {
                        dx[ci * hw + p] = rstd * (dxhat[ci] - m1 - xhat[ci] * m2);
                    }
                }
                let shape = self.shape(x).to_vec();
                self.accumulate(grads, x, Tensor::from_parts(shape, dx));
                self.accumulate(grads, g, Tensor::from_parts(vec![c], dg));
                self.accumulate(grads, b, Tensor::from_parts(vec![c], db));
            }
            Op::Reshape(x) => {
                let shape = self.shape(x).to_vec();
                self.accumulate(grads, x, Tensor::from_parts(shape, dy.data().to_vec()));
            }
            Op::Permute(x, perm) => {
                let mut inv = [0usize; 3];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                self.accumulate(grads, x, permute3(dy, inv));
            }
            Op::Concat { ref parts, axis } => {
                let shape = dy.shape();
                let (outer, total, inner) = split_axis(shape, axis);
                let mut offset = 0;
                for &p in parts {
                    let len = self.shape(p)[axis];
                    if self.needs_grad(p) {
                        let mut g = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            g.extend_from_slice(&dy.data()[base..base + len * inner]);
                        }
                        let pshape = self.shape(p).to_vec();
                        self.accumulate(grads, p, Tensor::from_parts(pshape, g));
                    }
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let len = dy.shape()[axis];
                let (outer, n, inner) = split_axis(self.shape(x), axis);
                if let Some(buf) = self.grad_buf(grads, x) {
                    for o in 0..outer {
                        let base = (o * n + start) * inner;
                        let src = &dy.data()[o * len * inner..(o + 1) * len * inner];
                        buf[base..base + len * inner]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::MatMul { a, b, trans_b } => {
                let (bs, m, k) = self.value(a).dims3();
                let n = dy.shape()[2];
                let ad = self.value(a).data();
                let bd = self.value(b).data();
                let g = dy.data();
                if let Some(da) = self.grad_buf(grads, a) {
                    // da = dy * op(b)^T
                    for i in 0..bs {
                        gemm::gemm(
                            m,
                            n,
                            k,
                            &g[i * m * n..],
                            false,
                            &bd[i * k * n..],
                            !trans_b,
                            1.0,
                            &mut da[i * m * k..],
                        );
                    }
                }
                if let Some(db) = self.grad_buf(grads, b) {
                    for i in 0..bs {
                        if trans_b {
                            // db [n, k] = dy^T a
                            gemm::gemm(
                                n,
                                m,
                                k,
                                &g[i * m * n..],
                                true,
                                &ad[i * m * k..],
                                false,
                                1.0,
                                &mut db[i * k * n..],
                            );
                        } else {
                            // db [k, n] = a^T dy
                            gemm::gemm(
                                k,
                                m,
                                n,
                                &ad[i * m * k..],
                                true,
                                &g[i * m * n..],
                                false,
                                1.0,
                                &mut db[i * k * n..],
                            );
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                let n = *out.shape().last().unwrap();
                let mut g = dy.data().to_vec();
                for (gr, yr) in g.chunks_mut(n).zip(out.data().chunks(n)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    gr.iter_mut().zip(yr).for_each(|(gv, &yv)| *gv = yv * (*gv - dot));
                }
                let shape = out.shape().to_vec();
                self.accumulate(grads, x, Tensor::from_parts(shape, g));
            }
            Op::L2Normalize(x, eps) => {
                let n = *out.shape().last().unwrap();
                let xd = self.value(x).data();
                let mut g = dy.data().to_vec();
                for ((gr, yr), xr) in g.chunks_mut(n).zip(out.data().chunks(n)).zip(xd.chunks(n)) {
                    let norm = libm::sqrt(xr.iter().map(|v| v * v).sum::<f64>());
                    if norm > eps {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        gr.iter_mut()
                            .zip(yr)
                            .for_each(|(gv, &yv)| *gv = (*gv - yv * dot) / norm);
                    } else {
                        gr.iter_mut().for_each(|gv| *gv /= eps);
                    }
                }
                let shape = out.shape().to_vec();
                self.accumulate(grads, x, Tensor::from_parts(shape, g));
            }
            Op::ScaleLeading(x, s) => {
                let lead = self.shape(x)[0];
                let inner = self.value(x).len() / lead;
                let sd = self.value(s).data();
                if self.needs_grad(x) {
                    let mut g = dy.data().to_vec();
                    for (chunk, &sv) in g.chunks_mut(inner).zip(sd) {
                        chunk.iter_mut().for_each(|v| *v *= sv);
                    }
                    let shape = self.shape(x).to_vec();
                    self.accumulate(grads, x, Tensor::from_parts(shape, g));
                }
                if self.needs_grad(s) {
                    let gs: Vec<f64> = dy
                        .data()
                        .chunks(inner)
                        .zip(self.value(x).data().chunks(inner))
                        .map(|(g, xv)| g.iter().zip(xv).map(|(a, b)| a * b).sum())
                        .collect();
                    let shape = self.shape(s).to_vec();
                    self.accumulate(grads, s, Tensor::from_parts(shape, gs));
                }
            }
            Op::ShiftLeading(x, s) => {
                let lead = self.shape(x)[0];
                let inner = self.value(x).len() / lead;
                self.accumulate(grads, x, dy.clone());
                if self.needs_grad(s) {
                    let gs: Vec<f64> = dy.data().chunks(inner).map(|g| g.iter().sum()).collect();
                    let shape = self.shape(s).to_vec();
                    self.accumulate(grads, s, Tensor::from_parts(shape, gs));
                }
            }
            Op::PixelShuffle(x, r) => self.accumulate(grads, x, pixel_unshuffle(dy, r)),
            Op::PixelUnshuffle(x, r) => self.accumulate(grads, x, pixel_shuffle(dy, r)),
            Op::RepeatLeading(x, n) => {
                let inner = self.value(x).len();
                let mut g = vec![0.0; inner];
                for chunk in dy.data().chunks(inner).take(n) {
                    g.iter_mut().zip(chunk).for_each(|(a, b)| *a += b);
                }
                let shape = self.shape(x).to_vec();
                self.accumulate(grads, x, Tensor::from_parts(shape, g));
            }
            Op::Mean(x) => {
                let n = self.value(x).len() as f64;
                let g = dy.data()[0] / n;
                self.accumulate(grads, x, Tensor::full(self.shape(x), g));
            }
            Op::Sum(x) => {
                let g = dy.data()[0];
                self.accumulate(grads, x, Tensor::full(self.shape(x), g));
            }
            Op::MeanTrailing(x) => {
                let lead = self.shape(x)[0];
                let inner = self.value(x).len() / lead;
                let mut g = Vec::with_capacity(lead * inner);
                for &d in dy.data() {
                    g.extend(core::iter::repeat_n(d / inner as f64, inner));
                }
                let shape = self.shape(x).to_vec();
                self.accumulate(grads, x, Tensor::from_parts(shape, g));
            }
        }
    }

    fn scatter(&self, grads: &mut [Option<Tensor>], v: Var, g: Option<Vec<f64>>) {
        if let Some(g) = g {
            let shape = self.shape(v).to_vec();
            self.accumulate(grads, v, Tensor::from_parts(shape, g));
        }
    }
}

fn pixel_stats(xd: &[f64], c: usize, hw: usize, p: usize, eps: f64) -> (f64, f64) {
    let mut mu = 0.0;
    for ci in 0..c {
        mu += xd[ci * hw + p];
    }
    mu /= c as f64;
    let mut var = 0.0;
    for ci in 0..c {
        let d = xd[ci * hw + p] - mu;
        var += d * d;
    }
    var /= c as f64;
    (mu, 1.0 / libm::sqrt(var + eps))
}

pub(crate) fn permute3(t: &Tensor, perm: [usize; 3]) -> Tensor {
    let s = t.shape();
    assert_eq!(s.len(), 3, "permute: rank-3 tensor required");
    let mut sorted = perm;
    sorted.sort_unstable();
    assert_eq!(sorted, [0, 1, 2], "permute: invalid permutation");
    let oshape = [s[perm[0]], s[perm[1]], s[perm[2]]];
    let istride = [s[1] * s[2], s[2], 1];
    let st = [istride[perm[0]], istride[perm[1]], istride[perm[2]]];
    let d = t.data();
    let mut out = Vec::with_capacity(d.len());
    for i in 0..oshape[0] {
        for j in 0..oshape[1] {
            let base = i * st[0] + j * st[1];
            for k in 0..oshape[2] {
                out.push(d[base + k * st[2]]);
            }
        }
    }
    Tensor::from_parts(oshape.to_vec(), out)
}

/// Depth-to-space on a plain tensor: output channel `c` at `(y r + dy, x r + dx)`
/// reads input channel `c r² + dy r + dx` at `(y, x)`.
pub fn pixel_shuffle(t: &Tensor, r: usize) -> Tensor {
    let (cin, h, w) = t.dims3();
    assert!(r >= 1 && cin % (r * r) == 0, "pixel_shuffle: channels not divisible by r²");
    let c = cin / (r * r);
    let (oh, ow) = (h * r, w * r);
    let d = t.data();
    let mut out = vec![0.0; c * oh * ow];
    for ci in 0..c {
        for dy in 0..r {
            for dx in 0..r {
                let src_c = ci * r * r + dy * r + dx;
                for y in 0..h {
                    let src = &d[(src_c * h + y) * w..(src_c * h + y + 1) * w];
                    let row = (ci * oh + y * r + dy) * ow;
                    for (x, &v) in src.iter().enumerate() {
                        out[row + x * r + dx] = v;
                    }
                }
            }
        }
    }
    Tensor::from_parts(vec![c, oh, ow], out)
}

/// Space-to-depth, the exact inverse of [`pixel_shuffle`]. Panics when the
/// spatial dims are not multiples of `r`; use
/// [`crate::lren::pixel_unshuffle`] for a checked variant.
pub fn pixel_unshuffle(t: &Tensor, r: usize) -> Tensor {
    let (c, h, w) = t.dims3();
    assert!(r >= 1 && h % r == 0 && w % r == 0, "pixel_unshuffle: dims not divisible by r");
    let (oh, ow) = (h / r, w / r);
    let d = t.data();
    let mut out = vec![0.0; c * r * r * oh * ow];
    for ci in 0..c {
        for dy in 0..r {
            for dx in 0..r {
                let dst_c = ci * r * r + dy * r + dx;
                for y in 0..oh {
                    let row = (ci * h + y * r + dy) * w;
                    let dst = &mut out[(dst_c * oh + y) * ow..(dst_c * oh + y + 1) * ow];
                    for (x, o) in dst.iter_mut().enumerate() {
                        *o = d[row + x * r + dx];
                    }
                }
            }
        }
    }
    Tensor::from_parts(vec![c * r * r, oh, ow], out)
}
