//! Thin safe wrappers over `matrixmultiply::dgemm` plus the convolution
//! kernels built on them. All routines are single-threaded and
//! deterministic.

/// `c = beta * c + op(a) * op(b)` with `op(a)` of shape `m x k` and `op(b)`
/// of shape `k x n`. Operands are dense row-major; `ta`/`tb` read them
/// transposed (so `a` is stored `k x m` when `ta` is set).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds asserted above; the strides describe dense row-major
    // storage of the stated shapes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfold a `[cin, h, w]` map into `[cin * k * k, h * w]` columns with zero
/// padding `k / 2` (stride 1, "same" output size).
pub(crate) fn im2col(x: &[f64], cin: usize, h: usize, w: usize, k: usize, cols: &mut [f64]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for c in 0..cin {
        let plane = &x[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * hw;
                let dst = &mut cols[row..row + hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    let out = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (x, o) in out.iter_mut().enumerate() {
                        let sx = x as isize + dx;
                        *o = if sx < 0 || sx >= w as isize {
                            0.0
                        } else {
                            src[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into `[cin, h, w]`.
pub(crate) fn col2im_add(cols: &[f64], cin: usize, h: usize, w: usize, k: usize, x: &mut [f64]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for c in 0..cin {
        let plane = &mut x[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * hw;
                let src = &cols[row..row + hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let line = &src[y * w..(y + 1) * w];
                    for (x, &v) in line.iter().enumerate() {
                        let sx = x as isize + dx;
                        if sx >= 0 && sx < w as isize {
                            dst[sx as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Dense stride-1 "same" convolution. `weight` is `[cout, cin, k, k]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_forward(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    cout: usize,
    k: usize,
    bias: Option<&[f64]>,
    out: &mut [f64],
) {
    let hw = h * w;
    let kk = cin * k * k;
    if let Some(b) = bias {
        for (o, &bv) in out.chunks_mut(hw).zip(b) {
            o.fill(bv);
        }
    } else {
        out.fill(0.0);
    }
    if k == 1 {
        gemm(cout, cin, hw, weight, false, x, false, 1.0, out);
    } else {
        let mut cols = alloc::vec![0.0; kk * hw];
        im2col(x, cin, h, w, k, &mut cols);
        gemm(cout, kk, hw, weight, false, &cols, false, 1.0, out);
    }
}

/// Gradients of [`conv2d_forward`]; each output slice is accumulated into.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    cout: usize,
    k: usize,
    dy: &[f64],
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let hw = h * w;
    let kk = cin * k * k;
    if let Some(db) = db {
        for (d, row) in db.iter_mut().zip(dy.chunks(hw)) {
            *d += row.iter().sum::<f64>();
        }
    }
    if k == 1 {
        if let Some(dw) = dw {
            gemm(cout, hw, cin, dy, false, x, true, 1.0, dw);
        }
        if let Some(dx) = dx {
            gemm(cin, cout, hw, weight, true, dy, false, 1.0, dx);
        }
        return;
    }
    if let Some(dw) = dw {
        let mut cols = alloc::vec![0.0; kk * hw];
        im2col(x, cin, h, w, k, &mut cols);
        gemm(cout, hw, kk, dy, false, &cols, true, 1.0, dw);
    }
    if let Some(dx) = dx {
        let mut dcols = alloc::vec![0.0; kk * hw];
        gemm(kk, cout, hw, weight, true, dy, false, 0.0, &mut dcols);
        col2im_add(&dcols, cin, h, w, k, dx);
    }
}

/// Depth-wise stride-1 "same" convolution. `weight` is `[c, 1, k, k]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn depthwise_forward(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    k: usize,
    bias: Option<&[f64]>,
    out: &mut [f64],
) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        let o = &mut out[ci * hw..(ci + 1) * hw];
        o.fill(bias.map_or(0.0, |b| b[ci]));
        let kern = &weight[ci * k * k..(ci + 1) * k * k];
        for ky in 0..k {
            let dy = ky as isize - pad;
            for kx in 0..k {
                let dx = kx as isize - pad;
                let wv = kern[ky * k + kx];
                let (x0, x1) = valid_range(w, dx);
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let dst = &mut o[y * w..(y + 1) * w];
                    for xi in x0..x1 {
                        dst[xi] += wv * src[(xi as isize + dx) as usize];
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn depthwise_backward(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    k: usize,
    dy: &[f64],
    mut dx: Option<&mut [f64]>,
    mut dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    if let Some(db) = db {
        for (d, row) in db.iter_mut().zip(dy.chunks(hw)) {
            *d += row.iter().sum::<f64>();
        }
    }
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        let g = &dy[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            let oy = ky as isize - pad;
            for kx in 0..k {
                let ox = kx as isize - pad;
                let widx = ci * k * k + ky * k + kx;
                let (x0, x1) = valid_range(w, ox);
                let mut acc = 0.0;
                for y in 0..h {
                    let sy = y as isize + oy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let srow = sy as usize * w;
                    let grow = &g[y * w..(y + 1) * w];
                    if dw.is_some() {
                        let src = &plane[srow..srow + w];
                        for xi in x0..x1 {
                            acc += grow[xi] * src[(xi as isize + ox) as usize];
                        }
                    }
                    if let Some(dx) = dx.as_deref_mut() {
                        let wv = weight[widx];
                        let dst = &mut dx[ci * hw + srow..ci * hw + srow + w];
                        for xi in x0..x1 {
                            dst[(xi as isize + ox) as usize] += wv * grow[xi];
                        }
                    }
                }
                if let Some(dw) = dw.as_deref_mut() {
                    dw[widx] += acc;
                }
            }
        }
    }
}

/// Output columns `x` for which `x + offset` lies inside `[0, w)`.
fn valid_range(w: usize, offset: isize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (w as isize - offset).min(w as isize).max(0) as usize;
    (lo.min(w), hi)
}
