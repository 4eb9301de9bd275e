//! Raw numeric kernels behind the graph operations.

use crate::error::{Error, Result};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean and population variance (two-pass).
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(Error::DegenerateVector(format!(
            "cosine of vectors with norms {na} and {nb}"
        )));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Partial derivatives of `cos(a, b)` with respect to `a` and `b`.
pub fn cosine_grad(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (na2, nb2) = (dot(a, a), dot(b, b));
    let (na, nb) = (na2.sqrt(), nb2.sqrt());
    let ab = dot(a, b);
    let c = ab / (na * nb);
    let ga = a
        .iter()
        .zip(b)
        .map(|(x, y)| y / (na * nb) - c * x / na2)
        .collect();
    let gb = a
        .iter()
        .zip(b)
        .map(|(x, y)| x / (na * nb) - c * y / nb2)
        .collect();
    (ga, gb)
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|v| (v - lse).exp()).collect()
}

/// `c (m×n) = alpha · a (m×k) · b (k×n) + beta · c` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    debug_assert!(k == 0 || n == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    debug_assert!(c.len() >= m * n);
    // SAFETY: the debug assertions above bound every index matrixmultiply touches,
    // and `c` is exclusively borrowed row-major m×n storage.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Validated geometry of a 2-D convolution.
#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

pub fn pooled_extent(n: usize, k: usize, stride: usize, padding: usize, axis: &str) -> Result<usize> {
    if stride == 0 {
        return Err(Error::InvalidShape("stride must be positive".into()));
    }
    let padded = n + 2 * padding;
    if padded < k {
        return Err(Error::InvalidShape(format!(
            "{axis}: window {k} exceeds padded extent {padded}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

impl ConvGeom {
    pub fn new(x: &[usize], w: &[usize], stride: usize, padding: usize) -> Result<Self> {
        if x.len() != 3 {
            return Err(Error::InvalidShape(format!("conv2d input must be [C,H,W], got {x:?}")));
        }
        if w.len() != 4 {
            return Err(Error::InvalidShape(format!(
                "conv2d weight must be [C_out,C_in,k,k], got {w:?}"
            )));
        }
        if w[1] != x[0] {
            return Err(Error::InvalidShape(format!(
                "conv2d channel dimension: weight expects {} input channels, input has {}",
                w[1], x[0]
            )));
        }
        if w[2] != w[3] {
            return Err(Error::InvalidShape(format!(
                "conv2d kernel must be square, got {}x{}",
                w[2], w[3]
            )));
        }
        if w[2].is_multiple_of(2) {
            return Err(Error::InvalidShape(format!("conv2d kernel size {} is even", w[2])));
        }
        let out_h = pooled_extent(x[1], w[2], stride, padding, "height")?;
        let out_w = pooled_extent(x[2], w[2], stride, padding, "width")?;
        Ok(Self {
            c_in: x[0],
            h: x[1],
            w: x[2],
            c_out: w[0],
            k: w[2],
            stride,
            padding,
            out_h,
            out_w,
        })
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.padding == 0
    }

    /// Unfolds the input into a `[C_in·k·k, out_h·out_w]` patch matrix.
    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let p = self.positions();
        let mut cols = vec![0.0; self.patch_len() * p];
        for ci in 0..self.c_in {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src_row = &x[(ci * self.h + iy as usize) * self.w..][..self.w];
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[oy * self.out_w + ox] = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let p = self.positions();
        for ci in 0..self.c_in {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let base = (ci * self.h + iy as usize) * self.w;
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dx[base + ix as usize] += src[oy * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward(g: &ConvGeom, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let p = g.positions();
    let kk = g.patch_len();
    let mut out = vec![0.0; g.c_out * p];
    for (co, row) in out.chunks_mut(p).enumerate() {
        row.fill(b[co]);
    }
    if g.is_pointwise() {
        gemm(g.c_out, kk, p, w, kk, 1, x, p, 1, 1.0, &mut out);
    } else {
        let cols = g.im2col(x);
        gemm(g.c_out, kk, p, w, kk, 1, &cols, p, 1, 1.0, &mut out);
    }
    out
}

/// Returns (∂L/∂x, ∂L/∂w) for the requested operands given ∂L/∂y.
pub fn conv2d_backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    need_x: bool,
    need_w: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let p = g.positions();
    let kk = g.patch_len();
    let dw = need_w.then(|| {
        let mut dw = vec![0.0; g.c_out * kk];
        if g.is_pointwise() {
            gemm(g.c_out, p, kk, dy, p, 1, x, 1, p, 0.0, &mut dw);
        } else {
            let cols = g.im2col(x);
            gemm(g.c_out, p, kk, dy, p, 1, &cols, 1, p, 0.0, &mut dw);
        }
        dw
    });
    let dx = need_x.then(|| {
        let mut dcols = vec![0.0; kk * p];
        gemm(kk, g.c_out, p, w, 1, kk, dy, p, 1, 0.0, &mut dcols);
        if g.is_pointwise() {
            dcols
        } else {
            let mut dx = vec![0.0; g.c_in * g.h * g.w];
            g.col2im(&dcols, &mut dx);
            dx
        }
    });
    (dx, dw)
}

/// Window maximum with padded cells ignored. Returns values, per-output argmax
/// (linear input index, first occurrence on ties) and the output shape.
pub fn max_pool2d_forward(
    shape: &[usize],
    x: &[f64],
    k: usize,
    stride: usize,
    padding: usize,
) -> Result<(Vec<f64>, Vec<usize>, Vec<usize>)> {
    if shape.len() != 3 {
        return Err(Error::InvalidShape(format!("max_pool2d input must be [C,H,W], got {shape:?}")));
    }
    if k == 0 {
        return Err(Error::InvalidShape("max_pool2d window must be positive".into()));
    }
    if padding >= k {
        return Err(Error::InvalidShape(format!(
            "max_pool2d padding {padding} must be smaller than the window {k}"
        )));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let oh = pooled_extent(h, k, stride, padding, "height")?;
    let ow = pooled_extent(w, k, stride, padding, "width")?;
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut arg = usize::MAX;
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let idx = (ch * h + iy as usize) * w + ix as usize;
                        if arg == usize::MAX || x[idx] > best {
                            best = x[idx];
                            arg = idx;
                        }
                    }
                }
                if arg == usize::MAX {
                    return Err(Error::InvalidShape(
                        "max_pool2d window covers only padding".into(),
                    ));
                }
                out.push(best);
                argmax.push(arg);
            }
        }
    }
    Ok((out, argmax, vec![c, oh, ow]))
}

/// Half-open input range `[floor(i·n/out), ceil((i+1)·n/out))` pooled into output cell `i`.
pub fn adaptive_range(i: usize, n: usize, out: usize) -> (usize, usize) {
    let start = i * n / out;
    let end = ((i + 1) * n).div_ceil(out);
    (start, end)
}

pub fn adaptive_avg_pool2d_forward(shape: &[usize], x: &[f64], out_h: usize, out_w: usize) -> Result<Vec<f64>> {
    if shape.len() != 3 {
        return Err(Error::InvalidShape(format!(
            "adaptive_avg_pool2d input must be [C,H,W], got {shape:?}"
        )));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    if out_h == 0 || out_w == 0 || out_h > h || out_w > w {
        return Err(Error::InvalidShape(format!(
            "adaptive_avg_pool2d target {out_h}x{out_w} invalid for input {h}x{w}"
        )));
    }
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        for i in 0..out_h {
            let (y0, y1) = adaptive_range(i, h, out_h);
            for j in 0..out_w {
                let (x0, x1) = adaptive_range(j, w, out_w);
                let mut s = 0.0;
                for y in y0..y1 {
                    let row = &x[(ch * h + y) * w..][..w];
                    s += row[x0..x1].iter().sum::<f64>();
                }
                out.push(s / ((y1 - y0) * (x1 - x0)) as f64);
            }
        }
    }
    Ok(out)
}

pub fn adaptive_avg_pool2d_backward(shape: &[usize], out_h: usize, out_w: usize, dy: &[f64], dx: &mut [f64]) {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    for ch in 0..c {
        for i in 0..out_h {
            let (y0, y1) = adaptive_range(i, h, out_h);
            for j in 0..out_w {
                let (x0, x1) = adaptive_range(j, w, out_w);
                let g = dy[(ch * out_h + i) * out_w + j] / ((y1 - y0) * (x1 - x0)) as f64;
                for y in y0..y1 {
                    dx[(ch * h + y) * w + x0..(ch * h + y) * w + x1]
                        .iter_mut()
                        .for_each(|v| *v += g);
                }
            }
        }
    }
}

fn splice_span(offsets: &[isize], t: usize) -> Result<(isize, usize)> {
    let lo = *offsets.iter().min().ok_or_else(|| Error::EmptyInput("no splice offsets".into()))?;
    let hi = *offsets.iter().max().unwrap_or(&0);
    let width = (hi - lo) as usize;
    if t <= width {
        return Err(Error::InvalidShape(format!(
            "splice context of {} frames does not fit {t} input frames",
            width + 1
        )));
    }
    Ok((lo, t - width))
}

/// Builds the `[D·|offsets|, T_out]` context matrix.
fn splice_cols(d: usize, t: usize, x: &[f64], offsets: &[isize], lo: isize, t_out: usize) -> Vec<f64> {
    let mut cols = vec![0.0; d * offsets.len() * t_out];
    for (oi, &off) in offsets.iter().enumerate() {
        let shift = (off - lo) as usize;
        for r in 0..d {
            let row = oi * d + r;
            cols[row * t_out..(row + 1) * t_out].copy_from_slice(&x[r * t + shift..r * t + shift + t_out]);
        }
    }
    cols
}

pub fn splice_forward(
    x_shape: &[usize],
    x: &[f64],
    d_out: usize,
    w: &[f64],
    b: &[f64],
    offsets: &[isize],
) -> Result<(Vec<f64>, usize)> {
    let (d, t) = (x_shape[0], x_shape[1]);
    let (lo, t_out) = splice_span(offsets, t)?;
    let cols = splice_cols(d, t, x, offsets, lo, t_out);
    let kk = d * offsets.len();
    let mut out = vec![0.0; d_out * t_out];
    for (o, row) in out.chunks_mut(t_out).enumerate() {
        row.fill(b[o]);
    }
    gemm(d_out, kk, t_out, w, kk, 1, &cols, t_out, 1, 1.0, &mut out);
    Ok((out, t_out))
}

#[allow(clippy::too_many_arguments)]
pub fn splice_backward(
    x_shape: &[usize],
    x: &[f64],
    d_out: usize,
    w: &[f64],
    offsets: &[isize],
    dy: &[f64],
    need_x: bool,
    need_w: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let (d, t) = (x_shape[0], x_shape[1]);
    let (lo, t_out) = splice_span(offsets, t).expect("span validated in forward");
    let kk = d * offsets.len();
    let dw = need_w.then(|| {
        let cols = splice_cols(d, t, x, offsets, lo, t_out);
        let mut dw = vec![0.0; d_out * kk];
        gemm(d_out, t_out, kk, dy, t_out, 1, &cols, 1, t_out, 0.0, &mut dw);
        dw
    });
    let dx = need_x.then(|| {
        let mut dcols = vec![0.0; kk * t_out];
        gemm(kk, d_out, t_out, w, 1, kk, dy, t_out, 1, 0.0, &mut dcols);
        let mut dx = vec![0.0; d * t];
        for (oi, &off) in offsets.iter().enumerate() {
            let shift = (off - lo) as usize;
            for r in 0..d {
                let src = &dcols[(oi * d + r) * t_out..(oi * d + r + 1) * t_out];
                dx[r * t + shift..r * t + shift + t_out]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(a, v)| *a += v);
            }
        }
        dx
    });
    (dx, dw)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adaptive_ranges_cover_input() {
        assert_eq!(adaptive_range(0, 6, 4), (0, 2));
        assert_eq!(adaptive_range(1, 6, 4), (1, 3));
        assert_eq!(adaptive_range(3, 6, 4), (4, 6));
        for i in 0..5 {
            assert_eq!(adaptive_range(i, 5, 5), (i, i + 1));
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1.0, 2.0, 3.0, -1000.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((log_sum_exp(&[0.0; 4]) - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn even_kernels_rejected() {
        assert!(ConvGeom::new(&[1, 4, 4], &[1, 1, 2, 2], 1, 0).is_err());
        let e = ConvGeom::new(&[2, 4, 4], &[1, 3, 3, 3], 1, 0).unwrap_err();
        assert!(e.to_string().contains("channel"));
    }
}
