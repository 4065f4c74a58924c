//! Dense row-major f32 tensor plus the small set of raw kernels the
//! autodiff graph is built on (GEMM, im2col, bilinear resampling).

use crate::error::{Error, Result};

/// Row-major dense tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> f32 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::input(format!("{what} contains non-finite values")))
        }
    }

    /// Reinterpret with a new shape of identical element count.
    pub fn reshaped(mut self, shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(numel, self.data.len(), "reshape to {shape:?} changes numel");
        self.shape = shape;
        self
    }
}

/// C = A(m×k) · B(k×n), accumulated on top of `beta * C`.
pub fn sgemm(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32], beta: f32) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// C = A(m×k) · Bᵗ where B is stored (n×k), accumulated on top of `beta * C`.
pub fn sgemm_bt(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32], beta: f32) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// C = Aᵗ · B where A is stored (k×m), B is (k×n), accumulated on `beta * C`.
pub fn sgemm_at(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32], beta: f32) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Output spatial size of a convolution.
pub fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// Unfold an input map (c×h×w) into a (c*kh*kw) × (oh*ow) column matrix.
pub fn im2col(
    input: &[f32],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Vec<f32> {
    let oh = conv_out_size(h, kh, stride, pad);
    let ow = conv_out_size(w, kw, stride, pad);
    let cols = oh * ow;
    let mut out = vec![0.0f32; c * kh * kw * cols];
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let base = row * cols;
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    for ox in 0..ow {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        out[base + oy * ow + ox] = input[(ci * h + iy) * w + ix as usize];
                    }
                }
            }
        }
    }
    out
}

/// Scatter a column-matrix gradient back onto the input map. Inverse of
/// [`im2col`] in the adjoint sense (overlapping taps accumulate).
#[allow(clippy::too_many_arguments)]
pub fn col2im(
    cols_grad: &[f32],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    input_grad: &mut [f32],
) {
    let oh = conv_out_size(h, kh, stride, pad);
    let ow = conv_out_size(w, kw, stride, pad);
    let cols = oh * ow;
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let base = row * cols;
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    for ox in 0..ow {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        input_grad[(ci * h + iy) * w + ix as usize] += cols_grad[base + oy * ow + ox];
                    }
                }
            }
        }
    }
}

/// One axis worth of bilinear sampling taps: for each output index, the two
/// source indices and the weight of the second one. Pixel-center convention
/// (non-corner-aligned), clamped at the borders.
pub fn bilinear_taps(in_size: usize, out_size: usize) -> Vec<(usize, usize, f32)> {
    let scale = in_size as f32 / out_size as f32;
    (0..out_size)
        .map(|o| {
            let src = (o as f32 + 0.5) * scale - 0.5;
            let floor = src.floor();
            let frac = (src - floor).clamp(0.0, 1.0);
            let i0 = (floor.max(0.0) as usize).min(in_size - 1);
            let i1 = (i0 + 1).min(in_size - 1);
            // negative src clamps to the first pixel with full weight
            if floor < 0.0 {
                (i0, i1, 0.0)
            } else {
                (i0, i1, frac)
            }
        })
        .collect()
}

/// Bilinearly resample a (c×h×w) map to (c×oh×ow).
pub fn bilinear_resize(input: &[f32], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    let ys = bilinear_taps(h, oh);
    let xs = bilinear_taps(w, ow);
    let mut out = vec![0.0f32; c * oh * ow];
    for ci in 0..c {
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        let out_plane = &mut out[ci * oh * ow..(ci + 1) * oh * ow];
        for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in xs.iter().enumerate() {
                let v00 = plane[y0 * w + x0];
                let v01 = plane[y0 * w + x1];
                let v10 = plane[y1 * w + x0];
                let v11 = plane[y1 * w + x1];
                let top = v00 + (v01 - v00) * wx;
                let bot = v10 + (v11 - v10) * wx;
                out_plane[oy * ow + ox] = top + (bot - top) * wy;
            }
        }
    }
    out
}

/// Adjoint of [`bilinear_resize`]: scatter output gradients back to the input.
pub fn bilinear_resize_backward(
    grad_out: &[f32],
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    grad_in: &mut [f32],
) {
    let ys = bilinear_taps(h, oh);
    let xs = bilinear_taps(w, ow);
    for ci in 0..c {
        let g_out = &grad_out[ci * oh * ow..(ci + 1) * oh * ow];
        let g_in = &mut grad_in[ci * h * w..(ci + 1) * h * w];
        for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in xs.iter().enumerate() {
                let g = g_out[oy * ow + ox];
                g_in[y0 * w + x0] += g * (1.0 - wy) * (1.0 - wx);
                g_in[y0 * w + x1] += g * (1.0 - wy) * wx;
                g_in[y1 * w + x0] += g * wy * (1.0 - wx);
                g_in[y1 * w + x1] += g * wy * wx;
            }
        }
    }
}
