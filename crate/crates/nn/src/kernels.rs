//! Raw per-sample kernels behind the graph ops. All buffers are CHW slices.

/// Stride, zero padding and dilation of a square 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub const fn same3() -> Self {
        ConvGeom {
            stride: 1,
            pad: 1,
            dilation: 1,
        }
    }

    pub const fn new(stride: usize, pad: usize, dilation: usize) -> Self {
        ConvGeom {
            stride,
            pad,
            dilation,
        }
    }

    /// Output side for an input side and kernel size, or `None` when the
    /// dilated kernel does not fit into the padded input.
    pub fn out_len(&self, len: usize, k: usize) -> Option<usize> {
        let span = self.dilation * (k - 1) + 1;
        let padded = len + 2 * self.pad;
        if padded < span || self.stride == 0 {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }
}

/// `c = beta * c + a · b` where `a` is m×k and `b` is k×n, both given with
/// explicit (row, column) strides; `c` is dense row-major m×n.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    if k == 0 {
        for v in c[..m * n].iter_mut() {
            *v *= beta;
        }
        return;
    }
    assert!((m - 1) * a_strides.0 + (k - 1) * a_strides.1 < a.len());
    assert!((k - 1) * b_strides.0 + (n - 1) * b_strides.1 < b.len());
    // SAFETY: the asserts above bound every index matrixmultiply touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    g: ConvGeom,
    ho: usize,
    wo: usize,
    cols: &mut [f64],
) {
    let plane = ho * wo;
    for ci in 0..c {
        let src = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky * g.dilation) as isize - g.pad as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        line.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx * g.dilation) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            srow[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im(
    cols: &[f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    g: ConvGeom,
    ho: usize,
    wo: usize,
    dx: &mut [f64],
) {
    let plane = ho * wo;
    for ci in 0..c {
        let dst = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky * g.dilation) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let drow = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx * g.dilation) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < w {
                            drow[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

const BLUR_TAPS: [f64; 3] = [0.25, 0.5, 0.25];

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i as usize
}

/// Side length produced by [`blur_pool`] and [`subsample`].
pub fn half_len(len: usize) -> usize {
    len.div_ceil(2)
}

/// Binomial [1,2,1]⊗[1,2,1]/16 low-pass with reflect padding, then stride 2.
pub(crate) fn blur_pool(x: &[f64], c: usize, h: usize, w: usize, out: &mut [f64]) {
    let (ho, wo) = (half_len(h), half_len(w));
    for ci in 0..c {
        let src = &x[ci * h * w..(ci + 1) * h * w];
        let dst = &mut out[ci * ho * wo..(ci + 1) * ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = 0.0;
                for (ky, wy) in BLUR_TAPS.iter().enumerate() {
                    let iy = reflect((2 * oy + ky) as isize - 1, h);
                    for (kx, wx) in BLUR_TAPS.iter().enumerate() {
                        let ix = reflect((2 * ox + kx) as isize - 1, w);
                        acc += wy * wx * src[iy * w + ix];
                    }
                }
                dst[oy * wo + ox] = acc;
            }
        }
    }
}

pub(crate) fn blur_pool_backward(dy: &[f64], c: usize, h: usize, w: usize, dx: &mut [f64]) {
    let (ho, wo) = (half_len(h), half_len(w));
    for ci in 0..c {
        let src = &dy[ci * ho * wo..(ci + 1) * ho * wo];
        let dst = &mut dx[ci * h * w..(ci + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let gval = src[oy * wo + ox];
                for (ky, wy) in BLUR_TAPS.iter().enumerate() {
                    let iy = reflect((2 * oy + ky) as isize - 1, h);
                    for (kx, wx) in BLUR_TAPS.iter().enumerate() {
                        let ix = reflect((2 * ox + kx) as isize - 1, w);
                        dst[iy * w + ix] += wy * wx * gval;
                    }
                }
            }
        }
    }
}

/// Plain stride-2 decimation (no low-pass), the aliased counterpart of
/// [`blur_pool`].
pub(crate) fn subsample(x: &[f64], c: usize, h: usize, w: usize, out: &mut [f64]) {
    let (ho, wo) = (half_len(h), half_len(w));
    for ci in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                out[(ci * ho + oy) * wo + ox] = x[(ci * h + 2 * oy) * w + 2 * ox];
            }
        }
    }
}

pub(crate) fn subsample_backward(dy: &[f64], c: usize, h: usize, w: usize, dx: &mut [f64]) {
    let (ho, wo) = (half_len(h), half_len(w));
    for ci in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                dx[(ci * h + 2 * oy) * w + 2 * ox] += dy[(ci * ho + oy) * wo + ox];
            }
        }
    }
}

/// 3×3 max pool, stride 1, padding 1. Records the flat argmax per output.
pub(crate) fn max_pool3(x: &[f64], c: usize, h: usize, w: usize, out: &mut [f64], arg: &mut [u32]) {
    for ci in 0..c {
        let base = ci * h * w;
        for y in 0..h {
            for xx in 0..w {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = base + y * w + xx;
                for dy in -1isize..=1 {
                    let yy = y as isize + dy;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    for dx in -1isize..=1 {
                        let xi = xx as isize + dx;
                        if xi < 0 || xi >= w as isize {
                            continue;
                        }
                        let idx = base + yy as usize * w + xi as usize;
                        if x[idx] > best {
                            best = x[idx];
                            best_i = idx;
                        }
                    }
                }
                out[base + y * w + xx] = best;
                arg[base + y * w + xx] = best_i as u32;
            }
        }
    }
}

pub(crate) fn upsample2(x: &[f64], c: usize, h: usize, w: usize, out: &mut [f64]) {
    let (ho, wo) = (2 * h, 2 * w);
    for ci in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                out[(ci * ho + oy) * wo + ox] = x[(ci * h + oy / 2) * w + ox / 2];
            }
        }
    }
}

pub(crate) fn upsample2_backward(dy: &[f64], c: usize, h: usize, w: usize, dx: &mut [f64]) {
    let (ho, wo) = (2 * h, 2 * w);
    for ci in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                dx[(ci * h + oy / 2) * w + ox / 2] += dy[(ci * ho + oy) * wo + ox];
            }
        }
    }
}
