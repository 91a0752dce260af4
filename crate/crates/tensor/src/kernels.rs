//! Raw numeric kernels over flat slices. Shapes are validated by callers.

/// Matrix operand view: row-major `rows x cols`, optionally read transposed.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    pub fn t(self) -> Self {
        Self {
            transposed: !self.transposed,
            ..self
        }
    }

    fn shape(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `out = beta * out + a · b` with `out` row-major.
pub(crate) fn gemm(a: MatRef<'_>, b: MatRef<'_>, out: &mut [f64], beta: f64) {
    let (m, k) = a.shape();
    let (k2, n) = b.shape();
    assert_eq!(k, k2, "gemm inner extents");
    assert_eq!(out.len(), m * n, "gemm output size");
    assert!(a.data.len() >= a.rows * a.cols && b.data.len() >= b.rows * b.cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: extents and strides describe memory inside the checked slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a 2-D cross-correlation between an image of `channels x h x w`
/// and `kh x kw` windows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    /// Returns `None` when the kernel does not fit the padded input.
    pub fn new(
        channels: usize,
        (h, w): (usize, usize),
        (kh, kw): (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Option<Self> {
        let ph = h + 2 * padding.0;
        let pw = w + 2 * padding.1;
        if kh == 0 || kw == 0 || kh > ph || kw > pw || stride.0 == 0 || stride.1 == 0 {
            return None;
        }
        Some(Self {
            channels,
            h,
            w,
            kh,
            kw,
            stride,
            padding,
            out_h: (ph - kh) / stride.0 + 1,
            out_w: (pw - kw) / stride.1 + 1,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    fn source(&self, out_pos: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
        let v = (out_pos * stride + k).checked_sub(pad)?;
        Some(v)
    }
}

/// Unfolds `batch` images `[batch, C, H, W]` into `[C*kh*kw, batch*out_h*out_w]`.
pub(crate) fn im2col(x: &[f64], batch: usize, g: &ConvGeom) -> Vec<f64> {
    let npos = g.positions();
    let ncols = batch * npos;
    let mut cols = vec![0.0; g.col_rows() * ncols];
    let img = g.channels * g.h * g.w;
    for c in 0..g.channels {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let r = (c * g.kh + ki) * g.kw + kj;
                let row = &mut cols[r * ncols..(r + 1) * ncols];
                for n in 0..batch {
                    let plane = &x[n * img + c * g.h * g.w..n * img + (c + 1) * g.h * g.w];
                    for oy in 0..g.out_h {
                        let Some(iy) = g.source(oy, ki, g.stride.0, g.padding.0) else {
                            continue;
                        };
                        if iy >= g.h {
                            continue;
                        }
                        let dst = n * npos + oy * g.out_w;
                        for ox in 0..g.out_w {
                            if let Some(ix) = g.source(ox, kj, g.stride.1, g.padding.1) {
                                if ix < g.w {
                                    row[dst + ox] = plane[iy * g.w + ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters columns back onto `[batch, C, H, W]`.
pub(crate) fn col2im(cols: &[f64], batch: usize, g: &ConvGeom) -> Vec<f64> {
    let npos = g.positions();
    let ncols = batch * npos;
    let img = g.channels * g.h * g.w;
    let mut x = vec![0.0; batch * img];
    for c in 0..g.channels {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let r = (c * g.kh + ki) * g.kw + kj;
                let row = &cols[r * ncols..(r + 1) * ncols];
                for n in 0..batch {
                    let base = n * img + c * g.h * g.w;
                    for oy in 0..g.out_h {
                        let Some(iy) = g.source(oy, ki, g.stride.0, g.padding.0) else {
                            continue;
                        };
                        if iy >= g.h {
                            continue;
                        }
                        let src = n * npos + oy * g.out_w;
                        for ox in 0..g.out_w {
                            if let Some(ix) = g.source(ox, kj, g.stride.1, g.padding.1) {
                                if ix < g.w {
                                    x[base + iy * g.w + ix] += row[src + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `[C, batch*P]` -> `[batch, C, P]`.
pub(crate) fn channel_major_to_batch(src: &[f64], channels: usize, batch: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for c in 0..channels {
        for n in 0..batch {
            let s = &src[c * batch * p + n * p..c * batch * p + (n + 1) * p];
            out[(n * channels + c) * p..(n * channels + c + 1) * p].copy_from_slice(s);
        }
    }
    out
}

/// `[batch, C, P]` -> `[C, batch*P]`.
pub(crate) fn batch_to_channel_major(src: &[f64], channels: usize, batch: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for n in 0..batch {
        for c in 0..channels {
            let s = &src[(n * channels + c) * p..(n * channels + c + 1) * p];
            out[c * batch * p + n * p..c * batch * p + (n + 1) * p].copy_from_slice(s);
        }
    }
    out
}
