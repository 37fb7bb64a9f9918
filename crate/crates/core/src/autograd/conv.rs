//! im2col / col2im kernels and the GEMM-backed convolution passes.
//!
//! Weights are row-major: a convolution weight is `[out, in, k, k]`, a
//! transposed-convolution weight is `[in, out, k, k]` (the PyTorch layouts).

/// Geometry of a strided, zero-padded square-kernel window sweep.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Window {
    pub channels: usize,
    /// Spatial size of the dense image side.
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// Spatial size of the strided grid side.
    pub grid_h: usize,
    pub grid_w: usize,
}

impl Window {
    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn cols(&self) -> usize {
        self.grid_h * self.grid_w
    }
}

pub(crate) fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    (input + 2 * pad).checked_sub(kernel).map(|v| v / stride + 1)
}

pub(crate) fn conv_transpose_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    ((input - 1) * stride + kernel).checked_sub(2 * pad)
}

/// Gathers image patches into a `[C·k·k, grid_h·grid_w]` matrix.
pub(crate) fn im2col(image: &[f32], win: &Window, cols: &mut [f32]) {
    let Window {
        channels,
        height,
        width,
        kernel,
        stride,
        pad,
        grid_h,
        grid_w,
    } = *win;
    let p = grid_h * grid_w;
    debug_assert_eq!(cols.len(), win.rows() * p);
    for c in 0..channels {
        let plane = &image[c * height * width..(c + 1) * height * width];
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = &mut cols[((c * kernel + ki) * kernel + kj) * p..][..p];
                for gy in 0..grid_h {
                    let dst = &mut row[gy * grid_w..(gy + 1) * grid_w];
                    let iy = (gy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= height as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * width..(iy as usize + 1) * width];
                    for (gx, d) in dst.iter_mut().enumerate() {
                        let ix = (gx * stride + kj) as isize - pad as isize;
                        *d = if ix < 0 || ix >= width as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into the image.
pub(crate) fn col2im(cols: &[f32], win: &Window, image: &mut [f32]) {
    let Window {
        channels,
        height,
        width,
        kernel,
        stride,
        pad,
        grid_h,
        grid_w,
    } = *win;
    let p = grid_h * grid_w;
    for c in 0..channels {
        let plane = &mut image[c * height * width..(c + 1) * height * width];
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = &cols[((c * kernel + ki) * kernel + kj) * p..][..p];
                for gy in 0..grid_h {
                    let iy = (gy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * width..(iy as usize + 1) * width];
                    for (gx, &v) in row[gy * grid_w..(gy + 1) * grid_w].iter().enumerate() {
                        let ix = (gx * stride + kj) as isize - pad as isize;
                        if ix >= 0 && (ix as usize) < width {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// `c = alpha · op(a) · op(b) + beta · c` with explicit strides.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the slices cover every index addressed through the given
    // strides; callers pass dense row-major or transposed views.
    unsafe {
        matrixmultiply::sgemm(
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

pub(crate) struct ConvDims {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvDims {
    /// Window for a forward convolution: dense side is the input.
    fn conv_window(&self) -> Window {
        Window {
            channels: self.in_ch,
            height: self.in_h,
            width: self.in_w,
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad,
            grid_h: self.out_h,
            grid_w: self.out_w,
        }
    }

    /// Window for a transposed convolution: dense side is the output.
    fn transpose_window(&self) -> Window {
        Window {
            channels: self.out_ch,
            height: self.out_h,
            width: self.out_w,
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad,
            grid_h: self.in_h,
            grid_w: self.in_w,
        }
    }
}

pub(crate) fn conv2d_forward(d: &ConvDims, x: &[f32], w: &[f32], bias: Option<&[f32]>, out: &mut [f32]) {
    let win = d.conv_window();
    let (kk, p) = (win.rows(), win.cols());
    let mut cols = vec![0.0f32; kk * p];
    let in_len = d.in_ch * d.in_h * d.in_w;
    let out_len = d.out_ch * p;
    for b in 0..d.batch {
        im2col(&x[b * in_len..(b + 1) * in_len], &win, &mut cols);
        let o = &mut out[b * out_len..(b + 1) * out_len];
        gemm(d.out_ch, kk, p, w, (kk, 1), &cols, (p, 1), 0.0, o);
        if let Some(bias) = bias {
            for (co, &bv) in bias.iter().enumerate() {
                o[co * p..(co + 1) * p].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
}

/// Accumulates gradients of a convolution. `gx` may be `None` when the input
/// does not need a gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward(
    d: &ConvDims,
    x: &[f32],
    w: &[f32],
    gout: &[f32],
    mut gx: Option<&mut [f32]>,
    mut gw: Option<&mut [f32]>,
    mut gb: Option<&mut [f32]>,
) {
    let win = d.conv_window();
    let (kk, p) = (win.rows(), win.cols());
    let mut cols = vec![0.0f32; kk * p];
    let in_len = d.in_ch * d.in_h * d.in_w;
    let out_len = d.out_ch * p;
    for b in 0..d.batch {
        let g = &gout[b * out_len..(b + 1) * out_len];
        if let Some(gw) = gw.as_deref_mut() {
            im2col(&x[b * in_len..(b + 1) * in_len], &win, &mut cols);
            gemm(d.out_ch, p, kk, g, (p, 1), &cols, (1, p), 1.0, gw);
        }
        if let Some(gb) = gb.as_deref_mut() {
            for (co, acc) in gb.iter_mut().enumerate() {
                *acc += g[co * p..(co + 1) * p].iter().sum::<f32>();
            }
        }
        if let Some(gx) = gx.as_deref_mut() {
            gemm(kk, d.out_ch, p, w, (1, kk), g, (p, 1), 0.0, &mut cols);
            col2im(&cols, &win, &mut gx[b * in_len..(b + 1) * in_len]);
        }
    }
}

pub(crate) fn conv_transpose2d_forward(
    d: &ConvDims,
    x: &[f32],
    w: &[f32],
    bias: Option<&[f32]>,
    out: &mut [f32],
) {
    let win = d.transpose_window();
    let (kk, p) = (win.rows(), win.cols());
    let mut cols = vec![0.0f32; kk * p];
    let in_len = d.in_ch * p;
    let out_plane = d.out_h * d.out_w;
    let out_len = d.out_ch * out_plane;
    for b in 0..d.batch {
        gemm(kk, d.in_ch, p, w, (1, kk), &x[b * in_len..(b + 1) * in_len], (p, 1), 0.0, &mut cols);
        let o = &mut out[b * out_len..(b + 1) * out_len];
        o.fill(0.0);
        col2im(&cols, &win, o);
        if let Some(bias) = bias {
            for (co, &bv) in bias.iter().enumerate() {
                o[co * out_plane..(co + 1) * out_plane].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_transpose2d_backward(
    d: &ConvDims,
    x: &[f32],
    w: &[f32],
    gout: &[f32],
    mut gx: Option<&mut [f32]>,
    mut gw: Option<&mut [f32]>,
    mut gb: Option<&mut [f32]>,
) {
    let win = d.transpose_window();
    let (kk, p) = (win.rows(), win.cols());
    let mut cols = vec![0.0f32; kk * p];
    let in_len = d.in_ch * p;
    let out_plane = d.out_h * d.out_w;
    let out_len = d.out_ch * out_plane;
    for b in 0..d.batch {
        let g = &gout[b * out_len..(b + 1) * out_len];
        im2col(g, &win, &mut cols);
        if let Some(gx) = gx.as_deref_mut() {
            gemm(d.in_ch, kk, p, w, (kk, 1), &cols, (p, 1), 1.0, &mut gx[b * in_len..(b + 1) * in_len]);
        }
        if let Some(gw) = gw.as_deref_mut() {
            gemm(d.in_ch, p, kk, &x[b * in_len..(b + 1) * in_len], (p, 1), &cols, (1, p), 1.0, gw);
        }
        if let Some(gb) = gb.as_deref_mut() {
            for (co, acc) in gb.iter_mut().enumerate() {
                *acc += g[co * out_plane..(co + 1) * out_plane].iter().sum::<f32>();
            }
        }
    }
}
