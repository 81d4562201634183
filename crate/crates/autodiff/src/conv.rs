//! 2-D convolution, its adjoint (transposed convolution), and the kernel
//! gradient. The three are closed under differentiation, which is what makes
//! second-order gradients through conv layers possible:
//!
//! * `conv2d(x, w)`: dx = `conv_transpose2d(gy, w)`, dw = `kernel_grad(x, gy)`
//! * `conv_transpose2d(y, w)`: dy = `conv2d(gz, w)`, dw = `kernel_grad(gz, y)`
//! * `kernel_grad(x, gy)`: dx = `conv_transpose2d(gy, G)`, dgy = `conv2d(x, G)`
//!
//! Kernels are `[F, C, kh, kw]` for all three; `conv2d` maps C channels to F
//! and `conv_transpose2d` maps F back to C.

use rayon::prelude::*;

use crate::error::{AutodiffError, Result};
use crate::ops::Op;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvParams {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self {
            stride: (stride, stride),
            padding: (padding, padding),
        }
    }
}

impl Default for ConvParams {
    fn default() -> Self {
        Self::new(1, 0)
    }
}

fn dims4(t: &Tensor, what: &str) -> Result<[usize; 4]> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(AutodiffError::Shape(format!(
            "{what} must be 4-D, got {:?}",
            t.shape()
        ))),
    }
}

fn check_stride(p: ConvParams) -> Result<()> {
    if p.stride.0 == 0 || p.stride.1 == 0 {
        return Err(AutodiffError::InvalidArgument("stride must be >= 1".into()));
    }
    Ok(())
}

/// Output extent of a strided correlation, or a dimension error if empty.
fn conv_out(extent: usize, pad: usize, k: usize, stride: usize) -> Result<usize> {
    let padded = extent + 2 * pad;
    if k > padded {
        return Err(AutodiffError::Dimension(format!(
            "kernel extent {k} exceeds padded input extent {padded}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

/// Range of output positions `o` with `0 <= o*s + k - p < extent`, capped at `n_out`.
#[inline]
fn valid_range(extent: usize, k: usize, p: usize, s: usize, n_out: usize) -> (usize, usize) {
    let (k, p, s, extent) = (k as isize, p as isize, s as isize, extent as isize);
    let lo = if p > k { (p - k + s - 1) / s } else { 0 };
    let hi_incl = (extent - 1 + p - k).div_euclid(s);
    let hi = (hi_incl + 1).clamp(0, n_out as isize);
    (lo.min(hi) as usize, hi as usize)
}

/// Spatial geometry of one convolution, seen from its forward direction:
/// input `c×h×w`, kernel `kh×kw`, output `ho×wo`.
#[derive(Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    p: ConvParams,
}

impl Geometry {
    fn patch_len(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn out_len(&self) -> usize {
        self.ho * self.wo
    }

    fn ranges(&self) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
        let rows = (0..self.kh)
            .map(|ki| valid_range(self.h, ki, self.p.padding.0, self.p.stride.0, self.ho))
            .collect();
        let cols = (0..self.kw)
            .map(|kj| valid_range(self.w, kj, self.p.padding.1, self.p.stride.1, self.wo))
            .collect();
        (rows, cols)
    }

    /// Unfolds one `c×h×w` image into a `(c·kh·kw) × (ho·wo)` patch matrix;
    /// padded positions are zero.
    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let (sh, sw) = self.p.stride;
        let (ph, pw) = self.p.padding;
        let (rows_v, cols_v) = self.ranges();
        cols.fill(0.0);
        let p_len = self.out_len();
        for ci in 0..self.c {
            let xc = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for (ki, &(oh_lo, oh_hi)) in rows_v.iter().enumerate() {
                for (kj, &(ow_lo, ow_hi)) in cols_v.iter().enumerate() {
                    let r = (ci * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[r * p_len..(r + 1) * p_len];
                    for oh in oh_lo..oh_hi {
                        let ih = oh * sh + ki - ph;
                        let src = &xc[ih * self.w..(ih + 1) * self.w];
                        let drow = &mut dst[oh * self.wo..(oh + 1) * self.wo];
                        for ow in ow_lo..ow_hi {
                            drow[ow] = src[ow * sw + kj - pw];
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Geometry::im2col`]: scatters a patch matrix back onto a
    /// zeroed `c×h×w` image, summing overlaps in a fixed order.
    fn col2im(&self, cols: &[f64], out: &mut [f64]) {
        let (sh, sw) = self.p.stride;
        let (ph, pw) = self.p.padding;
        let (rows_v, cols_v) = self.ranges();
        let p_len = self.out_len();
        for ci in 0..self.c {
            let oc = &mut out[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for (ki, &(oh_lo, oh_hi)) in rows_v.iter().enumerate() {
                for (kj, &(ow_lo, ow_hi)) in cols_v.iter().enumerate() {
                    let r = (ci * self.kh + ki) * self.kw + kj;
                    let src = &cols[r * p_len..(r + 1) * p_len];
                    for oh in oh_lo..oh_hi {
                        let ih = oh * sh + ki - ph;
                        let orow = &mut oc[ih * self.w..(ih + 1) * self.w];
                        let srow = &src[oh * self.wo..(oh + 1) * self.wo];
                        for ow in ow_lo..ow_hi {
                            orow[ow * sw + kj - pw] += srow[ow];
                        }
                    }
                }
            }
        }
    }
}

/// Row-major view of a matrix operand: `(data, row stride, column stride)`.
type MatRef<'a> = (&'a [f64], isize, isize);

/// `c = a·b + beta·c` for `a: m×k`, `b: k×n` and row-major `c: m×n`.
fn gemm(m: usize, k: usize, n: usize, a: MatRef, b: MatRef, beta: f64, c: &mut [f64]) {
    debug_assert!(c.len() >= m * n);
    debug_assert!(m == 0 || k == 0 || a.0.len() > (m - 1) * a.1 as usize + (k - 1) * a.2 as usize);
    debug_assert!(k == 0 || n == 0 || b.0.len() > (k - 1) * b.1 as usize + (n - 1) * b.2 as usize);
    // SAFETY: the operand slices cover every index reachable through the
    // given extents and strides (checked above in debug builds), and `c` does
    // not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn conv2d_kernel(x: &[f64], n: usize, k: &[f64], f: usize, g: Geometry) -> Vec<f64> {
    let (ck, pl) = (g.patch_len(), g.out_len());
    let in_len = g.c * g.h * g.w;
    let mut out = vec![0.0; n * f * pl];
    out.par_chunks_mut(f * pl).enumerate().for_each_init(
        || vec![0.0; ck * pl],
        |cols, (ni, o)| {
            g.im2col(&x[ni * in_len..(ni + 1) * in_len], cols);
            gemm(f, ck, pl, (k, ck as isize, 1), (cols, pl as isize, 1), 0.0, o);
        },
    );
    out
}

fn conv_transpose2d_kernel(y: &[f64], n: usize, k: &[f64], f: usize, g: Geometry) -> Vec<f64> {
    let (ck, pl) = (g.patch_len(), g.out_len());
    let out_len = g.c * g.h * g.w;
    let mut out = vec![0.0; n * out_len];
    out.par_chunks_mut(out_len).enumerate().for_each_init(
        || vec![0.0; ck * pl],
        |cols, (ni, o)| {
            let yn = &y[ni * f * pl..(ni + 1) * f * pl];
            gemm(ck, f, pl, (k, 1, ck as isize), (yn, pl as isize, 1), 0.0, cols);
            g.col2im(cols, o);
        },
    );
    out
}

fn kernel_grad_kernel(x: &[f64], n: usize, gy: &[f64], f: usize, g: Geometry) -> Vec<f64> {
    let (ck, pl) = (g.patch_len(), g.out_len());
    let in_len = g.c * g.h * g.w;
    let mut out = vec![0.0; f * ck];
    let mut cols = vec![0.0; ck * pl];
    // samples are accumulated sequentially so the summation order is fixed
    for ni in 0..n {
        g.im2col(&x[ni * in_len..(ni + 1) * in_len], &mut cols);
        let gn = &gy[ni * f * pl..(ni + 1) * f * pl];
        gemm(f, pl, ck, (gn, pl as isize, 1), (&cols, 1, pl as isize), 1.0, &mut out);
    }
    out
}

impl Tensor {
    /// Strided 2-D cross-correlation of `[N,C,H,W]` input with a `[F,C,kh,kw]` kernel.
    pub fn conv2d(&self, kernel: &Tensor, params: ConvParams) -> Result<Tensor> {
        check_stride(params)?;
        let xs = dims4(self, "conv2d input")?;
        let ks = dims4(kernel, "conv2d kernel")?;
        if xs[1] != ks[1] {
            return Err(AutodiffError::Dimension(format!(
                "conv2d input has {} channels but kernel expects {}",
                xs[1], ks[1]
            )));
        }
        let ho = conv_out(xs[2], params.padding.0, ks[2], params.stride.0)?;
        let wo = conv_out(xs[3], params.padding.1, ks[3], params.stride.1)?;
        let g = Geometry {
            c: xs[1],
            h: xs[2],
            w: xs[3],
            kh: ks[2],
            kw: ks[3],
            ho,
            wo,
            p: params,
        };
        let data = conv2d_kernel(self.data(), xs[0], kernel.data(), ks[0], g);
        Ok(Tensor::from_op(
            data,
            vec![xs[0], ks[0], ho, wo],
            Op::Conv2d(params),
            &[self, kernel],
        ))
    }

    /// Adjoint of [`Tensor::conv2d`] for the same kernel and parameters.
    /// Output extent is `(H-1)*s - 2p + kh`.
    pub fn conv_transpose2d(&self, kernel: &Tensor, params: ConvParams) -> Result<Tensor> {
        check_stride(params)?;
        let ys = dims4(self, "conv_transpose2d input")?;
        let ks = dims4(kernel, "conv_transpose2d kernel")?;
        let extent = |n: usize, s: usize, p: usize, k: usize| -> Result<usize> {
            let full = (n - 1) * s + k;
            if full <= 2 * p {
                return Err(AutodiffError::Dimension(format!(
                    "transposed convolution output extent {full} - 2*{p} is not positive"
                )));
            }
            Ok(full - 2 * p)
        };
        let ho = extent(ys[2], params.stride.0, params.padding.0, ks[2])?;
        let wo = extent(ys[3], params.stride.1, params.padding.1, ks[3])?;
        self.conv_transpose2d_sized(kernel, params, (ho, wo))
    }

    /// Transposed convolution with an explicit output extent. Any extent whose
    /// forward convolution yields this input's extent is accepted; this covers
    /// the floor in strided convolutions.
    pub fn conv_transpose2d_sized(
        &self,
        kernel: &Tensor,
        params: ConvParams,
        out_hw: (usize, usize),
    ) -> Result<Tensor> {
        check_stride(params)?;
        let ys = dims4(self, "conv_transpose2d input")?;
        let ks = dims4(kernel, "conv_transpose2d kernel")?;
        if ys[1] != ks[0] {
            return Err(AutodiffError::Dimension(format!(
                "conv_transpose2d input has {} channels but kernel expects {}",
                ys[1], ks[0]
            )));
        }
        if out_hw.0 == 0 || out_hw.1 == 0 {
            return Err(AutodiffError::Dimension("empty output extent".into()));
        }
        let fh = conv_out(out_hw.0, params.padding.0, ks[2], params.stride.0)?;
        let fw = conv_out(out_hw.1, params.padding.1, ks[3], params.stride.1)?;
        if (fh, fw) != (ys[2], ys[3]) {
            return Err(AutodiffError::Dimension(format!(
                "output extent {out_hw:?} is inconsistent with input extent {:?}",
                (ys[2], ys[3])
            )));
        }
        let g = Geometry {
            c: ks[1],
            h: out_hw.0,
            w: out_hw.1,
            kh: ks[2],
            kw: ks[3],
            ho: ys[2],
            wo: ys[3],
            p: params,
        };
        let data = conv_transpose2d_kernel(self.data(), ys[0], kernel.data(), ks[0], g);
        Ok(Tensor::from_op(
            data,
            vec![ys[0], ks[1], out_hw.0, out_hw.1],
            Op::ConvTranspose2d(params),
            &[self, kernel],
        ))
    }

    /// Gradient of `sum(conv2d(self, w) * out_grad)` with respect to `w`,
    /// for a kernel of spatial extent `kernel_hw`.
    pub fn conv2d_kernel_grad(
        &self,
        out_grad: &Tensor,
        kernel_hw: (usize, usize),
        params: ConvParams,
    ) -> Result<Tensor> {
        check_stride(params)?;
        let xs = dims4(self, "kernel_grad input")?;
        let gs = dims4(out_grad, "kernel_grad output gradient")?;
        if xs[0] != gs[0] {
            return Err(AutodiffError::Dimension(format!(
                "batch extents differ: {} vs {}",
                xs[0], gs[0]
            )));
        }
        let ho = conv_out(xs[2], params.padding.0, kernel_hw.0, params.stride.0)?;
        let wo = conv_out(xs[3], params.padding.1, kernel_hw.1, params.stride.1)?;
        if (ho, wo) != (gs[2], gs[3]) {
            return Err(AutodiffError::Dimension(format!(
                "output gradient extent {:?} does not match convolution output {:?}",
                (gs[2], gs[3]),
                (ho, wo)
            )));
        }
        let g = Geometry {
            c: xs[1],
            h: xs[2],
            w: xs[3],
            kh: kernel_hw.0,
            kw: kernel_hw.1,
            ho,
            wo,
            p: params,
        };
        let data = kernel_grad_kernel(self.data(), xs[0], out_grad.data(), gs[1], g);
        Ok(Tensor::from_op(
            data,
            vec![gs[1], xs[1], kernel_hw.0, kernel_hw.1],
            Op::ConvKernelGrad(params),
            &[self, out_grad],
        ))
    }
}
