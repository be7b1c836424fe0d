//! 2-D cross-correlation over BCHW tensors.
//!
//! Dense and grouped convolutions go through im2col + GEMM; depth-wise convolutions
//! (one input channel per group) use direct loops.

use rayon::prelude::*;

use super::{axpy, gemm};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub const fn new(stride: usize, padding: usize, groups: usize) -> Self {
        Self {
            stride,
            padding,
            groups,
        }
    }
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self::new(1, 0, 1)
    }
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
    groups: usize,
}

impl Geometry {
    fn new(x: &[usize], weight: &[usize], spec: ConvSpec) -> Result<Self> {
        let &[batch, cin, h, w] = x else {
            return Err(Error::dim("conv2d", "input rank", 4, x.len()));
        };
        let &[cout, cin_g, kh, kw] = weight else {
            return Err(Error::dim("conv2d", "weight rank", 4, weight.len()));
        };
        if spec.stride == 0 {
            return Err(Error::Config("conv2d stride must be >= 1".into()));
        }
        if spec.groups == 0 || cin % spec.groups != 0 {
            return Err(Error::dim(
                "conv2d",
                "input channels",
                format!("multiple of groups={}", spec.groups),
                cin,
            ));
        }
        if cout % spec.groups != 0 {
            return Err(Error::dim(
                "conv2d",
                "weight out channels",
                format!("multiple of groups={}", spec.groups),
                cout,
            ));
        }
        if cin_g != cin / spec.groups {
            return Err(Error::dim(
                "conv2d",
                "weight in channels",
                cin / spec.groups,
                cin_g,
            ));
        }
        if kh != kw {
            return Err(Error::dim("conv2d", "kernel H,W", "square kernel", format!("{kh}x{kw}")));
        }
        let (ph, pw) = (h + 2 * spec.padding, w + 2 * spec.padding);
        if ph < kh || pw < kw {
            return Err(Error::dim(
                "conv2d",
                "H,W",
                format!(">= kernel {kh} after padding"),
                format!("{ph}x{pw}"),
            ));
        }
        Ok(Self {
            batch,
            cin,
            h,
            w,
            cout,
            k: kh,
            oh: (ph - kh) / spec.stride + 1,
            ow: (pw - kw) / spec.stride + 1,
            stride: spec.stride,
            pad: spec.padding,
            groups: spec.groups,
        })
    }

    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }

    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }

    fn depthwise(&self) -> bool {
        self.cin_g() == 1 && self.groups > 1
    }

    fn pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Valid output-column range `[lo, hi)` for kernel column `kx`.
    fn col_range(&self, kx: usize) -> (usize, usize) {
        valid_range(self.ow, self.w, self.stride, self.pad, kx)
    }

    fn row_range(&self, ky: usize) -> (usize, usize) {
        valid_range(self.oh, self.h, self.stride, self.pad, ky)
    }

    fn out_shape(&self) -> Vec<usize> {
        vec![self.batch, self.cout, self.oh, self.ow]
    }
}

/// Output positions `o` in `[lo, hi)` satisfy `0 <= o * stride + tap - pad < extent`.
fn valid_range(out: usize, extent: usize, stride: usize, pad: usize, tap: usize) -> (usize, usize) {
    let lo = if pad > tap { (pad - tap).div_ceil(stride) } else { 0 };
    let hi = if extent + pad > tap {
        ((extent + pad - tap - 1) / stride + 1).min(out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Output spatial size of a convolution, `floor((n + 2p - k) / s) + 1`.
pub fn output_size(n: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (n + 2 * padding - kernel) / stride + 1
}

pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: ConvSpec,
) -> Result<Tensor<T>> {
    let g = Geometry::new(x.shape(), weight.shape(), spec)?;
    if let Some(b) = bias {
        if b.shape() != [g.cout] {
            return Err(Error::dim("conv2d", "bias", format!("[{}]", g.cout), format!("{:?}", b.shape())));
        }
    }
    let (xd, wd) = (x.data(), weight.data());
    let in_plane = g.h * g.w;
    let p = g.oh * g.ow;
    let mut out = vec![T::zero(); g.batch * g.cout * p];

    if g.depthwise() {
        let mult = g.cout_g();
        out.par_chunks_mut(p).enumerate().for_each(|(idx, plane)| {
            let (b, o) = (idx / g.cout, idx % g.cout);
            let c = o / mult;
            let src = &xd[(b * g.cin + c) * in_plane..][..in_plane];
            let kern = &wd[o * g.k * g.k..][..g.k * g.k];
            dw_forward_plane(&g, src, kern, plane);
        });
    } else {
        let kk = g.cin_g() * g.k * g.k;
        out.par_chunks_mut(g.cout * p).enumerate().for_each(|(b, out_b)| {
            let xb = &xd[b * g.cin * in_plane..][..g.cin * in_plane];
            let mut cols = if g.pointwise() { Vec::new() } else { vec![T::zero(); kk * p] };
            for grp in 0..g.groups {
                let xg = &xb[grp * g.cin_g() * in_plane..][..g.cin_g() * in_plane];
                let cols_ref: &[T] = if g.pointwise() {
                    xg
                } else {
                    im2col(&g, xg, &mut cols);
                    &cols
                };
                let wg = &wd[grp * g.cout_g() * kk..][..g.cout_g() * kk];
                let og = &mut out_b[grp * g.cout_g() * p..][..g.cout_g() * p];
                gemm(g.cout_g(), kk, p, T::one(), wg, false, cols_ref, false, T::zero(), og);
            }
        });
    }

    if let Some(b) = bias {
        let bd = b.data();
        for (idx, plane) in out.chunks_exact_mut(p).enumerate() {
            let bv = bd[idx % g.cout];
            plane.iter_mut().for_each(|v| *v += bv);
        }
    }
    Ok(Tensor::from_parts(g.out_shape(), out))
}

pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    with_bias: bool,
    spec: ConvSpec,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let g = Geometry::new(x.shape(), weight.shape(), spec)?;
    if grad_out.shape() != g.out_shape() {
        return Err(Error::dim(
            "conv2d_backward",
            "grad",
            format!("{:?}", g.out_shape()),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let (xd, wd, gd) = (x.data(), weight.data(), grad_out.data());
    let in_plane = g.h * g.w;
    let p = g.oh * g.ow;
    let mut gx = vec![T::zero(); x.len()];
    let mut gw = vec![T::zero(); weight.len()];

    if g.depthwise() {
        let mult = g.cout_g();
        let kk = g.k * g.k;
        // input gradient: one task per (batch, input channel) plane
        gx.par_chunks_mut(in_plane).enumerate().for_each(|(idx, gx_plane)| {
            let (b, c) = (idx / g.cin, idx % g.cin);
            for o in c * mult..(c + 1) * mult {
                let go = &gd[(b * g.cout + o) * p..][..p];
                dw_backward_input_plane(&g, go, &wd[o * kk..][..kk], gx_plane);
            }
        });
        // weight gradient: one task per output channel
        gw.par_chunks_mut(kk).enumerate().for_each(|(o, gw_o)| {
            let c = o / mult;
            for b in 0..g.batch {
                let go = &gd[(b * g.cout + o) * p..][..p];
                let src = &xd[(b * g.cin + c) * in_plane..][..in_plane];
                dw_backward_weight_plane(&g, go, src, gw_o);
            }
        });
    } else {
        let kk = g.cin_g() * g.k * g.k;
        let mut cols = if g.pointwise() { Vec::new() } else { vec![T::zero(); kk * p] };
        let mut dcols = if g.pointwise() { Vec::new() } else { vec![T::zero(); kk * p] };
        for b in 0..g.batch {
            let xb = &xd[b * g.cin * in_plane..][..g.cin * in_plane];
            let gb = &gd[b * g.cout * p..][..g.cout * p];
            let gxb = &mut gx[b * g.cin * in_plane..][..g.cin * in_plane];
            for grp in 0..g.groups {
                let xg = &xb[grp * g.cin_g() * in_plane..][..g.cin_g() * in_plane];
                let go = &gb[grp * g.cout_g() * p..][..g.cout_g() * p];
                let wg = &wd[grp * g.cout_g() * kk..][..g.cout_g() * kk];
                let gwg = &mut gw[grp * g.cout_g() * kk..][..g.cout_g() * kk];
                let gxg = &mut gxb[grp * g.cin_g() * in_plane..][..g.cin_g() * in_plane];
                if g.pointwise() {
                    gemm(g.cout_g(), p, kk, T::one(), go, false, xg, true, T::one(), gwg);
                    gemm(kk, g.cout_g(), p, T::one(), wg, true, go, false, T::zero(), gxg);
                } else {
                    im2col(&g, xg, &mut cols);
                    gemm(g.cout_g(), p, kk, T::one(), go, false, &cols, true, T::one(), gwg);
                    gemm(kk, g.cout_g(), p, T::one(), wg, true, go, false, T::zero(), &mut dcols);
                    col2im(&g, &dcols, gxg);
                }
            }
        }
    }

    let gb = with_bias.then(|| {
        let mut acc = vec![T::zero(); g.cout];
        for (idx, plane) in gd.chunks_exact(p).enumerate() {
            acc[idx % g.cout] += plane.iter().copied().sum::<T>();
        }
        Tensor::from_parts(vec![g.cout], acc)
    });

    Ok(ConvGrads {
        input: Tensor::from_parts(x.shape().to_vec(), gx),
        weight: Tensor::from_parts(weight.shape().to_vec(), gw),
        bias: gb,
    })
}

/// Unfolds one group's input `(cin_g, h, w)` into columns `(cin_g * k * k, oh * ow)`.
fn im2col<T: Scalar>(g: &Geometry, x: &[T], cols: &mut [T]) {
    let (k, p) = (g.k, g.oh * g.ow);
    for c in 0..g.cin_g() {
        let plane = &x[c * g.h * g.w..][..g.h * g.w];
        for ky in 0..k {
            let (ylo, yhi) = g.row_range(ky);
            for kx in 0..k {
                let (xlo, xhi) = g.col_range(kx);
                let row = &mut cols[((c * k + ky) * k + kx) * p..][..p];
                row.fill(T::zero());
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ky - g.pad;
                    let src = &plane[iy * g.w..][..g.w];
                    let dst = &mut row[oy * g.ow..][..g.ow];
                    if g.stride == 1 {
                        let ix0 = xlo + kx - g.pad;
                        dst[xlo..xhi].copy_from_slice(&src[ix0..ix0 + (xhi - xlo)]);
                    } else {
                        for ox in xlo..xhi {
                            dst[ox] = src[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into the (zeroed) input gradient.
fn col2im<T: Scalar>(g: &Geometry, cols: &[T], x: &mut [T]) {
    let (k, p) = (g.k, g.oh * g.ow);
    for c in 0..g.cin_g() {
        let plane = &mut x[c * g.h * g.w..][..g.h * g.w];
        for ky in 0..k {
            let (ylo, yhi) = g.row_range(ky);
            for kx in 0..k {
                let (xlo, xhi) = g.col_range(kx);
                let row = &cols[((c * k + ky) * k + kx) * p..][..p];
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ky - g.pad;
                    let dst = &mut plane[iy * g.w..][..g.w];
                    let src = &row[oy * g.ow..][..g.ow];
                    if g.stride == 1 {
                        let ix0 = xlo + kx - g.pad;
                        for (d, &s) in dst[ix0..ix0 + (xhi - xlo)].iter_mut().zip(&src[xlo..xhi]) {
                            *d += s;
                        }
                    } else {
                        for ox in xlo..xhi {
                            dst[ox * g.stride + kx - g.pad] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

fn dw_forward_plane<T: Scalar>(g: &Geometry, src: &[T], kern: &[T], out: &mut [T]) {
    for ky in 0..g.k {
        let (ylo, yhi) = g.row_range(ky);
        for kx in 0..g.k {
            let wv = kern[ky * g.k + kx];
            let (xlo, xhi) = g.col_range(kx);
            for oy in ylo..yhi {
                let iy = oy * g.stride + ky - g.pad;
                let srow = &src[iy * g.w..][..g.w];
                let orow = &mut out[oy * g.ow..][..g.ow];
                if g.stride == 1 {
                    let ix0 = xlo + kx - g.pad;
                    axpy(wv, &srow[ix0..ix0 + (xhi - xlo)], &mut orow[xlo..xhi]);
                } else {
                    for ox in xlo..xhi {
                        orow[ox] += wv * srow[ox * g.stride + kx - g.pad];
                    }
                }
            }
        }
    }
}

fn dw_backward_input_plane<T: Scalar>(g: &Geometry, go: &[T], kern: &[T], gx: &mut [T]) {
    for ky in 0..g.k {
        let (ylo, yhi) = g.row_range(ky);
        for kx in 0..g.k {
            let wv = kern[ky * g.k + kx];
            let (xlo, xhi) = g.col_range(kx);
            for oy in ylo..yhi {
                let iy = oy * g.stride + ky - g.pad;
                let grow = &go[oy * g.ow..][..g.ow];
                let xrow = &mut gx[iy * g.w..][..g.w];
                if g.stride == 1 {
                    let ix0 = xlo + kx - g.pad;
                    axpy(wv, &grow[xlo..xhi], &mut xrow[ix0..ix0 + (xhi - xlo)]);
                } else {
                    for ox in xlo..xhi {
                        xrow[ox * g.stride + kx - g.pad] += wv * grow[ox];
                    }
                }
            }
        }
    }
}

fn dw_backward_weight_plane<T: Scalar>(g: &Geometry, go: &[T], src: &[T], gw: &mut [T]) {
    for ky in 0..g.k {
        let (ylo, yhi) = g.row_range(ky);
        for kx in 0..g.k {
            let (xlo, xhi) = g.col_range(kx);
            let mut acc = T::zero();
            for oy in ylo..yhi {
                let iy = oy * g.stride + ky - g.pad;
                let grow = &go[oy * g.ow..][..g.ow];
                let srow = &src[iy * g.w..][..g.w];
                if g.stride == 1 {
                    let ix0 = xlo + kx - g.pad;
                    acc += grow[xlo..xhi]
                        .iter()
                        .zip(&srow[ix0..ix0 + (xhi - xlo)])
                        .map(|(&a, &b)| a * b)
                        .sum::<T>();
                } else {
                    for ox in xlo..xhi {
                        acc += grow[ox] * srow[ox * g.stride + kx - g.pad];
                    }
                }
            }
            gw[ky * g.k + kx] += acc;
        }
    }
}
