//! Sub-pixel rearrangements between channels and space.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// (B, C*r*r, H, W) -> (B, C, H*r, W*r), with `out[b, c, y*r+i, x*r+j] = in[b, (c*r+i)*r+j, y, x]`.
pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (b, cin, h, w) = x.dims4()?;
    if r == 0 || cin % (r * r) != 0 {
        return Err(Error::dim("pixel_shuffle", "channels", format!("multiple of {}", r * r), cin));
    }
    let c = cin / (r * r);
    let (oh, ow) = (h * r, w * r);
    let xd = x.data();
    let mut out = vec![T::zero(); x.len()];
    for bi in 0..b {
        for ci in 0..c {
            let dst = &mut out[(bi * c + ci) * oh * ow..][..oh * ow];
            for i in 0..r {
                for j in 0..r {
                    let src = &xd[(bi * cin + (ci * r + i) * r + j) * h * w..][..h * w];
                    for y in 0..h {
                        let drow = &mut dst[(y * r + i) * ow..][..ow];
                        for (xx, &v) in src[y * w..(y + 1) * w].iter().enumerate() {
                            drow[xx * r + j] = v;
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![b, c, oh, ow], out))
}

/// Inverse of [`pixel_shuffle`]: (B, C, H*r, W*r) -> (B, C*r*r, H, W).
pub fn pixel_unshuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (b, c, oh, ow) = x.dims4()?;
    if r == 0 || oh % r != 0 || ow % r != 0 {
        return Err(Error::dim("pixel_unshuffle", "H,W", format!("multiples of {r}"), format!("{oh}x{ow}")));
    }
    let (h, w) = (oh / r, ow / r);
    let cout = c * r * r;
    let xd = x.data();
    let mut out = vec![T::zero(); x.len()];
    for bi in 0..b {
        for ci in 0..c {
            let src = &xd[(bi * c + ci) * oh * ow..][..oh * ow];
            for i in 0..r {
                for j in 0..r {
                    let dst = &mut out[(bi * cout + (ci * r + i) * r + j) * h * w..][..h * w];
                    for y in 0..h {
                        let srow = &src[(y * r + i) * ow..][..ow];
                        for xx in 0..w {
                            dst[y * w + xx] = srow[xx * r + j];
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![b, cout, h, w], out))
}

/// Channels `[start, start + len)` of a BCHW tensor.
pub fn slice_channels<T: Scalar>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4()?;
    if len == 0 || start + len > c {
        return Err(Error::dim("slice_channels", "channels", format!(">= {}", start + len), c));
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(b * len * hw);
    for bi in 0..b {
        out.extend_from_slice(&x.data()[(bi * c + start) * hw..][..len * hw]);
    }
    Ok(Tensor::from_parts(vec![b, len, h, w], out))
}

/// Adjoint of [`slice_channels`]: places `g` at channels `[start, start+len)` of a zero tensor.
pub fn unslice_channels<T: Scalar>(g: &Tensor<T>, start: usize, channels: usize) -> Result<Tensor<T>> {
    let (b, len, h, w) = g.dims4()?;
    let hw = h * w;
    let mut out = vec![T::zero(); b * channels * hw];
    for bi in 0..b {
        out[(bi * channels + start) * hw..][..len * hw].copy_from_slice(&g.data()[bi * len * hw..][..len * hw]);
    }
    Ok(Tensor::from_parts(vec![b, channels, h, w], out))
}

/// General axis permutation: output axis `i` is input axis `perm[i]`.
pub fn permute<T: Scalar>(x: &Tensor<T>, perm: &[usize]) -> Result<Tensor<T>> {
    let rank = x.shape().len();
    let mut seen = vec![false; rank];
    if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::dim("permute", "perm", format!("permutation of 0..{rank}"), format!("{perm:?}")));
    }
    let in_shape = x.shape();
    let mut in_strides = vec![1; rank];
    for i in (0..rank - 1).rev() {
        in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut idx = vec![0usize; rank];
    let mut out = Vec::with_capacity(x.len());
    let xd = x.data();
    let mut offset = 0usize;
    for _ in 0..x.len() {
        out.push(xd[offset]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            offset += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}
