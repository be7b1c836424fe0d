//! Channel-wise layer normalization: statistics over C at every (batch, pixel).

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-(batch, pixel) statistics kept for the backward pass.
#[derive(Clone, Debug)]
pub struct NormStats<T> {
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

pub fn layer_norm_forward<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    offset: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, NormStats<T>)> {
    let (b, c, h, w) = x.dims4()?;
    if eps.is_nan() || eps <= T::zero() {
        return Err(Error::Config("layer norm eps must be > 0".into()));
    }
    for (name, t) in [("gain", gain), ("offset", offset)] {
        if t.shape() != [c] {
            return Err(Error::dim("layer_norm_channel", name, format!("[{c}]"), format!("{:?}", t.shape())));
        }
    }
    let hw = h * w;
    let inv_c = T::one() / T::lit(c as f64);
    let xd = x.data();
    let mut mean = vec![T::zero(); b * hw];
    let mut rstd = vec![T::zero(); b * hw];
    let mut out = vec![T::zero(); x.len()];
    for bi in 0..b {
        let xb = &xd[bi * c * hw..][..c * hw];
        let mu = &mut mean[bi * hw..][..hw];
        for plane in xb.chunks_exact(hw) {
            for (m, &v) in mu.iter_mut().zip(plane) {
                *m += v;
            }
        }
        mu.iter_mut().for_each(|m| *m *= inv_c);
        let rs = &mut rstd[bi * hw..][..hw];
        for plane in xb.chunks_exact(hw) {
            for ((r, &v), &m) in rs.iter_mut().zip(plane).zip(mu.iter()) {
                let d = v - m;
                *r += d * d;
            }
        }
        rs.iter_mut().for_each(|r| *r = T::one() / (*r * inv_c + eps).sqrt());
        let ob = &mut out[bi * c * hw..][..c * hw];
        for (ci, (oplane, xplane)) in ob.chunks_exact_mut(hw).zip(xb.chunks_exact(hw)).enumerate() {
            let (gv, ov) = (gain.data()[ci], offset.data()[ci]);
            for (((o, &v), &m), &r) in oplane.iter_mut().zip(xplane).zip(mu.iter()).zip(rs.iter()) {
                *o = (v - m) * r * gv + ov;
            }
        }
    }
    Ok((Tensor::from_parts(x.shape().to_vec(), out), NormStats { mean, rstd }))
}

/// Returns (grad_x, grad_gain, grad_offset).
pub fn layer_norm_backward<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    stats: &NormStats<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (b, c, h, w) = x.dims4()?;
    let hw = h * w;
    let inv_c = T::one() / T::lit(c as f64);
    let (xd, gd) = (x.data(), grad_out.data());
    let mut gx = vec![T::zero(); x.len()];
    let mut ggain = vec![T::zero(); c];
    let mut goff = vec![T::zero(); c];
    let mut sum_g = vec![T::zero(); hw];
    let mut sum_gx = vec![T::zero(); hw];
    for bi in 0..b {
        let mu = &stats.mean[bi * hw..][..hw];
        let rs = &stats.rstd[bi * hw..][..hw];
        sum_g.fill(T::zero());
        sum_gx.fill(T::zero());
        for ci in 0..c {
            let base = (bi * c + ci) * hw;
            let (xp, gp) = (&xd[base..][..hw], &gd[base..][..hw]);
            let gv = gain.data()[ci];
            let (mut acc_gain, mut acc_off) = (T::zero(), T::zero());
            for i in 0..hw {
                let xhat = (xp[i] - mu[i]) * rs[i];
                let dxhat = gp[i] * gv;
                acc_gain += gp[i] * xhat;
                acc_off += gp[i];
                sum_g[i] += dxhat;
                sum_gx[i] += dxhat * xhat;
            }
            ggain[ci] += acc_gain;
            goff[ci] += acc_off;
        }
        for ci in 0..c {
            let base = (bi * c + ci) * hw;
            let gv = gain.data()[ci];
            let (xp, gp) = (&xd[base..][..hw], &gd[base..][..hw]);
            let gxp = &mut gx[base..][..hw];
            for i in 0..hw {
                let xhat = (xp[i] - mu[i]) * rs[i];
                let dxhat = gp[i] * gv;
                gxp[i] = rs[i] * (dxhat - sum_g[i] * inv_c - xhat * sum_gx[i] * inv_c);
            }
        }
    }
    Ok((
        Tensor::from_parts(x.shape().to_vec(), gx),
        Tensor::from_parts(vec![c], ggain),
        Tensor::from_parts(vec![c], goff),
    ))
}
