//! Global and local (edge-clamped window) average pooling over the spatial axes.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// (B, C, H, W) -> (B, C, 1, 1) spatial mean.
pub fn global_avg_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4()?;
    let inv = T::one() / T::lit((h * w) as f64);
    let data = x
        .data()
        .chunks_exact(h * w)
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect();
    Ok(Tensor::from_parts(vec![b, c, 1, 1], data))
}

pub fn global_avg_backward<T: Scalar>(input_shape: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
    let hw = input_shape[2] * input_shape[3];
    let inv = T::one() / T::lit(hw as f64);
    let mut out = Vec::with_capacity(grad_out.len() * hw);
    for &g in grad_out.data() {
        out.extend(std::iter::repeat_n(g * inv, hw));
    }
    Tensor::from_parts(input_shape.to_vec(), out)
}

/// Start of the clamped window covering output position `i`.
///
/// Windows have length `k = min(window, n)` and are centred on `i` where possible;
/// near the borders they slide inward so they never leave the image.
fn window_start(i: usize, n: usize, k: usize) -> usize {
    i.saturating_sub((k - 1) / 2).min(n - k)
}

/// Mean over a clamped 1-D window along rows of length `n` with `stride` between samples.
fn mean_pass<T: Scalar>(src: &[T], dst: &mut [T], n: usize, stride: usize, count: usize, window: usize) {
    let k = window.min(n);
    let inv = T::one() / T::lit(k as f64);
    let mut prefix = vec![T::zero(); n + 1];
    for line in 0..count {
        let base = (line / stride) * n * stride + line % stride;
        for j in 0..n {
            prefix[j + 1] = prefix[j] + src[base + j * stride];
        }
        for i in 0..n {
            let s = window_start(i, n, k);
            dst[base + i * stride] = (prefix[s + k] - prefix[s]) * inv;
        }
    }
}

/// Transpose of [`mean_pass`].
fn mean_pass_adjoint<T: Scalar>(g: &[T], dst: &mut [T], n: usize, stride: usize, count: usize, window: usize) {
    let k = window.min(n);
    let inv = T::one() / T::lit(k as f64);
    let mut diff = vec![T::zero(); n + 1];
    for line in 0..count {
        let base = (line / stride) * n * stride + line % stride;
        diff.fill(T::zero());
        for i in 0..n {
            let s = window_start(i, n, k);
            let v = g[base + i * stride] * inv;
            diff[s] += v;
            diff[s + k] -= v;
        }
        let mut run = T::zero();
        for j in 0..n {
            run += diff[j];
            dst[base + j * stride] = run;
        }
    }
}

/// Local mean over a `window` x `window` neighbourhood, clamped to stay inside the image.
/// A window at least as large as the image reduces to the global mean.
pub fn local_avg_forward<T: Scalar>(x: &Tensor<T>, window: usize) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4()?;
    if window == 0 {
        return Err(Error::Config("local average window must be >= 1".into()));
    }
    let planes = b * c;
    let mut tmp = vec![T::zero(); x.len()];
    // rows: `planes * h` lines of length w, contiguous
    mean_pass(x.data(), &mut tmp, w, 1, planes * h, window);
    let mut out = vec![T::zero(); x.len()];
    // columns: per plane, w lines of length h with stride w
    for p in 0..planes {
        let off = p * h * w;
        mean_pass(&tmp[off..off + h * w], &mut out[off..off + h * w], h, w, w, window);
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

pub fn local_avg_backward<T: Scalar>(grad_out: &Tensor<T>, window: usize) -> Result<Tensor<T>> {
    let (b, c, h, w) = grad_out.dims4()?;
    let planes = b * c;
    let mut tmp = vec![T::zero(); grad_out.len()];
    for p in 0..planes {
        let off = p * h * w;
        mean_pass_adjoint(&grad_out.data()[off..off + h * w], &mut tmp[off..off + h * w], h, w, w, window);
    }
    let mut out = vec![T::zero(); grad_out.len()];
    mean_pass_adjoint(&tmp, &mut out, w, 1, planes * h, window);
    Ok(Tensor::from_parts(grad_out.shape().to_vec(), out))
}
