use super::gemm;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{shape_mismatch, Tensor};

/// Leading (batch) dims and the matrix dims of a rank >= 2 tensor.
fn split(shape: &[usize]) -> Result<(&[usize], usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::dim("matmul_batched", "rank", ">= 2", shape.len()));
    }
    let r = shape.len();
    Ok((&shape[..r - 2], shape[r - 2], shape[r - 1]))
}

/// `[..., m, k] x [..., k, n] -> [..., m, n]` with identical leading dims.
pub fn matmul_forward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (lead_a, m, k) = split(a.shape())?;
    let (lead_b, k2, n) = split(b.shape())?;
    if lead_a != lead_b {
        return Err(shape_mismatch("matmul_batched", a.shape(), b.shape()));
    }
    if k != k2 {
        return Err(Error::dim("matmul_batched", "inner", k, k2));
    }
    let batches: usize = lead_a.iter().product();
    let mut out = vec![T::zero(); batches * m * n];
    for i in 0..batches {
        gemm(
            m,
            k,
            n,
            T::one(),
            &a.data()[i * m * k..][..m * k],
            false,
            &b.data()[i * k * n..][..k * n],
            false,
            T::zero(),
            &mut out[i * m * n..][..m * n],
        );
    }
    let mut shape = lead_a.to_vec();
    shape.extend([m, n]);
    Ok(Tensor::from_parts(shape, out))
}

/// Returns (grad_a, grad_b) = (g * b^T, a^T * g) per batch.
pub fn matmul_backward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, g: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let (lead, m, k) = split(a.shape()).expect("validated in forward");
    let n = *b.shape().last().expect("rank >= 2");
    let batches: usize = lead.iter().product();
    let mut ga = vec![T::zero(); a.len()];
    let mut gb = vec![T::zero(); b.len()];
    for i in 0..batches {
        let gi = &g.data()[i * m * n..][..m * n];
        gemm(m, n, k, T::one(), gi, false, &b.data()[i * k * n..][..k * n], true, T::zero(), &mut ga[i * m * k..][..m * k]);
        gemm(k, m, n, T::one(), &a.data()[i * m * k..][..m * k], true, gi, false, T::zero(), &mut gb[i * k * n..][..k * n]);
    }
    (
        Tensor::from_parts(a.shape().to_vec(), ga),
        Tensor::from_parts(b.shape().to_vec(), gb),
    )
}
