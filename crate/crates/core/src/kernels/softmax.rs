use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Softmax over the last axis, max-shifted for stability. Non-finite rows come out as NaN.
pub fn softmax_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let n = *x.shape().last().expect("rank >= 1");
    let mut out = x.to_vec();
    for row in out.chunks_exact_mut(n) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        let inv = T::one() / total;
        row.iter_mut().for_each(|v| *v *= inv);
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// `dx = y * (g - sum(g * y))` per row, given the forward output `y`.
pub fn softmax_backward<T: Scalar>(y: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let n = *y.shape().last().expect("rank >= 1");
    let mut out = vec![T::zero(); y.len()];
    for ((o, yr), gr) in out
        .chunks_exact_mut(n)
        .zip(y.data().chunks_exact(n))
        .zip(grad_out.data().chunks_exact(n))
    {
        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for ((o, &yv), &gv) in o.iter_mut().zip(yr).zip(gr) {
            *o = yv * (gv - dot);
        }
    }
    Tensor::from_parts(y.shape().to_vec(), out)
}
