//! Elementwise binary ops with size-1 broadcasting between equal-rank shapes.

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{shape_mismatch, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

/// Iteration plan over the broadcast output, with adjacent compatible axes merged so
/// the innermost loop runs over as long a contiguous span as possible.
#[derive(Debug)]
struct Plan {
    out_shape: Vec<usize>,
    dims: Vec<usize>,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
}

fn strides_for(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i] = if shape[i] == 1 && out[i] != 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

fn plan(a: &[usize], b: &[usize]) -> Result<Plan> {
    if a.len() != b.len() {
        return Err(shape_mismatch("elementwise", a, b));
    }
    let mut out = Vec::with_capacity(a.len());
    for (&x, &y) in a.iter().zip(b) {
        if x != y && x != 1 && y != 1 {
            return Err(shape_mismatch("elementwise", a, b));
        }
        out.push(x.max(y));
    }
    let sa = strides_for(a, &out);
    let sb = strides_for(b, &out);
    let (mut dims, mut a_strides, mut b_strides) = (vec![out[0]], vec![sa[0]], vec![sb[0]]);
    for i in 1..out.len() {
        let last = dims.len() - 1;
        let mergeable = a_strides[last] == sa[i] * out[i] && b_strides[last] == sb[i] * out[i];
        if mergeable {
            dims[last] *= out[i];
            a_strides[last] = sa[i];
            b_strides[last] = sb[i];
        } else {
            dims.push(out[i]);
            a_strides.push(sa[i]);
            b_strides.push(sb[i]);
        }
    }
    Ok(Plan {
        out_shape: out,
        dims,
        a_strides,
        b_strides,
    })
}

impl Plan {
    /// Calls `f(out_offset, a_offset, b_offset)` for each innermost run of length
    /// `inner()`, in row-major output order.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize)) {
        let r = self.dims.len();
        let inner = self.dims[r - 1];
        let outer: usize = self.dims[..r - 1].iter().product();
        let mut idx = vec![0usize; r.saturating_sub(1)];
        let (mut ao, mut bo) = (0, 0);
        for run in 0..outer {
            f(run * inner, ao, bo);
            for ax in (0..r - 1).rev() {
                idx[ax] += 1;
                ao += self.a_strides[ax];
                bo += self.b_strides[ax];
                if idx[ax] < self.dims[ax] {
                    break;
                }
                ao -= self.a_strides[ax] * self.dims[ax];
                bo -= self.b_strides[ax] * self.dims[ax];
                idx[ax] = 0;
            }
        }
    }

    fn inner(&self) -> (usize, usize, usize) {
        let r = self.dims.len();
        (self.dims[r - 1], self.a_strides[r - 1], self.b_strides[r - 1])
    }
}

pub fn binary_forward<T: Scalar>(kind: BinaryKind, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let f = |x: T, y: T| match kind {
        BinaryKind::Add => x + y,
        BinaryKind::Sub => x - y,
        BinaryKind::Mul => x * y,
    };
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor::from_parts(a.shape().to_vec(), data));
    }
    let p = plan(a.shape(), b.shape())?;
    let (len, sa, sb) = p.inner();
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); p.out_shape.iter().product()];
    p.for_each_run(|o, ao, bo| {
        let dst = &mut out[o..o + len];
        match (sa, sb) {
            (1, 0) => {
                let y = bd[bo];
                for (d, &x) in dst.iter_mut().zip(&ad[ao..ao + len]) {
                    *d = f(x, y);
                }
            }
            (0, 1) => {
                let x = ad[ao];
                for (d, &y) in dst.iter_mut().zip(&bd[bo..bo + len]) {
                    *d = f(x, y);
                }
            }
            _ => {
                for (j, d) in dst.iter_mut().enumerate() {
                    *d = f(ad[ao + j * sa], bd[bo + j * sb]);
                }
            }
        }
    });
    Ok(Tensor::from_parts(p.out_shape, out))
}

/// Gradients of `kind(a, b)` for upstream `g`, reduced back to each operand's shape.
pub fn binary_backward<T: Scalar>(
    kind: BinaryKind,
    a: &Tensor<T>,
    b: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    if a.shape() == b.shape() {
        return match kind {
            BinaryKind::Add => (g.clone(), g.clone()),
            BinaryKind::Sub => (g.clone(), g.map(|v| -v)),
            BinaryKind::Mul => {
                let ga = g.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
                let gb = g.data().iter().zip(a.data()).map(|(&x, &y)| x * y).collect();
                (
                    Tensor::from_parts(a.shape().to_vec(), ga),
                    Tensor::from_parts(b.shape().to_vec(), gb),
                )
            }
        };
    }
    let p = plan(a.shape(), b.shape()).expect("validated in forward");
    let (len, sa, sb) = p.inner();
    let (ad, bd, gd) = (a.data(), b.data(), g.data());
    let mut ga = vec![T::zero(); a.len()];
    let mut gb = vec![T::zero(); b.len()];
    let sign_b = if kind == BinaryKind::Sub { -T::one() } else { T::one() };
    p.for_each_run(|o, ao, bo| {
        for j in 0..len {
            let gv = gd[o + j];
            let (ia, ib) = (ao + j * sa, bo + j * sb);
            match kind {
                BinaryKind::Mul => {
                    ga[ia] += gv * bd[ib];
                    gb[ib] += gv * ad[ia];
                }
                _ => {
                    ga[ia] += gv;
                    gb[ib] += sign_b * gv;
                }
            }
        }
    });
    (
        Tensor::from_parts(a.shape().to_vec(), ga),
        Tensor::from_parts(b.shape().to_vec(), gb),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_broadcast_matches_explicit_loop() {
        let a = Tensor::<f64>::from_fn(vec![2, 3, 2, 2], |i| i as f64);
        let b = Tensor::<f64>::from_fn(vec![2, 3, 1, 1], |i| (i + 1) as f64);
        let y = binary_forward(BinaryKind::Mul, &a, &b).unwrap();
        for i in 0..24 {
            assert_eq!(y.data()[i], a.data()[i] * b.data()[i / 4]);
        }
        let y2 = binary_forward(BinaryKind::Sub, &b, &a).unwrap();
        assert_eq!(y2.data()[5], b.data()[1] - a.data()[5]);
    }

    #[test]
    fn head_broadcast_reduces_gradient() {
        let a = Tensor::<f64>::from_fn(vec![2, 3, 2, 2], |i| i as f64 * 0.5);
        let b = Tensor::<f64>::from_fn(vec![1, 3, 1, 1], |i| i as f64 + 2.0);
        let g = Tensor::<f64>::ones(vec![2, 3, 2, 2]);
        let (ga, gb) = binary_backward(BinaryKind::Mul, &a, &b, &g);
        assert_eq!(ga.data()[4], 3.0);
        // d/d b[c] sum(a * b) = sum of a over batch and pixels of channel c
        let want: f64 = (0..2).flat_map(|bi| (0..4).map(move |p| (bi * 12 + 4 + p) as f64 * 0.5)).sum();
        assert_eq!(gb.data()[1], want);
    }

    #[test]
    fn incompatible_shapes_fail() {
        let a = Tensor::<f32>::zeros(vec![2, 3]);
        let b = Tensor::<f32>::zeros(vec![2, 2]);
        assert!(binary_forward(BinaryKind::Add, &a, &b).is_err());
        assert!(binary_forward(BinaryKind::Add, &a, &Tensor::zeros(vec![3])).is_err());
    }
}
