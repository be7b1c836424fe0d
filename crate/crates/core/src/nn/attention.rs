//! Multi-head attention over spatial positions, used at the coarsest scale.

use rand_chacha::ChaCha8Rng;

use super::{Conv2d, Forward, ParamStore};
use crate::autodiff::{softplus_inverse, UnaryKind, Var};
use crate::error::{Error, Result};
use crate::kernels::conv::ConvSpec;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Output and attention weights of one [`spatial_attention`] call.
pub struct AttentionOutput {
    /// `(B, C, H, W)`
    pub output: Var,
    /// `(B, heads, N, N)`, each row sums to one.
    pub weights: Var,
}

/// Per-head scaled dot-product attention across the `N = H*W` positions.
///
/// `q`, `k`, `v` are `(B, C, H, W)`; channels are split into `heads` groups of `C/heads`.
/// `beta` has shape `[heads]` and must be positive; logits are `Q Kᵀ / beta`.
pub fn spatial_attention<T: Scalar>(
    f: &mut Forward<'_, T>,
    q: Var,
    k: Var,
    v: Var,
    beta: Var,
    heads: usize,
) -> Result<AttentionOutput> {
    let (b, c, h, w) = f.tape.value(q).dims4()?;
    for (axis, other) in [("key shape", k), ("value shape", v)] {
        if f.tape.shape(other) != f.tape.shape(q) {
            return Err(Error::dim(
                "spatial_attention",
                axis,
                format!("{:?}", f.tape.shape(q)),
                format!("{:?}", f.tape.shape(other)),
            ));
        }
    }
    if heads == 0 || c % heads != 0 {
        return Err(Error::dim("spatial_attention", "channels", format!("multiple of {heads} heads"), c));
    }
    if f.tape.shape(beta) != [heads] {
        return Err(Error::dim("spatial_attention", "beta", heads, format!("{:?}", f.tape.shape(beta))));
    }
    let (d, n) = (c / heads, h * w);

    // (B, heads, d, N) -> (B, heads, N, d)
    let to_rows = |f: &mut Forward<'_, T>, x: Var| -> Result<Var> {
        let x = f.tape.reshape(x, [b, heads, d, n])?;
        f.tape.permute(x, &[0, 1, 3, 2])
    };
    let qh = to_rows(f, q)?;
    let kh = f.tape.reshape(k, [b, heads, d, n])?;
    let vh = to_rows(f, v)?;

    let logits = f.tape.matmul_batched(qh, kh)?;
    let inv_beta = f.tape.unary(UnaryKind::Recip, beta);
    let inv_beta = f.tape.reshape(inv_beta, [1, heads, 1, 1])?;
    let logits = f.tape.mul(logits, inv_beta)?;
    let weights = f.tape.softmax_lastdim(logits)?;

    let out = f.tape.matmul_batched(weights, vh)?;
    let out = f.tape.permute(out, &[0, 1, 3, 2])?;
    let output = f.tape.reshape(out, [b, c, h, w])?;
    Ok(AttentionOutput { output, weights })
}

/// Residual multi-head attention block.
///
/// Q, K and V each come from a 1x1 then a depth-wise 3x3 convolution. The per-head
/// temperature is learned through a softplus so it stays positive; it starts at `sqrt(C/heads)`.
#[derive(Clone, Debug)]
pub struct Mhamb {
    pub channels: usize,
    pub heads: usize,
    pub q: [Conv2d; 2],
    pub k: [Conv2d; 2],
    pub v: [Conv2d; 2],
    /// Pre-softplus temperature, one per head.
    pub beta_raw: super::ParamId,
    pub out_proj: Conv2d,
}

impl Mhamb {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if heads == 0 || !channels.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "attention heads ({heads}) must divide the channel count ({channels})"
            )));
        }
        let c = channels;
        let mut proj = |store: &mut ParamStore<T>, tag: &str| {
            [
                Conv2d::new(store, &format!("{name}.{tag}.pw"), c, c, 1, ConvSpec::default(), rng),
                Conv2d::new(store, &format!("{name}.{tag}.dw"), c, c, 3, ConvSpec::new(1, 1, c), rng),
            ]
        };
        let q = proj(store, "q");
        let k = proj(store, "k");
        let v = proj(store, "v");
        let init = softplus_inverse(((c / heads) as f64).sqrt());
        let beta_raw = store.add(format!("{name}.beta"), Tensor::full(vec![heads], T::lit(init)));
        let out_proj = Conv2d::new(store, &format!("{name}.out"), c, c, 1, ConvSpec::default(), rng);
        Ok(Self {
            channels,
            heads,
            q,
            k,
            v,
            beta_raw,
            out_proj,
        })
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let c = f.tape.value(x).dims4()?.1;
        if c != self.channels {
            return Err(Error::dim("mhamb", "channels", self.channels, c));
        }
        let project = |f: &mut Forward<'_, T>, convs: &[Conv2d; 2]| -> Result<Var> {
            let y = convs[0].forward(f, x)?;
            convs[1].forward(f, y)
        };
        let q = project(f, &self.q)?;
        let k = project(f, &self.k)?;
        let v = project(f, &self.v)?;
        let raw = f.param(self.beta_raw);
        let beta = f.tape.unary(UnaryKind::Softplus, raw);
        let att = spatial_attention(f, q, k, v, beta, self.heads)?;
        let y = self.out_proj.forward(f, att.output)?;
        f.tape.add(x, y)
    }

    /// Attention cost `4 N C² + 2 N² C` for `N = h*w`, plus the three depth-wise convolutions.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let depthwise: u64 = [&self.q[1], &self.k[1], &self.v[1]].iter().map(|c| c.macs(h, w)).sum();
        attention_macs(h * w, self.channels) + depthwise
    }
}

/// Cost of attention over `n` tokens of width `c`: three input projections, the
/// output projection, and the two `n x n` products.
pub fn attention_macs(n: usize, c: usize) -> u64 {
    let (n, c) = (n as u64, c as u64);
    4 * n * c * c + 2 * n * n * c
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn constant_values_pass_through() {
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let mut f = Forward::new(&mut tape, &bound);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = f.tape.constant(super::super::uniform_tensor(vec![1, 4, 2, 3], 1.0, &mut rng));
        let k = f.tape.constant(super::super::uniform_tensor(vec![1, 4, 2, 3], 1.0, &mut rng));
        let v = f.tape.constant(Tensor::full(vec![1, 4, 2, 3], 2.5));
        let beta = f.tape.constant(Tensor::full(vec![2], 1.3));
        let att = spatial_attention(&mut f, q, k, v, beta, 2).unwrap();
        for &y in f.tape.value(att.output).data() {
            assert!((y - 2.5).abs() < 1e-12);
        }
        let wts = f.tape.value(att.weights);
        assert_eq!(wts.shape(), &[1, 2, 6, 6]);
        for row in wts.data().chunks(6) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(Mhamb::new(&mut store, "m", 6, 4, &mut rng), Err(Error::Config(_))));
    }
}
