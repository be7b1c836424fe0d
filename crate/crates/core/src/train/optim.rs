use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Cosine annealing from `lr0` at step 0 down to `lr1` at `step == total`.
pub fn cosine_lr(step: usize, total: usize, lr0: f64, lr1: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::Config("cosine schedule needs total >= 1".into()));
    }
    if step > total {
        return Err(Error::Config(format!("step {step} is past the schedule end {total}")));
    }
    let frac = step as f64 / total as f64;
    Ok(lr1 + 0.5 * (lr0 - lr1) * (1.0 + (std::f64::consts::PI * frac).cos()))
}

/// First and second moment estimates, one tensor per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn zeros_like(params: &ParamStore<T>) -> Self {
        let zeros: Vec<Tensor<T>> = params.values().iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update. `t` is the 1-based update count.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    state: &mut AdamState<T>,
    grads: &[Tensor<T>],
    lr: f64,
    t: usize,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::Usage(format!(
            "adam: {} parameters but {} gradients and {}/{} moments",
            params.len(),
            grads.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    if t == 0 {
        return Err(Error::Usage("adam: update count starts at 1".into()));
    }
    let (b1, b2) = (T::lit(ADAM_BETA1), T::lit(ADAM_BETA2));
    let c1 = T::lit(1.0 - ADAM_BETA1.powi(t as i32));
    let c2 = T::lit(1.0 - ADAM_BETA2.powi(t as i32));
    let (lr, eps, one) = (T::lit(lr), T::lit(ADAM_EPS), T::one());
    let ids: Vec<_> = params.ids().collect();
    for (i, id) in ids.into_iter().enumerate() {
        let p = params.get(id);
        let g = &grads[i];
        if g.shape() != p.shape() {
            return Err(Error::dim(
                "adam",
                params.name(id).to_string(),
                format!("{:?}", p.shape()),
                format!("{:?}", g.shape()),
            ));
        }
        let n = p.len();
        let (mut pv, mut mv, mut vv) = (p.to_vec(), state.m[i].to_vec(), state.v[i].to_vec());
        let gd = g.data();
        for j in 0..n {
            mv[j] = b1 * mv[j] + (one - b1) * gd[j];
            vv[j] = b2 * vv[j] + (one - b2) * gd[j] * gd[j];
            let mhat = mv[j] / c1;
            let vhat = vv[j] / c2;
            pv[j] -= lr * mhat / (vhat.sqrt() + eps);
        }
        let shape = p.shape().to_vec();
        state.m[i] = Tensor::from_parts(shape.clone(), mv);
        state.v[i] = Tensor::from_parts(shape.clone(), vv);
        params.set(id, Tensor::from_parts(shape, pv))?;
    }
    Ok(())
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.l2_norm().powi(2)).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = T::lit(max_norm / norm);
        for g in grads.iter_mut() {
            *g = g.map(|v| v * s);
        }
    }
    norm
}
