//! Central finite-difference oracle for checking [`Tape::backward`](crate::Tape::backward).
//!
//! The oracle only ever evaluates the forward pass, so it shares no code path with the
//! backward rules it checks.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Outcome of one gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (input index, flat element index, analytic, numeric) of the worst entry.
    pub worst: (usize, usize, f64, f64),
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares autodiff gradients of `build` with central differences of step `step`.
///
/// `build` receives a fresh tape and one leaf per entry of `inputs` and must return a
/// scalar loss. At most `max_entries` elements per input are perturbed (evenly spaced,
/// always including the first and last); `None` checks every element.
pub fn check_gradients<F>(
    inputs: &[Tensor<f64>],
    build: F,
    step: f64,
    max_entries: Option<usize>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &leaves)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = leaves
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get_or_zeros(v, t.shape()))
        .collect();
    drop(tape);

    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let leaves: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &leaves)?;
        tape.value(loss).item()
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0, 0.0, 0.0),
        checked: 0,
    };
    let mut current: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in sample_indices(input.len(), max_entries) {
            let mut data = input.to_vec();
            let orig = data[j];
            data[j] = orig + step;
            current[i] = Tensor::new(input.shape().to_vec(), data.clone())?;
            let plus = eval(&current)?;
            data[j] = orig - step;
            current[i] = Tensor::new(input.shape().to_vec(), data)?;
            let minus = eval(&current)?;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[i].data()[j];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.checked == 1 {
                report.max_rel_error = err;
                report.worst = (i, j, a, numeric);
            }
        }
        current[i] = input.clone();
    }
    Ok(report)
}

fn sample_indices(len: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m < len && m >= 2 => (0..m).map(|k| k * (len - 1) / (m - 1)).collect(),
        Some(1) => vec![0],
        _ => (0..len).collect(),
    }
}
