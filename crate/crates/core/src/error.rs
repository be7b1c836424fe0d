use std::fmt;

/// Errors produced anywhere in the restoration pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor shapes do not line up. `axis` names the offending axis (or axes).
    #[error("dimension error in {op}: axis {axis}: expected {expected}, found {found}")]
    Dimension {
        op: &'static str,
        axis: String,
        expected: String,
        found: String,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("training diverged: {0}")]
    Diverged(DivergenceReport),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(
        op: &'static str,
        axis: impl Into<String>,
        expected: impl fmt::Display,
        found: impl fmt::Display,
    ) -> Self {
        Error::Dimension {
            op,
            axis: axis.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}

/// Diagnostic dump emitted when the loss stops being finite.
#[derive(Debug, Clone)]
pub struct DivergenceReport {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    /// (parameter name, L2 norm of its gradient), in parameter order.
    pub grad_norms: Vec<(String, f64)>,
}

impl fmt::Display for DivergenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step={} lr={:e} loss={}", self.step, self.lr, self.loss)?;
        let worst = self
            .grad_norms
            .iter()
            .filter(|(_, n)| !n.is_finite())
            .take(5)
            .map(|(name, n)| format!("{name}={n}"))
            .collect::<Vec<_>>();
        if !worst.is_empty() {
            write!(f, " non-finite grads: {}", worst.join(", "))?;
        }
        let total: f64 = self.grad_norms.iter().map(|(_, n)| n * n).sum::<f64>().sqrt();
        write!(f, " global_grad_norm={total}")
    }
}
