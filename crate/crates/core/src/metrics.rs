//! Training loss, image quality metrics and error-reduction arithmetic.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Tape, UnaryKind, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Floor added to the MSE before taking the log in [`psnr_loss`].
pub const LOSS_EPS: f64 = 1e-8;

/// Negative PSNR on `[0, 1]` images (peak 1): `10 * log10(mean((pred - target)^2) + 1e-8)`.
/// Minimizing it maximizes PSNR.
pub fn psnr_loss<T: Scalar>(tape: &mut Tape<T>, pred: Var, target: Var) -> Result<Var> {
    if tape.shape(pred) != tape.shape(target) {
        return Err(crate::tensor::shape_mismatch("psnr_loss", tape.shape(pred), tape.shape(target)));
    }
    let diff = tape.sub(pred, target)?;
    let sq = tape.mul(diff, diff)?;
    let mse = tape.mean(sq);
    let log = tape.unary(UnaryKind::Log10 { eps: T::lit(LOSS_EPS) }, mse);
    Ok(tape.scale(log, T::lit(10.0)))
}

/// Which channels a metric is computed on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ChannelMode {
    #[default]
    Rgb,
    /// Luma `Y = 0.299 R + 0.587 G + 0.114 B`.
    Y,
}

impl fmt::Display for ChannelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelMode::Rgb => "rgb",
            ChannelMode::Y => "y",
        })
    }
}

impl FromStr for ChannelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgb" => Ok(ChannelMode::Rgb),
            "y" | "y_channel" => Ok(ChannelMode::Y),
            _ => Err(Error::Config(format!("unknown channel mode `{s}` (expected rgb or y)"))),
        }
    }
}

/// Rounds `[0, 1]` values (clamped) to 8-bit levels.
pub fn quantize<T: Scalar>(x: T) -> u8 {
    (x.to_f64().unwrap_or(0.0).clamp(0.0, 1.0) * 255.0).round() as u8
}

/// An 8-bit quantized image split into the planes a metric looks at.
struct Planes {
    h: usize,
    w: usize,
    planes: Vec<Vec<f64>>,
}

fn planes<T: Scalar>(img: &Tensor<T>, mode: ChannelMode) -> Result<Planes> {
    let (b, c, h, w) = img.dims4()?;
    if b != 1 || c != 3 {
        return Err(Error::dim("metric", "batch,channels", "1,3", format!("{b},{c}")));
    }
    let q: Vec<f64> = img.data().iter().map(|&v| f64::from(quantize(v))).collect();
    let n = h * w;
    let planes = match mode {
        ChannelMode::Rgb => q.chunks_exact(n).map(<[f64]>::to_vec).collect(),
        ChannelMode::Y => vec![(0..n)
            .map(|i| 0.299 * q[i] + 0.587 * q[n + i] + 0.114 * q[2 * n + i])
            .collect()],
    };
    Ok(Planes { h, w, planes })
}

fn paired_planes<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, mode: ChannelMode) -> Result<(Planes, Planes)> {
    if a.shape() != b.shape() {
        return Err(crate::tensor::shape_mismatch("metric", a.shape(), b.shape()));
    }
    Ok((planes(a, mode)?, planes(b, mode)?))
}

/// PSNR reported for identical images: the MSE is floored at `255^2 * 1e-8`.
pub const MAX_PSNR_DB: f64 = 80.0;

/// PSNR in dB with peak 255 on 8-bit quantized images of shape `(1, 3, H, W)`.
pub fn psnr_metric<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, mode: ChannelMode) -> Result<f64> {
    let (p, t) = paired_planes(pred, target, mode)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (a, b) in p.planes.iter().zip(&t.planes) {
        sum += a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        count += a.len();
    }
    Ok(psnr_from_mse(sum / count as f64))
}

/// PSNR for an MSE measured on the 0..=255 scale.
pub fn psnr_from_mse(mse: f64) -> f64 {
    let peak2 = 255.0 * 255.0;
    10.0 * (peak2 / mse.max(peak2 * 1e-8)).log10()
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable 'valid' filtering of an `h` x `w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &x[y * w..(y + 1) * w];
        for (ox, dst) in rows[y * ow..(y + 1) * ow].iter_mut().enumerate() {
            *dst = taps.iter().zip(&src[ox..ox + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            out[oy * ow + ox] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * rows[(oy + i) * ow + ox])
                .sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, taps: &[f64]) -> f64 {
    let c1 = (SSIM_K1 * 255.0).powi(2);
    let c2 = (SSIM_K2 * 255.0).powi(2);
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = filter_valid(a, h, w, taps);
    let mu_b = filter_valid(b, h, w, taps);
    let e_aa = filter_valid(&prod(a, a), h, w, taps);
    let e_bb = filter_valid(&prod(b, b), h, w, taps);
    let e_ab = filter_valid(&prod(a, b), h, w, taps);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    total / n as f64
}

/// Single-scale SSIM (11x11 Gaussian window, sigma 1.5, K1 0.01, K2 0.03, L 255) over
/// the valid region, averaged over the selected planes. Identical inputs give exactly 1.
pub fn ssim_metric<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, mode: ChannelMode) -> Result<f64> {
    let (p, t) = paired_planes(pred, target, mode)?;
    if p.h < SSIM_WINDOW || p.w < SSIM_WINDOW {
        return Err(Error::dim(
            "ssim",
            "H,W",
            format!(">= {SSIM_WINDOW}"),
            format!("{}x{}", p.h, p.w),
        ));
    }
    if p.planes == t.planes {
        return Ok(1.0);
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let sum: f64 = p
        .planes
        .iter()
        .zip(&t.planes)
        .map(|(a, b)| ssim_plane(a, b, p.h, p.w, &taps))
        .sum();
    Ok(sum / p.planes.len() as f64)
}

/// Root-mean-square error on a unit peak: `sqrt(10^(-psnr/10))`.
pub fn rmse_from_psnr(psnr_db: f64) -> f64 {
    10f64.powf(-psnr_db / 20.0)
}

pub fn dssim_from_ssim(ssim: f64) -> f64 {
    (1.0 - ssim) / 2.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricKind {
    Psnr,
    Ssim,
}

/// Relative error reduction of `best` over `other`, in percent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reduction {
    pub percent: f64,
    /// Set when the competitor's error is zero and the ratio is undefined; `percent` is 0.
    pub undefined: bool,
}

/// How much smaller `best`'s error (RMSE for PSNR, DSSIM for SSIM) is than `other`'s.
pub fn error_reduction(best: f64, other: f64, kind: MetricKind) -> Reduction {
    let (eb, eo) = match kind {
        MetricKind::Psnr => (rmse_from_psnr(best), rmse_from_psnr(other)),
        MetricKind::Ssim => (dssim_from_ssim(best), dssim_from_ssim(other)),
    };
    if eo == 0.0 {
        return Reduction {
            percent: 0.0,
            undefined: true,
        };
    }
    Reduction {
        percent: 100.0 * (eo - eb) / eo,
        undefined: false,
    }
}

/// Per-image and mean PSNR/SSIM over a dataset.
#[derive(Clone, Debug, Default)]
pub struct MetricReport {
    pub mode: ChannelMode,
    /// `(image id, psnr dB, ssim)`
    pub images: Vec<(String, f64, f64)>,
}

impl MetricReport {
    pub fn new(mode: ChannelMode) -> Self {
        Self {
            mode,
            images: Vec::new(),
        }
    }

    pub fn push<T: Scalar>(&mut self, id: impl Into<String>, pred: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
        let psnr = psnr_metric(pred, target, self.mode)?;
        let ssim = ssim_metric(pred, target, self.mode)?;
        self.images.push((id.into(), psnr, ssim));
        Ok(())
    }

    pub fn mean_psnr(&self) -> f64 {
        mean(self.images.iter().map(|r| r.1))
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(self.images.iter().map(|r| r.2))
    }

    /// `image,psnr,ssim` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("image,psnr,ssim\n");
        for (id, p, q) in &self.images {
            s.push_str(&format!("{id},{p:.6},{q:.6}\n"));
        }
        s
    }

    pub fn summary(&self) -> String {
        format!(
            "images={} mode={} psnr={:.4} ssim={:.6}",
            self.images.len(),
            self.mode,
            self.mean_psnr(),
            self.mean_ssim()
        )
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}
