use std::fmt;
use std::path::PathBuf;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::parse;
use crate::tensor::Tensor;

/// Scene depth used by the scattering model.
#[derive(Clone, Debug, PartialEq)]
pub enum DepthSource {
    Constant(f64),
    /// Linear in the row index: `near` on the top row, `far` on the bottom row.
    Ramp { near: f64, far: f64 },
    /// 8-bit grayscale PNG; depth = pixel / 255 * `scale`. Resized by nearest neighbour.
    File { path: PathBuf, scale: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum BlurKernel {
    /// `size` x `size` uniform kernel.
    Box(usize),
    /// Line of `length` pixels at `angle_deg` degrees counter-clockwise from horizontal.
    Motion { length: usize, angle_deg: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum DegradationKind {
    /// `L = H t - A t + A` with transmission `t = exp(-alpha * depth)`.
    Haze {
        airlight: f64,
        alpha: f64,
        depth: DepthSource,
    },
    Blur(BlurKernel),
    NoiseOnly,
}

/// A degradation followed by additive zero-mean Gaussian noise and clamping to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DegradationSpec {
    pub kind: DegradationKind,
    pub noise_sigma: f64,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        Self {
            kind: DegradationKind::Haze {
                airlight: 0.9,
                alpha: 1.0,
                depth: DepthSource::Constant(0.6),
            },
            noise_sigma: 0.01,
        }
    }
}

impl DegradationSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        match &self.kind {
            DegradationKind::Haze { airlight, alpha, depth } => {
                if !(0.0..=1.0).contains(airlight) {
                    return bad(format!("airlight must lie in [0, 1], got {airlight}"));
                }
                if !(*alpha >= 0.0 && alpha.is_finite()) {
                    return bad(format!("alpha must be >= 0, got {alpha}"));
                }
                let ok = match depth {
                    DepthSource::Constant(d) => *d >= 0.0,
                    DepthSource::Ramp { near, far } => *near >= 0.0 && *far >= 0.0,
                    DepthSource::File { scale, .. } => *scale >= 0.0,
                };
                if !ok {
                    return bad("depth must be non-negative".into());
                }
            }
            DegradationKind::Blur(BlurKernel::Box(k)) | DegradationKind::Blur(BlurKernel::Motion { length: k, .. }) => {
                if *k == 0 {
                    return bad("blur kernel size must be >= 1".into());
                }
            }
            DegradationKind::NoiseOnly => {}
        }
        Ok(())
    }

    /// `key=value` lines describing this degradation; readable back by [`DegradationSpec::set`].
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        match &self.kind {
            DegradationKind::Haze { airlight, alpha, depth } => {
                out.push(("kind".into(), "haze".into()));
                out.push(("airlight".into(), airlight.to_string()));
                out.push(("alpha".into(), alpha.to_string()));
                out.push(("depth".into(), depth.to_string()));
            }
            DegradationKind::Blur(k) => {
                out.push(("kind".into(), "blur".into()));
                out.push(("blur".into(), k.to_string()));
            }
            DegradationKind::NoiseOnly => out.push(("kind".into(), "noise".into())),
        }
        out.push(("noise_sigma".into(), self.noise_sigma.to_string()));
        out
    }

    /// Applies one setting; returns `Ok(false)` for keys that are not degradation keys.
    /// Setting `kind` switches variants, keeping defaults for the new variant's fields.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "kind" => {
                self.kind = match value {
                    "haze" | "haze_rain" => match &self.kind {
                        k @ DegradationKind::Haze { .. } => k.clone(),
                        _ => DegradationSpec::default().kind,
                    },
                    "blur" => match &self.kind {
                        k @ DegradationKind::Blur(_) => k.clone(),
                        _ => DegradationKind::Blur(BlurKernel::Box(5)),
                    },
                    "noise" | "noise_only" => DegradationKind::NoiseOnly,
                    _ => return Err(Error::Config(format!("unknown degradation kind `{value}`"))),
                }
            }
            "noise_sigma" => self.noise_sigma = parse(key, value)?,
            "airlight" | "alpha" | "depth" => {
                let DegradationKind::Haze { airlight, alpha, depth } = &mut self.kind else {
                    return Err(Error::Config(format!("`{key}` only applies to kind=haze")));
                };
                match key {
                    "airlight" => *airlight = parse(key, value)?,
                    "alpha" => *alpha = parse(key, value)?,
                    _ => *depth = value.parse()?,
                }
            }
            "blur" => {
                let DegradationKind::Blur(k) = &mut self.kind else {
                    return Err(Error::Config("`blur` only applies to kind=blur".into()));
                };
                *k = value.parse()?;
            }
            _ => return Ok(false),
        }
        Ok(true)
    }
}

impl fmt::Display for DepthSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DepthSource::Constant(d) => write!(f, "constant:{d}"),
            DepthSource::Ramp { near, far } => write!(f, "ramp:{near}:{far}"),
            DepthSource::File { path, scale } => write!(f, "file:{scale}:{}", path.display()),
        }
    }
}

impl std::str::FromStr for DepthSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.splitn(3, ':').collect();
        match parts[..] {
            ["constant", d] => Ok(DepthSource::Constant(parse("depth", d)?)),
            ["ramp", near, far] => Ok(DepthSource::Ramp {
                near: parse("depth", near)?,
                far: parse("depth", far)?,
            }),
            ["file", scale, path] => Ok(DepthSource::File {
                path: PathBuf::from(path),
                scale: parse("depth", scale)?,
            }),
            _ => Err(Error::Config(format!(
                "invalid depth `{s}` (constant:<d> | ramp:<near>:<far> | file:<scale>:<path>)"
            ))),
        }
    }
}

impl fmt::Display for BlurKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlurKernel::Box(k) => write!(f, "box:{k}"),
            BlurKernel::Motion { length, angle_deg } => write!(f, "motion:{length}:{angle_deg}"),
        }
    }
}

impl std::str::FromStr for BlurKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        match parts[..] {
            ["box", k] => Ok(BlurKernel::Box(parse("blur", k)?)),
            ["motion", l, a] => Ok(BlurKernel::Motion {
                length: parse("blur", l)?,
                angle_deg: parse("blur", a)?,
            }),
            _ => Err(Error::Config(format!(
                "invalid blur `{s}` (box:<k> | motion:<length>:<angle>)"
            ))),
        }
    }
}

impl BlurKernel {
    /// Normalized square kernel, row-major, with odd side length.
    pub fn taps(&self) -> (usize, Vec<f64>) {
        match *self {
            BlurKernel::Box(k) => (k, vec![1.0 / (k * k) as f64; k * k]),
            BlurKernel::Motion { length, angle_deg } => {
                let size = length | 1;
                let c = (size / 2) as f64;
                let (s, co) = angle_deg.to_radians().sin_cos();
                let mut k = vec![0.0; size * size];
                let samples = 4 * length.max(1);
                let half = (length as f64 - 1.0) / 2.0;
                for i in 0..samples {
                    let t = if samples == 1 {
                        0.0
                    } else {
                        -half + 2.0 * half * i as f64 / (samples - 1) as f64
                    };
                    let x = (c + t * co).round() as usize;
                    let y = (c - t * s).round() as usize;
                    k[y.min(size - 1) * size + x.min(size - 1)] += 1.0;
                }
                let total: f64 = k.iter().sum();
                (size, k.into_iter().map(|v| v / total).collect())
            }
        }
    }
}

fn depth_map(depth: &DepthSource, h: usize, w: usize) -> Result<Vec<f64>> {
    Ok(match depth {
        DepthSource::Constant(d) => vec![*d; h * w],
        DepthSource::Ramp { near, far } => (0..h * w)
            .map(|i| {
                let y = i / w;
                let f = if h > 1 { y as f64 / (h - 1) as f64 } else { 0.0 };
                near + (far - near) * f
            })
            .collect(),
        DepthSource::File { path, scale } => {
            let img = image::open(path)?.into_luma8();
            let (sw, sh) = (img.width() as usize, img.height() as usize);
            (0..h * w)
                .map(|i| {
                    let (y, x) = (i / w, i % w);
                    let px = img.get_pixel((x * sw / w) as u32, (y * sh / h) as u32)[0];
                    f64::from(px) / 255.0 * scale
                })
                .collect()
        }
    })
}

/// Transmission `exp(-alpha * depth)` per pixel.
pub fn transmission(alpha: f64, depth: &DepthSource, h: usize, w: usize) -> Result<Vec<f64>> {
    Ok(depth_map(depth, h, w)?.into_iter().map(|d| (-alpha * d).exp()).collect())
}

/// Degrades a clean `(1, 3, H, W)` image in `[0, 1]`. Deterministic for a given `rng` state.
pub fn degrade(clean: &Tensor<f32>, spec: &DegradationSpec, rng: &mut ChaCha8Rng) -> Result<Tensor<f32>> {
    spec.validate()?;
    let (b, c, h, w) = clean.dims4()?;
    let src = clean.data();
    let mut out: Vec<f64> = match &spec.kind {
        DegradationKind::Haze { airlight, alpha, depth } => {
            let t = transmission(*alpha, depth, h, w)?;
            src.iter()
                .enumerate()
                .map(|(i, &v)| {
                    let t = t[i % (h * w)];
                    f64::from(v) * t - airlight * t + airlight
                })
                .collect()
        }
        DegradationKind::Blur(kernel) => {
            let (k, taps) = kernel.taps();
            let r = (k / 2) as isize;
            let mut out = vec![0.0; src.len()];
            for (p, plane) in src.chunks_exact(h * w).enumerate() {
                for y in 0..h {
                    for x in 0..w {
                        let mut acc = 0.0;
                        for ky in 0..k {
                            let sy = (y as isize + ky as isize - r).clamp(0, h as isize - 1) as usize;
                            for kx in 0..k {
                                let sx = (x as isize + kx as isize - r).clamp(0, w as isize - 1) as usize;
                                acc += taps[ky * k + kx] * f64::from(plane[sy * w + sx]);
                            }
                        }
                        out[p * h * w + y * w + x] = acc;
                    }
                }
            }
            out
        }
        DegradationKind::NoiseOnly => src.iter().map(|&v| f64::from(v)).collect(),
    };
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
        for v in &mut out {
            *v += normal.sample(rng);
        }
    }
    Tensor::new(vec![b, c, h, w], out.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect())
}
