//! Paired-image data: degradation synthesis, disk I/O, patch sampling and batching.

mod degrade;
mod io;
mod synthetic;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use degrade::{degrade, transmission, BlurKernel, DegradationKind, DegradationSpec, DepthSource};
pub use io::{load_dataset, load_image, save_dataset, save_image, Dataset};
pub use synthetic::synthetic_clean;

use crate::error::{Error, Result};
use crate::tensor::{shape_mismatch, Tensor};

/// A degraded image and its clean reference, both `(1, 3, H, W)` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub id: String,
    pub degraded: Tensor<f32>,
    pub clean: Tensor<f32>,
}

impl ImagePair {
    pub fn new(id: impl Into<String>, degraded: Tensor<f32>, clean: Tensor<f32>) -> Result<Self> {
        if degraded.shape() != clean.shape() {
            return Err(shape_mismatch("ImagePair", degraded.shape(), clean.shape()));
        }
        let (b, c, _, _) = clean.dims4()?;
        if b != 1 || c != 3 {
            return Err(Error::dim("ImagePair", "batch,channels", "1,3", format!("{b},{c}")));
        }
        Ok(Self {
            id: id.into(),
            degraded,
            clean,
        })
    }

    pub fn hw(&self) -> (usize, usize) {
        let s = self.clean.shape();
        (s[2], s[3])
    }
}

/// Crops the same random `size` x `size` window from both images, reflect-padding
/// images smaller than the patch first.
pub fn sample_patch(pair: &ImagePair, size: usize, rng: &mut ChaCha8Rng) -> Result<ImagePair> {
    let (h, w) = pair.hw();
    let (ph, pw) = (h.max(size), w.max(size));
    let degraded = pair.degraded.reflect_pad_to(ph, pw)?;
    let clean = pair.clean.reflect_pad_to(ph, pw)?;
    let top = rng.random_range(0..=ph - size);
    let left = rng.random_range(0..=pw - size);
    Ok(ImagePair {
        id: pair.id.clone(),
        degraded: degraded.crop(top, left, size, size)?,
        clean: clean.crop(top, left, size, size)?,
    })
}

/// Which axes to mirror.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct FlipMask {
    pub horizontal: bool,
    pub vertical: bool,
}

impl FlipMask {
    /// Each axis independently with probability 1/2.
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        Self {
            horizontal: rng.random_bool(0.5),
            vertical: rng.random_bool(0.5),
        }
    }

    pub fn apply(self, t: &Tensor<f32>) -> Tensor<f32> {
        let t = if self.horizontal { t.flip_horizontal() } else { t.clone() };
        if self.vertical {
            t.flip_vertical()
        } else {
            t
        }
    }
}

/// Random horizontal/vertical flips applied identically to both images.
pub fn augment(pair: &ImagePair, rng: &mut ChaCha8Rng) -> ImagePair {
    let mask = FlipMask::random(rng);
    ImagePair {
        id: pair.id.clone(),
        degraded: mask.apply(&pair.degraded),
        clean: mask.apply(&pair.clean),
    }
}

/// Seed derived from a base seed and a counter (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, counter: u64) -> u64 {
    let mut z = seed ^ counter.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Dataset order for an endless sequence of epochs, each a seeded permutation.
///
/// Sample `k` of the stream depends only on `(seed, k)`, so training can resume at any
/// step without replaying earlier ones.
#[derive(Clone, Debug)]
pub struct EpochOrder {
    seed: u64,
    len: usize,
    cached: Option<(u64, Vec<usize>)>,
}

impl EpochOrder {
    pub fn new(seed: u64, len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::Data("cannot iterate an empty dataset".into()));
        }
        Ok(Self { seed, len, cached: None })
    }

    pub fn permutation(&self, epoch: u64) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(self.seed, epoch)));
        idx
    }

    /// Dataset index of the `k`-th sample of the stream.
    pub fn index(&mut self, k: u64) -> usize {
        let epoch = k / self.len as u64;
        if self.cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
            self.cached = Some((epoch, self.permutation(epoch)));
        }
        let (_, perm) = self.cached.as_ref().expect("cached above");
        perm[(k % self.len as u64) as usize]
    }
}

/// Generates `count` clean images of `size` x `size` and their degraded versions.
/// Ids are zero-padded indices, so sorting by id preserves generation order.
pub fn synthesize_pairs(count: usize, size: usize, spec: &DegradationSpec, seed: u64) -> Result<Vec<ImagePair>> {
    spec.validate()?;
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            let clean = synthetic_clean(size, size, &mut rng);
            let degraded = degrade(&clean, spec, &mut rng)?;
            ImagePair::new(format!("{i:05}"), degraded, clean)
        })
        .collect()
}
