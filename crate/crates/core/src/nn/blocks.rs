//! Activation-free building blocks: SimpleGate, simplified channel attention, the
//! NAF block, and the stride-2 / pixel-shuffle resampling pair.

use rand_chacha::ChaCha8Rng;

use super::{Conv2d, Forward, LayerNorm2d, ParamStore};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::kernels::conv::ConvSpec;
use crate::scalar::Scalar;

/// Splits channels in half and multiplies the halves: `(B, 2C, H, W) -> (B, C, H, W)`.
pub fn simple_gate<T: Scalar>(f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
    let (a, b) = f.tape.split_channels_half(x)?;
    f.tape.mul(a, b)
}

/// Simplified channel attention: `x * conv1x1(pool(x))`.
///
/// `pool` is the global spatial mean, or the clamped local mean over `f.tlc_window`
/// when one is set.
#[derive(Clone, Debug)]
pub struct ChannelAttention {
    pub conv: Conv2d,
}

impl ChannelAttention {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv: Conv2d::new(store, name, channels, channels, 1, ConvSpec::default(), rng),
        }
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let pooled = match f.tlc_window {
            Some(0) => return Err(Error::Config("TLC window must be >= 1".into())),
            Some(window) => f.tape.local_avg_pool(x, window)?,
            None => f.tape.adaptive_avg_pool_to_1(x)?,
        };
        let weights = self.conv.forward(f, pooled)?;
        f.tape.mul(x, weights)
    }
}

/// Nonlinear-activation-free residual block.
///
/// ```text
/// x1 = x  + conv3(sca(sg(dw(conv1(ln1(x))))))
/// y  = x1 + conv5(sg(conv4(ln2(x1))))
/// ```
#[derive(Clone, Debug)]
pub struct NafBlock {
    pub channels: usize,
    pub ln1: LayerNorm2d,
    pub conv1: Conv2d,
    pub conv_dw: Conv2d,
    pub sca: ChannelAttention,
    pub conv3: Conv2d,
    pub ln2: LayerNorm2d,
    pub conv4: Conv2d,
    pub conv5: Conv2d,
}

impl NafBlock {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut ChaCha8Rng) -> Self {
        let c = channels;
        let pw = ConvSpec::default();
        Self {
            channels: c,
            ln1: LayerNorm2d::new(store, &format!("{name}.ln1"), c),
            conv1: Conv2d::new(store, &format!("{name}.conv1"), c, 2 * c, 1, pw, rng),
            conv_dw: Conv2d::new(store, &format!("{name}.conv_dw"), 2 * c, 2 * c, 3, ConvSpec::new(1, 1, 2 * c), rng),
            sca: ChannelAttention::new(store, &format!("{name}.sca"), c, rng),
            conv3: Conv2d::new(store, &format!("{name}.conv3"), c, c, 1, pw, rng),
            ln2: LayerNorm2d::new(store, &format!("{name}.ln2"), c),
            conv4: Conv2d::new(store, &format!("{name}.conv4"), c, 2 * c, 1, pw, rng),
            conv5: Conv2d::new(store, &format!("{name}.conv5"), c, c, 1, pw, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let c = f.tape.value(x).dims4()?.1;
        if c != self.channels {
            return Err(Error::dim("naf_block", "channels", self.channels, c));
        }
        let y = self.ln1.forward(f, x)?;
        let y = self.conv1.forward(f, y)?;
        let y = self.conv_dw.forward(f, y)?;
        let y = simple_gate(f, y)?;
        let y = self.sca.forward(f, y)?;
        let y = self.conv3.forward(f, y)?;
        let x1 = f.tape.add(x, y)?;

        let z = self.ln2.forward(f, x1)?;
        let z = self.conv4.forward(f, z)?;
        let z = simple_gate(f, z)?;
        let z = self.conv5.forward(f, z)?;
        f.tape.add(x1, z)
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        [&self.conv1, &self.conv_dw, &self.conv3, &self.conv4, &self.conv5]
            .iter()
            .map(|c| c.macs(h, w))
            .sum::<u64>()
            + self.sca.conv.macs(1, 1)
    }
}

/// 2x2 stride-2 convolution: `(B, C, H, W) -> (B, 2C, H/2, W/2)`.
#[derive(Clone, Debug)]
pub struct Downsample {
    pub conv: Conv2d,
}

impl Downsample {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv: Conv2d::new(store, name, channels, 2 * channels, 2, ConvSpec::new(2, 0, 1), rng),
        }
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let (_, _, h, w) = f.tape.value(x).dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::dim("downsample", "H,W", "even", format!("{h}x{w}")));
        }
        self.conv.forward(f, x)
    }
}

/// 1x1 convolution to `2C` channels then pixel shuffle: `(B, C, H, W) -> (B, C/2, 2H, 2W)`.
#[derive(Clone, Debug)]
pub struct Upsample {
    pub conv: Conv2d,
}

impl Upsample {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv: Conv2d::new(store, name, channels, 2 * channels, 1, ConvSpec::default(), rng),
        }
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let c = f.tape.value(x).dims4()?.1;
        if c % 2 != 0 {
            return Err(Error::dim("upsample", "channels", "even", c));
        }
        let y = self.conv.forward(f, x)?;
        f.tape.pixel_shuffle(y, 2)
    }
}
