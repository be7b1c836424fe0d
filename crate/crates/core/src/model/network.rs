use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, LEVELS, SPATIAL_MULTIPLE};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::conv::ConvSpec;
use crate::nn::attention::Mhamb;
use crate::nn::blocks::{Downsample, NafBlock, Upsample};
use crate::nn::{Conv2d, Forward, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One feature-fusion unit: upsample the level above, add, then a NAF block.
#[derive(Clone, Debug)]
pub struct FfmUnit {
    /// 0-based level the unit outputs at.
    pub level: usize,
    /// 1-based position in the level's cascade.
    pub step: usize,
    pub up: Upsample,
    pub block: NafBlock,
}

/// The U-shaped restoration network. Parameters live in a separate [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Network {
    pub config: ModelConfig,
    pub intro: Conv2d,
    pub encoder: Vec<Vec<NafBlock>>,
    /// `down[i]` maps level `i` to level `i + 1`; the last one enters the bottleneck.
    pub down: Vec<Downsample>,
    pub bridge: Option<Mhamb>,
    /// In evaluation order: level descending, then step ascending.
    pub ffm: Vec<FfmUnit>,
    /// `up[i]` maps level `i + 1` (or the bottleneck) to level `i`.
    pub up: Vec<Upsample>,
    pub decoder: Vec<Vec<NafBlock>>,
    pub outro: Conv2d,
}

/// Encoder outputs per level and the bottleneck input.
pub struct Encoded {
    pub features: Vec<Var>,
    pub bottleneck: Var,
}

impl Network {
    /// Builds the network and its freshly initialized parameters.
    pub fn new<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let mut store = ParamStore::new();
        let s = &mut store;
        let ch = |l: usize| config.channels(l);

        let intro = Conv2d::new(s, "intro", 3, ch(0), 3, ConvSpec::new(1, 1, 1), rng);
        let mut encoder = Vec::with_capacity(LEVELS);
        let mut down = Vec::with_capacity(LEVELS);
        for l in 0..LEVELS {
            encoder.push(
                (0..config.enc_blocks[l])
                    .map(|j| NafBlock::new(s, &format!("enc{}.{j}", l + 1), ch(l), rng))
                    .collect(),
            );
            down.push(Downsample::new(s, &format!("down{}", l + 1), ch(l), rng));
        }
        let bridge = if config.ablation.uses_mhamb() {
            Some(Mhamb::new(s, "mhamb", ch(LEVELS), config.heads, rng)?)
        } else {
            None
        };
        let ffm_sched = config.effective_ffm();
        let mut ffm = Vec::new();
        for l in (0..LEVELS).rev() {
            for step in 1..=ffm_sched[l] {
                let name = format!("ffm{}.{step}", l + 1);
                ffm.push(FfmUnit {
                    level: l,
                    step,
                    up: Upsample::new(s, &format!("{name}.up"), ch(l + 1), rng),
                    block: NafBlock::new(s, &format!("{name}.naf"), ch(l), rng),
                });
            }
        }
        let mut up = Vec::with_capacity(LEVELS);
        let mut decoder = Vec::with_capacity(LEVELS);
        for l in 0..LEVELS {
            up.push(Upsample::new(s, &format!("up{}", l + 1), ch(l + 1), rng));
            decoder.push(
                (0..config.dec_blocks[l])
                    .map(|j| NafBlock::new(s, &format!("dec{}.{j}", l + 1), ch(l), rng))
                    .collect(),
            );
        }
        let outro = Conv2d::zeroed(s, "outro", ch(0), 3, 3, ConvSpec::new(1, 1, 1));
        let net = Self {
            config: config.clone(),
            intro,
            encoder,
            down,
            bridge,
            ffm,
            up,
            decoder,
            outro,
        };
        Ok((net, store))
    }

    pub fn encode<T: Scalar>(&self, f: &mut Forward<'_, T>, image: Var) -> Result<Encoded> {
        let (_, c, h, w) = f.tape.value(image).dims4()?;
        if c != 3 {
            return Err(Error::dim("network", "input channels", 3, c));
        }
        if h % SPATIAL_MULTIPLE != 0 || w % SPATIAL_MULTIPLE != 0 {
            return Err(Error::dim(
                "network",
                "H,W",
                format!("multiples of {SPATIAL_MULTIPLE}"),
                format!("{h}x{w}"),
            ));
        }
        let mut x = self.intro.forward(f, image)?;
        let mut features = Vec::with_capacity(LEVELS);
        for (blocks, down) in self.encoder.iter().zip(&self.down) {
            for b in blocks {
                x = b.forward(f, x)?;
            }
            features.push(x);
            x = down.forward(f, x)?;
        }
        Ok(Encoded { features, bottleneck: x })
    }

    /// Runs the fusion lattice and returns the decoder skip for each level: the last
    /// unit's output where the level has units, otherwise the encoder feature.
    pub fn ffm_lattice<T: Scalar>(&self, f: &mut Forward<'_, T>, features: &[Var]) -> Result<Vec<Var>> {
        if features.len() != LEVELS {
            return Err(Error::dim("ffm_lattice", "levels", LEVELS, features.len()));
        }
        // outputs[l][s - 1] is unit (s, l)
        let mut outputs: Vec<Vec<Var>> = vec![Vec::new(); LEVELS];
        for unit in &self.ffm {
            let (l, s) = (unit.level, unit.step);
            let (below, above) = if s == 1 {
                (features[l], features[l + 1])
            } else {
                let above = *outputs[l + 1].get(s - 2).ok_or_else(|| {
                    Error::Config(format!("ffm unit ({s}, {}) has no unit above it", l + 1))
                })?;
                (outputs[l][s - 2], above)
            };
            let x = unit.up.forward(f, above)?;
            let x = f.tape.add(below, x)?;
            let x = unit.block.forward(f, x)?;
            outputs[l].push(x);
        }
        Ok((0..LEVELS)
            .map(|l| outputs[l].last().copied().unwrap_or(features[l]))
            .collect())
    }

    /// Bottleneck: residual attention, or the identity for ablations without it.
    pub fn bridge<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        match &self.bridge {
            Some(m) => m.forward(f, x),
            None => Ok(x),
        }
    }

    pub fn decode<T: Scalar>(&self, f: &mut Forward<'_, T>, bottleneck: Var, skips: &[Var]) -> Result<Var> {
        if skips.len() != LEVELS {
            return Err(Error::dim("decode", "skips", LEVELS, skips.len()));
        }
        let mut x = bottleneck;
        for l in (0..LEVELS).rev() {
            x = self.up[l].forward(f, x)?;
            x = f.tape.add(x, skips[l])?;
            for b in &self.decoder[l] {
                x = b.forward(f, x)?;
            }
        }
        Ok(x)
    }

    /// `image + outro(decode(...))`. Height and width must be multiples of 16.
    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, image: Var) -> Result<Var> {
        let enc = self.encode(f, image)?;
        let skips = self.ffm_lattice(f, &enc.features)?;
        let mid = self.bridge(f, enc.bottleneck)?;
        let deep = self.decode(f, mid, &skips)?;
        let residual = self.outro.forward(f, deep)?;
        f.tape.add(image, residual)
    }

    /// Inference on arbitrary-sized images: reflect-pads to a multiple of 16, runs
    /// without gradient tracking, and crops back. `tlc` sets the local pooling window.
    pub fn restore<T: Scalar>(&self, params: &ParamStore<T>, image: &Tensor<T>, tlc: Option<usize>) -> Result<Tensor<T>> {
        let (_, _, h, w) = image.dims4()?;
        let padded = image.reflect_pad_to_multiple(SPATIAL_MULTIPLE)?;
        let mut tape = Tape::new();
        let bound = params.bind_frozen(&mut tape);
        let mut f = Forward::new(&mut tape, &bound).with_tlc(tlc);
        let x = f.tape.constant(padded);
        let y = self.forward(&mut f, x)?;
        tape.value(y).crop(0, 0, h, w)
    }

    /// Multiply-accumulates for one `h` x `w` image (h, w multiples of 16).
    ///
    /// Counts every convolution plus the attention products; normalization,
    /// pooling and element-wise work are left out.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let at = |l: usize| (h >> l, w >> l);
        let blocks = |bs: &[NafBlock], (lh, lw): (usize, usize)| bs.iter().map(|b| b.macs(lh, lw)).sum::<u64>();
        let mut total = self.intro.macs(h, w) + self.outro.macs(h, w);
        for l in 0..LEVELS {
            let (lh, lw) = at(l);
            let (uh, uw) = at(l + 1);
            total += blocks(&self.encoder[l], (lh, lw)) + blocks(&self.decoder[l], (lh, lw));
            total += self.down[l].conv.macs(lh, lw) + self.up[l].conv.macs(uh, uw);
        }
        for unit in &self.ffm {
            let (lh, lw) = at(unit.level);
            let (uh, uw) = at(unit.level + 1);
            total += unit.up.conv.macs(uh, uw) + unit.block.macs(lh, lw);
        }
        if let Some(m) = &self.bridge {
            let (bh, bw) = at(LEVELS);
            total += m.macs(bh, bw);
        }
        total
    }
}

/// Exact number of scalar parameters of a network with this configuration.
pub fn count_params(config: &ModelConfig) -> Result<usize> {
    Ok(Network::new::<f32>(config, 0)?.1.numel())
}

/// Multiply-accumulate estimate for one `h` x `w` input (rounded up to multiples of 16).
pub fn estimate_macs(config: &ModelConfig, h: usize, w: usize) -> Result<u64> {
    let (net, _) = Network::new::<f32>(config, 0)?;
    Ok(net.macs(h.div_ceil(SPATIAL_MULTIPLE) * SPATIAL_MULTIPLE, w.div_ceil(SPATIAL_MULTIPLE) * SPATIAL_MULTIPLE))
}
