//! Finite-difference checks for every differentiable op, every block and a micro network.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use summit_core::autodiff::UnaryKind;
use summit_core::gradcheck::{check_gradients, GradCheckReport};
use summit_core::kernels::broadcast::BinaryKind;
use summit_core::kernels::conv::ConvSpec;
use summit_core::metrics::psnr_loss;
use summit_core::model::{Ablation, ModelConfig, Network};
use summit_core::nn::attention::Mhamb;
use summit_core::nn::blocks::{simple_gate, ChannelAttention, Downsample, NafBlock, Upsample};
use summit_core::nn::{Bound, Forward, ParamStore};
use summit_core::{Result, Tape, Tensor, Var};

use super::{rng, uniform};

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;

/// `sum(y * r)` for a fixed random `r`, so every output element matters differently.
fn weighted_sum(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let r = tape.constant(uniform(tape.shape(y), -1.0, 1.0, &mut rng(seed)));
    let p = tape.mul(y, r)?;
    Ok(tape.sum(p))
}

pub fn check_op<F>(shapes: &[&[usize]], seed: u64, f: F) -> GradCheckReport
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut r = rng(seed);
    let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| uniform(s, -1.0, 1.0, &mut r)).collect();
    check_with(&inputs, seed, None, f)
}

fn check_with<F>(inputs: &[Tensor<f64>], seed: u64, max_entries: Option<usize>, f: F) -> GradCheckReport
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    check_gradients(
        inputs,
        |tape, vars| {
            let y = f(tape, vars)?;
            if tape.shape(y) == [1] {
                Ok(y)
            } else {
                weighted_sum(tape, y, seed ^ 0xFF)
            }
        },
        STEP,
        max_entries,
    )
    .expect("gradient check ran")
}

/// Every parameter of `store` shifted by a random amount, so zero-initialized and
/// unit-initialized tensors are exercised away from their special values.
fn jitter(store: &ParamStore<f64>, r: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    store
        .values()
        .iter()
        .map(|v| {
            let data = v.data().iter().map(|x| x + r.random_range(-0.3..0.3)).collect();
            Tensor::new(v.shape().to_vec(), data).unwrap()
        })
        .collect()
}

/// Checks input and parameter gradients of a parameterized block.
pub fn check_block<B>(
    x_shape: &[usize],
    seed: u64,
    max_entries: Option<usize>,
    tlc: Option<usize>,
    build: impl Fn(&mut ParamStore<f64>, &mut ChaCha8Rng) -> B,
    forward: impl Fn(&B, &mut Forward<'_, f64>, Var) -> Result<Var>,
) -> GradCheckReport {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let block = build(&mut store, &mut r);
    let mut inputs = vec![uniform(x_shape, -1.0, 1.0, &mut r)];
    inputs.extend(jitter(&store, &mut r));
    check_with(&inputs, seed, max_entries, |tape, vars| {
        let bound = Bound::from_vars(vars[1..].to_vec());
        let mut f = Forward::new(tape, &bound).with_tlc(tlc);
        forward(&block, &mut f, vars[0])
    })
}

/// `(name, report)` for every primitive op.
pub fn op_reports() -> Vec<(&'static str, GradCheckReport)> {
    let dense = ConvSpec::new(1, 1, 1);
    vec![
        ("conv2d 3x3", check_op(&[&[2, 3, 5, 5], &[4, 3, 3, 3], &[4]], 1, |t, v| t.conv2d(v[0], v[1], Some(v[2]), dense))),
        ("conv2d stride 2", check_op(&[&[1, 2, 6, 6], &[3, 2, 2, 2], &[3]], 2, |t, v| t.conv2d(v[0], v[1], Some(v[2]), ConvSpec::new(2, 0, 1)))),
        ("conv2d grouped", check_op(&[&[1, 4, 5, 4], &[4, 2, 3, 3]], 3, |t, v| t.conv2d(v[0], v[1], None, ConvSpec::new(1, 1, 2)))),
        ("conv2d depthwise", check_op(&[&[2, 3, 5, 6], &[3, 1, 3, 3], &[3]], 4, |t, v| t.conv2d(v[0], v[1], Some(v[2]), ConvSpec::new(1, 1, 3)))),
        ("conv2d 1x1", check_op(&[&[2, 3, 4, 4], &[5, 3, 1, 1], &[5]], 5, |t, v| t.conv2d(v[0], v[1], Some(v[2]), ConvSpec::default()))),
        ("layer_norm_channel", check_op(&[&[2, 4, 3, 3], &[4], &[4]], 6, |t, v| t.layer_norm_channel(v[0], v[1], v[2], 1e-6))),
        ("add (broadcast)", check_op(&[&[2, 3, 4, 4], &[1, 3, 1, 1]], 7, |t, v| t.elementwise(BinaryKind::Add, v[0], v[1]))),
        ("sub", check_op(&[&[2, 3], &[2, 3]], 8, |t, v| t.sub(v[0], v[1]))),
        ("mul (broadcast)", check_op(&[&[2, 3, 4, 4], &[2, 3, 1, 1]], 9, |t, v| t.mul(v[0], v[1]))),
        ("scale", check_op(&[&[5]], 10, |t, v| Ok(t.scale(v[0], -2.5)))),
        ("softplus", check_op(&[&[6]], 11, |t, v| Ok(t.unary(UnaryKind::Softplus, v[0])))),
        ("reciprocal", check_op(&[&[6]], 12, |t, v| {
            let p = t.unary(UnaryKind::Softplus, v[0]);
            Ok(t.unary(UnaryKind::Recip, p))
        })),
        ("log10", check_op(&[&[6]], 13, |t, v| {
            let p = t.unary(UnaryKind::Softplus, v[0]);
            Ok(t.unary(UnaryKind::Log10 { eps: 1e-8 }, p))
        })),
        ("softmax_lastdim", check_op(&[&[2, 3, 5]], 14, |t, v| t.softmax_lastdim(v[0]))),
        ("matmul_batched", check_op(&[&[2, 3, 4, 5], &[2, 3, 5, 2]], 15, |t, v| t.matmul_batched(v[0], v[1]))),
        ("adaptive_avg_pool_to_1", check_op(&[&[2, 3, 4, 5]], 16, |t, v| t.adaptive_avg_pool_to_1(v[0]))),
        ("local_avg_pool", check_op(&[&[1, 2, 7, 6]], 17, |t, v| t.local_avg_pool(v[0], 3))),
        ("pixel_shuffle", check_op(&[&[1, 8, 3, 2]], 18, |t, v| t.pixel_shuffle(v[0], 2))),
        ("split_channels_half", check_op(&[&[2, 6, 3, 3]], 19, |t, v| {
            let (a, b) = t.split_channels_half(v[0])?;
            let bb = t.scale(b, 3.0);
            t.add(a, bb)
        })),
        ("reshape/permute", check_op(&[&[2, 3, 4]], 20, |t, v| {
            let r = t.reshape(v[0], [6, 4])?;
            let p = t.transpose_last(r)?;
            t.permute(p, &[1, 0])
        })),
        ("mean", check_op(&[&[3, 4]], 21, |t, v| Ok(t.mean(v[0])))),
        ("psnr_loss", check_op(&[&[2, 3, 4, 4], &[2, 3, 4, 4]], 22, |t, v| psnr_loss(t, v[0], v[1]))),
    ]
}

/// `(name, report)` for every block type.
pub fn block_reports() -> Vec<(&'static str, GradCheckReport)> {
    vec![
        ("simple_gate", check_op(&[&[2, 6, 4, 4]], 30, |t, v| {
            let store = ParamStore::<f64>::new();
            let bound = store.bind(t);
            simple_gate(&mut Forward::new(t, &bound), v[0])
        })),
        ("sca", check_block(&[2, 4, 5, 5], 31, None, None, |s, r| ChannelAttention::new(s, "sca", 4, r), |b, f, x| b.forward(f, x))),
        ("sca (local window)", check_block(&[1, 4, 6, 6], 32, None, Some(3), |s, r| ChannelAttention::new(s, "sca", 4, r), |b, f, x| b.forward(f, x))),
        ("naf_block", check_block(&[2, 4, 6, 6], 33, None, None, |s, r| NafBlock::new(s, "naf", 4, r), |b, f, x| b.forward(f, x))),
        ("downsample", check_block(&[1, 3, 6, 4], 34, None, None, |s, r| Downsample::new(s, "down", 3, r), |b, f, x| b.forward(f, x))),
        ("upsample", check_block(&[1, 4, 3, 3], 35, None, None, |s, r| Upsample::new(s, "up", 4, r), |b, f, x| b.forward(f, x))),
        ("mhamb", check_block(&[2, 8, 3, 4], 36, None, None, |s, r| Mhamb::new(s, "mhamb", 8, 2, r).unwrap(), |b, f, x| b.forward(f, x))),
    ]
}

pub fn micro_config() -> ModelConfig {
    ModelConfig {
        width: 4,
        enc_blocks: [1, 1, 1, 1],
        dec_blocks: [1, 1, 1, 1],
        ffm_blocks: [1, 1, 1, 0],
        heads: 8,
        ablation: Ablation::Full,
        tlc_window: None,
    }
}

/// Whole micro network on a 16x16 input, all parameters randomized (output head included).
/// Large tensors are sampled at `max_entries` evenly spaced elements.
pub fn micro_network_report(max_entries: Option<usize>) -> GradCheckReport {
    let cfg = micro_config();
    let (net, store) = Network::new::<f64>(&cfg, 7).unwrap();
    let mut r = rng(77);
    let mut inputs = vec![uniform(&[1, 3, 16, 16], 0.0, 1.0, &mut r)];
    inputs.extend(jitter(&store, &mut r));
    check_with(&inputs, 78, max_entries, |tape, vars| {
        let bound = Bound::from_vars(vars[1..].to_vec());
        let mut f = Forward::new(tape, &bound);
        net.forward(&mut f, vars[0])
    })
}
