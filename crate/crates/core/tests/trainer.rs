mod common;

use common::{rng, uniform};
use proptest::prelude::*;
use summit_core::data::{synthesize_pairs, DegradationSpec, ImagePair};
use summit_core::metrics::{psnr_loss, ChannelMode};
use summit_core::nn::{Forward, ParamStore};
use summit_core::train::{adam_step, cosine_lr, evaluate, train, train_step, AdamState};
use summit_core::{Checkpoint, Error, ModelConfig, RunConfig, Tape, Tensor, TrainOptions, TrainState};

fn tiny_model() -> ModelConfig {
    let mut m = ModelConfig::with_width(8);
    m.enc_blocks = [1, 1, 1, 2];
    m
}

fn tiny_options(iters: usize) -> TrainOptions {
    TrainOptions {
        total_iters: iters,
        batch: 2,
        patch: 32,
        seed: 11,
        val_every: Some(10),
        ..TrainOptions::default()
    }
}

#[test]
fn cosine_schedule_endpoints_and_midpoint() {
    assert_eq!(cosine_lr(0, 100, 1e-3, 1e-7).unwrap(), 1e-3);
    assert!((cosine_lr(100, 100, 1e-3, 1e-7).unwrap() - 1e-7).abs() < 1e-18);
    assert!((cosine_lr(50, 100, 1e-3, 1e-7).unwrap() - (1e-3 + 1e-7) / 2.0).abs() < 1e-15);
    assert!(cosine_lr(101, 100, 1e-3, 1e-7).is_err());
    assert!(cosine_lr(0, 0, 1e-3, 1e-7).is_err());
}

proptest! {
    #[test]
    fn cosine_schedule_is_monotone(total in 1usize..5000, lr0 in 1e-6f64..1.0, frac in 0.0f64..1.0) {
        let lr1 = lr0 * frac;
        let mut prev = f64::INFINITY;
        for t in 0..=total.min(300) {
            let lr = cosine_lr(t * total / total.min(300), total, lr0, lr1).unwrap();
            prop_assert!(lr <= prev + 1e-18);
            prop_assert!(lr >= lr1 - 1e-15 && lr <= lr0 + 1e-15);
            prev = lr;
        }
    }
}

fn bowl_store(init: &[f64]) -> ParamStore<f64> {
    let mut store = ParamStore::new();
    store.add("w", Tensor::new(vec![init.len()], init.to_vec()).unwrap());
    store
}

#[test]
fn adam_ignores_zero_gradients() {
    let mut store = bowl_store(&[0.5, -2.0, 3.0]);
    let before = store.values().to_vec();
    let mut state = AdamState::zeros_like(&store);
    for t in 1..=5 {
        adam_step(&mut store, &mut state, &[Tensor::zeros(vec![3])], 1e-2, t).unwrap();
    }
    assert_eq!(store.values(), &before[..]);
}

#[test]
fn adam_descends_a_quadratic_bowl() {
    // Adam moves each coordinate by at most ~lr per step, so start within unit distance
    let centre = [0.3, -0.7, 0.1, 0.0];
    let mut store = bowl_store(&[1.2, 0.2, -0.4, 0.6]);
    let mut state = AdamState::zeros_like(&store);
    let loss = |s: &ParamStore<f64>| s.values()[0].data().iter().zip(&centre).map(|(p, c)| (p - c) * (p - c)).sum::<f64>();
    let mut reached = None;
    for t in 1..=500 {
        let grad: Vec<f64> = store.values()[0].data().iter().zip(&centre).map(|(p, c)| 2.0 * (p - c)).collect();
        adam_step(&mut store, &mut state, &[Tensor::new(vec![4], grad).unwrap()], 1e-2, t).unwrap();
        if loss(&store) < 1e-6 {
            reached = Some(t);
            break;
        }
    }
    assert!(reached.is_some(), "final loss {}", loss(&store));
}

#[test]
fn identity_data_sits_at_the_loss_floor() {
    let state = TrainState::new(&tiny_model(), &tiny_options(10)).unwrap();
    let clean: Tensor<f32> = uniform(&[2, 3, 32, 32], 0.0, 1.0, &mut rng(3));
    let mut tape = Tape::new();
    let bound = state.params.bind(&mut tape);
    let mut f = Forward::new(&mut tape, &bound);
    let x = f.tape.constant(clean.clone());
    let y = f.tape.constant(clean);
    let out = state.net.forward(&mut f, x).unwrap();
    let loss = psnr_loss(&mut tape, out, y).unwrap();
    assert!((f64::from(tape.value(loss).item().unwrap()) + 80.0).abs() < 1e-4);
    let grads = tape.backward(loss).unwrap();
    for id in state.params.ids() {
        let g = grads.get_or_zeros(bound.var(id), state.params.get(id).shape());
        assert!(g.l2_norm() < 1e-6, "{} {}", state.params.name(id), g.l2_norm());
    }
}

fn tiny_data(count: usize, size: usize, seed: u64) -> Vec<ImagePair> {
    synthesize_pairs(count, size, &DegradationSpec::default(), seed).unwrap()
}

#[test]
fn short_run_reduces_the_loss() {
    let data = tiny_data(20, 32, 1);
    let val = tiny_data(3, 32, 2);
    let mut state = TrainState::new(&tiny_model(), &tiny_options(200)).unwrap();
    let logs = train(&mut state, &data, &val, None, None).unwrap();
    assert_eq!(state.step, 200);
    let (first, last) = (logs.first().unwrap(), logs.last().unwrap());
    assert!(last.loss < first.loss, "{first} -> {last}");
    assert!(logs.iter().all(|l| l.val_psnr.is_finite()));
}

#[test]
fn resuming_matches_an_uninterrupted_run() {
    let data = tiny_data(6, 32, 4);
    let mut straight = TrainState::new(&tiny_model(), &tiny_options(24)).unwrap();
    train(&mut straight, &data, &[], None, None).unwrap();

    let mut first = TrainState::new(&tiny_model(), &tiny_options(24)).unwrap();
    train(&mut first, &data, &[], Some(9), None).unwrap();
    assert_eq!(first.step, 9);
    let bytes = first.to_checkpoint().to_bytes().unwrap();
    let mut resumed = TrainState::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    train(&mut resumed, &data, &[], None, None).unwrap();

    assert_eq!(resumed.step, 24);
    assert_eq!(resumed.params.values(), straight.params.values());
    assert_eq!(resumed.adam.m, straight.adam.m);
    assert_eq!(resumed.adam.v, straight.adam.v);
}

#[test]
fn checkpoints_round_trip_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_data(4, 32, 5);
    let mut state = TrainState::new(&tiny_model(), &tiny_options(5)).unwrap();
    train(&mut state, &data, &data, None, Some(dir.path())).unwrap();
    let path = dir.path().join("checkpoint.bin");
    let original = std::fs::read(&path).unwrap();
    let loaded = TrainState::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    let again = dir.path().join("again.bin");
    loaded.to_checkpoint().save(&again).unwrap();
    assert_eq!(std::fs::read(&again).unwrap(), original);
    assert_eq!(loaded.best_val_psnr, state.best_val_psnr);
    assert!(std::fs::read_to_string(dir.path().join("train.log")).unwrap().contains("step=5"));
}

#[test]
fn corrupt_or_mismatched_checkpoints_are_rejected() {
    let state = TrainState::new(&tiny_model(), &tiny_options(5)).unwrap();
    let mut bytes = state.to_checkpoint().to_bytes().unwrap();
    bytes.truncate(bytes.len() - 3);
    assert!(matches!(Checkpoint::<f32>::from_bytes(&bytes), Err(Error::Checkpoint(_))));
    assert!(Checkpoint::<f32>::from_bytes(b"not a checkpoint").is_err());

    let mut ck = state.to_checkpoint();
    ck.tensors.pop();
    assert!(TrainState::from_checkpoint(&ck).is_err());
}

#[test]
fn local_pooling_matches_global_on_small_images() {
    let state = TrainState::new(&tiny_model(), &tiny_options(5)).unwrap();
    // perturb the zero-initialized head so the comparison is not trivial
    let mut params = state.params.clone();
    let mut r = rng(8);
    for id in params.ids().collect::<Vec<_>>() {
        let v = params.get(id);
        let jittered = v.data().iter().map(|x| x + rand::Rng::random_range(&mut r, -0.05f32..0.05)).collect();
        params.set(id, Tensor::new(v.shape().to_vec(), jittered).unwrap()).unwrap();
    }
    let data = tiny_data(3, 32, 6);
    let global = evaluate(&state.net, &params, &data, None, ChannelMode::Rgb).unwrap();
    let local = evaluate(&state.net, &params, &data, Some(64), ChannelMode::Rgb).unwrap();
    for (a, b) in global.images.iter().zip(&local.images) {
        assert!((a.1 - b.1).abs() <= 1e-6 && (a.2 - b.2).abs() <= 1e-6, "{a:?} vs {b:?}");
    }
}

#[test]
fn non_finite_weights_produce_a_divergence_report() {
    let mut state = TrainState::new(&tiny_model(), &tiny_options(5)).unwrap();
    let id = state.params.id("intro.weight").unwrap();
    let shape = state.params.get(id).shape().to_vec();
    state.params.set(id, Tensor::full(shape, f32::NAN)).unwrap();
    let batch = tiny_data(2, 32, 7);
    match train_step(&mut state, &batch) {
        Err(Error::Diverged(report)) => {
            assert_eq!(report.step, 0);
            assert!(!report.loss.is_finite());
            assert!(report.grad_norms.iter().any(|(n, _)| n == "intro.weight"));
        }
        other => panic!("expected divergence, got {other:?}"),
    }
    assert_eq!(state.step, 0);
}

#[test]
fn run_config_text_round_trips() {
    let text = "# demo\nwidth = 16\nenc_blocks = 1,1,1,2\nablation = ffm\niters = 30 # short\nkind = blur\nblur = motion:7:45\ntlc = true\n";
    let cfg = RunConfig::parse_str(text).unwrap();
    assert_eq!(cfg.model.width, 16);
    assert_eq!(cfg.train.total_iters, 30);
    assert_eq!(cfg.tlc_window(), Some(cfg.train.patch));
    assert_eq!(RunConfig::parse_str(&cfg.to_text()).unwrap(), cfg);
}

#[test]
fn run_config_errors_name_the_line() {
    let err = RunConfig::parse_str("width = 8\nwidht = 9\n").unwrap_err().to_string();
    assert!(err.contains("line 2") && err.contains("widht"), "{err}");
    assert!(RunConfig::parse_str("width 8").is_err());
    assert!(RunConfig::parse_str("width = eight").is_err());
    let mut cfg = RunConfig::default();
    cfg.train.patch = 40;
    assert!(cfg.validate().is_err());
}
