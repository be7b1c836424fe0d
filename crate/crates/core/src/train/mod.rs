//! Optimization loop, training state persistence and evaluation.

mod optim;

use std::fmt;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use optim::{adam_step, clip_global_norm, cosine_lr, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

use crate::autodiff::Tape;
use crate::checkpoint::Checkpoint;
use crate::data::{augment, derive_seed, sample_patch, EpochOrder, ImagePair};
use crate::error::{DivergenceReport, Error, Result};
use crate::metrics::{psnr_loss, ChannelMode, MetricReport};
use crate::model::{parse, ModelConfig, Network};
use crate::nn::{Forward, ParamStore};
use crate::tensor::Tensor;

/// Settings of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub total_iters: usize,
    pub batch: usize,
    pub patch: usize,
    pub seed: u64,
    pub lr0: f64,
    pub lr1: f64,
    /// Validation interval; `None` means `max(total_iters / 20, 100)`.
    pub val_every: Option<usize>,
    /// Checkpoint interval; `None` saves only at validation points and at the end.
    pub checkpoint_every: Option<usize>,
    /// Optional global gradient-norm clip.
    pub clip_norm: Option<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            total_iters: 2000,
            batch: 4,
            patch: 256,
            seed: 0,
            lr0: 1e-3,
            lr1: 1e-7,
            val_every: None,
            checkpoint_every: None,
            clip_norm: None,
        }
    }
}

fn opt_to_string<T: ToString>(v: &Option<T>, none: &str) -> String {
    v.as_ref().map_or_else(|| none.to_string(), T::to_string)
}

fn parse_opt<T: std::str::FromStr>(key: &str, value: &str, none: &str) -> Result<Option<T>> {
    if value == none {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

impl TrainOptions {
    pub fn validation_interval(&self) -> usize {
        self.val_every.unwrap_or((self.total_iters / 20).max(100)).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.total_iters == 0 {
            return bad("iters must be >= 1");
        }
        if self.batch == 0 {
            return bad("batch must be >= 1");
        }
        if self.patch == 0 || !self.patch.is_multiple_of(crate::model::SPATIAL_MULTIPLE) {
            return Err(Error::Config(format!(
                "patch must be a positive multiple of {}, got {}",
                crate::model::SPATIAL_MULTIPLE,
                self.patch
            )));
        }
        if !(self.lr0 > 0.0 && self.lr1 >= 0.0 && self.lr1 <= self.lr0) {
            return bad("learning rates need lr0 > 0 and 0 <= lr1 <= lr0");
        }
        if self.val_every == Some(0) || self.checkpoint_every == Some(0) {
            return bad("intervals must be >= 1");
        }
        if self.clip_norm.is_some_and(|c| c.is_nan() || c <= 0.0) {
            return bad("clip_norm must be > 0");
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("iters".into(), self.total_iters.to_string()),
            ("batch".into(), self.batch.to_string()),
            ("patch".into(), self.patch.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("lr0".into(), self.lr0.to_string()),
            ("lr1".into(), self.lr1.to_string()),
            ("val_every".into(), opt_to_string(&self.val_every, "auto")),
            ("checkpoint_every".into(), opt_to_string(&self.checkpoint_every, "none")),
            ("clip_norm".into(), opt_to_string(&self.clip_norm, "none")),
        ]
    }

    /// Applies one setting; returns `Ok(false)` for keys that are not training keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "iters" => self.total_iters = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "patch" => self.patch = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "lr0" => self.lr0 = parse(key, value)?,
            "lr1" => self.lr1 = parse(key, value)?,
            "val_every" => self.val_every = parse_opt(key, value, "auto")?,
            "checkpoint_every" => self.checkpoint_every = parse_opt(key, value, "none")?,
            "clip_norm" => self.clip_norm = parse_opt(key, value, "none")?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Everything needed to continue a run: parameters, optimizer moments and schedule position.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: ModelConfig,
    pub options: TrainOptions,
    pub net: Network,
    pub params: ParamStore<f32>,
    pub adam: AdamState<f32>,
    pub step: usize,
    pub best_val_psnr: f64,
}

impl TrainState {
    /// Fresh state; parameters are initialized from `options.seed`.
    pub fn new(model: &ModelConfig, options: &TrainOptions) -> Result<Self> {
        options.validate()?;
        let (net, params) = Network::new::<f32>(model, options.seed)?;
        let adam = AdamState::zeros_like(&params);
        Ok(Self {
            model: model.clone(),
            options: options.clone(),
            net,
            params,
            adam,
            step: 0,
            best_val_psnr: f64::NEG_INFINITY,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint<f32> {
        let mut meta = self.model.to_pairs();
        meta.extend(self.options.to_pairs());
        meta.push(("step".into(), self.step.to_string()));
        meta.push(("best_val_psnr".into(), self.best_val_psnr.to_string()));
        let mut tensors = Vec::with_capacity(3 * self.params.len());
        for (prefix, values) in [
            ("param", self.params.values()),
            ("adam_m", &self.adam.m[..]),
            ("adam_v", &self.adam.v[..]),
        ] {
            for (id, v) in self.params.ids().zip(values) {
                tensors.push((format!("{prefix}/{}", self.params.name(id)), v.clone()));
            }
        }
        Checkpoint { meta, tensors }
    }

    pub fn from_checkpoint(ck: &Checkpoint<f32>) -> Result<Self> {
        let mut model = ModelConfig::default();
        let mut options = TrainOptions::default();
        let (mut step, mut best) = (None, None);
        for (k, v) in &ck.meta {
            if model.set(k, v)? || options.set(k, v)? {
                continue;
            }
            match k.as_str() {
                "step" => step = Some(parse::<usize>(k, v)?),
                "best_val_psnr" => best = Some(parse::<f64>(k, v)?),
                _ => return Err(Error::Checkpoint(format!("unknown header key `{k}`"))),
            }
        }
        model.validate()?;
        let mut state = Self::new(&model, &options)?;
        state.step = step.ok_or_else(|| Error::Checkpoint("missing header key `step`".into()))?;
        state.best_val_psnr = best.unwrap_or(f64::NEG_INFINITY);
        if state.step > options.total_iters {
            return Err(Error::Checkpoint(format!(
                "step {} is past total_iters {}",
                state.step, options.total_iters
            )));
        }
        if ck.tensors.len() != 3 * state.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors for this configuration, found {}",
                3 * state.params.len(),
                ck.tensors.len()
            )));
        }
        let ids: Vec<_> = state.params.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let name = state.params.name(id).to_string();
            let fetch = |prefix: &str| {
                let key = format!("{prefix}/{name}");
                let t = ck
                    .tensor(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{key}`")))?;
                if t.shape() != state.params.get(id).shape() {
                    return Err(Error::Checkpoint(format!(
                        "tensor `{key}` has shape {:?}, the configuration needs {:?}",
                        t.shape(),
                        state.params.get(id).shape()
                    )));
                }
                Ok(t.clone())
            };
            let (p, m, v) = (fetch("param")?, fetch("adam_m")?, fetch("adam_v")?);
            state.params.set(id, p)?;
            state.adam.m[i] = m;
            state.adam.v[i] = v;
        }
        Ok(state)
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainLog {
    pub step: usize,
    pub lr: f64,
    /// Mean training loss since the previous log line.
    pub loss: f64,
    pub val_psnr: f64,
}

impl fmt::Display for TrainLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step={} lr={:.6e} loss={:.6} val_psnr={:.4}",
            self.step, self.lr, self.loss, self.val_psnr
        )
    }
}

/// Runs one optimizer step on a batch; returns the loss.
pub fn train_step(state: &mut TrainState, batch: &[ImagePair]) -> Result<f64> {
    let opts = &state.options;
    let degraded = Tensor::stack_batch(&batch.iter().map(|p| p.degraded.clone()).collect::<Vec<_>>())?;
    let clean = Tensor::stack_batch(&batch.iter().map(|p| p.clean.clone()).collect::<Vec<_>>())?;
    let lr = cosine_lr(state.step, opts.total_iters, opts.lr0, opts.lr1)?;

    let mut tape = Tape::new();
    let bound = state.params.bind(&mut tape);
    let mut f = Forward::new(&mut tape, &bound);
    let x = f.tape.constant(degraded);
    let y = f.tape.constant(clean);
    let out = state.net.forward(&mut f, x)?;
    let loss_var = psnr_loss(&mut tape, out, y)?;
    let loss = f64::from(tape.value(loss_var).item()?);
    let grads = tape.backward(loss_var)?;
    let mut grads: Vec<Tensor<f32>> = state
        .params
        .ids()
        .map(|id| grads.get_or_zeros(bound.var(id), state.params.get(id).shape()))
        .collect();
    drop(tape);

    if !loss.is_finite() || grads.iter().any(|g| !g.all_finite()) {
        let grad_norms = state
            .params
            .ids()
            .zip(&grads)
            .map(|(id, g)| (state.params.name(id).to_string(), g.l2_norm()))
            .collect();
        return Err(Error::Diverged(DivergenceReport {
            step: state.step,
            lr,
            loss,
            grad_norms,
        }));
    }
    if let Some(max) = opts.clip_norm {
        clip_global_norm(&mut grads, max);
    }
    adam_step(&mut state.params, &mut state.adam, &grads, lr, state.step + 1)?;
    state.step += 1;
    Ok(loss)
}

/// Patches for step `step`, reproducible from `(seed, step)` alone.
pub fn sample_batch(
    train: &[ImagePair],
    order: &mut EpochOrder,
    options: &TrainOptions,
    step: usize,
) -> Result<Vec<ImagePair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(options.seed, u64::MAX), step as u64));
    (0..options.batch)
        .map(|j| {
            let idx = order.index((step * options.batch + j) as u64);
            let p = sample_patch(&train[idx], options.patch, &mut rng)?;
            Ok(augment(&p, &mut rng))
        })
        .collect()
}

/// Trains until `stop_at` (or the end of the schedule), validating on `val` periodically.
///
/// With `run_dir`, log lines are appended to `train.log` and the state is written to
/// `checkpoint.bin` at every validation point, every `checkpoint_every` steps and at the end.
pub fn train(
    state: &mut TrainState,
    train: &[ImagePair],
    val: &[ImagePair],
    stop_at: Option<usize>,
    run_dir: Option<&Path>,
) -> Result<Vec<TrainLog>> {
    if train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let end = stop_at.unwrap_or(state.options.total_iters).min(state.options.total_iters);
    let mut order = EpochOrder::new(state.options.seed, train.len())?;
    let val_every = state.options.validation_interval();
    let mut logs = Vec::new();
    let (mut loss_sum, mut loss_n) = (0.0, 0usize);
    while state.step < end {
        let batch = sample_batch(train, &mut order, &state.options, state.step)?;
        let lr = cosine_lr(state.step, state.options.total_iters, state.options.lr0, state.options.lr1)?;
        loss_sum += train_step(state, &batch)?;
        loss_n += 1;

        let at_end = state.step == state.options.total_iters;
        let validate = state.step.is_multiple_of(val_every) || at_end;
        if validate {
            let val_psnr = if val.is_empty() {
                f64::NAN
            } else {
                evaluate(&state.net, &state.params, val, None, ChannelMode::Rgb)?.mean_psnr()
            };
            if val_psnr > state.best_val_psnr {
                state.best_val_psnr = val_psnr;
            }
            let entry = TrainLog {
                step: state.step,
                lr,
                loss: loss_sum / loss_n as f64,
                val_psnr,
            };
            (loss_sum, loss_n) = (0.0, 0);
            log::info!("{entry}");
            if let Some(dir) = run_dir {
                let mut f = OpenOptions::new().create(true).append(true).open(dir.join("train.log"))?;
                writeln!(f, "{entry}")?;
            }
            logs.push(entry);
        }
        let periodic = state.options.checkpoint_every.is_some_and(|k| state.step.is_multiple_of(k));
        if let (Some(dir), true) = (run_dir, validate || periodic) {
            state.to_checkpoint().save(&dir.join("checkpoint.bin"))?;
        }
    }
    if let Some(dir) = run_dir {
        state.to_checkpoint().save(&dir.join("checkpoint.bin"))?;
    }
    Ok(logs)
}

/// Full-resolution restoration of every pair and its PSNR/SSIM against the clean image.
/// `tlc` replaces global pooling in channel attention with a local window.
pub fn evaluate(
    net: &Network,
    params: &ParamStore<f32>,
    data: &[ImagePair],
    tlc: Option<usize>,
    mode: ChannelMode,
) -> Result<MetricReport> {
    let rows = data
        .par_iter()
        .map(|pair| {
            let restored = net.restore(params, &pair.degraded, tlc)?;
            let mut r = MetricReport::new(mode);
            r.push(pair.id.clone(), &restored, &pair.clean)?;
            Ok(r.images.remove(0))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport { mode, images: rows })
}

/// PSNR/SSIM of the degraded inputs themselves, the no-restoration reference.
pub fn baseline_report(data: &[ImagePair], mode: ChannelMode) -> Result<MetricReport> {
    let mut r = MetricReport::new(mode);
    for p in data {
        r.push(p.id.clone(), &p.degraded, &p.clean)?;
    }
    Ok(r)
}
