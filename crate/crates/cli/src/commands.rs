use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use summit_core::data::{load_dataset, load_image, save_dataset, save_image, synthesize_pairs};
use summit_core::model::{count_params, estimate_macs};
use summit_core::train::{baseline_report, evaluate};
use summit_core::{Checkpoint, ImagePair, TrainState};

use crate::settings::Settings;

fn require<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| anyhow!("`{key}` is required (config key `{key}` or flag --{key})"))
}

/// Creates the output directory and echoes the effective config into it.
fn prepare_out(settings: &Settings) -> Result<&Path> {
    let out = require(&settings.config.out, "out")?;
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    fs::write(out.join("config.txt"), settings.config.to_text())?;
    Ok(out)
}

fn load_pairs(root: &Path) -> Result<Vec<ImagePair>> {
    let ds = load_dataset(root).with_context(|| format!("dataset {}", root.display()))?;
    for w in &ds.warnings {
        log::warn!("{w}");
    }
    Ok(ds.pairs)
}

/// Loads a checkpoint and refuses it when explicitly requested settings disagree with it.
fn load_state(settings: &Settings, with_training_keys: bool) -> Result<TrainState> {
    let path = require(&settings.config.checkpoint, "checkpoint")?;
    let ck = Checkpoint::load(path).with_context(|| format!("checkpoint {}", path.display()))?;
    let state = TrainState::from_checkpoint(&ck).with_context(|| format!("checkpoint {}", path.display()))?;
    let cfg = &settings.config;
    let mut diffs: Vec<(String, String, String)> = state.model.diff(&cfg.model);
    if with_training_keys {
        diffs.extend(
            state
                .options
                .to_pairs()
                .into_iter()
                .zip(cfg.train.to_pairs())
                .filter(|((_, a), (_, b))| a != b)
                .map(|((k, a), (_, b))| (k, a, b)),
        );
    }
    let diffs: Vec<String> = diffs
        .into_iter()
        .filter(|(k, _, _)| settings.explicit.contains(k))
        .map(|(k, ck, cfg)| format!("{k}: checkpoint={ck} config={cfg}"))
        .collect();
    if !diffs.is_empty() {
        bail!("checkpoint/config mismatch: {}", diffs.join("; "));
    }
    Ok(state)
}

pub fn synth(settings: &Settings) -> Result<()> {
    let cfg = &settings.config;
    let out = prepare_out(settings)?;
    let pairs = synthesize_pairs(cfg.count, cfg.size, &cfg.degradation, cfg.train.seed)?;
    save_dataset(out, &pairs)?;
    let spec: String = cfg.degradation.to_pairs().iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    fs::write(out.join("spec.txt"), spec)?;
    println!("wrote {} pairs of {}x{} to {}", pairs.len(), cfg.size, cfg.size, out.display());
    Ok(())
}

pub fn train(settings: &Settings) -> Result<()> {
    let cfg = &settings.config;
    let data = load_pairs(require(&cfg.data, "data")?)?;
    let val = match &cfg.val_data {
        Some(p) => load_pairs(p)?,
        None => Vec::new(),
    };
    let mut state = if cfg.checkpoint.is_some() {
        let s = load_state(settings, true)?;
        log::info!("resuming at step {}", s.step);
        s
    } else {
        TrainState::new(&cfg.model, &cfg.train)?
    };
    let out = prepare_out(settings)?;
    let logs = summit_core::train::train(&mut state, &data, &val, None, Some(out))?;
    match logs.last() {
        Some(last) => println!("{last}"),
        None => println!("nothing to do: checkpoint is already at step {}", state.step),
    }
    println!("checkpoint: {}", out.join("checkpoint.bin").display());
    Ok(())
}

pub fn eval(settings: &Settings) -> Result<()> {
    let cfg = &settings.config;
    let state = load_state(settings, false)?;
    let data = load_pairs(require(&cfg.data, "data")?)?;
    let window = cfg.tlc.then(|| state.model.tlc_window.unwrap_or(state.options.patch));
    let report = evaluate(&state.net, &state.params, &data, window, cfg.metric_mode)?;
    let baseline = baseline_report(&data, cfg.metric_mode)?;
    let out = prepare_out(settings)?;
    fs::write(out.join("metrics.csv"), report.to_csv())?;
    let summary = format!(
        "restored {}\ndegraded {}\ntlc_window={}\n",
        report.summary(),
        baseline.summary(),
        window.map_or_else(|| "none".into(), |w| w.to_string())
    );
    fs::write(out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn png_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    if !input.is_dir() {
        bail!("input {} does not exist", input.display());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(input)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")));
    files.sort();
    if files.is_empty() {
        bail!("no PNG files in {}", input.display());
    }
    Ok(files)
}

pub fn restore(settings: &Settings) -> Result<()> {
    let cfg = &settings.config;
    let state = load_state(settings, false)?;
    let inputs = png_inputs(require(&cfg.input, "input")?)?;
    let out = require(&cfg.out, "out")?;
    fs::create_dir_all(out)?;
    let out_canon = out.canonicalize()?;
    for src in &inputs {
        let dir = src.canonicalize()?.parent().map(Path::to_path_buf);
        if dir.as_deref() == Some(out_canon.as_path()) {
            bail!("refusing to overwrite input {} (choose a different --out)", src.display());
        }
    }
    let targets: Vec<PathBuf> = inputs
        .iter()
        .map(|p| out.join(p.file_name().expect("file paths have names")))
        .collect();
    prepare_out(settings)?;
    let window = cfg.tlc.then(|| state.model.tlc_window.unwrap_or(state.options.patch));
    for (src, dst) in inputs.iter().zip(&targets) {
        let image = load_image(src).with_context(|| format!("image {}", src.display()))?;
        let restored = state.net.restore(&state.params, &image, window)?.clamp(0.0, 1.0);
        save_image(dst, &restored)?;
        println!("{} -> {}", src.display(), dst.display());
    }
    Ok(())
}

pub fn inspect(settings: &Settings, resolution: usize) -> Result<()> {
    let model = &settings.config.model;
    let params = count_params(model)? as f64;
    let macs = estimate_macs(model, resolution, resolution)? as f64;
    println!(
        "width={} ablation={} params={:.2}M macs={:.2}G flops={:.2}G resolution={resolution}x{resolution}",
        model.width,
        model.ablation,
        params / 1e6,
        macs / 1e9,
        2.0 * macs / 1e9
    );
    Ok(())
}
