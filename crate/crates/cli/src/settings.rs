use std::collections::BTreeSet;
use std::fs;

use anyhow::{bail, Context, Result};
use summit_core::RunConfig;

use crate::Flags;

/// The effective configuration plus the keys the user set explicitly.
pub struct Settings {
    pub config: RunConfig,
    pub explicit: BTreeSet<String>,
}

fn keys_of(text: &str) -> impl Iterator<Item = String> + '_ {
    text.lines()
        .filter_map(|l| l.split('#').next())
        .filter_map(|l| l.split_once('='))
        .map(|(k, _)| k.trim().to_string())
}

pub fn resolve(flags: &Flags) -> Result<Settings> {
    let mut explicit = BTreeSet::new();
    let mut config = match &flags.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
            let cfg = RunConfig::parse_str(&text).with_context(|| format!("config {}", path.display()))?;
            explicit.extend(keys_of(&text));
            cfg
        }
        None => RunConfig::default(),
    };
    let mut apply = |key: &str, value: &str| -> Result<()> {
        config.set(key, value).with_context(|| format!("setting `{key}`"))?;
        explicit.insert(key.to_string());
        Ok(())
    };
    for kv in &flags.overrides {
        let Some((k, v)) = kv.split_once('=') else {
            bail!("--set expects KEY=VALUE, got `{kv}`");
        };
        apply(k.trim(), v)?;
    }
    if let Some(w) = flags.width.as_deref().filter(|w| *w != "custom") {
        apply("width", w)?;
    }
    if let Some(a) = &flags.ablation {
        apply("ablation", a)?;
    }
    if flags.tlc {
        apply("tlc", "true")?;
    }
    for (key, value) in [
        ("seed", flags.seed.map(|v| v.to_string())),
        ("iters", flags.iters.map(|v| v.to_string())),
        ("batch", flags.batch.map(|v| v.to_string())),
    ] {
        if let Some(v) = value {
            apply(key, &v)?;
        }
    }
    for (key, path) in [
        ("out", &flags.out),
        ("data", &flags.data),
        ("checkpoint", &flags.checkpoint),
        ("input", &flags.input),
    ] {
        if let Some(p) = path {
            apply(key, &p.to_string_lossy())?;
        }
    }
    config.validate()?;
    Ok(Settings { config, explicit })
}
