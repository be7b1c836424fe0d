//! Run configuration: one `key = value` file covering model, data, training and
//! evaluation settings.

use std::fmt::Write;
use std::path::PathBuf;

use crate::data::DegradationSpec;
use crate::error::{Error, Result};
use crate::metrics::ChannelMode;
use crate::model::{parse, ModelConfig};
use crate::train::TrainOptions;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub degradation: DegradationSpec,
    pub train: TrainOptions,
    /// Number of pairs `synth` generates.
    pub count: usize,
    /// Side length of synthesized images.
    pub size: usize,
    /// Evaluate with local pooling (window = `train.patch`).
    pub tlc: bool,
    pub metric_mode: ChannelMode,
    pub data: Option<PathBuf>,
    pub val_data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            degradation: DegradationSpec::default(),
            train: TrainOptions::default(),
            count: 50,
            size: 128,
            tlc: false,
            metric_mode: ChannelMode::Rgb,
            data: None,
            val_data: None,
            checkpoint: None,
            input: None,
            out: None,
        }
    }
}

fn path_value(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or_else(|| "none".into(), |p| p.display().to_string())
}

impl RunConfig {
    /// Applies one setting. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        if self.model.set(key, value)? || self.degradation.set(key, value)? || self.train.set(key, value)? {
            return Ok(());
        }
        let path = || (value != "none").then(|| PathBuf::from(value));
        match key {
            "count" => self.count = parse(key, value)?,
            "size" => self.size = parse(key, value)?,
            "tlc" => self.tlc = parse(key, value)?,
            "metric_mode" => self.metric_mode = value.parse()?,
            "data" => self.data = path(),
            "val_data" => self.val_data = path(),
            "checkpoint" => self.checkpoint = path(),
            "input" => self.input = path(),
            "out" => self.out = path(),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{raw}`", n + 1)))?;
            cfg.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.degradation.validate()?;
        self.train.validate()?;
        if self.size == 0 {
            return Err(Error::Config("size must be >= 1".into()));
        }
        Ok(())
    }

    /// The TLC window evaluation should use, if any.
    pub fn tlc_window(&self) -> Option<usize> {
        self.tlc.then_some(self.model.tlc_window.unwrap_or(self.train.patch))
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out = self.model.to_pairs();
        out.extend(self.degradation.to_pairs());
        out.extend(self.train.to_pairs());
        out.extend([
            ("count".into(), self.count.to_string()),
            ("size".into(), self.size.to_string()),
            ("tlc".into(), self.tlc.to_string()),
            ("metric_mode".into(), self.metric_mode.to_string()),
            ("data".into(), path_value(&self.data)),
            ("val_data".into(), path_value(&self.val_data)),
            ("checkpoint".into(), path_value(&self.checkpoint)),
            ("input".into(), path_value(&self.input)),
            ("out".into(), path_value(&self.out)),
        ]);
        out
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_pairs() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.set("width", "8").unwrap();
        cfg.set("kind", "blur").unwrap();
        cfg.set("blur", "box:3").unwrap();
        cfg.set("data", "/tmp/x").unwrap();
        cfg.set("clip_norm", "1.5").unwrap();
        let back = RunConfig::parse_str(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_names_line() {
        let err = RunConfig::parse_str("width = 8\n\nfrobnicate = 1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3") && msg.contains("frobnicate"), "{msg}");
    }
}
