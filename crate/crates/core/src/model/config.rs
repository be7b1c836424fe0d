use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Number of encoder/decoder levels.
pub const LEVELS: usize = 4;

/// Input height and width must be multiples of this (four downsamplings to the
/// encoder's deepest level plus one more into the bottleneck).
pub const SPATIAL_MULTIPLE: usize = 1 << LEVELS;

/// Which optional components a network includes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Ablation {
    /// Plain encoder skips and an identity bottleneck.
    Baseline,
    /// Feature-fusion lattice only.
    Ffm,
    /// Bottleneck attention only.
    Mhamb,
    #[default]
    Full,
}

impl Ablation {
    pub fn uses_ffm(self) -> bool {
        matches!(self, Ablation::Ffm | Ablation::Full)
    }

    pub fn uses_mhamb(self) -> bool {
        matches!(self, Ablation::Mhamb | Ablation::Full)
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::Baseline => "baseline",
            Ablation::Ffm => "ffm",
            Ablation::Mhamb => "mhamb",
            Ablation::Full => "full",
        })
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Ablation::Baseline),
            "ffm" => Ok(Ablation::Ffm),
            "mhamb" => Ok(Ablation::Mhamb),
            "full" => Ok(Ablation::Full),
            other => Err(Error::Config(format!(
                "unknown ablation `{other}` (expected baseline, ffm, mhamb or full)"
            ))),
        }
    }
}

/// Shape of one network instance.
///
/// Block lists are indexed by level, level 0 being full resolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub width: usize,
    pub enc_blocks: [usize; LEVELS],
    pub dec_blocks: [usize; LEVELS],
    pub ffm_blocks: [usize; LEVELS],
    pub heads: usize,
    pub ablation: Ablation,
    /// Local pooling window for channel attention at inference; `None` pools globally.
    pub tlc_window: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::with_width(32)
    }
}

impl ModelConfig {
    pub fn with_width(width: usize) -> Self {
        Self {
            width,
            enc_blocks: [1, 1, 1, 28],
            dec_blocks: [1, 1, 1, 1],
            ffm_blocks: [2, 2, 1, 0],
            heads: 8,
            ablation: Ablation::Full,
            tlc_window: None,
        }
    }

    /// Channels at `level` (0-based); `level == LEVELS` is the bottleneck.
    pub fn channels(&self, level: usize) -> usize {
        self.width << level
    }

    /// FFM units per level after applying the ablation.
    pub fn effective_ffm(&self) -> [usize; LEVELS] {
        if self.ablation.uses_ffm() {
            self.ffm_blocks
        } else {
            [0; LEVELS]
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || !self.width.is_multiple_of(2) {
            return Err(Error::Config(format!("width must be a positive even number, got {}", self.width)));
        }
        let ffm = &self.ffm_blocks;
        if ffm[LEVELS - 1] != 0 {
            return Err(Error::Config(format!(
                "ffm_blocks: the deepest level has no level above it to fuse from, got {}",
                ffm[LEVELS - 1]
            )));
        }
        for i in 0..LEVELS - 1 {
            // unit (s, i) fuses unit (s-1, i+1), or the encoder output when s == 1
            if ffm[i] > ffm[i + 1] + 1 {
                return Err(Error::Config(format!(
                    "ffm_blocks: level {} asks for {} units but level {} only provides {}",
                    i + 1,
                    ffm[i],
                    i + 2,
                    ffm[i + 1] + 1
                )));
            }
        }
        if self.ablation.uses_mhamb() {
            let c = self.channels(LEVELS);
            if self.heads == 0 || !c.is_multiple_of(self.heads) {
                return Err(Error::Config(format!(
                    "heads ({}) must divide the bottleneck channel count ({c})",
                    self.heads
                )));
            }
        }
        if self.tlc_window == Some(0) {
            return Err(Error::Config("tlc_window must be >= 1".into()));
        }
        Ok(())
    }

    /// `key=value` pairs in a fixed order; the inverse of [`ModelConfig::from_pairs`].
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("width".into(), self.width.to_string()),
            ("enc_blocks".into(), join(&self.enc_blocks)),
            ("dec_blocks".into(), join(&self.dec_blocks)),
            ("ffm_blocks".into(), join(&self.ffm_blocks)),
            ("heads".into(), self.heads.to_string()),
            ("ablation".into(), self.ablation.to_string()),
            (
                "tlc_window".into(),
                self.tlc_window.map_or_else(|| "none".into(), |w| w.to_string()),
            ),
        ]
    }

    /// Applies one `key=value` setting. Returns `Ok(false)` if `key` is not a model key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "width" => self.width = parse(key, value)?,
            "enc_blocks" => self.enc_blocks = parse_levels(key, value)?,
            "dec_blocks" => self.dec_blocks = parse_levels(key, value)?,
            "ffm_blocks" => self.ffm_blocks = parse_levels(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "ablation" => self.ablation = value.parse()?,
            "tlc_window" => {
                self.tlc_window = match value {
                    "none" | "" => None,
                    v => Some(parse(key, v)?),
                }
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in pairs {
            if !cfg.set(k, v)? {
                return Err(Error::Config(format!("unknown model key `{k}`")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fields that differ, as `(key, self, other)`.
    pub fn diff(&self, other: &Self) -> Vec<(String, String, String)> {
        self.to_pairs()
            .into_iter()
            .zip(other.to_pairs())
            .filter(|((_, a), (_, b))| a != b)
            .map(|((k, a), (_, b))| (k, a, b))
            .collect()
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

pub(crate) fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_levels(key: &str, value: &str) -> Result<[usize; LEVELS]> {
    let items = value
        .split(',')
        .map(|s| parse::<usize>(key, s))
        .collect::<Result<Vec<_>>>()?;
    items
        .try_into()
        .map_err(|v: Vec<usize>| Error::Config(format!("`{key}` needs {LEVELS} entries, got {}", v.len())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_round_trip() {
        let mut cfg = ModelConfig::with_width(8);
        cfg.enc_blocks = [1, 1, 1, 2];
        cfg.ablation = Ablation::Ffm;
        cfg.tlc_window = Some(64);
        let pairs = cfg.to_pairs();
        let back = ModelConfig::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str()))).unwrap();
        assert_eq!(back, cfg);
        assert!(cfg.diff(&back).is_empty());
    }

    #[test]
    fn rejects_bad_schedules() {
        let mut cfg = ModelConfig::with_width(32);
        cfg.ffm_blocks = [3, 1, 0, 0];
        assert!(cfg.validate().is_err());
        cfg.ffm_blocks = [1, 1, 1, 1];
        assert!(cfg.validate().is_err());
        cfg.ffm_blocks = [0, 0, 0, 0];
        cfg.width = 31;
        assert!(cfg.validate().is_err());
        cfg.width = 32;
        cfg.heads = 7;
        assert!(cfg.validate().is_err());
    }
}
