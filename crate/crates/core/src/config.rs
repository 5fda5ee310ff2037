//! Run configuration as flat `key=value` lines.
//!
//! Keys: `strategy`, `ctc_weight`, `lm_weight`, `att_weight`, `len_weight`,
//! `beam`, `lsync_beam`, `hop` (`0` for a single block), `lm` (path or
//! `none`), `att` (`surrogate` or `none`), `temperature`, `trace`
//! (`on`/`off`), `seed`, `expansion_floor` (number or `none`), `max_len`
//! (number or `none`).

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fusion::{SearchOptions, DEFAULT_EXPANSION_FLOOR};
use crate::oracle::Strategy;
use crate::types::{BeamConfig, BlockSchedule, ScoreWeights, DEFAULT_HOP};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub strategy: Strategy,
    pub weights: ScoreWeights,
    pub beams: BeamConfig,
    pub hop: usize,
    pub lm: Option<PathBuf>,
    pub surrogate_att: bool,
    pub temperature: f64,
    pub trace: bool,
    pub seed: u64,
    pub expansion_floor: Option<f64>,
    pub max_len: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Flsync,
            weights: ScoreWeights::default(),
            beams: BeamConfig::default(),
            hop: DEFAULT_HOP,
            lm: None,
            surrogate_att: true,
            temperature: 1.0,
            trace: false,
            seed: 0,
            expansion_floor: Some(DEFAULT_EXPANSION_FLOOR),
            max_len: None,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "none" {
        Ok(None)
    } else {
        parse_num(key, value).map(Some)
    }
}

fn opt_text<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), T::to_string)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Format { line: n + 1, message: "expected key=value".into() })?;
            cfg.set(key.trim(), value.trim()).map_err(|e| Error::Format { line: n + 1, message: e.to_string() })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one setting. Call [`RunConfig::validate`] once all are in.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "strategy" => {
                self.strategy =
                    Strategy::parse(value).ok_or_else(|| Error::Config(format!("unknown strategy {value:?}")))?
            }
            "ctc_weight" => self.weights.ctc = parse_num(key, value)?,
            "lm_weight" => self.weights.lm = parse_num(key, value)?,
            "att_weight" => self.weights.att = parse_num(key, value)?,
            "len_weight" => self.weights.len = parse_num(key, value)?,
            "beam" => self.beams.total = parse_num(key, value)?,
            "lsync_beam" => self.beams.lsync = parse_num(key, value)?,
            "hop" => self.hop = parse_num(key, value)?,
            "lm" => self.lm = (value != "none").then(|| PathBuf::from(value)),
            "att" => {
                self.surrogate_att = match value {
                    "surrogate" => true,
                    "none" => false,
                    _ => return Err(Error::Config(format!("att: expected surrogate or none, got {value:?}"))),
                }
            }
            "temperature" => self.temperature = parse_num(key, value)?,
            "trace" => {
                self.trace = match value {
                    "on" => true,
                    "off" => false,
                    _ => return Err(Error::Config(format!("trace: expected on or off, got {value:?}"))),
                }
            }
            "seed" => self.seed = parse_num(key, value)?,
            "expansion_floor" => self.expansion_floor = parse_opt(key, value)?,
            "max_len" => self.max_len = parse_opt(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        BeamConfig::new(self.beams.total, self.beams.lsync)?;
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if self.expansion_floor.is_some_and(|f| f.is_nan()) {
            return Err(Error::Config("expansion floor is not a number".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let w = &self.weights;
        let _ = writeln!(s, "strategy={}", self.strategy.name());
        let _ = writeln!(s, "ctc_weight={}", w.ctc);
        let _ = writeln!(s, "lm_weight={}", w.lm);
        let _ = writeln!(s, "att_weight={}", w.att);
        let _ = writeln!(s, "len_weight={}", w.len);
        let _ = writeln!(s, "beam={}", self.beams.total);
        let _ = writeln!(s, "lsync_beam={}", self.beams.lsync);
        let _ = writeln!(s, "hop={}", self.hop);
        let _ = writeln!(s, "lm={}", self.lm.as_ref().map_or_else(|| "none".into(), |p| p.display().to_string()));
        let _ = writeln!(s, "att={}", if self.surrogate_att { "surrogate" } else { "none" });
        let _ = writeln!(s, "temperature={}", self.temperature);
        let _ = writeln!(s, "trace={}", if self.trace { "on" } else { "off" });
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "expansion_floor={}", opt_text(&self.expansion_floor));
        let _ = writeln!(s, "max_len={}", opt_text(&self.max_len));
        s
    }

    pub fn search_options(&self) -> SearchOptions {
        SearchOptions {
            expansion_floor: self.expansion_floor,
            trace: self.trace,
            max_len: self.max_len,
            ..SearchOptions::default()
        }
    }

    pub fn schedule(&self, frames: usize) -> Result<BlockSchedule> {
        if self.hop == 0 {
            BlockSchedule::single_block(frames)
        } else {
            BlockSchedule::with_hop(self.hop, frames)
        }
    }
}

/// Parses `ctc=1,att=0.5`; weights not named are zero.
pub fn parse_weights(text: &str) -> Result<ScoreWeights> {
    let mut w = ScoreWeights { ctc: 0.0, lm: 0.0, att: 0.0, len: 0.0 };
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, value) =
            part.split_once('=').ok_or_else(|| Error::Config(format!("weight {part:?} is not name=value")))?;
        let value: f64 = parse_num(key, value.trim())?;
        match key.trim() {
            "ctc" => w.ctc = value,
            "lm" => w.lm = value,
            "att" => w.att = value,
            "len" => w.len = value,
            other => return Err(Error::Config(format!("unknown weight {other:?}"))),
        }
    }
    w.validate()?;
    Ok(w)
}
