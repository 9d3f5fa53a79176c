//! Run settings and the key-value config file.
//!
//! The file holds one `key = value` pair per line; `#` starts a comment.
//! Recognised keys:
//!
//! | key             | meaning                                            |
//! |-----------------|----------------------------------------------------|
//! | `sample_rate`   | sample rate of synthesized audio, Hz               |
//! | `window_length` | STFT window length N                               |
//! | `hop`           | STFT hop S                                         |
//! | `iterations`    | estimation sweeps                                  |
//! | `sigma`         | relaxed-model weight                               |
//! | `init`          | `first_onset`, `matched_filter` or `random:SEED`   |
//! | `keep_best`     | `true` to return the lowest-cost iterate            |
//! | `out_dir`       | output directory                                   |
//!
//! Command-line flags win over the file, which wins over the defaults.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use phaserep::{EstimationConfig, Initialization, StftConfig};

pub const OUT_DIR_ENV: &str = "PHASEREP_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "phaserep-out";

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub sample_rate: f64,
    pub window_length: usize,
    pub hop: usize,
    pub iterations: usize,
    pub sigma: f64,
    /// True when sigma came from a flag or the config file.
    pub sigma_set: bool,
    pub init: Initialization,
    pub keep_best: bool,
    pub out_dir: Option<PathBuf>,
}

impl Default for Settings {
    fn default() -> Self {
        let stft = StftConfig::reference();
        let est = EstimationConfig::default();
        Self {
            sample_rate: stft.sample_rate,
            window_length: stft.window_length,
            hop: stft.hop,
            iterations: est.num_iterations,
            sigma: est.sigma,
            sigma_set: false,
            init: Initialization::matched_filter(),
            keep_best: false,
            out_dir: None,
        }
    }
}

/// Values given on the command line; `None` leaves the lower layers alone.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub sample_rate: Option<f64>,
    pub window_length: Option<usize>,
    pub hop: Option<usize>,
    pub iterations: Option<usize>,
    pub sigma: Option<f64>,
    pub init: Option<String>,
    pub keep_best: bool,
    pub out_dir: Option<PathBuf>,
}

pub fn parse_init(s: &str) -> Result<Initialization> {
    match s.trim() {
        "first_onset" => Ok(Initialization::FirstOnset),
        "matched_filter" => Ok(Initialization::matched_filter()),
        other => match other.strip_prefix("random:") {
            Some(seed) => Ok(Initialization::Random {
                seed: seed.parse().with_context(|| format!("bad random seed {seed:?}"))?,
            }),
            None => bail!("unknown initialization {other:?}"),
        },
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("bad value {value:?} for {key}: {e}"))
}

impl Settings {
    /// Applies a config file's contents on top of the current values.
    pub fn apply_file(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", i + 1))?;
            let (key, value) = (key.trim(), value.trim());
            let ctx = || format!("line {}", i + 1);
            match key {
                "sample_rate" => self.sample_rate = parse_value(key, value).with_context(ctx)?,
                "window_length" => self.window_length = parse_value(key, value).with_context(ctx)?,
                "hop" => self.hop = parse_value(key, value).with_context(ctx)?,
                "iterations" => self.iterations = parse_value(key, value).with_context(ctx)?,
                "sigma" => {
                    self.sigma = parse_value(key, value).with_context(ctx)?;
                    self.sigma_set = true;
                }
                "init" => self.init = parse_init(value).with_context(ctx)?,
                "keep_best" => self.keep_best = parse_value(key, value).with_context(ctx)?,
                "out_dir" => self.out_dir = Some(PathBuf::from(value)),
                _ => bail!("line {}: unknown key {key:?}", i + 1),
            }
        }
        Ok(())
    }

    pub fn apply_overrides(&mut self, o: &Overrides) -> Result<()> {
        if let Some(v) = o.sample_rate {
            self.sample_rate = v;
        }
        if let Some(v) = o.window_length {
            self.window_length = v;
        }
        if let Some(v) = o.hop {
            self.hop = v;
        }
        if let Some(v) = o.iterations {
            self.iterations = v;
        }
        if let Some(v) = o.sigma {
            self.sigma = v;
            self.sigma_set = true;
        }
        if let Some(v) = &o.init {
            self.init = parse_init(v)?;
        }
        self.keep_best |= o.keep_best;
        if let Some(v) = &o.out_dir {
            self.out_dir = Some(v.clone());
        }
        Ok(())
    }

    /// Flag or file, then the environment, then `phaserep-out`.
    pub fn resolve_out_dir(&self, env: Option<String>) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| env.filter(|s| !s.is_empty()).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }

    pub fn stft(&self, sample_rate: f64) -> Result<StftConfig> {
        Ok(StftConfig::new(self.window_length, self.hop, sample_rate)?)
    }

    pub fn estimation(&self) -> Result<EstimationConfig> {
        let cfg = EstimationConfig {
            num_iterations: self.iterations,
            sigma: self.sigma,
            initialization: self.init,
            keep_best: self.keep_best,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
