//! Input items: a mixture WAV with its JSON truth sidecar, or a sidecar
//! describing a model-built onset matrix.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use phaserep::onset::{detect_onsets, read_onset_list, OnsetDetector};
use phaserep::pipeline::{OnsetProblem, SeparationProblem};
use phaserep::synth::{make_dataset_mixture, make_model_built, DatasetTruth, ModelBuiltConfig};
use phaserep::wav::read_wav;
use phaserep::stft;
use serde::{Deserialize, Serialize};

use crate::config::Settings;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sidecar {
    Dataset(DatasetTruth),
    ModelBuilt { config: ModelBuiltConfig, seed: u64 },
}

impl Sidecar {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn dataset_name(&self) -> &str {
        match self {
            Sidecar::Dataset(t) => &t.dataset,
            Sidecar::ModelBuilt { .. } => "model",
        }
    }

    pub fn num_sources(&self) -> usize {
        match self {
            Sidecar::Dataset(t) => t.num_sources(),
            Sidecar::ModelBuilt { config, .. } => config.num_sources,
        }
    }
}

/// Where the onset frames of a dataset item come from.
#[derive(Debug, Clone, PartialEq)]
pub enum OnsetSource {
    /// Frames recorded in the truth sidecar.
    Oracle,
    /// Spectral-flux detection on the mixture.
    Auto,
    File(PathBuf),
}

impl std::str::FromStr for OnsetSource {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "oracle" => OnsetSource::Oracle,
            "auto" => OnsetSource::Auto,
            path => OnsetSource::File(PathBuf::from(path)),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Item {
    pub stem: String,
    pub wav: PathBuf,
    pub sidecar: Sidecar,
}

impl Item {
    /// `path` may name the WAV or the sidecar; the other file is found by
    /// swapping the extension.
    pub fn load(path: &Path) -> Result<Self> {
        let json = path.with_extension("json");
        if !json.is_file() {
            bail!("missing truth sidecar {}", json.display());
        }
        let text = std::fs::read_to_string(&json).with_context(|| format!("reading {}", json.display()))?;
        let sidecar: Sidecar =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", json.display()))?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "item".into());
        Ok(Self {
            stem,
            wav: path.with_extension("wav"),
            sidecar,
        })
    }

    pub fn separation_problem(&self, settings: &Settings, onsets: &OnsetSource) -> Result<SeparationProblem> {
        let truth = match &self.sidecar {
            Sidecar::Dataset(t) => t,
            Sidecar::ModelBuilt { .. } => bail!("{}: model-built items have no audio to separate", self.stem),
        };
        let (mixture, rate) = read_wav(&self.wav).with_context(|| format!("reading {}", self.wav.display()))?;
        if rate != truth.stft.sample_rate {
            bail!(
                "{}: WAV is at {rate} Hz but the truth was rendered at {} Hz",
                self.stem,
                truth.stft.sample_rate
            );
        }
        let cfg = settings.stft(rate)?;
        let rendered = make_dataset_mixture(&truth.sources, &truth.activations, &cfg)?;
        if rendered.mixture.len() != mixture.len() {
            bail!(
                "{}: WAV has {} samples, truth renders {}",
                self.stem,
                mixture.len(),
                rendered.mixture.len()
            );
        }
        let frames = match onsets {
            OnsetSource::Oracle => rendered.onset_frames.clone(),
            OnsetSource::Auto => detect_onsets(&stft(&mixture, &cfg)?, &OnsetDetector::default()),
            OnsetSource::File(p) => read_onset_list(p).with_context(|| format!("reading {}", p.display()))?,
        };
        if frames.is_empty() {
            bail!("{}: no onsets", self.stem);
        }
        Ok(SeparationProblem::new(&mixture, rendered.sources, frames, &cfg)?)
    }

    pub fn onset_problem(&self, settings: &Settings, onsets: &OnsetSource) -> Result<OnsetProblem> {
        match &self.sidecar {
            Sidecar::ModelBuilt { config, seed } => {
                if *onsets != OnsetSource::Oracle {
                    log::warn!("{}: onsets of a model-built item are fixed; --onsets is ignored", self.stem);
                }
                Ok(OnsetProblem::from_model_built(&make_model_built(config, *seed)?)?)
            }
            Sidecar::Dataset(_) => Ok(self.separation_problem(settings, onsets)?.onset_problem()?),
        }
    }
}

/// Sidecars in `dir`, sorted by file name.
pub fn items_in_dir(dir: &Path) -> Result<Vec<Item>> {
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "json") {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        bail!("no items in {}", dir.display());
    }
    paths.sort();
    paths.iter().map(|p| Item::load(p)).collect()
}
