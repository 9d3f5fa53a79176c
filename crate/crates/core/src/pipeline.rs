//! End-to-end runs: onset estimation, separation and the sigma sweep.

use std::fmt::Write as _;

use ndarray::{s, Array2, Array3, Axis};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::baseline::{wiener_onsets, wiener_separate, WienerConfig};
use crate::error::{invalid, mismatch, Result};
use crate::estimation::{initialize, run_relaxed, run_strict, EstimationConfig, EstimationResult};
use crate::metrics::{bss_scores, onset_estimation_error, BssConfig, SeparationScores};
use crate::onset::{extract_onset_matrix, OnsetMatrix};
use crate::stft::{istft, stft, ComplexSpectrogram, StftConfig};
use crate::synth::{DatasetMixture, ModelBuiltInstance};
use crate::unwrap::{active_onsets, unwrap_source, UnwrapConfig};

pub const DEFAULT_SIGMAS: [f64; 6] = [0.05, 0.1, 0.2, 0.5, 1.0, 2.0];

/// Onset columns of a mixture with oracle magnitudes and the true
/// per-source columns.
#[derive(Debug, Clone, PartialEq)]
pub struct OnsetProblem {
    pub onset: OnsetMatrix,
    /// `K x F x M`
    pub magnitudes: Array3<f64>,
    /// `K x F x M`
    pub truth: Array3<Complex64>,
}

impl OnsetProblem {
    pub fn new(onset: OnsetMatrix, truth: Array3<Complex64>) -> Result<Self> {
        let (_, f, m) = truth.dim();
        if (f, m) != onset.values().dim() {
            return Err(mismatch(format!(
                "truth columns are {:?}, onset matrix is {:?}",
                (f, m),
                onset.values().dim()
            )));
        }
        let magnitudes = truth.mapv(|z| z.norm());
        Ok(Self {
            onset,
            magnitudes,
            truth,
        })
    }

    pub fn from_model_built(inst: &ModelBuiltInstance) -> Result<Self> {
        Self::new(inst.onset.clone(), inst.sources.clone())
    }

    pub fn num_sources(&self) -> usize {
        self.truth.len_of(Axis(0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OnsetMethod {
    Strict,
    Relaxed,
    Wiener,
}

impl OnsetMethod {
    pub const ALL: [OnsetMethod; 3] = [OnsetMethod::Strict, OnsetMethod::Relaxed, OnsetMethod::Wiener];

    pub fn name(self) -> &'static str {
        match self {
            OnsetMethod::Strict => "strict",
            OnsetMethod::Relaxed => "relaxed",
            OnsetMethod::Wiener => "wiener",
        }
    }
}

impl std::str::FromStr for OnsetMethod {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(OnsetMethod::Strict),
            "relaxed" => Ok(OnsetMethod::Relaxed),
            "wiener" => Ok(OnsetMethod::Wiener),
            _ => Err(invalid(format!("unknown onset method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnsetEstimate {
    /// Estimated per-source onset columns, `K x F x M`.
    pub columns: Array3<Complex64>,
    pub error: f64,
    /// Present for the two model-based estimators.
    pub estimation: Option<EstimationResult>,
}

pub fn estimate_onsets(
    problem: &OnsetProblem,
    method: OnsetMethod,
    cfg: &EstimationConfig,
) -> Result<OnsetEstimate> {
    let (columns, estimation) = match method {
        OnsetMethod::Wiener => (
            wiener_onsets(&problem.onset, problem.magnitudes.view(), &WienerConfig::default())?,
            None,
        ),
        OnsetMethod::Strict | OnsetMethod::Relaxed => {
            let init = initialize(&problem.onset, &problem.magnitudes, cfg.initialization)?;
            let result = if method == OnsetMethod::Strict {
                run_strict(&problem.onset, &init, cfg)?
            } else {
                run_relaxed(&problem.onset, &init, cfg)?
            };
            (result.synthesis.sources.clone(), Some(result))
        }
    };
    let error = onset_estimation_error(problem.truth.view(), columns.view())?;
    Ok(OnsetEstimate {
        columns,
        error,
        estimation,
    })
}

/// A time-domain mixture with reference sources and oracle magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationProblem {
    pub mixture: ComplexSpectrogram,
    pub sources: Vec<ComplexSpectrogram>,
    pub references: Vec<Vec<f64>>,
    pub onset_frames: Vec<usize>,
}

impl SeparationProblem {
    pub fn new(
        mixture: &[f64],
        references: Vec<Vec<f64>>,
        onset_frames: Vec<usize>,
        cfg: &StftConfig,
    ) -> Result<Self> {
        if references.is_empty() {
            return Err(invalid("no reference sources"));
        }
        if references.iter().any(|r| r.len() != mixture.len()) {
            return Err(mismatch("references and mixture differ in length"));
        }
        let sources = references
            .iter()
            .map(|r| stft(r, cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            mixture: stft(mixture, cfg)?,
            sources,
            references,
            onset_frames,
        })
    }

    pub fn from_dataset(d: &DatasetMixture, cfg: &StftConfig) -> Result<Self> {
        Self::new(&d.mixture, d.sources.clone(), d.onset_frames.clone(), cfg)
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    /// `K x F x T` magnitudes of the reference sources.
    pub fn magnitudes(&self) -> Array3<f64> {
        let (f, t) = self.mixture.data().dim();
        let mut out = Array3::zeros((self.sources.len(), f, t));
        for (k, s) in self.sources.iter().enumerate() {
            out.index_axis_mut(Axis(0), k).assign(&s.magnitudes());
        }
        out
    }

    pub fn onset_problem(&self) -> Result<OnsetProblem> {
        let onset = extract_onset_matrix(&self.mixture, &self.onset_frames)?;
        let (f, m) = onset.values().dim();
        let mut truth = Array3::zeros((self.sources.len(), f, m));
        for (k, s) in self.sources.iter().enumerate() {
            for (j, &t) in self.onset_frames.iter().enumerate() {
                truth.slice_mut(s![k, .., j]).assign(&s.data().column(t));
            }
        }
        OnsetProblem::new(onset, truth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeparationMethod {
    /// Relaxed onset phases propagated through each source's track.
    Repu,
    Wiener,
}

impl SeparationMethod {
    pub fn name(self) -> &'static str {
        match self {
            SeparationMethod::Repu => "repu",
            SeparationMethod::Wiener => "wiener",
        }
    }
}

impl std::str::FromStr for SeparationMethod {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "repu" => Ok(SeparationMethod::Repu),
            "wiener" => Ok(SeparationMethod::Wiener),
            _ => Err(invalid(format!("unknown separation method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparationConfig {
    pub estimation: EstimationConfig,
    pub wiener: WienerConfig,
    pub bss: BssConfig,
    /// `None` derives the unwrap settings from the STFT configuration.
    pub unwrap: Option<UnwrapConfig>,
}

impl Default for SeparationConfig {
    fn default() -> Self {
        Self {
            estimation: EstimationConfig {
                initialization: crate::estimation::Initialization::matched_filter(),
                ..EstimationConfig::default()
            },
            wiener: WienerConfig::default(),
            bss: BssConfig::default(),
            unwrap: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationOutput {
    pub estimates: Vec<Vec<f64>>,
    pub scores: SeparationScores,
}

/// Time-domain source estimates from relaxed onset phases and oracle
/// magnitudes.
pub fn repu_signals(problem: &SeparationProblem, cfg: &SeparationConfig) -> Result<Vec<Vec<f64>>> {
    let stft_cfg = *problem.mixture.config();
    let unwrap = cfg.unwrap.unwrap_or_else(|| UnwrapConfig::for_stft(&stft_cfg));
    let onset = problem.onset_problem()?;
    let init = initialize(&onset.onset, &onset.magnitudes, cfg.estimation.initialization)?;
    let result = run_relaxed(&onset.onset, &init, &cfg.estimation)?;
    let phi = result.params.phi();
    let mags = problem.magnitudes();
    let len = problem.mixture.signal_len();
    let mut out = Vec::with_capacity(problem.num_sources());
    for k in 0..problem.num_sources() {
        let track = mags.index_axis(Axis(0), k);
        let active = active_onsets(track, &problem.onset_frames, &stft_cfg, unwrap.min_relative_energy);
        if active.is_empty() {
            out.push(vec![0.0; len]);
            continue;
        }
        let frames: Vec<usize> = active.iter().map(|&m| problem.onset_frames[m]).collect();
        let mut phases = Array2::zeros((track.nrows(), active.len()));
        for (j, &m) in active.iter().enumerate() {
            phases.column_mut(j).assign(&phi.slice(s![k, .., m]));
        }
        let spec = unwrap_source(phases.view(), track, &frames, &stft_cfg, len, unwrap.lookback)?;
        out.push(istft(&spec)?);
    }
    Ok(out)
}

pub fn wiener_signals(problem: &SeparationProblem, cfg: &SeparationConfig) -> Result<Vec<Vec<f64>>> {
    let mags = problem.magnitudes();
    wiener_separate(&problem.mixture, mags.view(), &cfg.wiener)?
        .iter()
        .map(istft)
        .collect()
}

pub fn separate(
    problem: &SeparationProblem,
    method: SeparationMethod,
    cfg: &SeparationConfig,
) -> Result<SeparationOutput> {
    let estimates = match method {
        SeparationMethod::Repu => repu_signals(problem, cfg)?,
        SeparationMethod::Wiener => wiener_signals(problem, cfg)?,
    };
    let scores = bss_scores(&problem.references, &estimates, &cfg.bss)?;
    Ok(SeparationOutput { estimates, scores })
}

/// Mean onset estimation error of one method at one sigma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: OnsetMethod,
    pub sigma: f64,
    pub mean_error: f64,
}

/// Mean onset error over `problems` for every method and sigma. Strict and
/// Wiener do not depend on sigma; they are computed once and repeated on
/// every row so each sigma has a complete set of methods.
pub fn sigma_sweep(
    problems: &[OnsetProblem],
    sigmas: &[f64],
    base: &EstimationConfig,
) -> Result<Vec<SweepRow>> {
    if problems.is_empty() {
        return Err(invalid("no problems to sweep"));
    }
    if sigmas.is_empty() {
        return Err(invalid("no sigma values to sweep"));
    }
    let mean_error = |method: OnsetMethod, cfg: &EstimationConfig| -> Result<f64> {
        let mut total = 0.0;
        for p in problems {
            total += estimate_onsets(p, method, cfg)?.error;
        }
        Ok(total / problems.len() as f64)
    };
    let strict = mean_error(OnsetMethod::Strict, base)?;
    let wiener = mean_error(OnsetMethod::Wiener, base)?;
    let mut rows = Vec::with_capacity(3 * sigmas.len());
    for &sigma in sigmas {
        let cfg = EstimationConfig { sigma, ..*base };
        cfg.validate()?;
        let relaxed = mean_error(OnsetMethod::Relaxed, &cfg)?;
        for (method, mean_error) in [
            (OnsetMethod::Strict, strict),
            (OnsetMethod::Relaxed, relaxed),
            (OnsetMethod::Wiener, wiener),
        ] {
            rows.push(SweepRow {
                method,
                sigma,
                mean_error,
            });
        }
    }
    Ok(rows)
}

pub fn format_sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("method,sigma,mean_error\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:e}", r.method.name(), r.sigma, r.mean_error);
    }
    s
}

/// Onset error of one method on one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnsetErrorRow {
    pub dataset: String,
    pub item: usize,
    pub method: OnsetMethod,
    pub sigma: f64,
    pub error: f64,
}

pub fn format_onset_errors_csv(rows: &[OnsetErrorRow]) -> String {
    let mut s = String::from("dataset,item,method,sigma,error\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{:e}",
            r.dataset,
            r.item,
            r.method.name(),
            r.sigma,
            r.error
        );
    }
    s
}
