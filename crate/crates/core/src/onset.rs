//! Onset detection and onset-matrix extraction.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Error, Result};
use crate::stft::{ComplexSpectrogram, StftConfig};

/// Mixture columns at the onset frames, `F x M`.
#[derive(Debug, Clone, PartialEq)]
pub struct OnsetMatrix {
    values: Array2<Complex64>,
    frames: Vec<usize>,
    config: StftConfig,
}

impl OnsetMatrix {
    pub fn new(values: Array2<Complex64>, frames: Vec<usize>, config: StftConfig) -> Result<Self> {
        config.validate()?;
        if values.nrows() != config.num_bins {
            return Err(mismatch(format!(
                "onset matrix has {} rows, expected {}",
                values.nrows(),
                config.num_bins
            )));
        }
        if values.ncols() != frames.len() {
            return Err(mismatch(format!(
                "{} columns but {} onset frames",
                values.ncols(),
                frames.len()
            )));
        }
        if frames.is_empty() {
            return Err(invalid("onset matrix needs at least one onset"));
        }
        if frames.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("onset frames must be strictly increasing"));
        }
        if values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("onset matrix"));
        }
        Ok(Self {
            values,
            frames,
            config,
        })
    }

    pub fn values(&self) -> ArrayView2<'_, Complex64> {
        self.values.view()
    }

    pub fn frames(&self) -> &[usize] {
        &self.frames
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn num_bins(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_onsets(&self) -> usize {
        self.values.ncols()
    }

    /// Same frames and configuration with different values.
    pub fn with_values(&self, values: Array2<Complex64>) -> Result<Self> {
        Self::new(values, self.frames.clone(), self.config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnsetDetector {
    /// Peaks below this fraction of the largest flux value are ignored.
    pub threshold: f64,
    /// Minimum distance between two reported onsets, in frames.
    pub min_gap: usize,
}

impl Default for OnsetDetector {
    fn default() -> Self {
        Self {
            threshold: 0.3,
            min_gap: 4,
        }
    }
}

/// Half-wave rectified magnitude flux. The frame before the first one is
/// treated as silent, so a signal that starts loud has flux at frame 0.
pub fn spectral_flux(spec: &ComplexSpectrogram) -> Vec<f64> {
    let mags = spec.magnitudes();
    (0..mags.ncols())
        .map(|t| {
            mags.column(t)
                .iter()
                .enumerate()
                .map(|(f, &a)| {
                    let prev = if t == 0 { 0.0 } else { mags[[f, t - 1]] };
                    (a - prev).max(0.0)
                })
                .sum()
        })
        .collect()
}

pub fn detect_onsets(spec: &ComplexSpectrogram, detector: &OnsetDetector) -> Vec<usize> {
    let flux = spectral_flux(spec);
    let peak = flux.iter().cloned().fold(0.0, f64::max);
    if peak <= 0.0 {
        return Vec::new();
    }
    let level = detector.threshold * peak;
    let n = flux.len();
    let mut candidates: Vec<usize> = (0..n)
        .filter(|&t| {
            let left = t == 0 || flux[t] >= flux[t - 1];
            let right = t + 1 == n || flux[t] > flux[t + 1];
            flux[t] > 0.0 && flux[t] >= level && left && right
        })
        .collect();
    // strongest peaks claim their neighbourhood first
    candidates.sort_by(|&a, &b| flux[b].total_cmp(&flux[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for t in candidates {
        if kept.iter().all(|&k| k.abs_diff(t) >= detector.min_gap) {
            kept.push(t);
        }
    }
    kept.sort_unstable();
    kept
}

pub fn extract_onset_matrix(spec: &ComplexSpectrogram, frames: &[usize]) -> Result<OnsetMatrix> {
    let t_max = spec.num_frames();
    if let Some(&bad) = frames.iter().find(|&&t| t >= t_max) {
        return Err(invalid(format!(
            "onset frame {bad} out of range for {t_max} frames"
        )));
    }
    let data = spec.data();
    let mut values = Array2::zeros((spec.num_bins(), frames.len()));
    for (m, &t) in frames.iter().enumerate() {
        values.column_mut(m).assign(&data.column(t));
    }
    OnsetMatrix::new(values, frames.to_vec(), *spec.config())
}

/// One frame index per line. Blank lines and `#` comments are skipped.
pub fn parse_onset_list(text: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v = line.parse::<usize>().map_err(|e| Error::Parse {
            line: i + 1,
            message: format!("bad frame index {line:?}: {e}"),
        })?;
        out.push(v);
    }
    Ok(out)
}

pub fn format_onset_list(frames: &[usize]) -> String {
    let mut s = String::new();
    for t in frames {
        let _ = writeln!(s, "{t}");
    }
    s
}

pub fn read_onset_list(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    parse_onset_list(&std::fs::read_to_string(path)?)
}

pub fn write_onset_list(path: impl AsRef<Path>, frames: &[usize]) -> Result<()> {
    std::fs::write(path, format_onset_list(frames))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stft::stft;
    use std::f64::consts::PI;

    fn burst(len: usize, start: usize, bin: f64, decay: f64) -> Vec<f64> {
        (0..len)
            .map(|n| {
                if n < start {
                    0.0
                } else {
                    let k = (n - start) as f64;
                    (-decay * k).exp() * (2.0 * PI * bin * k / 512.0).sin()
                }
            })
            .collect()
    }

    /// Frame whose window center is closest to sample `s`.
    fn centered_frame(s: usize, cfg: &StftConfig) -> usize {
        ((s as f64 - cfg.window_length as f64 / 2.0) / cfg.hop as f64).round() as usize
    }

    #[test]
    fn silence_has_no_onsets() {
        let spec = stft(&vec![0.0; 8000], &StftConfig::reference()).unwrap();
        assert!(detect_onsets(&spec, &OnsetDetector::default()).is_empty());
    }

    #[test]
    fn two_bursts_found_near_their_start_frames() {
        let cfg = StftConfig::reference();
        let starts = [2000usize, 9000];
        let mut x = vec![0.0; 16000];
        for (s, bin) in starts.iter().zip([23.0, 61.0]) {
            for (a, b) in x.iter_mut().zip(burst(16000, *s, bin, 6.0 / 5000.0)) {
                *a += b;
            }
        }
        let spec = stft(&x, &cfg).unwrap();
        let found = detect_onsets(&spec, &OnsetDetector::default());
        assert_eq!(found.len(), 2, "{found:?}");
        for (t, s) in found.iter().zip(starts) {
            let truth = centered_frame(s, &cfg);
            assert!(t.abs_diff(truth) <= 1, "found {t}, truth {truth}");
        }
    }

    #[test]
    fn sustained_tone_has_one_onset() {
        let cfg = StftConfig::reference();
        let x = burst(12000, 3000, 40.0, 0.0);
        let spec = stft(&x, &cfg).unwrap();
        let found = detect_onsets(&spec, &OnsetDetector::default());
        assert_eq!(found.len(), 1, "{found:?}");
        assert!(found[0].abs_diff(centered_frame(3000, &cfg)) <= 1, "{found:?}");
    }

    #[test]
    fn detection_is_gain_invariant() {
        let cfg = StftConfig::reference();
        let x = burst(12000, 1500, 30.0, 1e-3);
        let y: Vec<f64> = x.iter().map(|v| v * 123.0).collect();
        let a = detect_onsets(&stft(&x, &cfg).unwrap(), &OnsetDetector::default());
        let b = detect_onsets(&stft(&y, &cfg).unwrap(), &OnsetDetector::default());
        assert_eq!(a, b);
    }

    #[test]
    fn extraction_selects_columns() {
        let cfg = StftConfig::new(16, 4, 1000.0).unwrap();
        let x: Vec<f64> = (0..80).map(|n| ((n * 7 % 13) as f64) - 6.0).collect();
        let spec = stft(&x, &cfg).unwrap();
        let first = extract_onset_matrix(&spec, &[0]).unwrap();
        assert_eq!(first.values().column(0), spec.data().column(0));
        let all: Vec<usize> = (0..spec.num_frames()).collect();
        let everything = extract_onset_matrix(&spec, &all).unwrap();
        assert_eq!(everything.values(), spec.data().view());
        assert!(matches!(
            extract_onset_matrix(&spec, &[spec.num_frames()]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn onset_matrix_rejects_unordered_frames() {
        let cfg = StftConfig::new(16, 4, 1000.0).unwrap();
        let v = Array2::zeros((16, 2));
        assert!(OnsetMatrix::new(v.clone(), vec![3, 3], cfg).is_err());
        assert!(OnsetMatrix::new(v, vec![1, 3], cfg).is_ok());
    }

    #[test]
    fn onset_list_roundtrip() {
        let frames = vec![4, 47, 90];
        let text = format_onset_list(&frames);
        assert_eq!(parse_onset_list(&text).unwrap(), frames);
        let messy = "# header\n4\n\n 47  # note\n90\n";
        assert_eq!(parse_onset_list(messy).unwrap(), frames);
        assert!(matches!(
            parse_onset_list("4\nx\n"),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
