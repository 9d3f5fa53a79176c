//! Phase propagation from onset frames to the rest of a source's track.
//!
//! Within each region the phase of every bin advances linearly by the
//! instantaneous frequency of the spectral peak that governs it. Peak
//! frequencies come from quadratic interpolation of the log-magnitude
//! around each local maximum of the magnitude column.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView1, ArrayView2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};
use crate::stft::{ComplexSpectrogram, StftConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnwrapConfig {
    /// Frames before each onset that are filled by propagating backward from
    /// it. Their windows already contain the attack.
    pub lookback: usize,
    /// An onset counts as an activation of a source when the source's frame
    /// energy there reaches this fraction of its largest onset energy.
    pub min_relative_energy: f64,
}

impl UnwrapConfig {
    pub fn for_stft(cfg: &StftConfig) -> Self {
        Self {
            lookback: cfg.overlap_frames(),
            min_relative_energy: 1e-2,
        }
    }
}

/// Frames `[back_start, end)` of one source take their phase from the onset
/// at `start`: `[start, end)` forward in time, `[back_start, start)` backward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnwrapRegion {
    pub source: usize,
    pub back_start: usize,
    pub start: usize,
    pub end: usize,
}

/// Splits the track of source `source` at its activation frames.
pub fn plan_regions(
    source: usize,
    onset_frames: &[usize],
    num_frames: usize,
    lookback: usize,
) -> Result<Vec<UnwrapRegion>> {
    if onset_frames.is_empty() {
        return Err(invalid(format!("source {source} has no onset to unwrap from")));
    }
    if onset_frames.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("onset frames must be strictly increasing"));
    }
    if let Some(&t) = onset_frames.iter().find(|&&t| t >= num_frames) {
        return Err(invalid(format!("onset frame {t} out of range for {num_frames} frames")));
    }
    let mut regions = Vec::with_capacity(onset_frames.len());
    let mut prev_end = 0;
    for (i, &start) in onset_frames.iter().enumerate() {
        let end = match onset_frames.get(i + 1) {
            Some(&next) => next.saturating_sub(lookback).max(start + 1),
            None => num_frames,
        };
        let back_start = if i == 0 { 0 } else { start.saturating_sub(lookback).max(prev_end) };
        regions.push(UnwrapRegion {
            source,
            back_start,
            start,
            end,
        });
        prev_end = end;
    }
    Ok(regions)
}

/// Interpolated frequency, in bins, of the peak governing each bin of the
/// nonnegative half of one magnitude column (`F/2 + 1` values). Bins in a
/// column without peaks keep their own center frequency.
pub fn peak_frequencies(half: ArrayView1<f64>) -> Vec<f64> {
    let n = half.len();
    let peaks: Vec<usize> = (1..n.saturating_sub(1))
        .filter(|&f| half[f] > 0.0 && half[f] >= half[f - 1] && half[f] > half[f + 1])
        .collect();
    if peaks.is_empty() {
        return (0..n).map(|f| f as f64).collect();
    }
    let log = |f: usize| half[f].max(1e-300).ln();
    let refined: Vec<f64> = peaks
        .iter()
        .map(|&q| {
            let (l, c, r) = (log(q - 1), log(q), log(q + 1));
            let curv = l - 2.0 * c + r;
            if curv < 0.0 {
                q as f64 + 0.5 * (l - r) / curv
            } else {
                q as f64
            }
        })
        .collect();
    // nearest peak wins; ties go to the lower one
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    for f in 0..n {
        while j + 1 < peaks.len() && peaks[j + 1].abs_diff(f) < peaks[j].abs_diff(f) {
            j += 1;
        }
        out.push(refined[j]);
    }
    out
}

/// Per-frame phase advance over one hop, full band (`F x T`). Upper bins
/// mirror the lower half with opposite sign.
pub fn phase_advance(magnitudes: ArrayView2<f64>, cfg: &StftConfig) -> Array2<f64> {
    let (f_len, t_len) = magnitudes.dim();
    let half = f_len / 2;
    let scale = 2.0 * PI * cfg.hop as f64 / f_len as f64;
    let mut adv = Array2::zeros((f_len, t_len));
    for t in 0..t_len {
        let col = magnitudes.column(t);
        let freqs = peak_frequencies(col.slice(ndarray::s![..=half]));
        for f in 0..=half {
            adv[[f, t]] = scale * freqs[f];
        }
        for f in half + 1..f_len {
            adv[[f, t]] = -adv[[f_len - f, t]];
        }
    }
    adv
}

/// Phases of one source over all frames. Column `i` of `onset_phases` is
/// copied unchanged to frame `onset_frames[i]`, and propagated from there by
/// the trapezoidal average of consecutive per-frame advances.
pub fn unwrap_phases(
    onset_phases: ArrayView2<f64>,
    magnitudes: ArrayView2<f64>,
    onset_frames: &[usize],
    cfg: &StftConfig,
    lookback: usize,
) -> Result<Array2<f64>> {
    let (f_len, t_len) = magnitudes.dim();
    if f_len != cfg.num_bins {
        return Err(mismatch("magnitude rows differ from the number of bins"));
    }
    if onset_phases.nrows() != f_len {
        return Err(mismatch("onset phases and magnitudes differ in bins"));
    }
    if onset_phases.ncols() != onset_frames.len() {
        return Err(invalid(format!(
            "{} onset phase columns for {} regions",
            onset_phases.ncols(),
            onset_frames.len()
        )));
    }
    let regions = plan_regions(0, onset_frames, t_len, lookback)?;
    let adv = phase_advance(magnitudes, cfg);
    let mut phase = Array2::zeros((f_len, t_len));
    for (i, r) in regions.iter().enumerate() {
        phase.column_mut(r.start).assign(&onset_phases.column(i));
        for t in r.start + 1..r.end {
            for f in 0..f_len {
                phase[[f, t]] = phase[[f, t - 1]] + 0.5 * (adv[[f, t - 1]] + adv[[f, t]]);
            }
        }
        for t in (r.back_start..r.start).rev() {
            for f in 0..f_len {
                phase[[f, t]] = phase[[f, t + 1]] - 0.5 * (adv[[f, t + 1]] + adv[[f, t]]);
            }
        }
    }
    Ok(phase)
}

/// Complex STFT of one source: the given magnitudes with unwrapped phases.
pub fn unwrap_source(
    onset_phases: ArrayView2<f64>,
    magnitudes: ArrayView2<f64>,
    onset_frames: &[usize],
    cfg: &StftConfig,
    signal_len: usize,
    lookback: usize,
) -> Result<ComplexSpectrogram> {
    let phase = unwrap_phases(onset_phases, magnitudes, onset_frames, cfg, lookback)?;
    let data = ndarray::Zip::from(&magnitudes)
        .and(&phase)
        .map_collect(|&a, &p| Complex64::from_polar(a, p));
    ComplexSpectrogram::with_signal_len(data, *cfg, signal_len)
}

/// Indices `m` of the onsets at which a source is triggered, judged from its
/// magnitudes: enough energy relative to its strongest onset, and more
/// energy than one window length earlier.
pub fn active_onsets(
    magnitudes: ArrayView2<f64>,
    onset_frames: &[usize],
    cfg: &StftConfig,
    min_relative_energy: f64,
) -> Vec<usize> {
    let energy = |t: usize| -> f64 { magnitudes.column(t).iter().map(|a| a * a).sum() };
    let span = cfg.window_length / cfg.hop;
    let at: Vec<f64> = onset_frames.iter().map(|&t| energy(t)).collect();
    let peak = at.iter().cloned().fold(0.0, f64::max);
    if peak <= 0.0 {
        return Vec::new();
    }
    onset_frames
        .iter()
        .enumerate()
        .filter(|&(m, &t)| {
            let before = if t >= span { energy(t - span) } else { 0.0 };
            at[m] >= min_relative_energy * peak && at[m] > before
        })
        .map(|(m, _)| m)
        .collect()
}
