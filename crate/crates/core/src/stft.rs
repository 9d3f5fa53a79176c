//! Short-time Fourier analysis and overlap-add resynthesis.
//!
//! Frames are taken without padding: frame `t` covers samples
//! `[t * hop, t * hop + window_length)` and trailing samples that do not fill
//! a whole frame are dropped. The transform length equals the window length,
//! and all `F` bins are stored so that bin indices match the full-band
//! indexing used by the phase model.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Error, Result};

/// Squared-window envelope values below this fraction of the peak are not
/// divided out during resynthesis.
const ENVELOPE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_length: usize,
    pub hop: usize,
    pub num_bins: usize,
    pub sample_rate: f64,
}

impl StftConfig {
    pub fn new(window_length: usize, hop: usize, sample_rate: f64) -> Result<Self> {
        let cfg = Self {
            window_length,
            hop,
            num_bins: window_length,
            sample_rate,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// 512-sample window, 75% overlap, 11025 Hz.
    pub fn reference() -> Self {
        Self {
            window_length: 512,
            hop: 128,
            num_bins: 512,
            sample_rate: 11025.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_length < 2 {
            return Err(invalid("window length must be at least 2"));
        }
        if self.hop == 0 || self.window_length % self.hop != 0 {
            return Err(invalid(format!(
                "hop {} must be nonzero and divide the window length {}",
                self.hop, self.window_length
            )));
        }
        if self.num_bins != self.window_length {
            return Err(invalid("number of bins must equal the window length"));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(invalid("sample rate must be positive"));
        }
        Ok(())
    }

    /// Number of whole frames in a signal of `len` samples, or `None` when the
    /// signal is shorter than one window.
    pub fn num_frames(&self, len: usize) -> Option<usize> {
        if len < self.window_length {
            None
        } else {
            Some((len - self.window_length) / self.hop + 1)
        }
    }

    /// Shortest signal length covered by `frames` frames.
    pub fn covered_len(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.window_length
        }
    }

    /// Frames preceding an onset frame whose windows still reach into it.
    pub fn overlap_frames(&self) -> usize {
        self.window_length / self.hop - 1
    }

    /// Center frequency of bin `f` in Hz (nonnegative half only).
    pub fn bin_frequency(&self, f: usize) -> f64 {
        f as f64 * self.sample_rate / self.num_bins as f64
    }

    /// Normalized Hann window: periodic Hann scaled so that the squared
    /// window overlap-adds to one.
    pub fn window(&self) -> Vec<f64> {
        let n = self.window_length;
        let raw: Vec<f64> = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
            .collect();
        let energy: f64 = raw.iter().map(|w| w * w).sum();
        let scale = (self.hop as f64 / energy).sqrt();
        raw.into_iter().map(|w| w * scale).collect()
    }
}

impl Default for StftConfig {
    fn default() -> Self {
        Self::reference()
    }
}

/// `F x T` complex STFT together with the analysis parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    data: Array2<Complex64>,
    config: StftConfig,
    signal_len: usize,
}

impl ComplexSpectrogram {
    /// Wraps an existing `F x T` matrix; the nominal signal length is the
    /// span covered by the frames.
    pub fn from_data(data: Array2<Complex64>, config: StftConfig) -> Result<Self> {
        let len = config.covered_len(data.ncols());
        Self::with_signal_len(data, config, len)
    }

    pub fn with_signal_len(
        data: Array2<Complex64>,
        config: StftConfig,
        signal_len: usize,
    ) -> Result<Self> {
        config.validate()?;
        if data.nrows() != config.num_bins {
            return Err(mismatch(format!(
                "spectrogram has {} rows, config expects {} bins",
                data.nrows(),
                config.num_bins
            )));
        }
        if data.ncols() == 0 {
            return Err(invalid("spectrogram has no frames"));
        }
        if config.num_frames(signal_len) != Some(data.ncols()) {
            return Err(mismatch(format!(
                "{} frames do not match a signal of {} samples",
                data.ncols(),
                signal_len
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("spectrogram"));
        }
        Ok(Self {
            data,
            config,
            signal_len,
        })
    }

    pub fn data(&self) -> &Array2<Complex64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<Complex64> {
        self.data
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn num_bins(&self) -> usize {
        self.data.nrows()
    }

    pub fn num_frames(&self) -> usize {
        self.data.ncols()
    }

    pub fn magnitudes(&self) -> Array2<f64> {
        self.data.mapv(|z| z.norm())
    }

    /// Same configuration and length, new data.
    pub fn with_data(&self, data: Array2<Complex64>) -> Result<Self> {
        Self::with_signal_len(data, self.config, self.signal_len)
    }
}

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plans(n: usize) -> Plans {
    let mut planner = FftPlanner::new();
    Plans {
        forward: planner.plan_fft_forward(n),
        inverse: planner.plan_fft_inverse(n),
    }
}

pub fn stft(signal: &[f64], config: &StftConfig) -> Result<ComplexSpectrogram> {
    config.validate()?;
    let frames = config.num_frames(signal.len()).ok_or_else(|| {
        invalid(format!(
            "signal of {} samples is shorter than one window ({})",
            signal.len(),
            config.window_length
        ))
    })?;
    if signal.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("signal"));
    }
    let n = config.window_length;
    let window = config.window();
    let fft = plans(n).forward;
    let mut data = Array2::<Complex64>::zeros((n, frames));
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..frames {
        let start = t * config.hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(signal[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        data.column_mut(t).assign(&ndarray::ArrayView1::from(&buf[..]));
    }
    Ok(ComplexSpectrogram {
        data,
        config: *config,
        signal_len: signal.len(),
    })
}

/// Weighted overlap-add inverse. Each frame is inverse transformed, windowed
/// and summed; the squared-window envelope is then divided out. At 75%
/// overlap the envelope is exactly one on the fully-overlapped interior.
pub fn istft(spec: &ComplexSpectrogram) -> Result<Vec<f64>> {
    let config = spec.config;
    config.validate()?;
    let n = config.window_length;
    if spec.data.nrows() != n {
        return Err(mismatch("spectrogram rows differ from transform length"));
    }
    let frames = spec.data.ncols();
    let covered = config.covered_len(frames);
    let len = spec.signal_len.max(covered);
    let window = config.window();
    let ifft = plans(n).inverse;
    let mut out = vec![0.0; len];
    let mut envelope = vec![0.0; len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let scale = 1.0 / n as f64;
    for t in 0..frames {
        for (b, z) in buf.iter_mut().zip(spec.data.column(t).iter()) {
            *b = *z;
        }
        ifft.process(&mut buf);
        let start = t * config.hop;
        for i in 0..n {
            out[start + i] += buf[i].re * scale * window[i];
            envelope[start + i] += window[i] * window[i];
        }
    }
    let peak = envelope.iter().cloned().fold(0.0, f64::max);
    for (y, e) in out.iter_mut().zip(&envelope) {
        if *e > ENVELOPE_FLOOR * peak {
            *y /= *e;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn direct_bin(x: &[f64], w: &[f64], start: usize, f: usize, big_f: usize) -> Complex64 {
        (0..w.len())
            .map(|n| {
                let ang = -2.0 * PI * (f * n) as f64 / big_f as f64;
                Complex64::from_polar(x[start + n] * w[n], ang)
            })
            .sum()
    }

    #[test]
    fn zeros_give_zero_spectrogram() {
        let cfg = StftConfig::reference();
        let spec = stft(&vec![0.0; 4000], &cfg).unwrap();
        assert!(spec.data().iter().all(|z| z.norm() == 0.0));
        let back = istft(&spec).unwrap();
        assert!(back.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn frame_count_reference_config() {
        let cfg = StftConfig::reference();
        let spec = stft(&vec![0.0; 11025], &cfg).unwrap();
        assert_eq!(spec.num_frames(), 83);
        assert_eq!(spec.num_bins(), 512);
    }

    #[test]
    fn short_signal_is_rejected() {
        let cfg = StftConfig::reference();
        assert!(matches!(
            stft(&vec![0.0; 511], &cfg),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn invalid_configs() {
        assert!(StftConfig::new(512, 100, 11025.0).is_err());
        assert!(StftConfig::new(512, 0, 11025.0).is_err());
        assert!(StftConfig::new(512, 128, 0.0).is_err());
        assert!(StftConfig::new(512, 128, 11025.0).is_ok());
    }

    #[test]
    fn squared_window_is_cola() {
        let cfg = StftConfig::reference();
        let w = cfg.window();
        for n in 0..cfg.hop {
            let s: f64 = (0..4).map(|k| w[n + k * cfg.hop].powi(2)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_at_exact_bin_matches_direct_sum() {
        let cfg = StftConfig::new(64, 16, 8000.0).unwrap();
        let f0 = 5;
        let x: Vec<f64> = (0..256)
            .map(|n| (2.0 * PI * (f0 * n) as f64 / 64.0).cos())
            .collect();
        let spec = stft(&x, &cfg).unwrap();
        let w = cfg.window();
        let half_sum: f64 = w.iter().sum::<f64>() / 2.0;
        for t in 0..spec.num_frames() {
            for f in 0..64 {
                let expect = direct_bin(&x, &w, t * 16, f, 64);
                assert!((spec.data()[[f, t]] - expect).norm() < 1e-10);
            }
            assert!((spec.data()[[f0, t]].norm() - half_sum).abs() < 1e-10);
            assert!((spec.data()[[64 - f0, t]].norm() - half_sum).abs() < 1e-10);
            let elsewhere: f64 = (0..64)
                .filter(|&f| ![f0 - 1, f0, f0 + 1, 63 - f0, 64 - f0, 65 - f0].contains(&f))
                .map(|f| spec.data()[[f, t]].norm())
                .sum();
            assert!(elsewhere < 1e-9);
        }
    }

    #[test]
    fn roundtrip_interior() {
        let cfg = StftConfig::reference();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..6000).map(|_| rng.random::<f64>() - 0.5).collect();
        let y = istft(&stft(&x, &cfg).unwrap()).unwrap();
        let lo = cfg.window_length - cfg.hop;
        let hi = cfg.covered_len(cfg.num_frames(x.len()).unwrap()) - lo;
        let err: f64 = (lo..hi).map(|i| (x[i] - y[i]).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = (lo..hi).map(|i| x[i].powi(2)).sum::<f64>().sqrt();
        assert!(err / norm < 1e-10, "{}", err / norm);
    }

    #[test]
    fn roundtrip_half_overlap() {
        let cfg = StftConfig::new(256, 128, 8000.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..3000).map(|_| rng.random::<f64>() - 0.5).collect();
        let y = istft(&stft(&x, &cfg).unwrap()).unwrap();
        for i in 256..2500 {
            assert!((x[i] - y[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn single_frame_istft_is_windowed_burst() {
        let cfg = StftConfig::new(32, 8, 1000.0).unwrap();
        let frames = 6;
        let mut data = Array2::<Complex64>::zeros((32, frames));
        // a conjugate pair at bin 3 -> cosine burst in frame 2
        data[[3, 2]] = Complex64::new(16.0, 0.0);
        data[[29, 2]] = Complex64::new(16.0, 0.0);
        let spec = ComplexSpectrogram::from_data(data.clone(), cfg).unwrap();
        let y = istft(&spec).unwrap();

        // direct evaluation: inverse DFT, window, overlap-add, envelope
        let w = cfg.window();
        let len = cfg.covered_len(frames);
        let mut num = vec![0.0; len];
        let mut env = vec![0.0; len];
        for t in 0..frames {
            for n in 0..32 {
                let v: f64 = (0..32)
                    .map(|f| {
                        let z = data[[f, t]];
                        (z * Complex64::from_polar(1.0, 2.0 * PI * (f * n) as f64 / 32.0)).re
                    })
                    .sum::<f64>()
                    / 32.0;
                num[t * 8 + n] += v * w[n];
                env[t * 8 + n] += w[n] * w[n];
            }
        }
        let peak = env.iter().cloned().fold(0.0, f64::max);
        for i in 0..len {
            let expect = if env[i] > ENVELOPE_FLOOR * peak {
                num[i] / env[i]
            } else {
                num[i]
            };
            assert!((y[i] - expect).abs() < 1e-12);
        }
        // nonzero only under frame 2's window
        for (i, v) in y.iter().enumerate() {
            if !(16..48).contains(&i) {
                assert_eq!(*v, 0.0);
            }
        }
        // interior samples are the bare cosine times the window
        for i in 24..40 {
            let n = i - 16;
            let expect = (2.0 * PI * 3.0 * n as f64 / 32.0).cos() * w[n];
            assert!((y[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn inconsistent_dimensions_rejected() {
        let cfg = StftConfig::new(32, 8, 1000.0).unwrap();
        let data = Array2::<Complex64>::zeros((16, 4));
        assert!(ComplexSpectrogram::from_data(data, cfg).is_err());
        let data = Array2::<Complex64>::zeros((32, 4));
        assert!(ComplexSpectrogram::with_signal_len(data, cfg, 100).is_err());
    }

    #[test]
    fn delay_rotates_stationary_bin() {
        let cfg = StftConfig::reference();
        let f0 = 40usize;
        let eta = 7usize;
        let tone = |n: usize| (2.0 * PI * (f0 * n) as f64 / 512.0 + 0.4).cos();
        let x: Vec<f64> = (0..4096).map(|n| tone(n + 1000)).collect();
        let y: Vec<f64> = (0..4096).map(|n| tone(n + 1000 - eta)).collect();
        let sx = stft(&x, &cfg).unwrap();
        let sy = stft(&y, &cfg).unwrap();
        let expect = Complex64::from_polar(1.0, -2.0 * PI * (f0 * eta) as f64 / 512.0);
        for t in 0..sx.num_frames() {
            let got = sy.data()[[f0, t]] / sx.data()[[f0, t]];
            assert!((got - expect).norm() < 1e-9);
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn stft_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let cfg = StftConfig::new(64, 16, 8000.0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..300).map(|_| rng.random::<f64>() - 0.5).collect();
            let y: Vec<f64> = (0..300).map(|_| rng.random::<f64>() - 0.5).collect();
            let z: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let sx = stft(&x, &cfg).unwrap();
            let sy = stft(&y, &cfg).unwrap();
            let sz = stft(&z, &cfg).unwrap();
            let comb = sx.data().mapv(|v| v * a) + sy.data().mapv(|v| v * b);
            for (p, q) in comb.iter().zip(sz.data().iter()) {
                proptest::prop_assert!((p - q).norm() < 1e-12);
            }
        }
    }
}
