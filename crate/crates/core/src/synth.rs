//! Synthetic test material: model-built onset matrices, repeated notes and
//! damped-sinusoid mixtures in which every source is heard alone before the
//! sources play together.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{synthesize_strict, PhaseModelParams};
use crate::onset::OnsetMatrix;
use crate::stft::StftConfig;

/// Sum of exponentially damped partials, retriggered at each onset time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DampedSinusoidSpec {
    /// Partial frequencies in Hz.
    pub frequencies: Vec<f64>,
    pub amplitudes: Vec<f64>,
    /// Starting phase of each partial, identical for every occurrence.
    pub phases: Vec<f64>,
    /// Amplitude decay per sample (`exp(-decay * n)`).
    pub decay: f64,
    /// Length of the raised-cosine attack in samples.
    pub attack: usize,
    /// Start sample of each occurrence.
    pub onset_times: Vec<usize>,
    /// Amplitude factor of each occurrence.
    pub gains: Vec<f64>,
    /// Total length in samples.
    pub duration: usize,
}

impl DampedSinusoidSpec {
    pub fn validate(&self, sample_rate: f64) -> Result<()> {
        let p = self.frequencies.len();
        if self.amplitudes.len() != p || self.phases.len() != p {
            return Err(invalid("each partial needs a frequency, amplitude and phase"));
        }
        if self.frequencies.iter().any(|&f| !(f >= 0.0 && f < sample_rate / 2.0)) {
            return Err(invalid("partial frequencies must lie below the Nyquist frequency"));
        }
        if !(self.decay > 0.0 && self.decay.is_finite()) {
            return Err(invalid("decay must be positive"));
        }
        if self.onset_times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("onset times must be strictly increasing"));
        }
        if self.gains.len() != self.onset_times.len() {
            return Err(invalid("one gain per onset is required"));
        }
        if self.onset_times.iter().any(|&t| t >= self.duration) {
            return Err(invalid("onset beyond the end of the signal"));
        }
        Ok(())
    }

    /// One occurrence with unit gain starting at sample 0.
    fn note(&self, len: usize, sample_rate: f64) -> Vec<f64> {
        (0..len)
            .map(|n| {
                let t = n as f64;
                let mut env = (-self.decay * t).exp();
                if n < self.attack {
                    env *= 0.5 - 0.5 * (PI * t / self.attack as f64).cos();
                }
                let tone: f64 = self
                    .frequencies
                    .iter()
                    .zip(&self.amplitudes)
                    .zip(&self.phases)
                    .map(|((f, a), ph)| a * (2.0 * PI * f * t / sample_rate + ph).cos())
                    .sum();
                env * tone
            })
            .collect()
    }

    pub fn render(&self, sample_rate: f64) -> Result<Vec<f64>> {
        self.validate(sample_rate)?;
        let mut out = vec![0.0; self.duration];
        let note = self.note(self.duration, sample_rate);
        for (&start, &g) in self.onset_times.iter().zip(&self.gains) {
            if g == 0.0 {
                continue;
            }
            for (o, v) in out[start..].iter_mut().zip(&note) {
                *o += g * v;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DatasetKind {
    /// Two sources on disjoint frequency bins.
    A,
    /// Two sources sharing part of their bins.
    B,
    /// Three sources sharing bins, seven onsets.
    C,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::A => "A",
            DatasetKind::B => "B",
            DatasetKind::C => "C",
        }
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(DatasetKind::A),
            "B" => Ok(DatasetKind::B),
            "C" => Ok(DatasetKind::C),
            _ => Err(invalid(format!("unknown dataset {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub num_sources: usize,
    /// When false, every partial sits on its own bin, far from the others.
    pub overlap: bool,
    pub partials: usize,
    /// Time for a note to decay by 60 dB, in seconds.
    pub t60: f64,
    pub duration_seconds: f64,
    pub attack: usize,
    /// Nominal onset frames; each note starts up to `jitter` samples after
    /// the start of its frame.
    pub onset_frames: Vec<usize>,
    /// For each source, the indices of the onsets at which it plays.
    pub activations: Vec<Vec<usize>>,
    pub jitter: usize,
    /// Partials are drawn on integer bins in `[lowest_bin, highest_bin)`.
    pub lowest_bin: usize,
    pub highest_bin: usize,
    /// Minimum distance in bins between partials when `overlap` is false.
    pub min_spacing: usize,
    /// Bins common to all sources when `overlap` is true.
    pub shared_partials: usize,
    pub amplitude_range: (f64, f64),
    pub gain_range: (f64, f64),
}

impl DatasetConfig {
    pub fn new(kind: DatasetKind) -> Self {
        let base = Self {
            kind,
            num_sources: 2,
            overlap: kind != DatasetKind::A,
            partials: 4,
            t60: 0.5,
            duration_seconds: 1.5,
            attack: 256,
            onset_frames: vec![4, 47, 90],
            activations: vec![vec![0, 2], vec![1, 2]],
            jitter: 2,
            lowest_bin: 10,
            highest_bin: if kind == DatasetKind::A { 200 } else { 120 },
            min_spacing: 16,
            shared_partials: 2,
            amplitude_range: (0.3, 1.0),
            gain_range: (0.6, 1.0),
        };
        match kind {
            DatasetKind::A | DatasetKind::B => base,
            DatasetKind::C => Self {
                num_sources: 3,
                shared_partials: 1,
                onset_frames: vec![4, 16, 28, 40, 52, 64, 76],
                activations: vec![vec![0, 3, 6], vec![1, 3, 5], vec![2, 4, 5, 6]],
                ..base
            },
        }
    }

    pub fn num_samples(&self, stft: &StftConfig) -> usize {
        (self.duration_seconds * stft.sample_rate).round() as usize
    }
}

/// Draws partial bins and note parameters for every source.
pub fn random_dataset_specs(
    cfg: &DatasetConfig,
    stft: &StftConfig,
    seed: u64,
) -> Result<Vec<DampedSinusoidSpec>> {
    if cfg.activations.len() != cfg.num_sources {
        return Err(invalid("one activation list per source is required"));
    }
    if cfg.lowest_bin >= cfg.highest_bin || cfg.highest_bin > stft.num_bins / 2 {
        return Err(invalid("bin range must lie in the lower half band"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bins = draw_bins(cfg, &mut rng)?;
    let len = cfg.num_samples(stft);
    let decay = 1000f64.ln() / (cfg.t60 * stft.sample_rate);
    let mut specs = Vec::with_capacity(cfg.num_sources);
    for (k, own_bins) in bins.into_iter().enumerate() {
        let p = own_bins.len();
        let amplitudes = (0..p)
            .map(|_| rng.random_range(cfg.amplitude_range.0..=cfg.amplitude_range.1))
            .collect();
        let phases = (0..p).map(|_| rng.random_range(-PI..PI)).collect();
        let mut onset_times = Vec::new();
        let mut gains = Vec::new();
        for &m in &cfg.activations[k] {
            let frame = *cfg
                .onset_frames
                .get(m)
                .ok_or_else(|| invalid(format!("activation refers to missing onset {m}")))?;
            onset_times.push(frame * stft.hop + rng.random_range(0..=cfg.jitter));
            gains.push(rng.random_range(cfg.gain_range.0..=cfg.gain_range.1));
        }
        specs.push(DampedSinusoidSpec {
            frequencies: own_bins.iter().map(|&b| stft.bin_frequency(b)).collect(),
            amplitudes,
            phases,
            decay,
            attack: cfg.attack,
            onset_times,
            gains,
            duration: len,
        });
    }
    Ok(specs)
}

fn draw_bins(cfg: &DatasetConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<usize>>> {
    let range = cfg.highest_bin - cfg.lowest_bin;
    if cfg.overlap {
        let shared = cfg.shared_partials.min(cfg.partials);
        let own = cfg.partials - shared;
        if shared + own > range {
            return Err(invalid("bin range too small for the requested partials"));
        }
        let common: Vec<usize> = sample(rng, range, shared)
            .into_iter()
            .map(|i| i + cfg.lowest_bin)
            .collect();
        let free: Vec<usize> = (cfg.lowest_bin..cfg.highest_bin)
            .filter(|b| !common.contains(b))
            .collect();
        Ok((0..cfg.num_sources)
            .map(|_| {
                let mut bins = common.clone();
                bins.extend(sample(rng, free.len(), own).into_iter().map(|i| free[i]));
                bins
            })
            .collect())
    } else {
        let total = cfg.partials * cfg.num_sources;
        if total * cfg.min_spacing > range {
            return Err(invalid("bin range too small for the requested spacing"));
        }
        loop {
            let bins: Vec<usize> = sample(rng, range, total)
                .into_iter()
                .map(|i| i + cfg.lowest_bin)
                .collect();
            let mut sorted = bins.clone();
            sorted.sort_unstable();
            if sorted.windows(2).all(|w| w[1] - w[0] >= cfg.min_spacing) {
                return Ok(bins.chunks(cfg.partials).map(|c| c.to_vec()).collect());
            }
        }
    }
}

/// Rendered mixture with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMixture {
    pub mixture: Vec<f64>,
    pub sources: Vec<Vec<f64>>,
    pub specs: Vec<DampedSinusoidSpec>,
    /// Frame containing the start of each onset event.
    pub onset_frames: Vec<usize>,
    pub activations: Vec<Vec<usize>>,
}

/// Renders every source and sums them. Onset frames are the frames whose
/// first hop contains the start sample of the event.
pub fn make_dataset_mixture(
    specs: &[DampedSinusoidSpec],
    activations: &[Vec<usize>],
    stft: &StftConfig,
) -> Result<DatasetMixture> {
    if specs.is_empty() || specs.len() != activations.len() {
        return Err(invalid("one activation list per source is required"));
    }
    let len = specs[0].duration;
    if specs.iter().any(|s| s.duration != len) {
        return Err(invalid("all sources must have the same duration"));
    }
    let sources = specs
        .iter()
        .map(|s| s.render(stft.sample_rate))
        .collect::<Result<Vec<_>>>()?;
    let mut mixture = vec![0.0; len];
    for s in &sources {
        for (m, v) in mixture.iter_mut().zip(s) {
            *m += v;
        }
    }
    let num_onsets = activations.iter().flatten().map(|&m| m + 1).max().unwrap_or(0);
    let mut onset_frames = vec![usize::MAX; num_onsets];
    for (spec, acts) in specs.iter().zip(activations) {
        if acts.len() != spec.onset_times.len() {
            return Err(invalid("activation list and onset times differ in length"));
        }
        for (&m, &start) in acts.iter().zip(&spec.onset_times) {
            let frame = start / stft.hop;
            if onset_frames[m] != usize::MAX && onset_frames[m] != frame {
                return Err(invalid(format!("sources disagree on the frame of onset {m}")));
            }
            onset_frames[m] = frame;
        }
    }
    if onset_frames.contains(&usize::MAX) {
        return Err(invalid("some onset is played by no source"));
    }
    Ok(DatasetMixture {
        mixture,
        sources,
        specs: specs.to_vec(),
        onset_frames,
        activations: activations.to_vec(),
    })
}

pub fn generate_dataset(cfg: &DatasetConfig, stft: &StftConfig, seed: u64) -> Result<DatasetMixture> {
    let specs = random_dataset_specs(cfg, stft, seed)?;
    make_dataset_mixture(&specs, &cfg.activations, stft)
}

/// JSON sidecar describing a rendered mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetTruth {
    pub dataset: String,
    pub seed: u64,
    /// Whether the sources were allowed to share bins.
    #[serde(default)]
    pub overlap: bool,
    pub stft: StftConfig,
    pub onset_frames: Vec<usize>,
    pub activations: Vec<Vec<usize>>,
    pub sources: Vec<DampedSinusoidSpec>,
}

impl DatasetTruth {
    pub fn new(cfg: &DatasetConfig, seed: u64, stft: &StftConfig, d: &DatasetMixture) -> Self {
        Self {
            dataset: cfg.kind.name().to_string(),
            seed,
            overlap: cfg.overlap,
            stft: *stft,
            onset_frames: d.onset_frames.clone(),
            activations: d.activations.clone(),
            sources: d.specs.clone(),
        }
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }

    /// Re-renders the sources and mixture from the stored specs.
    pub fn render(&self) -> Result<DatasetMixture> {
        make_dataset_mixture(&self.sources, &self.activations, &self.stft)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelBuiltConfig {
    pub num_sources: usize,
    pub num_bins: usize,
    pub num_onsets: usize,
    /// Gaussian bumps summed to form each source's spectral envelope.
    pub bumps: usize,
    /// Bump standard deviation as a fraction of the band.
    pub bump_width: f64,
    /// Per-onset gains are drawn from `[min_gain, 1]`.
    pub min_gain: f64,
}

impl ModelBuiltConfig {
    pub fn new(num_sources: usize, num_bins: usize, num_onsets: usize) -> Self {
        Self {
            num_sources,
            num_bins,
            num_onsets,
            bumps: 3,
            bump_width: 0.1,
            min_gain: 0.5,
        }
    }
}

/// Onset matrix built exactly from random parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBuiltInstance {
    pub onset: OnsetMatrix,
    pub truth: PhaseModelParams,
    /// Per-source onset columns, `K x F x M`.
    pub sources: Array3<Complex64>,
}

/// Magnitudes are a smooth spectral envelope times a per-onset gain. With
/// more onsets than sources, source `k` plays alone at onset `k` and all
/// sources play on the remaining onsets; otherwise only the diagonal onsets
/// are active.
pub fn make_model_built(cfg: &ModelBuiltConfig, seed: u64) -> Result<ModelBuiltInstance> {
    let (k_len, f_len, m_len) = (cfg.num_sources, cfg.num_bins, cfg.num_onsets);
    if k_len == 0 || f_len < 2 || m_len == 0 {
        return Err(invalid("model-built data needs sources, two bins and an onset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut envelope = Array2::<f64>::zeros((k_len, f_len));
    for k in 0..k_len {
        for _ in 0..cfg.bumps {
            let center: f64 = rng.random_range(0.0..1.0);
            let amp: f64 = rng.random_range(0.3..1.0);
            for f in 0..f_len {
                let x = f as f64 / f_len as f64 - center;
                envelope[[k, f]] += amp * (-(x * x) / (2.0 * cfg.bump_width * cfg.bump_width)).exp();
            }
        }
    }
    let mut gains = Array2::<f64>::zeros((k_len, m_len));
    for k in 0..k_len {
        for m in 0..m_len {
            let g: f64 = rng.random_range(cfg.min_gain..=1.0);
            if m == k || m >= k_len {
                gains[[k, m]] = g;
            }
        }
    }
    let magnitudes = Array3::from_shape_fn((k_len, f_len, m_len), |(k, f, m)| envelope[[k, f]] * gains[[k, m]]);
    let psi = Array2::from_shape_simple_fn((k_len, f_len), || rng.random_range(-PI..PI));
    let mut lambda = Array2::from_shape_simple_fn((k_len, m_len), || rng.random_range(-PI..PI));
    lambda.column_mut(0).fill(0.0);
    let truth = PhaseModelParams::from_strict(psi, lambda, magnitudes)?;

    let hop = if f_len % 4 == 0 { f_len / 4 } else { f_len };
    let stft = StftConfig::new(f_len, hop, StftConfig::reference().sample_rate)?;
    let empty = OnsetMatrix::new(Array2::zeros((f_len, m_len)), (0..m_len).collect(), stft)?;
    let built = synthesize_strict(&truth, &empty)?;
    let onset = empty.with_values(built.sources.sum_axis(Axis(0)))?;
    Ok(ModelBuiltInstance {
        onset,
        truth,
        sources: built.sources,
    })
}

/// A single note played twice; the second time it starts `delay` samples
/// after the beginning of its frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RepeatedNote {
    pub signal: Vec<f64>,
    pub spec: DampedSinusoidSpec,
    pub first_frame: usize,
    pub second_frame: usize,
    pub delay: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepeatedNoteConfig {
    pub partials: usize,
    /// Partial frequencies are drawn uniformly in this range, in Hz.
    pub frequency_range: (f64, f64),
    pub t60: f64,
    pub attack: usize,
    pub first_frame: usize,
    pub second_frame: usize,
    pub max_delay: usize,
    pub duration_seconds: f64,
}

impl Default for RepeatedNoteConfig {
    fn default() -> Self {
        Self {
            partials: 4,
            frequency_range: (200.0, 2500.0),
            t60: 0.5,
            attack: 256,
            first_frame: 4,
            second_frame: 47,
            max_delay: 4,
            duration_seconds: 1.0,
        }
    }
}

pub fn make_repeated_note(cfg: &RepeatedNoteConfig, stft: &StftConfig, seed: u64) -> Result<RepeatedNote> {
    if cfg.max_delay == 0 || cfg.max_delay >= stft.hop {
        return Err(invalid("delay must stay within the first hop of the frame"));
    }
    if cfg.first_frame >= cfg.second_frame {
        return Err(invalid("second occurrence must come after the first"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = cfg.partials;
    let frequencies = (0..p)
        .map(|_| rng.random_range(cfg.frequency_range.0..cfg.frequency_range.1))
        .collect();
    let amplitudes = (0..p).map(|_| rng.random_range(0.3..1.0)).collect();
    let phases = (0..p).map(|_| rng.random_range(-PI..PI)).collect();
    let delay = rng.random_range(1..=cfg.max_delay);
    let gain = rng.random_range(0.6..1.0);
    let duration = (cfg.duration_seconds * stft.sample_rate).round() as usize;
    let spec = DampedSinusoidSpec {
        frequencies,
        amplitudes,
        phases,
        decay: 1000f64.ln() / (cfg.t60 * stft.sample_rate),
        attack: cfg.attack,
        onset_times: vec![cfg.first_frame * stft.hop, cfg.second_frame * stft.hop + delay],
        gains: vec![1.0, gain],
        duration,
    };
    let signal = spec.render(stft.sample_rate)?;
    Ok(RepeatedNote {
        signal,
        spec,
        first_frame: cfg.first_frame,
        second_frame: cfg.second_frame,
        delay,
    })
}
