//! WAV input and output.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{invalid, Result};

/// Samples in `[-1, 1]` and the sample rate. Multichannel files are mixed
/// down to mono by averaging the channels.
pub fn read_wav(path: impl AsRef<Path>) -> Result<(Vec<f64>, f64)> {
    let path = path.as_ref();
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    let interleaved: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        SampleFormat::Int => {
            if spec.bits_per_sample == 0 || spec.bits_per_sample > 32 {
                return Err(invalid(format!("unsupported bit depth {}", spec.bits_per_sample)));
            }
            let scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(invalid("wav file has no channels"));
    }
    if channels == 1 {
        return Ok((interleaved, spec.sample_rate as f64));
    }
    log::warn!("{}: mixing {channels} channels down to mono", path.display());
    let mono = interleaved
        .chunks(channels)
        .map(|c| c.iter().sum::<f64>() / channels as f64)
        .collect();
    Ok((mono, spec.sample_rate as f64))
}

/// Writes mono 32-bit float samples.
pub fn write_wav(path: impl AsRef<Path>, samples: &[f64], sample_rate: f64) -> Result<()> {
    if !(sample_rate >= 1.0 && sample_rate <= u32::MAX as f64) || sample_rate.fract() != 0.0 {
        return Err(invalid(format!("sample rate {sample_rate} is not a positive integer")));
    }
    let spec = WavSpec {
        channels: 1,
        sample_rate: sample_rate as u32,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for &s in samples {
        writer.write_sample(s as f32)?;
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_roundtrip_within_single_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let x: Vec<f64> = (0..1000).map(|n| (n as f64 * 0.01).sin() * 0.7).collect();
        write_wav(&path, &x, 11025.0).unwrap();
        let (y, fs) = read_wav(&path).unwrap();
        assert_eq!(fs, 11025.0);
        assert_eq!(y.len(), x.len());
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn stereo_pcm_is_averaged() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        for (l, r) in [(16384i16, 0i16), (-32768, -16384)] {
            w.write_sample(l).unwrap();
            w.write_sample(r).unwrap();
        }
        w.finalize().unwrap();
        let (y, fs) = read_wav(&path).unwrap();
        assert_eq!(fs, 8000.0);
        assert_eq!(y, vec![0.25, -0.75]);
    }

    #[test]
    fn fractional_rate_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(write_wav(dir.path().join("x.wav"), &[0.0], 11025.5).is_err());
    }
}
