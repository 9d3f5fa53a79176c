//! Wiener-style soft masking of the mixture STFT.

use ndarray::{Array3, ArrayView2, ArrayView3, Axis};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};
use crate::onset::OnsetMatrix;
use crate::stft::ComplexSpectrogram;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WienerConfig {
    /// Magnitudes are raised to this power to form the masks; 2 gives the
    /// classical power-ratio filter.
    pub exponent: f64,
}

impl Default for WienerConfig {
    fn default() -> Self {
        Self { exponent: 2.0 }
    }
}

/// Applies `A_k^p / sum_l A_l^p` to `mixture` for every source. Bins where
/// no source has energy are set to zero.
pub fn wiener_filter(
    mixture: ArrayView2<Complex64>,
    magnitudes: ArrayView3<f64>,
    cfg: &WienerConfig,
) -> Result<Array3<Complex64>> {
    let (k, f, t) = magnitudes.dim();
    if mixture.dim() != (f, t) {
        return Err(mismatch(format!(
            "mixture is {:?}, magnitudes are {:?}",
            mixture.dim(),
            magnitudes.dim()
        )));
    }
    if !(cfg.exponent > 0.0 && cfg.exponent.is_finite()) {
        return Err(invalid("mask exponent must be positive"));
    }
    if magnitudes.iter().any(|&a| !(a >= 0.0) || !a.is_finite()) {
        return Err(invalid("magnitudes must be finite and nonnegative"));
    }
    let p = cfg.exponent;
    let powered = magnitudes.mapv(|a| if p == 2.0 { a * a } else { a.powf(p) });
    let total = powered.sum_axis(Axis(0));
    let mut out = Array3::zeros((k, f, t));
    for kk in 0..k {
        let mut slot = out.index_axis_mut(Axis(0), kk);
        ndarray::Zip::from(&mut slot)
            .and(&mixture)
            .and(&powered.index_axis(Axis(0), kk))
            .and(&total)
            .for_each(|o, &x, &w, &d| {
                if d > 0.0 {
                    *o = x * (w / d);
                }
            });
    }
    Ok(out)
}

/// Per-source spectrogram estimates from the mixture and oracle magnitudes.
pub fn wiener_separate(
    mixture: &ComplexSpectrogram,
    magnitudes: ArrayView3<f64>,
    cfg: &WienerConfig,
) -> Result<Vec<ComplexSpectrogram>> {
    let filtered = wiener_filter(mixture.data().view(), magnitudes, cfg)?;
    filtered
        .outer_iter()
        .map(|s| mixture.with_data(s.to_owned()))
        .collect()
}

/// Wiener estimates restricted to the onset columns, `K x F x M`.
pub fn wiener_onsets(
    onset: &OnsetMatrix,
    magnitudes: ArrayView3<f64>,
    cfg: &WienerConfig,
) -> Result<Array3<Complex64>> {
    wiener_filter(onset.values(), magnitudes, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mixture(rng: &mut ChaCha8Rng, f: usize, t: usize) -> Array2<Complex64> {
        Array2::from_shape_simple_fn((f, t), || {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    #[test]
    fn single_source_mask_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_mixture(&mut rng, 6, 5);
        let mut a = Array3::from_shape_simple_fn((1, 6, 5), || rng.random_range(0.1..2.0));
        a[[0, 2, 2]] = 0.0;
        let out = wiener_filter(x.view(), a.view(), &WienerConfig::default()).unwrap();
        for f in 0..6 {
            for t in 0..5 {
                let expect = if (f, t) == (2, 2) { Complex64::new(0.0, 0.0) } else { x[[f, t]] };
                assert_eq!(out[[0, f, t]], expect);
            }
        }
    }

    #[test]
    fn disjoint_supports_split_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_mixture(&mut rng, 8, 4);
        let a = Array3::from_shape_fn((2, 8, 4), |(k, f, _)| if (f < 4) == (k == 0) { 1.0 + f as f64 } else { 0.0 });
        let out = wiener_filter(x.view(), a.view(), &WienerConfig::default()).unwrap();
        for f in 0..8 {
            for t in 0..4 {
                let (own, other) = if f < 4 { (0, 1) } else { (1, 0) };
                assert_eq!(out[[own, f, t]], x[[f, t]]);
                assert_eq!(out[[other, f, t]], Complex64::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn equal_magnitudes_halve_the_mixture() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_mixture(&mut rng, 4, 3);
        let a = Array3::from_elem((2, 4, 3), 0.7);
        let out = wiener_filter(x.view(), a.view(), &WienerConfig::default()).unwrap();
        for (o, xx) in out.index_axis(Axis(0), 1).iter().zip(x.iter()) {
            assert!((o - xx / 2.0).norm() < 1e-15);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let x = Array2::<Complex64>::zeros((4, 3));
        let a = Array3::<f64>::zeros((2, 4, 2));
        assert!(wiener_filter(x.view(), a.view(), &WienerConfig::default()).is_err());
        let a = Array3::<f64>::from_elem((2, 4, 3), -1.0);
        assert!(wiener_filter(x.view(), a.view(), &WienerConfig::default()).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
        #[test]
        fn masks_conserve_the_mixture(seed in 0u64..10_000, k in 1usize..4, p in 0.5f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_mixture(&mut rng, 5, 4);
            let a = Array3::from_shape_simple_fn((k, 5, 4), || {
                if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..3.0) }
            });
            let out = wiener_filter(x.view(), a.view(), &WienerConfig { exponent: p }).unwrap();
            let total = out.sum_axis(Axis(0));
            for f in 0..5 {
                for t in 0..4 {
                    let active = (0..k).any(|kk| a[[kk, f, t]] > 0.0);
                    let expect = if active { x[[f, t]] } else { Complex64::new(0.0, 0.0) };
                    proptest::prop_assert!((total[[f, t]] - expect).norm() < 1e-12);
                    for kk in 0..k {
                        // mask in [0, 1]
                        let r = out[[kk, f, t]].norm() / x[[f, t]].norm().max(1e-300);
                        proptest::prop_assert!(r <= 1.0 + 1e-12);
                    }
                }
            }
        }
    }
}
