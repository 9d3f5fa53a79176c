//! Repeated-phase mixture model over onset frames.
//!
//! Source `k` at onset `m` is `A(f,m) exp(i psi(f)) exp(i lambda(m) f)`: a
//! reference phase per bin plus an offset linear in frequency that encodes
//! the occurrence's delay. The relaxed variant replaces the model phase by a
//! free phase `phi(f,m)`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};
use num_complex::Complex64;

use crate::error::{invalid, mismatch, Error, Result};
use crate::onset::OnsetMatrix;

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_phase(x: f64) -> f64 {
    let y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y - 2.0 * PI
    } else {
        y
    }
}

/// Angle of `z`, or `fallback` when `z` is exactly zero.
pub(crate) fn angle_or(z: Complex64, fallback: f64) -> f64 {
    if z.re == 0.0 && z.im == 0.0 {
        fallback
    } else {
        z.arg()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseModelParams {
    psi: Array2<f64>,
    lambda: Array2<f64>,
    phi: Array3<f64>,
    magnitudes: Array3<f64>,
}

impl PhaseModelParams {
    /// Builds a parameter set; all phases are wrapped on the way in.
    pub fn new(
        psi: Array2<f64>,
        lambda: Array2<f64>,
        phi: Array3<f64>,
        magnitudes: Array3<f64>,
    ) -> Result<Self> {
        let (k, f, m) = magnitudes.dim();
        if k == 0 || f == 0 || m == 0 {
            return Err(invalid("empty magnitude tensor"));
        }
        if psi.dim() != (k, f) {
            return Err(mismatch(format!("psi is {:?}, expected {:?}", psi.dim(), (k, f))));
        }
        if lambda.dim() != (k, m) {
            return Err(mismatch(format!(
                "lambda is {:?}, expected {:?}",
                lambda.dim(),
                (k, m)
            )));
        }
        if phi.dim() != (k, f, m) {
            return Err(mismatch(format!(
                "phi is {:?}, expected {:?}",
                phi.dim(),
                (k, f, m)
            )));
        }
        if magnitudes.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("magnitudes"));
        }
        if magnitudes.iter().any(|&a| a < 0.0) {
            return Err(invalid("magnitudes must be nonnegative"));
        }
        if psi.iter().chain(lambda.iter()).chain(phi.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("phases"));
        }
        Ok(Self {
            psi: psi.mapv(wrap_phase),
            lambda: lambda.mapv(wrap_phase),
            phi: phi.mapv(wrap_phase),
            magnitudes,
        })
    }

    /// Parameters whose relaxed phases equal the strict model phases.
    pub fn from_strict(psi: Array2<f64>, lambda: Array2<f64>, magnitudes: Array3<f64>) -> Result<Self> {
        let phi = Array3::zeros(magnitudes.dim());
        let mut p = Self::new(psi, lambda, phi, magnitudes)?;
        p.phi = p.strict_phases();
        Ok(p)
    }

    pub fn psi(&self) -> ArrayView2<'_, f64> {
        self.psi.view()
    }

    pub fn lambda(&self) -> ArrayView2<'_, f64> {
        self.lambda.view()
    }

    pub fn phi(&self) -> ArrayView3<'_, f64> {
        self.phi.view()
    }

    pub fn magnitudes(&self) -> ArrayView3<'_, f64> {
        self.magnitudes.view()
    }

    pub fn num_sources(&self) -> usize {
        self.magnitudes.dim().0
    }

    pub fn num_bins(&self) -> usize {
        self.magnitudes.dim().1
    }

    pub fn num_onsets(&self) -> usize {
        self.magnitudes.dim().2
    }

    pub(crate) fn psi_mut(&mut self) -> &mut Array2<f64> {
        &mut self.psi
    }

    pub(crate) fn lambda_mut(&mut self) -> &mut Array2<f64> {
        &mut self.lambda
    }

    pub(crate) fn phi_mut(&mut self) -> &mut Array3<f64> {
        &mut self.phi
    }

    /// True when every source has `lambda(0) == 0`.
    pub fn is_gauge_fixed(&self) -> bool {
        self.lambda.column(0).iter().all(|&l| l == 0.0)
    }

    /// Moves the linear part `c f` from the delays into the reference phase
    /// of source `k`. The model phases, and hence both costs, are unchanged.
    pub fn shift_gauge(&mut self, k: usize, c: f64) {
        for (f, p) in self.psi.row_mut(k).iter_mut().enumerate() {
            *p = wrap_phase(*p + c * f as f64);
        }
        for l in self.lambda.row_mut(k).iter_mut() {
            *l = wrap_phase(*l - c);
        }
    }

    /// Shifts every source so that `lambda(0) == 0`.
    pub fn fix_gauge(&mut self) {
        for k in 0..self.num_sources() {
            let c = self.lambda[[k, 0]];
            if c != 0.0 {
                self.shift_gauge(k, c);
                self.lambda[[k, 0]] = 0.0;
            }
        }
    }

    /// `psi(f) + lambda(m) f`, wrapped, as a `K x F x M` tensor.
    pub fn strict_phases(&self) -> Array3<f64> {
        let (k, f, m) = self.magnitudes.dim();
        Array3::from_shape_fn((k, f, m), |(k, f, m)| {
            wrap_phase(self.psi[[k, f]] + self.lambda[[k, m]] * f as f64)
        })
    }

    /// Strict model of one source, `F x M`.
    pub fn strict_source(&self, k: usize) -> Array2<Complex64> {
        strict_component(
            self.magnitudes.index_axis(Axis(0), k),
            self.psi.row(k),
            self.lambda.row(k),
        )
    }

    /// Relaxed model of one source, `F x M`.
    pub fn relaxed_source(&self, k: usize) -> Array2<Complex64> {
        let a = self.magnitudes.index_axis(Axis(0), k);
        let phi = self.phi.index_axis(Axis(0), k);
        ndarray::Zip::from(&a)
            .and(&phi)
            .map_collect(|&a, &p| Complex64::from_polar(a, p))
    }

    fn check_onsets(&self, onset: &OnsetMatrix) -> Result<()> {
        if onset.values().dim() != (self.num_bins(), self.num_onsets()) {
            return Err(mismatch(format!(
                "onset matrix is {:?}, parameters describe {:?}",
                onset.values().dim(),
                (self.num_bins(), self.num_onsets())
            )));
        }
        Ok(())
    }
}

/// `A(f,m) exp(i psi(f)) exp(i lambda(m) f)`.
pub(crate) fn strict_component(
    a: ArrayView2<f64>,
    psi: ArrayView1<f64>,
    lambda: ArrayView1<f64>,
) -> Array2<Complex64> {
    Array2::from_shape_fn(a.dim(), |(f, m)| {
        Complex64::from_polar(a[[f, m]], psi[f] + lambda[m] * f as f64)
    })
}

/// Per-source models, their sum and the per-source residual targets.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSynthesis {
    /// `K x F x M` per-source models.
    pub sources: Array3<Complex64>,
    /// `F x M` sum over sources.
    pub mixture: Array2<Complex64>,
    /// `K x F x M`, `Y - mixture + sources[k]`.
    pub residuals: Array3<Complex64>,
}

impl ModelSynthesis {
    pub fn from_sources(sources: Array3<Complex64>, y: ArrayView2<Complex64>) -> Result<Self> {
        let (k, f, m) = sources.dim();
        if y.dim() != (f, m) {
            return Err(mismatch("source models and onset matrix differ in shape"));
        }
        let mixture = sources.sum_axis(Axis(0));
        let residual = &y - &mixture;
        let mut residuals = sources.clone();
        for kk in 0..k {
            residuals
                .index_axis_mut(Axis(0), kk)
                .zip_mut_with(&residual, |b, r| *b += *r);
        }
        Ok(Self {
            sources,
            mixture,
            residuals,
        })
    }
}

fn stack_sources(params: &PhaseModelParams, source: impl Fn(usize) -> Array2<Complex64>) -> Array3<Complex64> {
    let (k, f, m) = params.magnitudes.dim();
    let mut out = Array3::zeros((k, f, m));
    for kk in 0..k {
        out.index_axis_mut(Axis(0), kk).assign(&source(kk));
    }
    out
}

pub fn synthesize_strict(params: &PhaseModelParams, onset: &OnsetMatrix) -> Result<ModelSynthesis> {
    params.check_onsets(onset)?;
    ModelSynthesis::from_sources(stack_sources(params, |k| params.strict_source(k)), onset.values())
}

pub fn synthesize_relaxed(params: &PhaseModelParams, onset: &OnsetMatrix) -> Result<ModelSynthesis> {
    params.check_onsets(onset)?;
    ModelSynthesis::from_sources(stack_sources(params, |k| params.relaxed_source(k)), onset.values())
}

fn squared_distance(a: ArrayView2<Complex64>, b: ArrayView2<Complex64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm_sqr()).sum()
}

/// Squared error between the onset matrix and the strict model.
pub fn strict_cost(params: &PhaseModelParams, onset: &OnsetMatrix) -> Result<f64> {
    let s = synthesize_strict(params, onset)?;
    Ok(squared_distance(onset.values(), s.mixture.view()))
}

/// Data term of the relaxed model plus `sigma` times the magnitude-weighted
/// distance between the free phases and the model phases.
pub fn relaxed_cost(params: &PhaseModelParams, onset: &OnsetMatrix, sigma: f64) -> Result<f64> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(invalid("sigma must be a nonnegative number"));
    }
    let s = synthesize_relaxed(params, onset)?;
    let data = squared_distance(onset.values(), s.mixture.view());
    Ok(data + sigma * phase_penalty(params))
}

/// `sum A^2 |exp(i phi) - exp(i (psi + lambda f))|^2` over all sources.
pub fn phase_penalty(params: &PhaseModelParams) -> f64 {
    let (k, f, m) = params.magnitudes.dim();
    let mut total = 0.0;
    for kk in 0..k {
        for ff in 0..f {
            for mm in 0..m {
                let a = params.magnitudes[[kk, ff, mm]];
                if a == 0.0 {
                    continue;
                }
                let model = params.psi[[kk, ff]] + params.lambda[[kk, mm]] * ff as f64;
                let d = Complex64::from_polar(1.0, params.phi[[kk, ff, mm]])
                    - Complex64::from_polar(1.0, model);
                total += a * a * d.norm_sqr();
            }
        }
    }
    total
}

const PARAMS_MAGIC: &str = "phaserep-params 1";

/// Plain-text layout: a magic line, `K F M`, then the sections `psi` (K rows
/// of F values), `lambda` (K rows of M), `phi` and `magnitudes` (K*F rows of
/// M, source-major). Values are written in shortest round-trip form.
pub fn format_params(params: &PhaseModelParams) -> String {
    let (k, f, m) = params.magnitudes.dim();
    let mut s = String::new();
    let _ = writeln!(s, "{PARAMS_MAGIC}");
    let _ = writeln!(s, "{k} {f} {m}");
    let mut rows = |name: &str, data: &mut dyn Iterator<Item = f64>, width: usize| {
        let _ = writeln!(s, "{name}");
        let values: Vec<f64> = data.collect();
        for row in values.chunks(width) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
    };
    rows("psi", &mut params.psi.iter().cloned(), f);
    rows("lambda", &mut params.lambda.iter().cloned(), m);
    rows("phi", &mut params.phi.iter().cloned(), m);
    rows("magnitudes", &mut params.magnitudes.iter().cloned(), m);
    s
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<(usize, &'a str)> {
        for (i, line) in self.inner.by_ref() {
            let t = line.trim();
            if !t.is_empty() {
                return Ok((i + 1, t));
            }
        }
        Err(Error::Parse {
            line: 0,
            message: "unexpected end of input".into(),
        })
    }

    fn expect(&mut self, word: &str) -> Result<()> {
        let (n, line) = self.next()?;
        if line != word {
            return Err(Error::Parse {
                line: n,
                message: format!("expected {word:?}, found {line:?}"),
            });
        }
        Ok(())
    }

    fn numbers<T: std::str::FromStr>(&mut self, count: usize) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        let (n, line) = self.next()?;
        let vals = line
            .split_whitespace()
            .map(|w| {
                w.parse::<T>().map_err(|e| Error::Parse {
                    line: n,
                    message: format!("{w:?}: {e}"),
                })
            })
            .collect::<Result<Vec<T>>>()?;
        if vals.len() != count {
            return Err(Error::Parse {
                line: n,
                message: format!("expected {count} values, found {}", vals.len()),
            });
        }
        Ok(vals)
    }

    fn block(&mut self, name: &str, rows: usize, width: usize) -> Result<Vec<f64>> {
        self.expect(name)?;
        let mut out = Vec::with_capacity(rows * width);
        for _ in 0..rows {
            out.extend(self.numbers::<f64>(width)?);
        }
        Ok(out)
    }
}

pub fn parse_params(text: &str) -> Result<PhaseModelParams> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
    };
    lines.expect(PARAMS_MAGIC)?;
    let dims = lines.numbers::<usize>(3)?;
    let (k, f, m) = (dims[0], dims[1], dims[2]);
    let shape_err = |e: ndarray::ShapeError| invalid(e.to_string());
    let psi = Array2::from_shape_vec((k, f), lines.block("psi", k, f)?).map_err(shape_err)?;
    let lambda = Array2::from_shape_vec((k, m), lines.block("lambda", k, m)?).map_err(shape_err)?;
    let phi = Array3::from_shape_vec((k, f, m), lines.block("phi", k * f, m)?).map_err(shape_err)?;
    let mags =
        Array3::from_shape_vec((k, f, m), lines.block("magnitudes", k * f, m)?).map_err(shape_err)?;
    PhaseModelParams::new(psi, lambda, phi, mags)
}

pub fn write_params(path: impl AsRef<Path>, params: &PhaseModelParams) -> Result<()> {
    std::fs::write(path, format_params(params))?;
    Ok(())
}

pub fn read_params(path: impl AsRef<Path>) -> Result<PhaseModelParams> {
    parse_params(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stft::StftConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(f: usize) -> StftConfig {
        StftConfig::new(f, f / 4, 11025.0).unwrap()
    }

    fn random_params(rng: &mut ChaCha8Rng, k: usize, f: usize, m: usize) -> PhaseModelParams {
        let u = |rng: &mut ChaCha8Rng| rng.random_range(-PI..PI);
        PhaseModelParams::new(
            Array2::from_shape_simple_fn((k, f), || u(rng)),
            Array2::from_shape_simple_fn((k, m), || u(rng)),
            Array3::from_shape_simple_fn((k, f, m), || u(rng)),
            Array3::from_shape_simple_fn((k, f, m), || rng.random_range(0.0..1.0)),
        )
        .unwrap()
    }

    fn random_onsets(rng: &mut ChaCha8Rng, f: usize, m: usize) -> OnsetMatrix {
        let v = Array2::from_shape_simple_fn((f, m), || {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        OnsetMatrix::new(v, (0..m).collect(), cfg(f)).unwrap()
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_phase(PI), PI);
        assert_eq!(wrap_phase(-PI), PI);
        assert!((wrap_phase(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert!((wrap_phase(0.25 - 8.0 * PI) - 0.25).abs() < 1e-12);
        assert_eq!(wrap_phase(0.0), 0.0);
    }

    #[test]
    fn zero_delay_repeats_reference_phase() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = random_params(&mut rng, 1, 16, 3);
        p.lambda.fill(0.0);
        let y = random_onsets(&mut rng, 16, 3);
        let s = synthesize_strict(&p, &y).unwrap();
        for f in 0..16 {
            for m in 0..3 {
                let expect = Complex64::from_polar(p.magnitudes[[0, f, m]], p.psi[[0, f]]);
                assert!((s.sources[[0, f, m]] - expect).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn delayed_column_is_phase_shifted() {
        let f_len = 32;
        let eta = 5.0;
        let lam = 2.0 * PI * eta / f_len as f64;
        let psi = Array2::from_shape_fn((1, f_len), |(_, f)| (f as f64 * 0.37).sin() * 3.0);
        let mags = Array3::from_shape_fn((1, f_len, 2), |(_, f, m)| 1.0 + f as f64 * 0.1 + m as f64);
        let p = PhaseModelParams::from_strict(psi, Array2::from_shape_vec((1, 2), vec![0.0, lam]).unwrap(), mags.clone())
            .unwrap();
        let y = OnsetMatrix::new(Array2::zeros((f_len, 2)), vec![0, 1], cfg(f_len)).unwrap();
        let s = synthesize_strict(&p, &y).unwrap();
        for f in 0..f_len {
            let c0 = s.sources[[0, f, 0]];
            let c1 = s.sources[[0, f, 1]];
            let expect = Complex64::from_polar(mags[[0, f, 1]], c0.arg() + 2.0 * PI * eta * f as f64 / f_len as f64);
            assert!((c1 - expect).norm() < 1e-12);
            assert!((c0.norm() - mags[[0, f, 0]]).abs() < 1e-12);
        }
    }

    #[test]
    fn synthesis_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_params(&mut rng, 2, 8, 3);
        let y = random_onsets(&mut rng, 8, 3);
        for s in [synthesize_strict(&p, &y).unwrap(), synthesize_relaxed(&p, &y).unwrap()] {
            for f in 0..8 {
                for m in 0..3 {
                    let sum = s.sources[[0, f, m]] + s.sources[[1, f, m]];
                    assert_eq!(s.mixture[[f, m]], sum);
                    for k in 0..2 {
                        let b = y.values()[[f, m]] - s.mixture[[f, m]] + s.sources[[k, f, m]];
                        assert!((s.residuals[[k, f, m]] - b).norm() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn relaxed_with_model_phases_equals_strict() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_params(&mut rng, 2, 8, 3);
        let p = PhaseModelParams::from_strict(p.psi.clone(), p.lambda.clone(), p.magnitudes.clone()).unwrap();
        let y = random_onsets(&mut rng, 8, 3);
        let a = synthesize_strict(&p, &y).unwrap();
        let b = synthesize_relaxed(&p, &y).unwrap();
        for (x, z) in a.sources.iter().zip(b.sources.iter()) {
            assert!((x - z).norm() < 1e-12);
        }
        assert!(phase_penalty(&p) < 1e-24);
    }

    #[test]
    fn relaxed_reproduces_single_source_mixture() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = random_onsets(&mut rng, 8, 2);
        let mags = y.values().mapv(|z| z.norm()).insert_axis(Axis(0));
        let phi = y.values().mapv(|z| z.arg()).insert_axis(Axis(0));
        let p = PhaseModelParams::new(Array2::zeros((1, 8)), Array2::zeros((1, 2)), phi, mags).unwrap();
        let s = synthesize_relaxed(&p, &y).unwrap();
        for (a, b) in s.mixture.iter().zip(y.values().iter()) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn strict_cost_zero_on_model_built_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_params(&mut rng, 2, 16, 3);
        let y0 = random_onsets(&mut rng, 16, 3);
        let built = synthesize_strict(&p, &y0).unwrap().mixture;
        let y = y0.with_values(built).unwrap();
        assert!(strict_cost(&p, &y).unwrap() <= 1e-20);
    }

    #[test]
    fn strict_cost_unit_magnitude_against_silence() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut p = random_params(&mut rng, 1, 8, 3);
        p.magnitudes.fill(1.0);
        let y = OnsetMatrix::new(Array2::zeros((8, 3)), vec![0, 1, 2], cfg(8)).unwrap();
        assert!((strict_cost(&p, &y).unwrap() - 24.0).abs() < 1e-12);
    }

    fn scalar_strict_cost(p: &PhaseModelParams, y: &OnsetMatrix) -> f64 {
        let (k, f, m) = p.magnitudes.dim();
        let mut c = 0.0;
        for ff in 0..f {
            for mm in 0..m {
                let mut re = y.values()[[ff, mm]].re;
                let mut im = y.values()[[ff, mm]].im;
                for kk in 0..k {
                    let th = p.psi[[kk, ff]] + p.lambda[[kk, mm]] * ff as f64;
                    re -= p.magnitudes[[kk, ff, mm]] * th.cos();
                    im -= p.magnitudes[[kk, ff, mm]] * th.sin();
                }
                c += re * re + im * im;
            }
        }
        c
    }

    fn scalar_relaxed_cost(p: &PhaseModelParams, y: &OnsetMatrix, sigma: f64) -> f64 {
        let (k, f, m) = p.magnitudes.dim();
        let mut data = 0.0;
        let mut pen = 0.0;
        for ff in 0..f {
            for mm in 0..m {
                let mut re = y.values()[[ff, mm]].re;
                let mut im = y.values()[[ff, mm]].im;
                for kk in 0..k {
                    let a = p.magnitudes[[kk, ff, mm]];
                    let ph = p.phi[[kk, ff, mm]];
                    re -= a * ph.cos();
                    im -= a * ph.sin();
                    let th = p.psi[[kk, ff]] + p.lambda[[kk, mm]] * ff as f64;
                    // |e^{ia} - e^{ib}|^2 = 2 - 2 cos(a - b)
                    pen += a * a * (2.0 - 2.0 * (ph - th).cos());
                }
                data += re * re + im * im;
            }
        }
        data + sigma * pen
    }

    #[test]
    fn costs_match_scalar_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let p = random_params(&mut rng, 2, 8, 3);
            let y = random_onsets(&mut rng, 8, 3);
            let a = strict_cost(&p, &y).unwrap();
            assert!((a - scalar_strict_cost(&p, &y)).abs() < 1e-10 * (1.0 + a));
            for sigma in [0.0, 0.2, 3.0] {
                let b = relaxed_cost(&p, &y, sigma).unwrap();
                assert!((b - scalar_relaxed_cost(&p, &y, sigma)).abs() < 1e-10 * (1.0 + b));
            }
            let data_only = relaxed_cost(&p, &y, 0.0).unwrap();
            let s = synthesize_relaxed(&p, &y).unwrap();
            assert!((data_only - squared_distance(y.values(), s.mixture.view())).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_params(&mut rng, 2, 8, 3);
        let y = random_onsets(&mut rng, 8, 2);
        assert!(matches!(strict_cost(&p, &y), Err(Error::DimensionMismatch(_))));
        assert!(matches!(synthesize_relaxed(&p, &y), Err(Error::DimensionMismatch(_))));
        assert!(PhaseModelParams::new(
            Array2::zeros((2, 8)),
            Array2::zeros((2, 2)),
            Array3::zeros((2, 8, 3)),
            Array3::zeros((2, 8, 3))
        )
        .is_err());
        assert!(PhaseModelParams::new(
            Array2::zeros((1, 2)),
            Array2::zeros((1, 1)),
            Array3::zeros((1, 2, 1)),
            Array3::from_elem((1, 2, 1), -1.0)
        )
        .is_err());
    }

    #[test]
    fn params_text_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_params(&mut rng, 2, 5, 3);
        let text = format_params(&p);
        let q = parse_params(&text).unwrap();
        assert_eq!(p, q);
        let broken = text.replacen("lambda", "lambdas", 1);
        assert!(matches!(parse_params(&broken), Err(Error::Parse { .. })));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]

        #[test]
        fn costs_are_gauge_invariant(seed in 0u64..10_000, c in -3.0f64..3.0, sigma in 0.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_params(&mut rng, 2, 8, 3);
            let y = random_onsets(&mut rng, 8, 3);
            let mut q = p.clone();
            q.shift_gauge(1, c);
            q.shift_gauge(0, -0.5 * c);
            let (a, b) = (strict_cost(&p, &y).unwrap(), strict_cost(&q, &y).unwrap());
            proptest::prop_assert!((a - b).abs() < 1e-9 * (1.0 + a));
            let (a, b) = (relaxed_cost(&p, &y, sigma).unwrap(), relaxed_cost(&q, &y, sigma).unwrap());
            proptest::prop_assert!((a - b).abs() < 1e-9 * (1.0 + a));
        }

        #[test]
        fn relaxed_cost_nondecreasing_in_sigma(seed in 0u64..10_000, s1 in 0.0f64..5.0, ds in 0.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_params(&mut rng, 2, 8, 3);
            let y = random_onsets(&mut rng, 8, 3);
            proptest::prop_assert!(relaxed_cost(&p, &y, s1).unwrap() <= relaxed_cost(&p, &y, s1 + ds).unwrap());
        }

        #[test]
        fn stored_phases_are_wrapped(seed in 0u64..10_000, scale in 1.0f64..50.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = PhaseModelParams::new(
                Array2::from_shape_simple_fn((2, 4), || rng.random_range(-scale..scale)),
                Array2::from_shape_simple_fn((2, 3), || rng.random_range(-scale..scale)),
                Array3::from_shape_simple_fn((2, 4, 3), || rng.random_range(-scale..scale)),
                Array3::from_elem((2, 4, 3), 1.0),
            ).unwrap();
            for v in p.psi.iter().chain(p.lambda.iter()).chain(p.phi.iter()) {
                proptest::prop_assert!(*v > -PI && *v <= PI);
            }
        }
    }
}
