//! Estimation error on onset frames and energy-ratio separation scores.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use ndarray::{ArrayView1, ArrayView3, Axis};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};

/// Scores at or beyond this magnitude are reported as the bound itself.
pub const SCORE_CAP_DB: f64 = 200.0;

/// Mean over sources of the Frobenius distance between true and estimated
/// onset columns (`K x F x M` each).
pub fn onset_estimation_error(
    truth: ArrayView3<Complex64>,
    estimate: ArrayView3<Complex64>,
) -> Result<f64> {
    if truth.dim() != estimate.dim() {
        return Err(mismatch(format!(
            "truth is {:?}, estimate is {:?}",
            truth.dim(),
            estimate.dim()
        )));
    }
    let k = truth.len_of(Axis(0));
    if k == 0 {
        return Err(invalid("no sources"));
    }
    let total: f64 = truth
        .outer_iter()
        .zip(estimate.outer_iter())
        .map(|(t, e)| {
            t.iter()
                .zip(e.iter())
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(total / k as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceScores {
    pub sdr: f64,
    pub sir: f64,
    pub sar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationScores {
    pub per_source: Vec<SourceScores>,
}

impl SeparationScores {
    pub fn mean(&self) -> SourceScores {
        let n = self.per_source.len().max(1) as f64;
        let sum = |g: fn(&SourceScores) -> f64| self.per_source.iter().map(g).sum::<f64>() / n;
        SourceScores {
            sdr: sum(|s| s.sdr),
            sir: sum(|s| s.sir),
            sar: sum(|s| s.sar),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BssConfig {
    /// Taps of the distortion filter allowed on each reference before an
    /// error is counted as interference or artifact. One tap allows only a
    /// gain.
    pub filter_length: usize,
}

impl Default for BssConfig {
    fn default() -> Self {
        Self { filter_length: 512 }
    }
}

fn db(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        return SCORE_CAP_DB;
    }
    if num <= 0.0 {
        return -SCORE_CAP_DB;
    }
    (10.0 * (num / den).log10()).clamp(-SCORE_CAP_DB, SCORE_CAP_DB)
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

struct Correlator {
    size: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Correlator {
    fn new(size: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            size,
            forward: planner.plan_fft_forward(size),
            inverse: planner.plan_fft_inverse(size),
        }
    }

    fn spectrum(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.size];
        for (b, v) in buf.iter_mut().zip(x) {
            b.re = *v;
        }
        self.forward.process(&mut buf);
        buf
    }

    fn back(&self, mut buf: Vec<Complex64>, take: usize) -> Vec<f64> {
        self.inverse.process(&mut buf);
        let scale = 1.0 / self.size as f64;
        buf.iter().take(take).map(|z| z.re * scale).collect()
    }

    /// `r[l] = sum_n a[n] b[n + l]` for `l < lags`.
    fn xcorr(&self, a: &[Complex64], b: &[Complex64], lags: usize) -> Vec<f64> {
        let prod = a.iter().zip(b).map(|(x, y)| x.conj() * y).collect();
        self.back(prod, lags)
    }

    /// Full linear convolution of `x` with `h`, truncated to `len`.
    fn convolve(&self, x: &[Complex64], h: &[f64], len: usize) -> Vec<f64> {
        let hs = self.spectrum(h);
        let prod = x.iter().zip(&hs).map(|(a, b)| a * b).collect();
        self.back(prod, len)
    }
}

/// Block-Toeplitz Gram matrix of the delayed references, with the delay
/// index running fastest inside each block.
fn delayed_gram(spectra: &[Vec<Complex64>], corr: &Correlator, taps: usize) -> DMatrix<f64> {
    let k = spectra.len();
    let mut g = DMatrix::zeros(k * taps, k * taps);
    for i in 0..k {
        for j in 0..k {
            let r_ij = corr.xcorr(&spectra[i], &spectra[j], taps);
            let r_ji = corr.xcorr(&spectra[j], &spectra[i], taps);
            for a in 0..taps {
                for b in 0..taps {
                    // sum_n s_i[n - a] s_j[n - b]
                    g[(i * taps + a, j * taps + b)] = if a >= b { r_ij[a - b] } else { r_ji[b - a] };
                }
            }
        }
    }
    g
}

fn solve_spd(mut g: DMatrix<f64>, rhs: DVector<f64>) -> DVector<f64> {
    let n = g.nrows();
    let mean_diag = (0..n).map(|i| g[(i, i)]).sum::<f64>() / n as f64;
    let mut ridge = 1e-12 * mean_diag;
    loop {
        for i in 0..n {
            g[(i, i)] += ridge;
        }
        if let Some(ch) = g.clone().cholesky() {
            return ch.solve(&rhs);
        }
        ridge *= 100.0;
    }
}

/// Energy-ratio separation scores. Each estimate is split into the part
/// explained by filtered versions of its own reference, the part explained
/// by the other references, and the unexplained rest.
pub fn bss_scores(
    references: &[Vec<f64>],
    estimates: &[Vec<f64>],
    cfg: &BssConfig,
) -> Result<SeparationScores> {
    let k = references.len();
    if k == 0 || k != estimates.len() {
        return Err(mismatch(format!(
            "{} references and {} estimates",
            k,
            estimates.len()
        )));
    }
    let n = references[0].len();
    if references.iter().chain(estimates).any(|x| x.len() != n) {
        return Err(mismatch("all signals must have the same length"));
    }
    if cfg.filter_length == 0 {
        return Err(invalid("filter length must be at least one"));
    }
    if references.iter().chain(estimates).flatten().any(|v| !v.is_finite()) {
        return Err(crate::Error::NonFinite("signals"));
    }
    if let Some(j) = references.iter().position(|r| energy(r) == 0.0) {
        return Err(invalid(format!("reference {j} is silent")));
    }
    let taps = cfg.filter_length;
    let padded = n + taps - 1;
    let corr = Correlator::new((n + taps).next_power_of_two());
    let ref_spectra: Vec<Vec<Complex64>> = references.iter().map(|r| corr.spectrum(r)).collect();
    let gram = delayed_gram(&ref_spectra, &corr, taps);

    let mut per_source = Vec::with_capacity(k);
    for (j, est) in estimates.iter().enumerate() {
        let est_spec = corr.spectrum(est);
        let mut rhs = DVector::zeros(k * taps);
        for i in 0..k {
            let d = corr.xcorr(&ref_spectra[i], &est_spec, taps);
            rhs.rows_mut(i * taps, taps).copy_from_slice(&d);
        }
        let coeffs = solve_spd(gram.clone(), rhs.clone());
        let mut projection = vec![0.0; padded];
        for i in 0..k {
            let h: Vec<f64> = coeffs.rows(i * taps, taps).iter().cloned().collect();
            for (p, v) in projection.iter_mut().zip(corr.convolve(&ref_spectra[i], &h, padded)) {
                *p += v;
            }
        }
        let own = gram.view((j * taps, j * taps), (taps, taps)).into_owned();
        let own_coeffs = solve_spd(own, rhs.rows(j * taps, taps).into_owned());
        let h: Vec<f64> = own_coeffs.iter().cloned().collect();
        let target = corr.convolve(&ref_spectra[j], &h, padded);

        let mut interference = vec![0.0; padded];
        let mut artifact = vec![0.0; padded];
        let mut distortion = vec![0.0; padded];
        let mut kept = vec![0.0; padded];
        for t in 0..padded {
            let e = if t < n { est[t] } else { 0.0 };
            interference[t] = projection[t] - target[t];
            artifact[t] = e - projection[t];
            distortion[t] = interference[t] + artifact[t];
            kept[t] = target[t] + interference[t];
        }
        let s = energy(&target);
        per_source.push(SourceScores {
            sdr: db(s, energy(&distortion)),
            sir: db(s, energy(&interference)),
            sar: db(energy(&kept), energy(&artifact)),
        });
    }
    Ok(SeparationScores { per_source })
}

/// One CSV row of separation results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub dataset: String,
    pub method: String,
    pub source: usize,
    pub scores: SourceScores,
}

pub fn format_scores_csv(rows: &[ScoreRow]) -> String {
    let mut s = String::from("dataset,method,source,sdr,sir,sar\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.6},{:.6}",
            r.dataset, r.method, r.source, r.scores.sdr, r.scores.sir, r.scores.sar
        );
    }
    s
}

/// Least-squares linear phase relation between two spectra of the same
/// note.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearPhaseFit {
    /// Phase slope in radians per bin of the second spectrum relative to the
    /// first.
    pub slope: f64,
    /// Magnitude-weighted RMS distance between the unit phasors of the
    /// observed phase difference and of the fitted line, in `[0, 2]`.
    pub relative_residual: f64,
}

/// Fits `angle(x2) - angle(x1) ~ slope * f` over the given bins, weighting
/// each bin by `|x1| |x2|`.
pub fn linear_phase_fit(x1: ArrayView1<Complex64>, x2: ArrayView1<Complex64>) -> Result<LinearPhaseFit> {
    if x1.len() != x2.len() {
        return Err(mismatch("spectra differ in length"));
    }
    if x1.len() < 2 {
        return Err(invalid("need at least two bins"));
    }
    let cross: Vec<Complex64> = x1.iter().zip(x2.iter()).map(|(a, b)| b * a.conj()).collect();
    let weight: f64 = cross.iter().map(|c| c.norm()).sum();
    if weight == 0.0 {
        return Err(invalid("spectra have no common support"));
    }
    let score = |lam: f64| -> f64 {
        cross
            .iter()
            .enumerate()
            .map(|(f, c)| (c * Complex64::from_polar(1.0, -lam * f as f64)).re)
            .sum()
    };
    // coarse periodogram, then golden-section refinement around the best cell
    let grid = (16 * x1.len()).max(1024);
    let step = 2.0 * std::f64::consts::PI / grid as f64;
    let mut best = -std::f64::consts::PI;
    let mut best_score = f64::NEG_INFINITY;
    for j in 0..grid {
        let lam = -std::f64::consts::PI + j as f64 * step;
        let s = score(lam);
        if s > best_score {
            best_score = s;
            best = lam;
        }
    }
    let (mut lo, mut hi) = (best - step, best + step);
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let a = hi - ratio * (hi - lo);
        let b = lo + ratio * (hi - lo);
        if score(a) > score(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let slope = crate::model::wrap_phase(0.5 * (lo + hi));
    // |u - v|^2 for unit phasors, weighted by the cross magnitude
    let sq: f64 = cross
        .iter()
        .enumerate()
        .map(|(f, c)| {
            let w = c.norm();
            if w == 0.0 {
                0.0
            } else {
                w * (c / w - Complex64::from_polar(1.0, slope * f as f64)).norm_sqr()
            }
        })
        .sum();
    Ok(LinearPhaseFit {
        slope,
        relative_residual: (sq / weight).sqrt(),
    })
}
