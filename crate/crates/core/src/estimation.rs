//! Coordinate-descent estimation of onset phases.
//!
//! Both estimators sweep the sources in order and refresh the per-source
//! residual target `B = Y - sum_l model_l + model_k` before touching source
//! `k`, so later sources see the updates of earlier ones within the same
//! sweep. Every update is a closed form; when its complex argument is exactly
//! zero the parameter keeps its previous value.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Error, Result};
use crate::model::{
    angle_or, relaxed_cost, strict_component, strict_cost, synthesize_relaxed, synthesize_strict,
    ModelSynthesis, PhaseModelParams,
};
use crate::onset::OnsetMatrix;

/// How the phase parameters are seeded before the first sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Initialization {
    /// Every source starts from the phase of the first onset column, with
    /// zero delays; free phases start at the mixture phase.
    #[default]
    FirstOnset,
    /// Uniform phases and delays (first delay pinned to zero).
    Random { seed: u64 },
    /// Each source takes the phase of the onset where it dominates the
    /// energy, then every other delay is picked by a grid search that
    /// correlates the model with the residual target. Free phases start at
    /// the mixture phase.
    MatchedFilter { passes: usize },
}

impl Initialization {
    pub const fn matched_filter() -> Self {
        Initialization::MatchedFilter { passes: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationConfig {
    pub num_iterations: usize,
    /// Weight of the phase-repetition penalty (relaxed estimator only).
    pub sigma: f64,
    pub initialization: Initialization,
    /// Return the iterate with the lowest cost instead of the last one. The
    /// delay step is not a descent step, so the cost can rise between sweeps.
    #[serde(default)]
    pub keep_best: bool,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            num_iterations: 100,
            sigma: 0.2,
            initialization: Initialization::default(),
            keep_best: false,
        }
    }
}

impl EstimationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_iterations == 0 {
            return Err(invalid("at least one iteration is required"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(invalid("sigma must be a nonnegative number"));
        }
        if let Initialization::MatchedFilter { passes: 0 } = self.initialization {
            return Err(invalid("matched-filter initialization needs at least one pass"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    pub params: PhaseModelParams,
    pub synthesis: ModelSynthesis,
    /// Cost before the first sweep followed by the cost after each sweep.
    pub cost_trace: Vec<f64>,
}

/// Lowest-cost iterate seen so far.
struct Best {
    cost: f64,
    params: PhaseModelParams,
    sources: Array3<Complex64>,
}

impl Best {
    fn offer(slot: &mut Option<Best>, cost: f64, params: &PhaseModelParams, sources: &Array3<Complex64>) {
        if slot.as_ref().is_none_or(|b| cost < b.cost) {
            *slot = Some(Best {
                cost,
                params: params.clone(),
                sources: sources.clone(),
            });
        }
    }
}

/// Closed-form reference phase given the residual target of one source.
pub fn update_psi_strict(
    residual: ArrayView2<Complex64>,
    magnitudes: ArrayView2<f64>,
    lambda: ArrayView1<f64>,
    psi: ArrayView1<f64>,
) -> Array1<f64> {
    Array1::from_shape_fn(psi.len(), |f| {
        let fr = f as f64;
        let z: Complex64 = (0..lambda.len())
            .map(|m| residual[[f, m]] * magnitudes[[f, m]] * Complex64::from_polar(1.0, -lambda[m] * fr))
            .sum();
        angle_or(z, psi[f])
    })
}

/// Rate of the complex exponential best explaining `beta`, from the angle of
/// its lag-one autocorrelation.
pub fn update_lambda_esprit(beta: ArrayView1<Complex64>, lambda: f64) -> f64 {
    if beta.len() < 2 {
        return lambda;
    }
    let z: Complex64 = beta
        .iter()
        .zip(beta.iter().skip(1))
        .map(|(lo, hi)| lo.conj() * hi)
        .sum();
    angle_or(z, lambda)
}

/// Free onset phases of one source: the angle of the data term plus the
/// sigma-weighted pull toward the model phase.
pub fn update_phi_relaxed(
    residual: ArrayView2<Complex64>,
    magnitudes: ArrayView2<f64>,
    psi: ArrayView1<f64>,
    lambda: ArrayView1<f64>,
    sigma: f64,
    phi: ArrayView2<f64>,
) -> Array2<f64> {
    Array2::from_shape_fn(phi.dim(), |(f, m)| {
        let a = magnitudes[[f, m]];
        let model = Complex64::from_polar(sigma * a * a, psi[f] + lambda[m] * f as f64);
        angle_or(residual[[f, m]] * a + model, phi[[f, m]])
    })
}

/// Reference phase minimizing the penalty term for fixed free phases.
pub fn update_psi_relaxed(
    magnitudes: ArrayView2<f64>,
    phi: ArrayView2<f64>,
    lambda: ArrayView1<f64>,
    psi: ArrayView1<f64>,
) -> Array1<f64> {
    Array1::from_shape_fn(psi.len(), |f| {
        let fr = f as f64;
        let z: Complex64 = (0..lambda.len())
            .map(|m| {
                let a = magnitudes[[f, m]];
                Complex64::from_polar(a * a, phi[[f, m]] - lambda[m] * fr)
            })
            .sum();
        angle_or(z, psi[f])
    })
}

fn check_inputs(onset: &OnsetMatrix, magnitudes: &Array3<f64>) -> Result<()> {
    let (_, f, m) = magnitudes.dim();
    if onset.values().dim() != (f, m) {
        return Err(mismatch(format!(
            "onset matrix is {:?}, magnitudes are {:?}",
            onset.values().dim(),
            magnitudes.dim()
        )));
    }
    if magnitudes.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite("magnitudes"));
    }
    Ok(())
}

/// Builds starting parameters for the given onset matrix and magnitudes.
pub fn initialize(
    onset: &OnsetMatrix,
    magnitudes: &Array3<f64>,
    init: Initialization,
) -> Result<PhaseModelParams> {
    check_inputs(onset, magnitudes)?;
    let (k, f, m) = magnitudes.dim();
    let y = onset.values();
    let mixture_phase = y.mapv(|z| z.arg());
    let tiled_phase = || {
        let mut phi = Array3::zeros((k, f, m));
        for mut slice in phi.outer_iter_mut() {
            slice.assign(&mixture_phase);
        }
        phi
    };
    match init {
        Initialization::FirstOnset => {
            let mut psi = Array2::zeros((k, f));
            for mut row in psi.outer_iter_mut() {
                row.assign(&mixture_phase.column(0));
            }
            PhaseModelParams::new(psi, Array2::zeros((k, m)), tiled_phase(), magnitudes.clone())
        }
        Initialization::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut u = || rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let psi = Array2::from_shape_simple_fn((k, f), &mut u);
            let mut lambda = Array2::from_shape_simple_fn((k, m), &mut u);
            lambda.column_mut(0).fill(0.0);
            let phi = Array3::from_shape_simple_fn((k, f, m), &mut u);
            PhaseModelParams::new(psi, lambda, phi, magnitudes.clone())
        }
        Initialization::MatchedFilter { passes } => {
            if passes == 0 {
                return Err(invalid("matched-filter initialization needs at least one pass"));
            }
            let (psi, lambda) = matched_filter_init(y, magnitudes, passes);
            let mut p = PhaseModelParams::new(psi, lambda, tiled_phase(), magnitudes.clone())?;
            p.fix_gauge();
            Ok(p)
        }
    }
}

/// Grid of candidate delays `-pi + 2 pi j / G`, evaluated for all `j` at
/// once with one FFT per column.
struct DelayGrid {
    size: usize,
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl DelayGrid {
    fn new(num_bins: usize) -> Self {
        let size = (4 * num_bins).max(2048).next_power_of_two();
        let fft = FftPlanner::new().plan_fft_inverse(size);
        Self { size, fft }
    }

    fn value(&self, j: usize) -> f64 {
        -std::f64::consts::PI + 2.0 * std::f64::consts::PI * j as f64 / self.size as f64
    }

    /// Grid delay maximizing `Re sum_f c(f) exp(i lambda f)`.
    fn best(&self, c: &[Complex64]) -> f64 {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.size];
        for (f, v) in c.iter().enumerate() {
            // exp(-i pi f) moves the grid origin to -pi
            buf[f % self.size] += if f % 2 == 0 { *v } else { -*v };
        }
        self.fft.process(&mut buf);
        let mut best = 0;
        for (j, z) in buf.iter().enumerate() {
            if z.re > buf[best].re {
                best = j;
            }
        }
        self.value(best)
    }
}

fn matched_filter_init(
    y: ArrayView2<Complex64>,
    magnitudes: &Array3<f64>,
    passes: usize,
) -> (Array2<f64>, Array2<f64>) {
    let (k_len, f_len, m_len) = magnitudes.dim();
    let energy = magnitudes.mapv(|a| a * a).sum_axis(Axis(1)); // K x M
    let total = energy.sum_axis(Axis(0));
    let dominant: Vec<usize> = (0..k_len)
        .map(|k| {
            let mut best = 0;
            let mut best_share = f64::NEG_INFINITY;
            for m in 0..m_len {
                let share = if total[m] > 0.0 { energy[[k, m]] / total[m] } else { 0.0 };
                if share > best_share {
                    best_share = share;
                    best = m;
                }
            }
            best
        })
        .collect();
    let mut psi = Array2::zeros((k_len, f_len));
    for k in 0..k_len {
        psi.row_mut(k).assign(&y.column(dominant[k]).mapv(|z| z.arg()));
    }
    let mut lambda = Array2::zeros((k_len, m_len));
    let grid = DelayGrid::new(f_len);
    let mut models = Array3::<Complex64>::zeros((k_len, f_len, m_len));
    let mut c = vec![Complex64::new(0.0, 0.0); f_len];
    for _ in 0..passes {
        for k in 0..k_len {
            let others = models.sum_axis(Axis(0)) - models.index_axis(Axis(0), k);
            for m in 0..m_len {
                let a = magnitudes.slice(ndarray::s![k, .., m]);
                if m == dominant[k] || a.iter().all(|&v| v == 0.0) {
                    lambda[[k, m]] = 0.0;
                    continue;
                }
                for f in 0..f_len {
                    let target = (y[[f, m]] - others[[f, m]]) * Complex64::from_polar(1.0, -psi[[k, f]]);
                    c[f] = target.conj() * a[f];
                }
                lambda[[k, m]] = grid.best(&c);
            }
            let model = strict_component(
                magnitudes.index_axis(Axis(0), k),
                psi.row(k),
                lambda.row(k),
            );
            models.index_axis_mut(Axis(0), k).assign(&model);
        }
    }
    (psi, lambda)
}

fn prepare(
    onset: &OnsetMatrix,
    init: &PhaseModelParams,
    cfg: &EstimationConfig,
) -> Result<PhaseModelParams> {
    cfg.validate()?;
    let mags = init.magnitudes().to_owned();
    check_inputs(onset, &mags)?;
    if onset.values().iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite("onset matrix"));
    }
    if !init.is_gauge_fixed() {
        return Err(invalid("initial delays must satisfy lambda(0) = 0"));
    }
    Ok(init.clone())
}

/// Residual target of source `k`: the data minus every other source model.
fn residual_target(
    y: ArrayView2<Complex64>,
    mixture: &Array2<Complex64>,
    source: ArrayView2<Complex64>,
) -> Array2<Complex64> {
    let mut b = y.to_owned();
    ndarray::Zip::from(&mut b)
        .and(mixture)
        .and(&source)
        .for_each(|b, &mix, &s| *b = *b - mix + s);
    b
}

fn replace_source(
    sources: &mut Array3<Complex64>,
    mixture: &mut Array2<Complex64>,
    k: usize,
    model: Array2<Complex64>,
) {
    let mut slot = sources.index_axis_mut(Axis(0), k);
    ndarray::Zip::from(&mut *mixture)
        .and(&slot)
        .and(&model)
        .for_each(|mix, &old, &new| *mix = *mix - old + new);
    slot.assign(&model);
}

/// Exact repetition model: each source is its reference phase plus a
/// per-onset linear offset. Runs a fixed number of sweeps from `init`.
pub fn run_strict(
    onset: &OnsetMatrix,
    init: &PhaseModelParams,
    cfg: &EstimationConfig,
) -> Result<EstimationResult> {
    let mut params = prepare(onset, init, cfg)?;
    let y = onset.values();
    let (k_len, _, m_len) = params.magnitudes().dim();
    let start = synthesize_strict(&params, onset)?;
    let mut sources = start.sources;
    let mut mixture = start.mixture;
    let mut trace = Vec::with_capacity(cfg.num_iterations + 1);
    trace.push(strict_cost(&params, onset)?);
    let mut best = None;
    if cfg.keep_best {
        Best::offer(&mut best, trace[0], &params, &sources);
    }
    for _ in 0..cfg.num_iterations {
        for k in 0..k_len {
            let b = residual_target(y, &mixture, sources.index_axis(Axis(0), k));
            let a = params.magnitudes().index_axis(Axis(0), k).to_owned();
            let psi = update_psi_strict(b.view(), a.view(), params.lambda().row(k), params.psi().row(k));
            params.psi_mut().row_mut(k).assign(&psi);
            for m in 1..m_len {
                // a silent occurrence carries no delay information
                if a.column(m).iter().all(|&v| v == 0.0) {
                    continue;
                }
                let beta: Array1<Complex64> = Array1::from_shape_fn(psi.len(), |f| {
                    b[[f, m]] * Complex64::from_polar(1.0, -psi[f])
                });
                let current = params.lambda()[[k, m]];
                params.lambda_mut()[[k, m]] = update_lambda_esprit(beta.view(), current);
            }
            let model = params.strict_source(k);
            replace_source(&mut sources, &mut mixture, k, model);
        }
        trace.push(squared_error(y, &mixture));
        if cfg.keep_best {
            Best::offer(&mut best, trace[trace.len() - 1], &params, &sources);
        }
    }
    if let Some(b) = best {
        params = b.params;
        sources = b.sources;
    }
    let phases = params.strict_phases();
    params.phi_mut().assign(&phases);
    let synthesis = ModelSynthesis::from_sources(sources, y)?;
    Ok(EstimationResult {
        params,
        synthesis,
        cost_trace: trace,
    })
}

/// Free onset phases with a penalty pulling them toward the repetition model.
pub fn run_relaxed(
    onset: &OnsetMatrix,
    init: &PhaseModelParams,
    cfg: &EstimationConfig,
) -> Result<EstimationResult> {
    let mut params = prepare(onset, init, cfg)?;
    let y = onset.values();
    let sigma = cfg.sigma;
    let (k_len, f_len, m_len) = params.magnitudes().dim();
    let start = synthesize_relaxed(&params, onset)?;
    let mut sources = start.sources;
    let mut mixture = start.mixture;
    let mut trace = Vec::with_capacity(cfg.num_iterations + 1);
    trace.push(relaxed_cost(&params, onset, sigma)?);
    let mut best = None;
    if cfg.keep_best {
        Best::offer(&mut best, trace[0], &params, &sources);
    }
    for _ in 0..cfg.num_iterations {
        for k in 0..k_len {
            let b = residual_target(y, &mixture, sources.index_axis(Axis(0), k));
            let a = params.magnitudes().index_axis(Axis(0), k).to_owned();
            let phi = update_phi_relaxed(
                b.view(),
                a.view(),
                params.psi().row(k),
                params.lambda().row(k),
                sigma,
                params.phi().index_axis(Axis(0), k),
            );
            params.phi_mut().index_axis_mut(Axis(0), k).assign(&phi);
            let psi = update_psi_relaxed(a.view(), phi.view(), params.lambda().row(k), params.psi().row(k));
            params.psi_mut().row_mut(k).assign(&psi);
            for m in 1..m_len {
                let gamma: Array1<Complex64> = Array1::from_shape_fn(f_len, |f| {
                    Complex64::from_polar(a[[f, m]], phi[[f, m]] - psi[f])
                });
                let current = params.lambda()[[k, m]];
                params.lambda_mut()[[k, m]] = update_lambda_esprit(gamma.view(), current);
            }
            let model = params.relaxed_source(k);
            replace_source(&mut sources, &mut mixture, k, model);
        }
        trace.push(squared_error(y, &mixture) + sigma * crate::model::phase_penalty(&params));
        if cfg.keep_best {
            Best::offer(&mut best, trace[trace.len() - 1], &params, &sources);
        }
    }
    if let Some(b) = best {
        params = b.params;
        sources = b.sources;
    }
    let synthesis = ModelSynthesis::from_sources(sources, y)?;
    Ok(EstimationResult {
        params,
        synthesis,
        cost_trace: trace,
    })
}

fn squared_error(y: ArrayView2<Complex64>, mixture: &Array2<Complex64>) -> f64 {
    y.iter().zip(mixture.iter()).map(|(a, b)| (a - b).norm_sqr()).sum()
}

/// `iteration,cost` rows, iteration 0 being the starting point.
pub fn format_cost_trace(trace: &[f64]) -> String {
    let mut s = String::from("iteration,cost\n");
    for (i, c) in trace.iter().enumerate() {
        let _ = writeln!(s, "{i},{c:e}");
    }
    s
}

pub fn write_cost_trace(path: impl AsRef<Path>, trace: &[f64]) -> Result<()> {
    std::fs::write(path, format_cost_trace(trace))?;
    Ok(())
}
