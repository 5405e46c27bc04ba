//! Per-pulse line spectral estimation.
//!
//! Frequencies come from the forward-backward linear predictor: the roots of
//! the prediction-error polynomial nearest the unit circle. Amplitudes and
//! phases follow from a least-squares fit of the sample vector on the
//! recovered tones.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, CMatrix, CVector};
use crate::model::wrap_cycles;
use crate::synth::PulseSamples;

/// Relative singular-value cut used to form the minimum-norm solution.
const RANK_RTOL: f64 = 1e-10;
/// Relative eigenvalue cut of the correlation matrix below which a
/// direction counts as empty.
const EIG_RTOL: f64 = 1e-12;
/// Frequencies closer than this fraction of `fs` cannot be fitted separately.
pub const MIN_SEPARATION_FRACTION: f64 = 1e-9;
/// Largest tolerated condition number of the tone matrix.
pub const MAX_CONDITION: f64 = 1e12;
/// Roots whose distance to the unit circle differs by less than this tie.
const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorMode {
    /// Minimum-norm solution of the full forward-backward system.
    Exact,
    /// Solve against the rank-`K` truncation of the correlation matrix.
    SvdTruncated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    /// Predictor order.
    #[serde(rename = "L")]
    pub l: usize,
    /// Number of sinusoids.
    #[serde(rename = "K")]
    pub k: usize,
    pub mode: PredictorMode,
}

/// Default predictor order `floor(3N/4)` clipped into `[K, N - K]`.
pub fn default_order(n: usize, k: usize) -> usize {
    let l = 3 * n / 4;
    l.min(n.saturating_sub(k)).max(k)
}

impl PredictorConfig {
    pub fn new(l: usize, k: usize, mode: PredictorMode) -> Self {
        Self { l, k, mode }
    }

    /// Configuration at the default order for `n` samples.
    pub fn for_samples(n: usize, k: usize, mode: PredictorMode) -> Result<Self> {
        let cfg = Self::new(default_order(n, k), k, mode);
        cfg.validate(n)?;
        Ok(cfg)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.k == 0 {
            return Err(invalid("K", "model order must be at least 1"));
        }
        if self.l == 0 {
            return Err(invalid("L", "predictor order must be at least 1"));
        }
        if self.l < self.k || self.l + self.k > n {
            return Err(invalid(
                "L",
                format!("order {} is outside [K, N - K] = [{}, {}]", self.l, self.k, n as i64 - self.k as i64),
            ));
        }
        Ok(())
    }
}

/// One recovered tone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinusoidEstimate {
    /// Frequency, Hz.
    pub nu: f64,
    /// Phase at sample 0, cycles.
    pub psi: f64,
    pub amp: f64,
}

/// The tones recovered from one pulse, in no particular correspondence with
/// the targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinusoidEstimateSet {
    pub m: usize,
    pub components: Vec<SinusoidEstimate>,
    pub unordered: bool,
}

impl SinusoidEstimateSet {
    pub fn new(m: usize, components: Vec<SinusoidEstimate>) -> Self {
        Self {
            m,
            components,
            unordered: true,
        }
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.nu).collect()
    }
}

/// The forward-backward prediction system `Y h = -y`.
#[derive(Debug, Clone)]
pub struct FbSystem {
    pub matrix: CMatrix,
    pub vector: CVector,
}

/// Stacks the forward and backward prediction equations of order `l`.
///
/// Forward row `r` predicts `x[l + r]` from `x[l + r - 1], ..., x[r]`;
/// backward row `r` predicts `conj(x[r])` from `conj(x[r + 1]), ..., conj(x[r + l])`.
pub fn build_fb_system(samples: &PulseSamples, l: usize) -> Result<FbSystem> {
    let x = &samples.samples;
    let n = x.len();
    if l == 0 || n < l + 1 {
        return Err(Error::Size(format!("predictor order {l} needs at least {} samples, have {n}", l + 1)));
    }
    let rows = n - l;
    let mut matrix = CMatrix::zeros(2 * rows, l);
    let mut vector = CVector::zeros(2 * rows);
    for r in 0..rows {
        for c in 0..l {
            matrix[(r, c)] = x[l - 1 + r - c];
            matrix[(rows + r, c)] = x[r + 1 + c].conj();
        }
        vector[r] = x[l + r];
        vector[rows + r] = x[r].conj();
    }
    Ok(FbSystem { matrix, vector })
}

/// Prediction coefficients `h[1..L]`.
pub fn solve_predictor(system: &FbSystem, config: &PredictorConfig) -> Result<Vec<Complex64>> {
    let y = &system.matrix;
    if y.ncols() != config.l {
        return Err(Error::Size(format!("system has order {}, config asks for {}", y.ncols(), config.l)));
    }
    if y.iter().all(|z| *z == Complex64::new(0.0, 0.0)) {
        return Err(Error::Degenerate("all-zero samples carry no tones".into()));
    }
    let neg = -&system.vector;
    match config.mode {
        PredictorMode::Exact => {
            let (h, _rank) = linalg::min_norm_solve(y, &neg, RANK_RTOL)?;
            Ok(h.iter().copied().collect())
        }
        PredictorMode::SvdTruncated => {
            // R is Hermitian positive semidefinite, so its SVD is its eigen-decomposition
            let r = y.adjoint() * y;
            let rhs = y.adjoint() * neg;
            let (vals, vecs) = linalg::hermitian_eigen(&r);
            let s1 = vals.last().copied().unwrap_or(0.0);
            let rank = vals.iter().filter(|&&v| v > EIG_RTOL * s1).count();
            if rank < config.k {
                return Err(Error::RankDeficient {
                    rank,
                    required: config.k,
                });
            }
            let mut h = CVector::zeros(config.l);
            for i in (vals.len() - config.k)..vals.len() {
                let coef = vecs.column(i).dotc(&rhs) / vals[i];
                h.axpy(coef, &vecs.column(i), Complex64::new(1.0, 0.0));
            }
            Ok(h.iter().copied().collect())
        }
    }
}

/// Roots of `z^L + h[1] z^(L-1) + ... + h[L]`, nearest the unit circle first.
pub fn predictor_roots(h: &[Complex64]) -> Result<Vec<Complex64>> {
    let mut roots: Vec<Complex64> = linalg::poly_roots(h)?
        .into_iter()
        .filter(|z| z.re.is_finite() && z.im.is_finite())
        .collect();
    roots.sort_by(|a, b| (1.0 - a.norm()).abs().total_cmp(&(1.0 - b.norm()).abs()));
    Ok(roots)
}

/// Frequency in Hz of a root, in `(-fs/2, fs/2]`.
pub fn root_frequency(z: Complex64, ts: f64) -> f64 {
    z.arg() / (TAU * ts)
}

/// The `k` frequencies whose roots lie closest to the unit circle.
pub fn roots_to_frequencies(h: &[Complex64], k: usize, ts: f64, _mode: PredictorMode) -> Result<Vec<f64>> {
    let roots = predictor_roots(h)?;
    if roots.len() < k {
        return Err(Error::TooFewRoots {
            found: roots.len(),
            required: k,
        });
    }
    Ok(roots[..k].iter().map(|&z| root_frequency(z, ts)).collect())
}

fn tone_matrix(n: usize, nus: &[f64], ts: f64) -> CMatrix {
    CMatrix::from_fn(n, nus.len(), |r, c| {
        let cycles = wrap_cycles(nus[c] * ts * r as f64);
        Complex64::from_polar(1.0, TAU * cycles)
    })
}

fn check_separation(nus: &[f64], ts: f64) -> Result<()> {
    let fs = 1.0 / ts;
    for i in 0..nus.len() {
        for j in i + 1..nus.len() {
            // tones are only defined modulo fs
            let d = (nus[i] - nus[j]).rem_euclid(fs);
            let separation = d.min(fs - d);
            if separation <= MIN_SEPARATION_FRACTION * fs {
                return Err(Error::NearDuplicateFrequencies { i, j, separation });
            }
        }
    }
    Ok(())
}

/// Complex least-squares weights of the tones `nus` in `samples`.
pub fn ls_weights(samples: &[Complex64], nus: &[f64], ts: f64) -> Result<Vec<Complex64>> {
    if nus.is_empty() {
        return Ok(Vec::new());
    }
    if samples.len() < nus.len() {
        return Err(Error::Size(format!("{} samples cannot fit {} tones", samples.len(), nus.len())));
    }
    check_separation(nus, ts)?;
    let f = tone_matrix(samples.len(), nus, ts);
    let svd = linalg::thin_svd(&f);
    let condition = svd.s[0] / svd.s[svd.s.len() - 1];
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned { condition });
    }
    let y = CVector::from_column_slice(samples);
    let mut zeta = CVector::zeros(nus.len());
    for i in 0..svd.s.len() {
        let coef = svd.u.column(i).dotc(&y) / svd.s[i];
        zeta.axpy(coef, &svd.v.column(i), Complex64::new(1.0, 0.0));
    }
    Ok(zeta.iter().copied().collect())
}

/// Amplitude and phase (cycles) of each tone by least squares.
pub fn ls_amplitude_phase(samples: &PulseSamples, nus: &[f64], ts: f64) -> Result<Vec<(f64, f64)>> {
    Ok(ls_weights(&samples.samples, nus, ts)?
        .into_iter()
        .map(|z| (z.norm(), wrap_cycles(z.arg() / TAU)))
        .collect())
}

/// Full per-pulse estimate: predictor, root selection, least-squares fit.
pub fn estimate_sinusoids(samples: &PulseSamples, config: &PredictorConfig) -> Result<SinusoidEstimateSet> {
    config.validate(samples.len())?;
    let system = build_fb_system(samples, config.l)?;
    let h = solve_predictor(&system, config)?;
    let roots = predictor_roots(&h)?;
    if roots.len() < config.k {
        return Err(Error::TooFewRoots {
            found: roots.len(),
            required: config.k,
        });
    }
    let ts = samples.ts;
    let chosen = select_roots(samples, &roots, config.k, ts)?;
    let nus: Vec<f64> = chosen.iter().map(|&z| root_frequency(z, ts)).collect();
    let fits = ls_amplitude_phase(samples, &nus, ts)?;
    let components = nus
        .iter()
        .zip(fits)
        .map(|(&nu, (amp, psi))| SinusoidEstimate { nu, psi, amp })
        .collect();
    Ok(SinusoidEstimateSet::new(samples.m, components))
}

/// Picks `k` roots by distance to the unit circle; roots tied with the last
/// admitted one are ranked by their least-squares amplitude.
fn select_roots(samples: &PulseSamples, roots: &[Complex64], k: usize, ts: f64) -> Result<Vec<Complex64>> {
    let dist = |z: &Complex64| (1.0 - z.norm()).abs();
    let edge = dist(&roots[k - 1]);
    let tied: Vec<usize> = (0..roots.len()).filter(|&i| (dist(&roots[i]) - edge).abs() <= TIE_EPS).collect();
    let sure: Vec<usize> = (0..k).filter(|i| !tied.contains(i)).collect();
    if tied.len() <= k - sure.len() {
        return Ok(roots[..k].to_vec());
    }
    let pool: Vec<usize> = sure.iter().chain(&tied).copied().collect();
    let nus: Vec<f64> = pool.iter().map(|&i| root_frequency(roots[i], ts)).collect();
    let Ok(weights) = ls_weights(&samples.samples, &nus, ts) else {
        return Ok(roots[..k].to_vec());
    };
    let mut ranked: Vec<(usize, f64)> = tied
        .iter()
        .enumerate()
        .map(|(j, &i)| (i, weights[sure.len() + j].norm()))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut out: Vec<Complex64> = sure.iter().map(|&i| roots[i]).collect();
    out.extend(ranked.iter().take(k - sure.len()).map(|&(i, _)| roots[i]));
    Ok(out)
}

/// Outcome of model-order selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelOrder {
    Determined(usize),
    /// No singular-value gap stands out.
    Indeterminate,
}

/// Largest ratio between consecutive singular values that counts as flat.
pub const FLAT_RATIO: f64 = 2.0;

/// Number of dominant singular values, located at the largest ratio gap.
pub fn estimate_model_order(singular_values: &[f64]) -> Result<ModelOrder> {
    if singular_values.len() < 2 {
        return Err(Error::Size("model-order selection needs at least two singular values".into()));
    }
    let mut s = singular_values.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    if !(s[0] > 0.0) {
        return Ok(ModelOrder::Indeterminate);
    }
    let floor = s[0] * f64::EPSILON * f64::EPSILON;
    let (mut best, mut ratio) = (0, 0.0);
    for i in 0..s.len() - 1 {
        let r = s[i].max(floor) / s[i + 1].max(floor);
        if r > ratio {
            ratio = r;
            best = i + 1;
        }
    }
    Ok(if ratio < FLAT_RATIO {
        ModelOrder::Indeterminate
    } else {
        ModelOrder::Determined(best)
    })
}

/// Singular values of the forward-backward correlation matrix `Y^H Y`,
/// largest first, limited to its possible rank `min(2(N - L), L)`.
pub fn correlation_singular_values(samples: &PulseSamples, l: usize) -> Result<Vec<f64>> {
    let system = build_fb_system(samples, l)?;
    let r = system.matrix.adjoint() * &system.matrix;
    let (vals, _) = linalg::hermitian_eigen(&r);
    let mut s: Vec<f64> = vals.iter().rev().map(|v| v.max(0.0)).collect();
    s.truncate((2 * (samples.len() - l)).min(l));
    Ok(s)
}

/// Asymptotic frequency-variance bound `6 / (N^3 SNR Ts^2)`.
///
/// This is the bound on the angular rate `2 pi nu`; divide by `(2 pi)^2` for
/// Hz², see [`crlb_frequency_var_hz`].
pub fn crlb_frequency_var(snr_linear: f64, n: usize, ts: f64) -> f64 {
    let n = n as f64;
    6.0 / (n * n * n * snr_linear * ts * ts)
}

/// The same bound expressed for frequencies in Hz.
pub fn crlb_frequency_var_hz(snr_linear: f64, n: usize, ts: f64) -> f64 {
    crlb_frequency_var(snr_linear, n, ts) / (4.0 * PI * PI)
}

/// Asymptotic variance `sigma^2 / N` of a complex amplitude estimate.
pub fn crlb_amplitude_var(sigma2: f64, n: usize) -> f64 {
    sigma2 / n as f64
}

/// Noise standard deviation estimated from the residual of a `k`-tone fit:
/// the normalized median absolute deviation of its imaginary part, scaled to
/// the complex-noise convention `E|e|^2 = sigma^2`.
pub fn estimate_noise_sigma(samples: &PulseSamples, k: usize) -> Result<f64> {
    let cfg = PredictorConfig::for_samples(samples.len(), k, PredictorMode::SvdTruncated)?;
    let est = estimate_sinusoids(samples, &cfg)?;
    let nus = est.frequencies();
    let weights = ls_weights(&samples.samples, &nus, samples.ts)?;
    let fit = tone_matrix(samples.len(), &nus, samples.ts) * CVector::from_vec(weights);
    let mut im: Vec<f64> = samples.samples.iter().zip(fit.iter()).map(|(y, f)| (y - f).im).collect();
    let med = median(&mut im);
    let mut dev: Vec<f64> = im.iter().map(|v| (v - med).abs()).collect();
    let mad = median(&mut dev);
    Ok(std::f64::consts::SQRT_2 * 1.4826 * mad)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
