//! Atomic-norm soft thresholding of one pulse.
//!
//! The proximal problem `min_z 1/2 ||z - y||^2 + eta ||z||_A` over tone
//! mixtures is solved in its semidefinite form
//!
//! ```text
//! min 1/2 ||x - y||^2 + eta/2 (t + u_0)   s.t.  [[T(u), x], [x^H, t]] >= 0
//! ```
//!
//! with ADMM: a closed-form update of `(t, u, x)`, a projection onto the PSD
//! cone, and a dual ascent step.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, CMatrix};
use crate::synth::PulseSamples;

/// Regularization weight `sigma sqrt(N ln N)`.
pub fn default_eta(sigma: f64, n: usize) -> f64 {
    let n = n as f64;
    sigma * (n * n.ln()).sqrt()
}

/// Mean-squared-error bound `sigma sqrt(ln N / N) sum |c_k|`.
pub fn ast_mse_bound(sigma: f64, n: usize, amp_sum: f64) -> f64 {
    let n = n as f64;
    sigma * (n.ln() / n).sqrt() * amp_sum
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ASTConfig {
    pub eta: f64,
    /// ADMM penalty.
    pub rho: f64,
    pub max_iters: usize,
    /// Relative primal/dual residual tolerance.
    pub tol: f64,
}

impl ASTConfig {
    pub const DEFAULT_RHO: f64 = 2.0;
    pub const DEFAULT_TOL: f64 = 1e-6;
    pub const DEFAULT_MAX_ITERS: usize = 5000;

    pub fn new(eta: f64) -> Self {
        Self {
            eta,
            rho: Self::DEFAULT_RHO,
            max_iters: Self::DEFAULT_MAX_ITERS,
            tol: Self::DEFAULT_TOL,
        }
    }

    /// Configuration at the default weight for noise level `sigma`.
    pub fn for_noise(sigma: f64, n: usize) -> Self {
        Self::new(default_eta(sigma, n))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(invalid("eta", "must be finite and nonnegative"));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(invalid("rho", "must be positive"));
        }
        if !(self.tol > 0.0) {
            return Err(invalid("tol", "must be positive"));
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ASTResult {
    pub denoised: Vec<Complex64>,
    /// First row of the Toeplitz block, `u[0]` on the diagonal.
    pub toeplitz_gen: Vec<Complex64>,
    pub t_scalar: f64,
    /// Best feasible objective value found up to each iteration.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl ASTResult {
    /// The block matrix `[[T(u), x], [x^H, t]]` at the reported solution.
    pub fn block_matrix(&self) -> CMatrix {
        block(&self.toeplitz_gen, &self.denoised, self.t_scalar)
    }

    pub fn objective(&self, y: &[Complex64], eta: f64) -> f64 {
        objective(y, &self.denoised, self.t_scalar, self.toeplitz_gen[0].re, eta)
    }
}

fn objective(y: &[Complex64], x: &[Complex64], t: f64, u0: f64, eta: f64) -> f64 {
    let fit: f64 = x.iter().zip(y).map(|(a, b)| (a - b).norm_sqr()).sum();
    0.5 * fit + 0.5 * eta * (t + u0)
}

fn block(u: &[Complex64], x: &[Complex64], t: f64) -> CMatrix {
    let n = x.len();
    CMatrix::from_fn(n + 1, n + 1, |i, j| {
        if i < n && j < n {
            if j >= i {
                u[j - i]
            } else {
                u[i - j].conj()
            }
        } else if i < n {
            x[i]
        } else if j < n {
            x[j].conj()
        } else {
            Complex64::new(t, 0.0)
        }
    })
}

/// Nearest positive semidefinite matrix in Frobenius norm.
pub fn psd_project(m: &CMatrix) -> Result<CMatrix> {
    linalg::check_hermitian(m, 1e-10)?;
    Ok(project_unchecked(m))
}

fn project_unchecked(m: &CMatrix) -> CMatrix {
    let n = m.nrows();
    let a = faer::Mat::<Complex64>::from_fn(n, n, |i, j| m[(i, j)]);
    let Ok(eig) = a.self_adjoint_eigen(faer::Side::Lower) else {
        return CMatrix::from_element(n, n, Complex64::new(f64::NAN, f64::NAN));
    };
    let (s, v) = (eig.S(), eig.U());
    let keep: Vec<usize> = (0..n).filter(|&k| s[k].re > 0.0).collect();
    // V_+ diag(sqrt(l)) times its adjoint
    let w = faer::Mat::<Complex64>::from_fn(n, keep.len(), |i, c| v[(i, keep[c])] * s[keep[c]].re.sqrt());
    let p = &w * w.adjoint();
    // exact Hermitian symmetry keeps later eigendecompositions honest
    CMatrix::from_fn(n, n, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Equal => Complex64::new(p[(i, i)].re, 0.0),
        std::cmp::Ordering::Greater => p[(i, j)],
        std::cmp::Ordering::Less => p[(j, i)].conj(),
    })
}

/// Smallest `(delta, t)` that makes the block PSD once `u[0]` is raised by
/// `delta`, chosen to minimize `delta + t`.
///
/// With `T(u) = V diag(l) V^H` and `g = V^H x`, the block is PSD iff
/// `l_i + delta > 0` and `t >= sum |g_i|^2 / (l_i + delta)`, so the best
/// `delta` minimizes the convex function `delta + sum |g_i|^2 / (l_i + delta)`.
fn feasible_completion(u: &[Complex64], x: &[Complex64]) -> (f64, f64) {
    let n = x.len();
    let t_mat = CMatrix::from_fn(n, n, |i, j| if j >= i { u[j - i] } else { u[i - j].conj() });
    let (vals, vecs) = linalg::hermitian_eigen(&t_mat);
    let xv = linalg::CVector::from_column_slice(x);
    let g2: Vec<f64> = (0..n).map(|k| vecs.column(k).dotc(&xv).norm_sqr()).collect();
    let lmin = vals[0];
    let total: f64 = g2.iter().sum();
    let scale = vals.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(total.sqrt()).max(1e-300);
    let t_of = |d: f64| -> f64 { vals.iter().zip(&g2).map(|(l, g)| g / (l + d)).sum() };
    let deriv = |d: f64| -> f64 { 1.0 - vals.iter().zip(&g2).map(|(l, g)| g / ((l + d) * (l + d))).sum::<f64>() };
    // f'(d) increases from -inf (at d -> -lmin) to 1, so bisect on its sign
    let floor = -lmin;
    let mut lo = floor;
    let mut step = scale * 1e-12 + 1e-300;
    let mut hi = floor + step;
    while deriv(hi) < 0.0 {
        lo = hi;
        step *= 2.0;
        hi = floor + step;
        if step > 1e12 * scale {
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if deriv(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut delta = hi;
    // a hair of slack keeps the completed block numerically PSD
    let margin = 1e-13 * scale;
    delta += margin;
    (delta, t_of(delta) * (1.0 + 1e-12) + margin)
}

/// Denoises one pulse.
pub fn ast_denoise(samples: &PulseSamples, config: &ASTConfig) -> Result<ASTResult> {
    config.validate()?;
    let n = samples.len();
    if n < 4 {
        return Err(Error::Size(format!("denoising needs at least 4 samples, have {n}")));
    }
    let y = &samples.samples;
    if config.eta == 0.0 {
        return Ok(ASTResult {
            denoised: y.clone(),
            toeplitz_gen: vec![Complex64::new(0.0, 0.0); n],
            t_scalar: 0.0,
            objective_trace: Vec::new(),
            converged: true,
            iterations: 0,
        });
    }
    let scale = (y.iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64).sqrt();
    if scale == 0.0 {
        return Ok(ASTResult {
            denoised: y.clone(),
            toeplitz_gen: vec![Complex64::new(0.0, 0.0); n],
            t_scalar: 0.0,
            objective_trace: vec![0.0],
            converged: true,
            iterations: 0,
        });
    }
    // the problem is homogeneous: solve for y / scale with eta / scale
    let yn: Vec<Complex64> = y.iter().map(|z| z / scale).collect();
    let sol = admm(&yn, config.eta / scale, config);
    let s2 = scale * scale;
    Ok(ASTResult {
        denoised: sol.x.iter().map(|z| z * scale).collect(),
        toeplitz_gen: sol.u.iter().map(|z| z * scale).collect(),
        t_scalar: sol.t * scale,
        objective_trace: sol.trace.iter().map(|v| v * s2).collect(),
        converged: sol.converged,
        iterations: sol.iterations,
    })
}

struct Solution {
    x: Vec<Complex64>,
    u: Vec<Complex64>,
    t: f64,
    trace: Vec<f64>,
    converged: bool,
    iterations: usize,
}

/// Iterations between feasibility repairs used for the objective trace.
const REPAIR_EVERY: usize = 10;
const RHO_ADAPT_ITERS: usize = 1000;
const RHO_BALANCE: f64 = 10.0;

fn admm(y: &[Complex64], eta: f64, config: &ASTConfig) -> Solution {
    let n = y.len();
    let mut rho = config.rho;
    let dim = n + 1;
    let mut z = CMatrix::zeros(dim, dim);
    let mut lam = CMatrix::zeros(dim, dim);
    let mut m_prev = CMatrix::zeros(dim, dim);
    let mut x = y.to_vec();
    let mut u = vec![Complex64::new(0.0, 0.0); n];

    let mut best: Option<(f64, Vec<Complex64>, Vec<Complex64>, f64)> = None;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    let record = |x: &[Complex64], u: &[Complex64], best: &mut Option<(f64, Vec<Complex64>, Vec<Complex64>, f64)>| {
        let (delta, t_feas) = feasible_completion(u, x);
        let mut uf = u.to_vec();
        uf[0] = Complex64::new(u[0].re + delta, 0.0);
        let obj = objective(y, x, t_feas, uf[0].re, eta);
        if best.as_ref().map_or(true, |b| obj < b.0) {
            *best = Some((obj, x.to_vec(), uf, t_feas));
        }
        best.as_ref().map(|b| b.0).unwrap()
    };

    for it in 1..=config.max_iters {
        iterations = it;
        // Q = Z + Lambda / rho
        let q = &z + lam.unscale(rho);
        let t = q[(n, n)].re - eta / (2.0 * rho);
        for i in 0..n {
            let qi = 0.5 * (q[(i, n)] + q[(n, i)].conj());
            x[i] = (y[i] + 2.0 * rho * qi) / (1.0 + 2.0 * rho);
        }
        let diag: f64 = (0..n).map(|i| q[(i, i)].re).sum::<f64>() / n as f64;
        u[0] = Complex64::new(diag - eta / (2.0 * rho * n as f64), 0.0);
        for j in 1..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..n - j {
                acc += q[(i, i + j)] + q[(i + j, i)].conj();
            }
            u[j] = acc / (2.0 * (n - j) as f64);
        }
        let m = block(&u, &x, t);
        z = project_unchecked(&(&m - lam.unscale(rho)));
        let diff = &z - &m;
        lam += diff.scale(rho);

        let r_prim = diff.norm();
        let r_dual = rho * (&m - &m_prev).norm();
        m_prev = m;

        if it % REPAIR_EVERY == 0 || it == 1 {
            let v = record(&x, &u, &mut best);
            trace.push(v);
        } else {
            let last = trace.last().copied().unwrap_or(f64::INFINITY);
            trace.push(last);
        }

        let pscale = m_prev.norm().max(z.norm()).max(1.0);
        let dscale = lam.norm().max(1.0);
        if it > 1 && r_prim <= config.tol * pscale && r_dual <= config.tol * dscale {
            converged = true;
            break;
        }
        // residual balancing; frozen later on so the iteration settles
        if it > 1 && it <= RHO_ADAPT_ITERS {
            let (p, d) = (r_prim / pscale, r_dual / dscale);
            if p > RHO_BALANCE * d {
                rho *= 2.0;
            } else if d > RHO_BALANCE * p {
                rho /= 2.0;
            }
        }
    }
    let v = record(&x, &u, &mut best);
    if let Some(last) = trace.last_mut() {
        *last = v;
    }
    let (_, bx, bu, bt) = best.expect("at least one feasible point recorded");
    Solution {
        x: bx,
        u: bu,
        t: bt,
        trace,
        converged,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{add_noise, NoiseSpec};
    use rand::Rng;
    use std::f64::consts::TAU;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn tones(n: usize, parts: &[(f64, f64, f64)]) -> PulseSamples {
        let samples = (0..n)
            .map(|i| {
                parts
                    .iter()
                    .map(|&(f, amp, psi)| amp * Complex64::from_polar(1.0, TAU * (psi + f * i as f64)))
                    .sum()
            })
            .collect();
        PulseSamples::new(0, samples, 1.0)
    }

    fn min_eig(m: &CMatrix) -> f64 {
        linalg::hermitian_eigen(m).0[0]
    }

    #[test]
    fn eta_and_bound_values() {
        assert!((default_eta(1.0, 7) - (7.0f64 * 7.0f64.ln()).sqrt()).abs() < 1e-12);
        assert!((default_eta(1.0, 7) - 3.690).abs() < 1e-3);
        assert_eq!(default_eta(0.0, 64), 0.0);
        assert!((default_eta(0.1, 128) - 2.4927).abs() < 1e-3);
        assert_eq!(ast_mse_bound(0.0, 128, 3.0), 0.0);
        assert!((ast_mse_bound(1.0, 128, 3.0) - 0.5844).abs() < 1e-3);
        let a = ast_mse_bound(1.0, 64, 2.0);
        assert!((ast_mse_bound(0.5, 64, 2.0) - a / 2.0).abs() < 1e-15);
    }

    #[test]
    fn projection_examples() {
        let id = CMatrix::identity(3, 3);
        assert!((psd_project(&id).unwrap() - &id).norm() < 1e-12);
        let d = CMatrix::from_diagonal(&linalg::CVector::from_vec(vec![c(1.0, 0.0), c(-1.0, 0.0)]));
        let p = psd_project(&d).unwrap();
        assert!((p[(0, 0)] - c(1.0, 0.0)).norm() < 1e-12 && p[(1, 1)].norm() < 1e-12);
        let mut bad = CMatrix::identity(2, 2);
        bad[(0, 1)] = c(1.0, 0.0);
        assert!(matches!(psd_project(&bad), Err(Error::NotHermitian { .. })));
    }

    fn random_hermitian(rng: &mut impl rand::Rng, n: usize) -> CMatrix {
        let a = CMatrix::from_fn(n, n, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        (&a + a.adjoint()) * c(0.5, 0.0)
    }

    #[test]
    fn projection_is_nearest_and_idempotent() {
        let mut rng = crate::rng::substream(5, 0);
        for _ in 0..10 {
            let h = random_hermitian(&mut rng, 6);
            let r = psd_project(&h).unwrap();
            assert!(min_eig(&r) >= -1e-12);
            let again = psd_project(&r).unwrap();
            assert!((&again - &r).norm() < 1e-12);
            let dist = (&r - &h).norm();
            for _ in 0..100 {
                let b = CMatrix::from_fn(6, 3, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
                let p = &b * b.adjoint();
                assert!(dist <= (&p - &h).norm() + 1e-12);
            }
        }
    }

    #[test]
    fn zero_eta_is_identity() {
        let noisy = add_noise(tones(16, &[(0.1, 1.0, 0.0)]), &NoiseSpec::new(0.3, 1));
        let r = ast_denoise(&noisy, &ASTConfig::new(0.0)).unwrap();
        assert_eq!(r.denoised, noisy.samples);
        assert!(r.converged);
    }

    #[test]
    fn tiny_eta_preserves_atom() {
        let clean = tones(16, &[(0.137, 1.0, 0.3)]);
        let r = ast_denoise(&clean, &ASTConfig::new(1e-6)).unwrap();
        for (a, b) in r.denoised.iter().zip(&clean.samples) {
            assert!((a - b).norm() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn solution_is_feasible_and_trace_monotone() {
        let noisy = add_noise(
            tones(32, &[(0.1, 1.0, 0.0), (0.31, 0.8, 0.5)]),
            &NoiseSpec::new(0.3, 7),
        );
        let cfg = ASTConfig::for_noise(0.3f64.sqrt(), 32);
        let r = ast_denoise(&noisy, &cfg).unwrap();
        assert!(min_eig(&r.block_matrix()) >= -cfg.tol);
        let tail = &r.objective_trace[10.min(r.objective_trace.len())..];
        assert!(tail.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        let last = *r.objective_trace.last().unwrap();
        assert!((r.objective(&noisy.samples, cfg.eta) - last).abs() <= 1e-9 * last.abs().max(1.0));
        let e_in: f64 = noisy.samples.iter().map(|z| z.norm_sqr()).sum();
        let e_out: f64 = r.denoised.iter().map(|z| z.norm_sqr()).sum();
        assert!(e_out.sqrt() <= e_in.sqrt() + cfg.tol);
    }

    #[test]
    fn rejects_short_input_and_bad_config() {
        let p = tones(3, &[(0.1, 1.0, 0.0)]);
        assert!(ast_denoise(&p, &ASTConfig::new(1.0)).is_err());
        let p = tones(8, &[(0.1, 1.0, 0.0)]);
        assert!(ast_denoise(&p, &ASTConfig::new(-1.0)).is_err());
        let mut cfg = ASTConfig::new(1.0);
        cfg.rho = 0.0;
        assert!(ast_denoise(&p, &cfg).is_err());
    }

    #[test]
    fn exhausted_budget_reports_non_convergence() {
        let noisy = add_noise(tones(16, &[(0.1, 1.0, 0.0)]), &NoiseSpec::new(0.5, 2));
        let mut cfg = ASTConfig::for_noise(0.5f64.sqrt(), 16);
        cfg.max_iters = 3;
        let r = ast_denoise(&noisy, &cfg).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 3);
        assert!(min_eig(&r.block_matrix()) >= -1e-9);
    }
}
