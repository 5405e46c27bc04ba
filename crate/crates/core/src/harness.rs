//! Seeded Monte Carlo trials and SNR sweeps.
//!
//! A trial draws a scene, synthesizes its pulses, runs the identification
//! chain and scores the result against the truth. The scene depends only on
//! `(seed, trial)` and the noise only on `(seed, trial, pulse)` with its
//! variance applied afterwards, so the same trial index sees the same scene
//! and the same noise shape at every SNR and with denoising on or off.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoise::ASTConfig;
use crate::error::{invalid, Result};
use crate::linalg;
use crate::matcher::AmbiguityFlag;
use crate::model::{ChirpSchedule, Scene, TargetParams, TimingPlan, BOUNDARY_EPS};
use crate::pipeline::{identify, IdentifyConfig};
use crate::rng;
use crate::specest::PredictorMode;
use crate::synth::{synth_train, NoiseSpec};

/// Environment variable bounding the worker count.
pub const THREADS_ENV: &str = "CHIRP_IDENT_THREADS";

/// How target amplitudes are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AmpDistribution {
    /// Every amplitude is 1, so the scene has a single per-sample SNR.
    Unit,
    Uniform { lo: f64, hi: f64 },
}

/// Random scene generator: uniform delays in `[0, tau_hi)`, uniform Doppler
/// shifts in `(-f_hi, f_hi)`, uniform phases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSampler {
    pub k: usize,
    pub tau_max: f64,
    pub f_max: f64,
    /// Upper end of the delay range, at most `tau_max`.
    pub tau_hi: f64,
    /// Half-width of the Doppler range, at most `f_max`.
    pub f_hi: f64,
    pub amp: AmpDistribution,
}

impl SceneSampler {
    pub fn new(k: usize, tau_max: f64, f_max: f64) -> Self {
        Self {
            k,
            tau_max,
            f_max,
            tau_hi: tau_max,
            f_hi: f_max,
            amp: AmpDistribution::Unit,
        }
    }

    /// The same sampler with both ranges divided by `divisor`.
    pub fn restricted(mut self, divisor: f64) -> Self {
        self.tau_hi = self.tau_max / divisor;
        self.f_hi = self.f_max / divisor;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(invalid("K", "need at least one target"));
        }
        if !(self.tau_hi > 0.0 && self.tau_hi <= self.tau_max) {
            return Err(invalid("tau range", "must lie within (0, tau_max]"));
        }
        if !(self.f_hi > 0.0 && self.f_hi <= self.f_max) {
            return Err(invalid("f range", "must lie within (0, f_max]"));
        }
        if let AmpDistribution::Uniform { lo, hi } = self.amp {
            if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
                return Err(invalid("amp range", "need 0 <= lo <= hi"));
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Scene {
        let edge = 2.0 * BOUNDARY_EPS;
        let targets = (0..self.k)
            .map(|_| {
                let tau = rng.random_range(0.0..self.tau_hi).clamp(edge, self.tau_max - edge);
                let f = rng.random_range(-self.f_hi..self.f_hi).clamp(-self.f_max + edge, self.f_max - edge);
                let amp = match self.amp {
                    AmpDistribution::Unit => 1.0,
                    AmpDistribution::Uniform { lo, hi } if hi > lo => rng.random_range(lo..hi),
                    AmpDistribution::Uniform { lo, .. } => lo,
                };
                TargetParams::new(tau, f, amp, rng.random())
            })
            .collect();
        Scene::new(targets, self.tau_max, self.f_max)
    }
}

/// Everything one trial needs besides its index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub sampler: SceneSampler,
    pub timing: TimingPlan,
    pub schedule: ChirpSchedule,
    /// Per-sample SNR against a unit amplitude; `inf` means no noise.
    pub snr_db: f64,
    pub denoise: bool,
    pub mode: PredictorMode,
    pub seed: u64,
    /// Residual tolerance of the denoiser's solver.
    #[serde(default = "default_ast_tol")]
    pub ast_tol: f64,
}

fn default_ast_tol() -> f64 {
    TrialConfig::AST_TOL
}

impl TrialConfig {
    /// Looser than the standalone denoiser default; the per-pulse tone fit
    /// that follows is insensitive to the last digits of the solution.
    pub const AST_TOL: f64 = 1e-4;

    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        self.timing.validate_with_schedule(&self.schedule)?;
        self.timing.validate_for_targets(self.sampler.k)?;
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(invalid("snr_db", "must be a number below +inf or +inf"));
        }
        Ok(())
    }

    fn noise_variance(&self) -> f64 {
        NoiseSpec::from_snr_db(self.snr_db, 0).sigma2
    }
}

/// Signed estimation error of one target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetError {
    pub tau: f64,
    pub f: f64,
    pub amp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: u64,
    pub truth: Vec<TargetParams>,
    pub errors: Vec<TargetError>,
    pub flags: Vec<AmbiguityFlag>,
    /// Why the trial counts as failed, if it does.
    pub failure: Option<String>,
    pub denoise_converged: bool,
}

impl TrialOutcome {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

/// Seed of the scene drawn for trial `trial`.
fn scene_stream(trial: u64) -> u64 {
    rng::stream_id(trial, 0)
}

/// Seed of the noise of trial `trial`.
fn noise_seed(seed: u64, trial: u64) -> u64 {
    rng::stream_id(seed ^ 0x5EED_0F_0015E, trial)
}

/// Runs trial number `trial` of `config`. Pipeline errors become failures.
pub fn run_trial(config: &TrialConfig, trial: u64) -> TrialOutcome {
    let mut scene_rng = rng::substream(config.seed, scene_stream(trial));
    let scene = config.sampler.sample(&mut scene_rng);
    let mut outcome = TrialOutcome {
        trial,
        truth: scene.targets.clone(),
        errors: Vec::new(),
        flags: Vec::new(),
        failure: None,
        denoise_converged: true,
    };
    let sigma2 = config.noise_variance();
    let noise = NoiseSpec::new(sigma2, noise_seed(config.seed, trial));
    let pulses = match synth_train(&scene, &config.schedule, &config.timing, &noise) {
        Ok(p) => p,
        Err(e) => {
            outcome.failure = Some(format!("synthesis: {e}"));
            return outcome;
        }
    };
    let mut ic = IdentifyConfig::new(config.sampler.k, scene.tau_max, scene.f_max);
    ic.mode = config.mode;
    ic.sigma2 = Some(sigma2);
    ic.denoise = config.denoise;
    let mut ast = ASTConfig::new(0.0);
    ast.tol = config.ast_tol;
    ic.ast = Some(ast);
    let id = match identify(&pulses, &config.schedule, &ic) {
        Ok(id) => id,
        Err(e) => {
            outcome.failure = Some(format!("identification: {e}"));
            return outcome;
        }
    };
    outcome.denoise_converged = id.denoise_converged();
    outcome.flags = id.result.ambiguity_flags.clone();
    if id.result.is_ambiguous() {
        outcome.failure = Some("ambiguous matching".into());
        return outcome;
    }
    if id.result.triplets.len() != scene.targets.len() {
        outcome.failure = Some(format!(
            "recovered {} of {} targets",
            id.result.triplets.len(),
            scene.targets.len()
        ));
        return outcome;
    }
    outcome.errors = associate(&scene, &id.result.triplets);
    outcome
}

/// Pairs estimates with true targets by minimum total normalized
/// `(tau, f)` distance and returns the signed errors in truth order.
pub fn associate(scene: &Scene, estimates: &[TargetParams]) -> Vec<TargetError> {
    if scene.targets.is_empty() || estimates.len() < scene.targets.len() {
        return Vec::new();
    }
    let cost: Vec<Vec<f64>> = scene
        .targets
        .iter()
        .map(|t| {
            estimates
                .iter()
                .map(|e| ((e.tau - t.tau) / scene.tau_max).powi(2) + ((e.f - t.f) / scene.f_max).powi(2))
                .collect()
        })
        .collect();
    let pick = linalg::min_cost_assignment(&cost);
    scene
        .targets
        .iter()
        .zip(pick)
        .map(|(t, j)| TargetError {
            tau: estimates[j].tau - t.tau,
            f: estimates[j].f - t.f,
            amp: estimates[j].amp - t.amp,
        })
        .collect()
}

/// One SNR point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub snr_db: f64,
    pub rmse_tau_s: f64,
    pub rmse_f_hz: f64,
    pub rmse_amp: f64,
    pub trials: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn row(&self, snr_db: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| (r.snr_db - snr_db).abs() < 1e-9)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub template: TrialConfig,
    pub snr_grid: Vec<f64>,
    pub trials: usize,
}

impl SweepConfig {
    pub const DEFAULT_TRIALS: usize = 200;
    pub const FULL_TRIALS: usize = 1000;

    /// `0..=40` dB in steps of 5.
    pub fn standard_grid() -> Vec<f64> {
        (0..=8).map(|i| 5.0 * i as f64).collect()
    }
}

/// Aggregates a set of trial outcomes into one row.
pub fn aggregate(snr_db: f64, outcomes: &[TrialOutcome]) -> SweepRow {
    let (mut st, mut sf, mut sa, mut count) = (0.0, 0.0, 0.0, 0usize);
    let mut failures = 0;
    for o in outcomes {
        if o.failed() {
            failures += 1;
            continue;
        }
        for e in &o.errors {
            st += e.tau * e.tau;
            sf += e.f * e.f;
            sa += e.amp * e.amp;
            count += 1;
        }
    }
    let rms = |s: f64| if count == 0 { f64::NAN } else { (s / count as f64).sqrt() };
    SweepRow {
        snr_db,
        rmse_tau_s: rms(st),
        rmse_f_hz: rms(sf),
        rmse_amp: rms(sa),
        trials: outcomes.len(),
        failures,
    }
}

/// Worker pool honoring [`THREADS_ENV`].
fn pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        if n > 0 {
            b = b.num_threads(n);
        }
    }
    b.build().map_err(|e| invalid("threads", e.to_string()))
}

/// Runs `trials` trials of one configuration in parallel, in trial order.
pub fn run_trials(config: &TrialConfig, trials: usize) -> Result<Vec<TrialOutcome>> {
    config.validate()?;
    let pool = pool()?;
    Ok(pool.install(|| (0..trials as u64).into_par_iter().map(|t| run_trial(config, t)).collect()))
}

/// Every SNR point of the grid, each over the same trial indices.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepResult> {
    sweep_outcomes(config).map(|all| SweepResult {
        rows: all.iter().map(|(snr, o)| aggregate(*snr, o)).collect(),
    })
}

/// The per-trial outcomes behind [`run_sweep`].
pub fn sweep_outcomes(config: &SweepConfig) -> Result<Vec<(f64, Vec<TrialOutcome>)>> {
    if config.snr_grid.is_empty() {
        return Err(invalid("snr grid", "must not be empty"));
    }
    if config.trials == 0 {
        return Err(invalid("trials", "must be positive"));
    }
    config
        .snr_grid
        .iter()
        .map(|&snr| {
            let mut c = config.template.clone();
            c.snr_db = snr;
            run_trials(&c, config.trials).map(|o| (snr, o))
        })
        .collect()
}

/// [`run_sweep`] with delays drawn from `[0, tau_max / divisor)` and
/// Doppler shifts from `(-f_max / divisor, f_max / divisor)`.
pub fn restricted_range_sweep(config: &SweepConfig, divisor: f64) -> Result<SweepResult> {
    if !(divisor >= 1.0 && divisor.is_finite()) {
        return Err(invalid("divisor", "must be at least 1"));
    }
    let mut c = config.clone();
    c.template.sampler = c.template.sampler.restricted(divisor);
    run_sweep(&c)
}

/// Ratio above which a point counts as past the threshold.
pub const KNEE_FACTOR: f64 = 10.0;

/// Straight-line fit of `log10(rmse)` against SNR in dB over the rows with
/// `lo <= snr <= hi`, as `(intercept, slope)`.
pub fn log_trend(rows: &[SweepRow], pick: impl Fn(&SweepRow) -> f64, lo: f64, hi: f64) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.snr_db >= lo && r.snr_db <= hi)
        .map(|r| (r.snr_db, pick(r)))
        .filter(|&(_, v)| v > 0.0 && v.is_finite())
        .map(|(s, v)| (s, v.log10()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx;
    Some((my - slope * mx, slope))
}

/// Measured RMSE at `snr_db` over the value the trend fitted on
/// `[lo, hi]` predicts there.
pub fn excess_ratio(rows: &[SweepRow], pick: impl Fn(&SweepRow) -> f64 + Copy, snr_db: f64, lo: f64, hi: f64) -> Option<f64> {
    let (a, b) = log_trend(rows, pick, lo, hi)?;
    let row = rows.iter().find(|r| (r.snr_db - snr_db).abs() < 1e-9)?;
    Some(pick(row) / 10f64.powf(a + b * snr_db))
}

/// Highest grid SNR below `lo` where the RMSE exceeds [`KNEE_FACTOR`] times
/// the trend fitted on `[lo, hi]`; `None` when no point does.
pub fn knee_location(rows: &[SweepRow], pick: impl Fn(&SweepRow) -> f64 + Copy, lo: f64, hi: f64) -> Option<f64> {
    let (a, b) = log_trend(rows, pick, lo, hi)?;
    rows.iter()
        .filter(|r| r.snr_db < lo)
        .filter(|r| {
            let v = pick(r);
            // a point with every trial failed is past any threshold
            v.is_nan() || v > KNEE_FACTOR * 10f64.powf(a + b * r.snr_db)
        })
        .map(|r| r.snr_db)
        .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.max(s))))
}
