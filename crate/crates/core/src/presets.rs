//! Ready-made scenes, schedules and plans used by the examples, the CLI
//! reproduction modes and the acceptance tests.

use crate::harness::{SceneSampler, SweepConfig, TrialConfig};
use crate::model::{ChirpSchedule, Scene, TargetParams, TimingPlan};
use crate::specest::PredictorMode;

pub const REFERENCE_TAU_MAX: f64 = 0.01;
pub const REFERENCE_F_MAX: f64 = 100.0;
/// Chirp rate of the first pulse pair, Hz/s.
pub const REFERENCE_RATE: f64 = 3000.0;

/// Five targets whose beat lines under the `+-3000 Hz/s` pair admit exactly
/// four complete feasible explanations, all of which agree on the target at
/// `(1 ms, -80 Hz)`.
pub fn reference_scene() -> Scene {
    let params = [
        (0.001, -80.0, 1.0, 0.1),
        (0.0073, 61.0, 0.8, 0.35),
        (0.0073, 64.0, 1.2, 0.6),
        (0.0049, -16.0, 0.6, 0.85),
        (0.0095, -12.0, 0.9, 0.2),
    ];
    Scene::new(
        params
            .iter()
            .map(|&(tau, f, amp, phi)| TargetParams::new(tau, f, amp, phi))
            .collect(),
        REFERENCE_TAU_MAX,
        REFERENCE_F_MAX,
    )
}

/// `{+3000, -3000, +6000, -6000}` Hz/s.
pub fn reference_schedule() -> ChirpSchedule {
    ChirpSchedule::sign_paired(&[REFERENCE_RATE, 2.0 * REFERENCE_RATE])
}

/// Timing for the reference scene with `n` samples per pulse at the minimum
/// sampling rate the reference schedule allows.
pub fn reference_timing(n: usize) -> TimingPlan {
    let fs = crate::model::min_sampling_rate(REFERENCE_F_MAX, 2.0 * REFERENCE_RATE, REFERENCE_TAU_MAX);
    let tp = n as f64 / fs + REFERENCE_TAU_MAX;
    TimingPlan {
        pulse_duration: tp,
        pri: tp + REFERENCE_TAU_MAX,
        tau_max: REFERENCE_TAU_MAX,
        f_max: REFERENCE_F_MAX,
        fs,
        n_samples: n,
        n_pulses: 4,
    }
}

/// Samples per pulse in the Monte Carlo sweeps.
pub const SWEEP_SAMPLES: usize = 64;
/// Targets per random scene in the Monte Carlo sweeps.
pub const SWEEP_TARGETS: usize = 3;

/// Sweep over uniformly drawn `SWEEP_TARGETS`-target scenes on the reference
/// schedule and timing.
pub fn threshold_sweep(trials: usize, denoise: bool, seed: u64) -> SweepConfig {
    SweepConfig {
        template: TrialConfig {
            sampler: SceneSampler::new(SWEEP_TARGETS, REFERENCE_TAU_MAX, REFERENCE_F_MAX),
            timing: reference_timing(SWEEP_SAMPLES),
            schedule: reference_schedule(),
            snr_db: f64::INFINITY,
            denoise,
            mode: PredictorMode::SvdTruncated,
            seed,
            ast_tol: TrialConfig::AST_TOL,
        },
        snr_grid: SweepConfig::standard_grid(),
        trials,
    }
}
