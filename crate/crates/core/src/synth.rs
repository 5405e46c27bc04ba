//! Dechirped pulse synthesis.
//!
//! Two independent routes produce the same samples. [`synth_dechirped`]
//! evaluates the beat-tone sum in closed form. [`synth_fullrate`] renders the
//! received linear-FM returns on an oversampled grid, multiplies by the
//! conjugate reference chirp and keeps every `oversample`-th sample.
//!
//! Time conventions: sample `n = 0` sits at the start of the measurement
//! window, `tau_max` after the pulse is launched. The reference chirp and the
//! Doppler rotation of each pulse are both phased from that instant, so the
//! dechirped tone of target `k` on pulse `m` is exactly
//! `amp_k exp(j2pi(psi_k^m - f0^m tau_k + nu_k^m n Ts))`.

use std::f64::consts::TAU;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{beat_frequency, beat_phase, min_sampling_rate, wrap_cycles, ChirpProfile, ChirpSchedule, Scene, TimingPlan};
use crate::rng;

/// Default full-rate oversampling factor.
pub const DEFAULT_OVERSAMPLE: usize = 32;
/// Smallest oversampling factor [`synth_fullrate`] accepts.
pub const MIN_OVERSAMPLE: usize = 8;

/// Samples of one dechirped pulse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSamples {
    /// Pulse index within the train.
    pub m: usize,
    pub samples: Vec<Complex64>,
    /// Sampling period, s.
    #[serde(rename = "Ts")]
    pub ts: f64,
    /// Variance of the noise injected so far (0 for clean data).
    pub sigma2: f64,
}

impl PulseSamples {
    pub fn new(m: usize, samples: Vec<Complex64>, ts: f64) -> Self {
        Self {
            m,
            samples,
            ts,
            sigma2: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn fs(&self) -> f64 {
        1.0 / self.ts
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// Complex white Gaussian noise to inject, and the seed it is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Per-sample complex variance `E|e[n]|^2`.
    pub sigma2: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn clean() -> Self {
        Self {
            sigma2: 0.0,
            seed: 0,
        }
    }

    pub fn new(sigma2: f64, seed: u64) -> Self {
        Self { sigma2, seed }
    }

    /// Noise giving per-sample SNR `snr_db` against a unit-amplitude tone.
    pub fn from_snr_db(snr_db: f64, seed: u64) -> Self {
        Self {
            sigma2: if snr_db.is_infinite() && snr_db > 0.0 {
                0.0
            } else {
                10f64.powf(-snr_db / 10.0)
            },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return Err(invalid("sigma2", "noise variance must be finite and nonnegative"));
        }
        Ok(())
    }
}

fn check_pulse(scene: &Scene, chirp: &ChirpProfile, plan: &TimingPlan, noise: &NoiseSpec) -> Result<()> {
    plan.validate()?;
    noise.validate()?;
    scene.validate()?;
    if scene.tau_max > plan.tau_max * (1.0 + 1e-12) || scene.f_max > plan.f_max * (1.0 + 1e-12) {
        return Err(invalid(
            "scene",
            "scene bounds exceed the bounds the timing plan was designed for",
        ));
    }
    crate::model::validate_chirp_rate(chirp.fc, plan.tau_max).map_err(|violation| Error::ChirpRate {
        pulse: chirp.m,
        violation,
    })?;
    let required = min_sampling_rate(plan.f_max, chirp.fc, plan.tau_max);
    if plan.fs < required * (1.0 - 1e-12) {
        return Err(Error::Nyquist { fs: plan.fs, required });
    }
    Ok(())
}

#[inline]
fn cis(cycles: f64) -> Complex64 {
    let (s, c) = (TAU * cycles).sin_cos();
    Complex64::new(c, s)
}

/// Closed-form dechirped samples of one pulse, plus noise.
pub fn synth_dechirped(scene: &Scene, chirp: &ChirpProfile, plan: &TimingPlan, noise: &NoiseSpec) -> Result<PulseSamples> {
    check_pulse(scene, chirp, plan, noise)?;
    let ts = plan.sample_period();
    let mut samples = vec![Complex64::new(0.0, 0.0); plan.n_samples];
    for target in &scene.targets {
        let nu = beat_frequency(target, chirp);
        let psi = beat_phase(target, chirp) - chirp.f0 * target.tau;
        for (n, s) in samples.iter_mut().enumerate() {
            let cycles = psi + wrap_cycles(nu * ts * n as f64);
            *s += target.amp * cis(cycles);
        }
    }
    Ok(add_noise(PulseSamples::new(chirp.m, samples, ts), noise))
}

/// Adds circularly symmetric complex Gaussian noise drawn from the substream
/// of `noise.seed` selected by the pulse index.
pub fn add_noise(mut pulse: PulseSamples, noise: &NoiseSpec) -> PulseSamples {
    if noise.sigma2 == 0.0 {
        return pulse;
    }
    let mut rng = rng::substream(noise.seed, pulse.m as u64);
    for s in pulse.samples.iter_mut() {
        *s += rng::complex_gaussian(&mut rng, noise.sigma2);
    }
    pulse.sigma2 += noise.sigma2;
    pulse
}

/// Synthesizes every pulse of a schedule.
pub fn synth_train(scene: &Scene, schedule: &ChirpSchedule, plan: &TimingPlan, noise: &NoiseSpec) -> Result<Vec<PulseSamples>> {
    schedule
        .pulses()
        .iter()
        .map(|chirp| synth_dechirped(scene, chirp, plan, noise))
        .collect()
}

/// Oversampled received and dechirped waveforms over the measurement window.
#[derive(Debug, Clone)]
pub struct FullRateWaveform {
    /// Full-rate sampling frequency, Hz.
    pub rate: f64,
    /// Pulse-local sample instants, s.
    pub times: Vec<f64>,
    /// Received signal (returns plus noise) before dechirping.
    pub received: Vec<Complex64>,
    /// Received signal after multiplication by the conjugate reference chirp.
    pub dechirped: Vec<Complex64>,
}

/// Sampling rate needed to carry the received chirps without aliasing.
pub fn fullrate_required_rate(chirp: &ChirpProfile, plan: &TimingPlan) -> f64 {
    let a = plan.tau_max;
    let sweep = 2.0 * chirp.fc.abs() * a.max(plan.pulse_duration - a);
    let max_inst = sweep + chirp.f0.abs() + plan.f_max;
    (2.0 * max_inst).max(2.0 * chirp.fc.abs() * plan.pulse_duration)
}

/// Renders the received returns of one pulse at `oversample * fs`.
pub fn fullrate_waveform(
    scene: &Scene,
    chirp: &ChirpProfile,
    plan: &TimingPlan,
    oversample: usize,
    noise: &NoiseSpec,
) -> Result<FullRateWaveform> {
    check_pulse(scene, chirp, plan, noise)?;
    if oversample < MIN_OVERSAMPLE {
        return Err(invalid(
            "oversample",
            format!("factor {oversample} is below the minimum {MIN_OVERSAMPLE}"),
        ));
    }
    let rate = oversample as f64 * plan.fs;
    let required = fullrate_required_rate(chirp, plan);
    if rate < required {
        return Err(Error::Nyquist { fs: rate, required });
    }

    // chirp and Doppler phase reference: start of the measurement window
    let origin = plan.tau_max;
    let tp = plan.pulse_duration;
    let reference = |s: f64| {
        let d = s - origin;
        chirp.fc * d * d + chirp.f0 * d
    };

    let len = plan.n_samples * oversample;
    let times: Vec<f64> = (0..len).map(|j| origin + j as f64 / rate).collect();
    let mut rng = rng::substream(noise.seed, chirp.m as u64);
    let mut received = Vec::with_capacity(len);
    let mut dechirped = Vec::with_capacity(len);
    for &s in &times {
        let mut y = Complex64::new(0.0, 0.0);
        for t in &scene.targets {
            let u = s - t.tau;
            if !(0.0..=tp).contains(&u) {
                continue;
            }
            let cycles = t.phi + reference(u) + t.f * (s - origin);
            y += t.amp * cis(cycles);
        }
        if noise.sigma2 > 0.0 {
            y += rng::complex_gaussian(&mut rng, noise.sigma2);
        }
        received.push(y);
        dechirped.push(y * cis(-reference(s)));
    }
    Ok(FullRateWaveform {
        rate,
        times,
        received,
        dechirped,
    })
}

/// Full-rate simulation of one pulse, dechirped and decimated to `N` samples.
pub fn synth_fullrate(
    scene: &Scene,
    chirp: &ChirpProfile,
    plan: &TimingPlan,
    oversample: usize,
    noise: &NoiseSpec,
) -> Result<PulseSamples> {
    let wave = fullrate_waveform(scene, chirp, plan, oversample, noise)?;
    let samples = wave.dechirped.iter().step_by(oversample).copied().collect();
    let mut pulse = PulseSamples::new(chirp.m, samples, plan.sample_period());
    pulse.sigma2 = noise.sigma2;
    Ok(pulse)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ChirpSchedule, TargetParams};

    fn plan(fs: f64, n: usize) -> TimingPlan {
        let tau_max = 0.01;
        let tp = n as f64 / fs + tau_max;
        TimingPlan {
            pulse_duration: tp,
            pri: tp + tau_max,
            tau_max,
            f_max: 100.0,
            fs,
            n_samples: n,
            n_pulses: 4,
        }
    }

    fn single() -> Scene {
        Scene::new(vec![TargetParams::new(0.001, -80.0, 1.0, 0.0)], 0.01, 100.0)
    }

    #[test]
    fn empty_scene_is_silent() {
        let scene = Scene::new(vec![], 0.01, 100.0);
        let chirp = ChirpProfile::new(0, 3000.0);
        let p = synth_dechirped(&scene, &chirp, &plan(320.0, 8), &NoiseSpec::clean()).unwrap();
        assert!(p.samples.iter().all(|z| z.norm() == 0.0));
        let f = synth_fullrate(&scene, &chirp, &plan(320.0, 8), 32, &NoiseSpec::clean()).unwrap();
        assert!(f.samples.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn single_target_matches_direct_formula() {
        let chirp = ChirpProfile::new(0, 3000.0);
        let p = synth_dechirped(&single(), &chirp, &plan(320.0, 8), &NoiseSpec::clean()).unwrap();
        assert_eq!(p.len(), 8);
        for (n, z) in p.samples.iter().enumerate() {
            let ph = TAU * (0.003 - 86.0 * n as f64 / 320.0);
            let want = Complex64::new(ph.cos(), ph.sin());
            assert!((z - want).norm() < 1e-12, "n={n}: {z} vs {want}");
        }
    }

    #[test]
    fn noise_is_deterministic_and_identity_when_zero() {
        let chirp = ChirpProfile::new(2, 3000.0);
        let clean = synth_dechirped(&single(), &chirp, &plan(320.0, 8), &NoiseSpec::clean()).unwrap();
        assert_eq!(add_noise(clean.clone(), &NoiseSpec::new(0.0, 9)), clean);
        let a = add_noise(clean.clone(), &NoiseSpec::new(0.01, 9));
        let b = add_noise(clean.clone(), &NoiseSpec::new(0.01, 9));
        assert_eq!(a, b);
        assert_ne!(a, clean);
        assert_eq!(a.sigma2, 0.01);
    }

    #[test]
    fn injected_noise_has_requested_variance() {
        let zeros = PulseSamples::new(0, vec![Complex64::new(0.0, 0.0); 4096], 1.0 / 320.0);
        let noisy = add_noise(zeros, &NoiseSpec::new(1.0, 1234));
        let n = noisy.len() as f64;
        let mean: Complex64 = noisy.samples.iter().sum::<Complex64>() / n;
        let var = noisy.samples.iter().map(|z| (z - mean).norm_sqr()).sum::<f64>() / (n - 1.0);
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn noisy_minus_clean_variance_over_seeds() {
        let chirp = ChirpProfile::new(0, 3000.0);
        let p = plan(320.0, 8);
        let clean = synth_dechirped(&single(), &chirp, &p, &NoiseSpec::clean()).unwrap();
        let mut acc = Vec::new();
        for seed in 0..500 {
            let noisy = synth_dechirped(&single(), &chirp, &p, &NoiseSpec::new(0.01, seed)).unwrap();
            acc.extend(noisy.samples.iter().zip(&clean.samples).map(|(a, b)| a - b));
        }
        let n = acc.len() as f64;
        let mean: Complex64 = acc.iter().sum::<Complex64>() / n;
        let second = acc.iter().map(|z| z.norm_sqr()).sum::<f64>() / n;
        // mean^2 + var of the difference equals its second moment
        assert!(mean.norm() < 0.005);
        assert!((second - 0.01).abs() < 0.001, "second moment {second}");
    }

    #[test]
    fn fullrate_matches_closed_form_on_reference_scene() {
        let scene = crate::presets::reference_scene();
        let schedule = crate::presets::reference_schedule();
        let plan = crate::presets::reference_timing(64);
        for chirp in schedule.pulses() {
            let a = synth_dechirped(&scene, chirp, &plan, &NoiseSpec::clean()).unwrap();
            let b = synth_fullrate(&scene, chirp, &plan, 32, &NoiseSpec::clean()).unwrap();
            let dev = a
                .samples
                .iter()
                .zip(&b.samples)
                .map(|(x, y)| (x - y).norm())
                .fold(0.0, f64::max);
            assert!(dev <= 1e-6, "pulse {}: {dev}", chirp.m);
        }
    }

    #[test]
    fn dechirp_preserves_modulus() {
        let chirp = ChirpProfile::new(1, -3000.0);
        let w = fullrate_waveform(&single(), &chirp, &plan(320.0, 16), 32, &NoiseSpec::clean()).unwrap();
        for (r, d) in w.received.iter().zip(&w.dechirped) {
            assert!((r.norm() - d.norm()).abs() < 1e-12);
        }
        let noisy = fullrate_waveform(&single(), &chirp, &plan(320.0, 16), 32, &NoiseSpec::new(0.5, 4)).unwrap();
        for (r, d) in noisy.received.iter().zip(&noisy.dechirped) {
            assert!((r.norm() - d.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn fullrate_rejects_coarse_grids() {
        let chirp = ChirpProfile::new(0, 3000.0);
        assert!(synth_fullrate(&single(), &chirp, &plan(320.0, 8), 4, &NoiseSpec::clean()).is_err());
        // a long pulse sweeps far more bandwidth than 8x the dechirped rate can hold
        let mut long = plan(320.0, 8);
        long.pulse_duration = 0.5;
        long.pri = 0.6;
        assert!(matches!(
            synth_fullrate(&single(), &chirp, &long, 8, &NoiseSpec::clean()),
            Err(Error::Nyquist { .. })
        ));
    }

    #[test]
    fn invalid_combinations_are_rejected() {
        let p = plan(320.0, 8);
        let steep = ChirpProfile::new(0, 20_000.0);
        assert!(matches!(
            synth_dechirped(&single(), &steep, &p, &NoiseSpec::clean()),
            Err(Error::ChirpRate { .. })
        ));
        let fast = ChirpProfile::new(0, 6000.0);
        assert!(matches!(
            synth_dechirped(&single(), &fast, &p, &NoiseSpec::clean()),
            Err(Error::Nyquist { .. })
        ));
        assert!(synth_dechirped(&single(), &ChirpProfile::new(0, 3000.0), &p, &NoiseSpec::new(-1.0, 0)).is_err());
    }

    #[test]
    fn train_covers_schedule() {
        let sched = ChirpSchedule::sign_paired(&[3000.0]);
        let train = synth_train(&single(), &sched, &plan(320.0, 8).with_pulses(2), &NoiseSpec::clean()).unwrap();
        assert_eq!(train.len(), 2);
        assert_eq!(train[1].m, 1);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_target() -> impl Strategy<Value = TargetParams> {
            (1e-5f64..0.0099, -99.0f64..99.0, 0.1f64..2.0, 0.0f64..1.0)
                .prop_map(|(tau, f, amp, phi)| TargetParams::new(tau, f, amp, phi))
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn paths_agree(targets in prop::collection::vec(arb_target(), 1..5), rate in prop::sample::select(vec![3000.0, -3000.0, 6000.0, -6000.0])) {
                let scene = Scene::new(targets, 0.01, 100.0);
                let chirp = ChirpProfile::new(0, rate);
                let p = plan(440.0, 24);
                let a = synth_dechirped(&scene, &chirp, &p, &NoiseSpec::clean()).unwrap();
                let b = synth_fullrate(&scene, &chirp, &p, 32, &NoiseSpec::clean()).unwrap();
                for (x, y) in a.samples.iter().zip(&b.samples) {
                    prop_assert!((x - y).norm() <= 1e-6);
                }
            }

            #[test]
            fn synthesis_is_linear(t1 in arb_target(), t2 in arb_target()) {
                let chirp = ChirpProfile::new(0, -3000.0);
                let p = plan(440.0, 16);
                let both = synth_dechirped(&Scene::new(vec![t1, t2], 0.01, 100.0), &chirp, &p, &NoiseSpec::clean()).unwrap();
                let a = synth_dechirped(&Scene::new(vec![t1], 0.01, 100.0), &chirp, &p, &NoiseSpec::clean()).unwrap();
                let b = synth_dechirped(&Scene::new(vec![t2], 0.01, 100.0), &chirp, &p, &NoiseSpec::clean()).unwrap();
                for ((s, x), y) in both.samples.iter().zip(&a.samples).zip(&b.samples) {
                    prop_assert!((s - (x + y)).norm() <= 1e-12);
                }
            }
        }
    }
}
