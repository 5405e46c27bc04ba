//! Scene, waveform and timing types, and the maps between a target's
//! delay/Doppler pair and the beat tone it produces after dechirping.
//!
//! Phases are carried in cycles throughout the crate: a phase `p` stands for
//! the complex factor `exp(j 2 pi p)`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, ChirpRateViolation, Error, Result};

/// Absolute slack applied at the open-interval boundaries of the parameter box.
pub const BOUNDARY_EPS: f64 = 1e-12;

/// Reduces a phase in cycles to `[0, 1)`.
pub fn wrap_cycles(p: f64) -> f64 {
    let w = p - p.floor();
    // p.floor() can round so that w == 1.0 for tiny negative p
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

/// Reduces a cycle difference to `[-0.5, 0.5)`.
pub fn wrap_centered(p: f64) -> f64 {
    let w = wrap_cycles(p + 0.5) - 0.5;
    if w < -0.5 {
        w + 1.0
    } else {
        w
    }
}

/// One scatterer of the delay/Doppler operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetParams {
    /// Time shift in seconds.
    pub tau: f64,
    /// Frequency shift in Hz.
    pub f: f64,
    /// Magnitude of the complex scaling.
    pub amp: f64,
    /// Phase of the complex scaling, in cycles.
    pub phi: f64,
}

impl TargetParams {
    pub fn new(tau: f64, f: f64, amp: f64, phi: f64) -> Self {
        Self { tau, f, amp, phi }
    }

    /// Checks the target against a scene's delay and Doppler bounds.
    pub fn validate(&self, tau_max: f64, f_max: f64) -> Result<()> {
        if !(self.tau.is_finite() && self.f.is_finite() && self.amp.is_finite() && self.phi.is_finite()) {
            return Err(invalid("target", "non-finite parameter"));
        }
        if self.tau < BOUNDARY_EPS || self.tau > tau_max - BOUNDARY_EPS {
            return Err(invalid(
                "tau",
                format!("{} s is outside (0, {tau_max}) s", self.tau),
            ));
        }
        if self.f.abs() > f_max - BOUNDARY_EPS {
            return Err(invalid(
                "f",
                format!("|{}| Hz is not below f_max = {f_max} Hz", self.f),
            ));
        }
        if self.amp < 0.0 {
            return Err(invalid("amp", format!("{} is negative", self.amp)));
        }
        Ok(())
    }
}

/// Sweep rate and frequency offset of one transmitted pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChirpProfile {
    /// Sweep rate in Hz/s; the instantaneous frequency advances at `2 fc`.
    pub fc: f64,
    /// Frequency offset in Hz.
    #[serde(default)]
    pub f0: f64,
    /// Pulse number within the train.
    #[serde(skip)]
    pub m: usize,
}

impl ChirpProfile {
    pub fn new(m: usize, fc: f64) -> Self {
        Self { fc, f0: 0.0, m }
    }

    pub fn with_offset(mut self, f0: f64) -> Self {
        self.f0 = f0;
        self
    }
}

/// The ordered list of pulses transmitted in one processing interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<ChirpProfile>", into = "Vec<ChirpProfile>")]
pub struct ChirpSchedule {
    pulses: Vec<ChirpProfile>,
}

impl From<Vec<ChirpProfile>> for ChirpSchedule {
    fn from(mut pulses: Vec<ChirpProfile>) -> Self {
        for (m, p) in pulses.iter_mut().enumerate() {
            p.m = m;
        }
        Self { pulses }
    }
}

impl From<ChirpSchedule> for Vec<ChirpProfile> {
    fn from(s: ChirpSchedule) -> Self {
        s.pulses
    }
}

impl ChirpSchedule {
    /// Builds a schedule from sweep rates, with zero frequency offsets.
    pub fn from_rates(rates: &[f64]) -> Self {
        rates
            .iter()
            .enumerate()
            .map(|(m, &fc)| ChirpProfile::new(m, fc))
            .collect::<Vec<_>>()
            .into()
    }

    /// `(+r1, -r1, +r2, -r2, ...)`.
    pub fn sign_paired(rates: &[f64]) -> Self {
        let all: Vec<f64> = rates.iter().flat_map(|&r| [r, -r]).collect();
        Self::from_rates(&all)
    }

    pub fn pulses(&self) -> &[ChirpProfile] {
        &self.pulses
    }

    pub fn len(&self) -> usize {
        self.pulses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pulses.is_empty()
    }

    pub fn rates(&self) -> Vec<f64> {
        self.pulses.iter().map(|p| p.fc).collect()
    }

    pub fn max_abs_rate(&self) -> f64 {
        self.pulses.iter().map(|p| p.fc.abs()).fold(0.0, f64::max)
    }

    /// True when every odd-indexed pulse negates the rate of the pulse before it.
    pub fn is_sign_paired(&self) -> bool {
        self.pulses.len() % 2 == 0
            && self
                .pulses
                .chunks(2)
                .all(|p| p[0].fc != 0.0 && p[1].fc == -p[0].fc)
    }

    /// Appends a pulse and returns its index.
    pub fn push(&mut self, fc: f64) -> usize {
        let m = self.pulses.len();
        self.pulses.push(ChirpProfile::new(m, fc));
        m
    }

    /// Checks every rate against the bijectivity bound for `tau_max`.
    pub fn validate(&self, tau_max: f64) -> Result<()> {
        for p in &self.pulses {
            validate_chirp_rate(p.fc, tau_max).map_err(|violation| Error::ChirpRate {
                pulse: p.m,
                violation,
            })?;
        }
        Ok(())
    }
}

/// Pulse timing, sampling and parameter bounds for one processing interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingPlan {
    /// Pulse duration, s.
    #[serde(rename = "Tp")]
    pub pulse_duration: f64,
    /// Pulse repetition interval, s.
    #[serde(rename = "T")]
    pub pri: f64,
    pub tau_max: f64,
    pub f_max: f64,
    /// Sampling rate of the dechirped signal, Hz.
    pub fs: f64,
    /// Samples per pulse.
    #[serde(rename = "N")]
    pub n_samples: usize,
    /// Number of pulses.
    #[serde(rename = "M")]
    pub n_pulses: usize,
}

impl TimingPlan {
    /// Measurement interval `Tp - tau_max`.
    pub fn measurement_interval(&self) -> f64 {
        self.pulse_duration - self.tau_max
    }

    /// Guard interval `T - Tp`.
    pub fn guard_interval(&self) -> f64 {
        self.pri - self.pulse_duration
    }

    pub fn sample_period(&self) -> f64 {
        1.0 / self.fs
    }

    /// Total acquisition time `M T`.
    pub fn processing_interval(&self) -> f64 {
        self.n_pulses as f64 * self.pri
    }

    /// `f_max * Tp`, reported for the slow-motion assumption; not enforced.
    pub fn doppler_time_product(&self) -> f64 {
        self.f_max * self.pulse_duration
    }

    pub fn with_f_max(mut self, f_max: f64) -> Self {
        self.f_max = f_max;
        self
    }

    pub fn with_pulses(mut self, m: usize) -> Self {
        self.n_pulses = m;
        self
    }

    pub fn with_samples(mut self, n: usize) -> Self {
        self.n_samples = n;
        self
    }

    /// Checks the timing invariants that do not involve the chirp schedule.
    pub fn validate(&self) -> Result<()> {
        let finite = [self.pulse_duration, self.pri, self.tau_max, self.f_max, self.fs];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(invalid("timing", "non-finite value"));
        }
        if self.fs <= 0.0 {
            return Err(invalid("fs", "sampling rate must be positive"));
        }
        if self.tau_max < 0.0 || self.f_max < 0.0 {
            return Err(invalid("timing", "tau_max and f_max must be nonnegative"));
        }
        if self.n_samples == 0 || self.n_pulses == 0 {
            return Err(invalid("timing", "N and M must be positive"));
        }
        let slack = 1e-12 * self.pri.abs().max(1.0);
        let t_o = self.measurement_interval();
        if t_o <= 0.0 {
            return Err(Error::Timing(format!(
                "measurement interval Tp - tau_max = {t_o} s is not positive"
            )));
        }
        let needed = self.n_samples as f64 / self.fs;
        if t_o + slack < needed {
            return Err(Error::Timing(format!(
                "measurement interval {t_o} s is shorter than N/fs = {needed} s"
            )));
        }
        if self.guard_interval() + slack < self.tau_max {
            return Err(Error::Timing(format!(
                "guard interval {} s is shorter than tau_max = {} s",
                self.guard_interval(),
                self.tau_max
            )));
        }
        Ok(())
    }

    /// Checks the sampling rate and chirp rates against a schedule.
    pub fn validate_with_schedule(&self, schedule: &ChirpSchedule) -> Result<()> {
        self.validate()?;
        if schedule.len() != self.n_pulses {
            return Err(Error::Size(format!(
                "schedule has {} pulses, timing plan expects {}",
                schedule.len(),
                self.n_pulses
            )));
        }
        schedule.validate(self.tau_max)?;
        let required = min_sampling_rate(self.f_max, schedule.max_abs_rate(), self.tau_max);
        if self.fs < required * (1.0 - 1e-12) {
            return Err(Error::Nyquist {
                fs: self.fs,
                required,
            });
        }
        Ok(())
    }

    /// Checks that a pulse carries enough samples for `k` sinusoids.
    pub fn validate_for_targets(&self, k: usize) -> Result<()> {
        if self.n_samples < k + 1 {
            return Err(Error::Timing(format!(
                "N = {} samples cannot resolve K = {k} targets (need N >= K + 1)",
                self.n_samples
            )));
        }
        Ok(())
    }
}

/// The operator to identify: a set of targets plus its parameter bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    #[serde(default)]
    pub targets: Vec<TargetParams>,
    pub tau_max: f64,
    pub f_max: f64,
}

impl Scene {
    pub fn new(targets: Vec<TargetParams>, tau_max: f64, f_max: f64) -> Self {
        Self {
            targets,
            tau_max,
            f_max,
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Checks target bounds. An empty scene is accepted here (it synthesizes
    /// to silence); identification separately requires at least one target.
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_max > 0.0 && self.f_max > 0.0) {
            return Err(invalid("scene", "tau_max and f_max must be positive"));
        }
        for t in &self.targets {
            t.validate(self.tau_max, self.f_max)?;
        }
        Ok(())
    }

    pub fn amplitude_sum(&self) -> f64 {
        self.targets.iter().map(|t| t.amp).sum()
    }
}

/// Frequency and phase of the beat tone one target produces on one pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeatParams {
    /// Beat frequency, Hz.
    pub nu: f64,
    /// Beat phase, cycles in `[0, 1)`.
    pub psi: f64,
}

impl BeatParams {
    pub fn of(target: &TargetParams, chirp: &ChirpProfile) -> Self {
        Self {
            nu: beat_frequency(target, chirp),
            psi: beat_phase(target, chirp),
        }
    }
}

/// `f - 2 fc tau`.
pub fn beat_frequency(target: &TargetParams, chirp: &ChirpProfile) -> f64 {
    target.f - 2.0 * chirp.fc * target.tau
}

/// `phi + fc tau^2`, reduced to `[0, 1)`.
pub fn beat_phase(target: &TargetParams, chirp: &ChirpProfile) -> f64 {
    wrap_cycles(target.phi + chirp.fc * target.tau * target.tau)
}

/// Smallest dechirped sampling rate that keeps every beat tone unaliased.
pub fn min_sampling_rate(f_max: f64, fc: f64, tau_max: f64) -> f64 {
    2.0 * (f_max + 2.0 * fc.abs() * tau_max)
}

/// Accepts `fc` iff `0 < |fc| <= 1 / tau_max^2`.
pub fn validate_chirp_rate(fc: f64, tau_max: f64) -> std::result::Result<(), ChirpRateViolation> {
    if fc == 0.0 {
        return Err(ChirpRateViolation::ZeroRate);
    }
    let bound = if tau_max > 0.0 {
        1.0 / (tau_max * tau_max)
    } else {
        f64::INFINITY
    };
    if !fc.is_finite() || fc.abs() > bound * (1.0 + 1e-12) {
        return Err(ChirpRateViolation::TooSteep { fc, bound });
    }
    Ok(())
}

/// Minimal timing for `k` targets: `N = k + 1`, `T_o = N / fs`,
/// `Tp = T_o + tau_max`, `T = Tp + tau_max + guard_slack`.
///
/// The returned plan has `f_max = 0` and `M = 4`; set them with
/// [`TimingPlan::with_f_max`] and [`TimingPlan::with_pulses`].
pub fn plan_timing(k: usize, fs: f64, tau_max: f64, guard_slack: f64) -> Result<TimingPlan> {
    if k == 0 {
        return Err(invalid("K", "need at least one target"));
    }
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(invalid("fs", "sampling rate must be positive"));
    }
    if !(tau_max >= 0.0 && tau_max.is_finite()) {
        return Err(invalid("tau_max", "must be nonnegative"));
    }
    if !(guard_slack >= 0.0 && guard_slack.is_finite()) {
        return Err(invalid("guard_slack", "must be nonnegative"));
    }
    let n = k + 1;
    let t_o = n as f64 / fs;
    let tp = t_o + tau_max;
    Ok(TimingPlan {
        pulse_duration: tp,
        pri: tp + tau_max + guard_slack,
        tau_max,
        f_max: 0.0,
        fs,
        n_samples: n,
        n_pulses: 4,
    })
}

/// Intersects the beat frequencies of a target seen on a chirp of rate `fc1`
/// and on its negation, returning `(tau, f)`.
pub fn invert_pair(nu1: f64, nu2: f64, fc1: f64) -> Result<(f64, f64)> {
    if fc1 == 0.0 {
        return Err(invalid("fc1", "chirp rate must be nonzero"));
    }
    Ok(((nu1 - nu2) / (-4.0 * fc1), (nu1 + nu2) / 2.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn target(tau: f64, f: f64) -> TargetParams {
        TargetParams::new(tau, f, 1.0, 0.0)
    }

    #[test]
    fn beat_frequency_examples() {
        let up = ChirpProfile::new(0, 3000.0);
        let down = ChirpProfile::new(1, -3000.0);
        assert_eq!(beat_frequency(&target(0.0, 0.0), &up), 0.0);
        assert_relative_eq!(beat_frequency(&target(0.001, -80.0), &up), -86.0, epsilon = 1e-12);
        assert_relative_eq!(beat_frequency(&target(0.001, -80.0), &down), -74.0, epsilon = 1e-12);
    }

    #[test]
    fn beat_phase_examples() {
        let up = ChirpProfile::new(0, 3000.0);
        assert_eq!(beat_phase(&TargetParams::new(0.0, 0.0, 1.0, 0.0), &up), 0.0);
        assert_relative_eq!(
            beat_phase(&TargetParams::new(0.001, 0.0, 1.0, 0.25), &up),
            0.253,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            beat_phase(&TargetParams::new(0.01, 0.0, 1.0, 0.9), &up),
            0.2,
            epsilon = 1e-12
        );
    }

    #[test]
    fn sampling_rate_examples() {
        assert_relative_eq!(min_sampling_rate(100.0, 3000.0, 0.01), 320.0);
        assert_eq!(min_sampling_rate(0.0, 0.0, 5.0), 0.0);
        assert_relative_eq!(min_sampling_rate(100.0, -6000.0, 0.01), 440.0);
    }

    #[test]
    fn chirp_rate_bound() {
        assert!(validate_chirp_rate(3000.0, 0.01).is_ok());
        assert!(validate_chirp_rate(-10_000.0, 0.01).is_ok());
        assert_eq!(validate_chirp_rate(0.0, 0.01), Err(ChirpRateViolation::ZeroRate));
        match validate_chirp_rate(10_001.0, 0.01) {
            Err(ChirpRateViolation::TooSteep { bound, .. }) => assert_relative_eq!(bound, 1e4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn plan_timing_examples() {
        let p = plan_timing(5, 320.0, 0.01, 0.0).unwrap();
        assert_eq!(p.n_samples, 6);
        assert_relative_eq!(p.measurement_interval(), 0.01875, epsilon = 1e-15);
        assert_relative_eq!(p.pulse_duration, 0.02875, epsilon = 1e-15);
        assert_relative_eq!(p.pri, 0.03875, epsilon = 1e-15);
        p.validate().unwrap();

        let p = plan_timing(1, 1000.0, 0.0, 0.0).unwrap();
        assert_eq!(p.n_samples, 2);
        assert_relative_eq!(p.measurement_interval(), 0.002);
        assert_relative_eq!(p.pulse_duration, 0.002);
        assert_relative_eq!(p.pri, 0.002);
        p.validate().unwrap();

        let p = plan_timing(3, 440.0, 0.01, 0.001).unwrap();
        assert_eq!(p.n_samples, 4);
        assert_relative_eq!(p.measurement_interval(), 4.0 / 440.0, epsilon = 1e-15);
        assert_relative_eq!(p.pulse_duration, 4.0 / 440.0 + 0.01, epsilon = 1e-15);
        assert_relative_eq!(p.pri, 4.0 / 440.0 + 0.021, epsilon = 1e-15);
        assert!((p.pulse_duration - 0.01909).abs() < 1e-5);
        assert!((p.pri - 0.03009).abs() < 1e-5);
    }

    #[test]
    fn plan_timing_rejects_bad_inputs() {
        assert!(plan_timing(0, 320.0, 0.01, 0.0).is_err());
        assert!(plan_timing(2, 0.0, 0.01, 0.0).is_err());
        assert!(plan_timing(2, 320.0, -0.01, 0.0).is_err());
        assert!(plan_timing(2, 320.0, 0.01, -1.0).is_err());
    }

    #[test]
    fn invert_pair_examples() {
        let (tau, f) = invert_pair(-86.0, -74.0, 3000.0).unwrap();
        assert_relative_eq!(tau, 0.001, epsilon = 1e-15);
        assert_relative_eq!(f, -80.0);
        assert_eq!(invert_pair(0.0, 0.0, 17.0).unwrap(), (0.0, 0.0));
        let (tau, f) = invert_pair(160.0, 40.0, -3000.0).unwrap();
        assert_relative_eq!(tau, 0.01);
        assert_relative_eq!(f, 100.0);
        assert!(invert_pair(1.0, 2.0, 0.0).is_err());
    }

    #[test]
    fn timing_rejects_short_guard_and_nyquist() {
        let mut p = plan_timing(3, 440.0, 0.01, 0.0).unwrap().with_f_max(100.0);
        p.pri = p.pulse_duration + 0.005;
        assert!(matches!(p.validate(), Err(Error::Timing(_))));

        let p = plan_timing(3, 400.0, 0.01, 0.0).unwrap().with_f_max(100.0);
        let sched = ChirpSchedule::sign_paired(&[3000.0, 6000.0]);
        assert!(matches!(
            p.validate_with_schedule(&sched),
            Err(Error::Nyquist { .. })
        ));
        let p = p.with_pulses(4);
        let mut fast = p;
        fast.fs = 440.0;
        fast.pulse_duration = 4.0 / 440.0 + 0.01;
        fast.pri = fast.pulse_duration + 0.01;
        fast.validate_with_schedule(&sched).unwrap();
        assert!(fast.validate_for_targets(4).is_err());
        fast.validate_for_targets(3).unwrap();
    }

    #[test]
    fn target_bounds() {
        assert!(target(0.005, 50.0).validate(0.01, 100.0).is_ok());
        assert!(target(0.0, 50.0).validate(0.01, 100.0).is_err());
        assert!(target(0.01, 50.0).validate(0.01, 100.0).is_err());
        assert!(target(0.005, -100.0).validate(0.01, 100.0).is_err());
        assert!(TargetParams::new(0.005, 0.0, -1.0, 0.0).validate(0.01, 100.0).is_err());
    }

    #[test]
    fn schedule_pairing() {
        let s = ChirpSchedule::sign_paired(&[3000.0, 6000.0]);
        assert_eq!(s.rates(), vec![3000.0, -3000.0, 6000.0, -6000.0]);
        assert!(s.is_sign_paired());
        assert_eq!(s.pulses()[3].m, 3);
        assert!(!ChirpSchedule::from_rates(&[3000.0, 3000.0]).is_sign_paired());
    }

    #[test]
    fn wrapping() {
        assert_eq!(wrap_cycles(1.0), 0.0);
        assert_relative_eq!(wrap_cycles(-0.25), 0.75);
        assert_relative_eq!(wrap_centered(0.75), -0.25);
        assert_relative_eq!(wrap_centered(-0.5), -0.5);
        assert!(wrap_cycles(-1e-18) < 1.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn invert_pair_round_trip(tau in 1e-6f64..0.01, f in -99.0f64..99.0, fc in 100.0f64..1e4) {
                let t = target(tau, f);
                let nu1 = beat_frequency(&t, &ChirpProfile::new(0, fc));
                let nu2 = beat_frequency(&t, &ChirpProfile::new(1, -fc));
                let (tau_r, f_r) = invert_pair(nu1, nu2, fc).unwrap();
                prop_assert!((tau_r - tau).abs() <= 1e-12 * tau.abs().max(1e-3));
                prop_assert!((f_r - f).abs() <= 1e-12 * f.abs().max(1.0));
            }

            #[test]
            fn delay_phase_map_is_bijective(tau_max in 1e-3f64..0.1, frac in 0.01f64..1.0, neg in any::<bool>()) {
                let bound = 1.0 / (tau_max * tau_max);
                let fc = if neg { -bound * frac } else { bound * frac };
                prop_assert!(validate_chirp_rate(fc, tau_max).is_ok());
                let grid: Vec<f64> = (0..=512).map(|i| fc * (tau_max * i as f64 / 512.0).powi(2)).collect();
                let strictly_monotone = grid.windows(2).all(|w| if fc > 0.0 { w[1] > w[0] } else { w[1] < w[0] });
                prop_assert!(strictly_monotone);
                let span = (grid[512] - grid[0]).abs();
                prop_assert!(span <= 1.0 + 1e-12);
                // distinct delays never alias to the same unit-circle phase
                let mut wrapped: Vec<f64> = grid[1..grid.len() - 1].iter().map(|&g| wrap_cycles(g)).collect();
                wrapped.sort_by(f64::total_cmp);
                prop_assert!(wrapped.windows(2).all(|w| w[1] > w[0]));
            }

            #[test]
            fn sampling_rate_is_monotone(f in 0.0f64..500.0, fc in -1e4f64..1e4, tau in 0.0f64..0.1, d in 0.0f64..10.0) {
                let base = min_sampling_rate(f, fc, tau);
                prop_assert!(min_sampling_rate(f + d, fc, tau) >= base);
                prop_assert!(min_sampling_rate(f, fc.abs() + d, tau) >= base);
                prop_assert!(min_sampling_rate(f, fc, tau + d) >= base);
            }

            #[test]
            fn planned_timing_is_valid(k in 1usize..40, fs in 1.0f64..1e5, tau_max in 0.0f64..0.5, slack in 0.0f64..0.1) {
                let plan = plan_timing(k, fs, tau_max, slack).unwrap();
                prop_assert!(plan.validate().is_ok());
                prop_assert!(plan.validate_for_targets(k).is_ok());
            }
        }
    }
}
