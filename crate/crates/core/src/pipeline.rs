//! End-to-end identification: optional denoising, per-pulse tone
//! estimation, matching.

use serde::{Deserialize, Serialize};

use crate::denoise::{ast_denoise, ASTConfig};
use crate::error::{invalid, Error, Result};
use crate::matcher::{self, MatchResult, MatchTolerance, NoisyTolerance, SearchBounds};
use crate::model::ChirpSchedule;
use crate::specest::{self, PredictorConfig, PredictorMode, SinusoidEstimateSet};
use crate::synth::PulseSamples;

/// Which matcher to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatcherChoice {
    /// Noiseless matcher when the noise variance is known to be zero,
    /// noisy matcher otherwise.
    #[default]
    Auto,
    Noiseless,
    Noisy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifyConfig {
    /// Number of targets.
    pub k: usize,
    pub mode: PredictorMode,
    /// Prediction order; `None` picks the default for the pulse length.
    #[serde(default)]
    pub order: Option<usize>,
    #[serde(default)]
    pub denoise: bool,
    /// Noise variance per complex sample; estimated from the data when
    /// absent.
    #[serde(default)]
    pub sigma2: Option<f64>,
    pub bounds: SearchBounds,
    #[serde(default)]
    pub matcher: MatcherChoice,
    /// Overrides for the denoiser; `eta` is always recomputed from the
    /// noise level.
    #[serde(default)]
    pub ast: Option<ASTConfig>,
}

impl IdentifyConfig {
    pub fn new(k: usize, tau_max: f64, f_max: f64) -> Self {
        Self {
            k,
            mode: PredictorMode::SvdTruncated,
            order: None,
            denoise: false,
            sigma2: None,
            bounds: SearchBounds::new(tau_max, f_max),
            matcher: MatcherChoice::Auto,
            ast: None,
        }
    }
}

/// Denoiser outcome for one pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiseReport {
    pub m: usize,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Identification {
    pub estimates: Vec<SinusoidEstimateSet>,
    pub result: MatchResult,
    pub denoise: Vec<DenoiseReport>,
    /// Noise variance the tolerances were derived from.
    pub sigma2: f64,
}

impl Identification {
    pub fn denoise_converged(&self) -> bool {
        self.denoise.iter().all(|d| d.converged)
    }
}

/// Runs the whole chain on one processing interval.
pub fn identify(pulses: &[PulseSamples], chirps: &ChirpSchedule, config: &IdentifyConfig) -> Result<Identification> {
    if pulses.len() != chirps.len() {
        return Err(Error::Size(format!("{} pulses for {} scheduled chirps", pulses.len(), chirps.len())));
    }
    if config.k == 0 {
        return Err(invalid("K", "need at least one target"));
    }
    let n = pulses.first().map_or(0, PulseSamples::len);
    if pulses.iter().any(|p| p.len() != n) {
        return Err(Error::Size("pulses differ in length".into()));
    }
    let sigma2 = match config.sigma2 {
        Some(s) if s >= 0.0 && s.is_finite() => s,
        Some(_) => return Err(invalid("sigma2", "must be finite and nonnegative")),
        None => {
            let mut acc = 0.0;
            for p in pulses {
                acc += specest::estimate_noise_sigma(p, config.k)?.powi(2);
            }
            acc / pulses.len() as f64
        }
    };
    let mut reports = Vec::new();
    let denoised: Vec<PulseSamples>;
    let work = if config.denoise && sigma2 > 0.0 {
        let mut ast = config.ast.unwrap_or_else(|| ASTConfig::for_noise(0.0, n));
        ast.eta = crate::denoise::default_eta(sigma2.sqrt(), n);
        let mut out = Vec::with_capacity(pulses.len());
        for p in pulses {
            let r = ast_denoise(p, &ast)?;
            reports.push(DenoiseReport {
                m: p.m,
                converged: r.converged,
                iterations: r.iterations,
            });
            out.push(PulseSamples {
                samples: r.denoised,
                ..p.clone()
            });
        }
        denoised = out;
        &denoised
    } else {
        pulses
    };
    let l = config.order.unwrap_or_else(|| specest::default_order(n, config.k));
    let pc = PredictorConfig::new(l, config.k, config.mode);
    let estimates = work
        .iter()
        .map(|p| specest::estimate_sinusoids(p, &pc))
        .collect::<Result<Vec<_>>>()?;
    let noiseless = match config.matcher {
        MatcherChoice::Auto => sigma2 == 0.0,
        MatcherChoice::Noiseless => true,
        MatcherChoice::Noisy => false,
    };
    let result = if noiseless {
        matcher::match_noiseless(&estimates, chirps, &config.bounds, &MatchTolerance::for_bounds(&config.bounds))?
    } else {
        // The median rather than the weakest tone: two targets merging on a
        // pulse leave a spurious near-zero component behind.
        let mut amps: Vec<f64> = estimates.iter().flat_map(|e| e.components.iter().map(|c| c.amp)).collect();
        amps.sort_by(f64::total_cmp);
        let typical = amps.get(amps.len() / 2).copied().unwrap_or(0.0);
        let snr = if sigma2 > 0.0 { typical * typical / sigma2 } else { f64::INFINITY };
        let ts = pulses[0].ts;
        let tol = if snr.is_finite() && snr > 0.0 {
            NoisyTolerance::from_snr(snr, n, ts)
        } else {
            NoisyTolerance::new(1e-9 * config.bounds.f_max.max(1.0))
        };
        matcher::match_noisy(&estimates, chirps, &config.bounds, &tol)?
    };
    Ok(Identification {
        estimates,
        result,
        denoise: reports,
        sigma2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::synth::{synth_train, NoiseSpec};

    #[test]
    fn clean_reference_scene_end_to_end() {
        let scene = presets::reference_scene();
        let chirps = presets::reference_schedule();
        for n in [10, 64] {
            let plan = presets::reference_timing(n);
            let pulses = synth_train(&scene, &chirps, &plan, &NoiseSpec::clean()).unwrap();
            let mut cfg = IdentifyConfig::new(5, scene.tau_max, scene.f_max);
            cfg.sigma2 = Some(0.0);
            cfg.mode = PredictorMode::Exact;
            let id = identify(&pulses, &chirps, &cfg).unwrap();
            assert!(id.result.ambiguity_flags.is_empty());
            for t in &scene.targets {
                assert!(
                    id.result.triplets.iter().any(|g| (g.tau - t.tau).abs() < 1e-9
                        && (g.f - t.f).abs() < 1e-9
                        && (g.amp - t.amp).abs() < 1e-9
                        && crate::model::wrap_centered(g.phi - t.phi).abs() < 1e-9),
                    "n={n} missing {t:?}"
                );
            }
        }
    }

    #[test]
    fn length_mismatch_rejected() {
        let chirps = presets::reference_schedule();
        let cfg = IdentifyConfig::new(1, 0.01, 100.0);
        assert!(matches!(identify(&[], &chirps, &cfg), Err(Error::Size(_))));
    }
}
