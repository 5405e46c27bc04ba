//! The TOML run configuration shared by every CLI subcommand.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::harness::{AmpDistribution, SceneSampler, SweepConfig, TrialConfig};
use crate::model::{ChirpProfile, ChirpSchedule, Scene, TimingPlan};
use crate::pipeline::IdentifyConfig;
use crate::specest::PredictorMode;
use crate::synth::NoiseSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    /// Chirp rate of each pulse, Hz/s.
    pub rates: Vec<f64>,
    /// Per-pulse frequency offsets, Hz; zeros when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub offsets: Vec<f64>,
}

impl ScheduleSection {
    pub fn to_schedule(&self) -> Result<ChirpSchedule> {
        if !self.offsets.is_empty() && self.offsets.len() != self.rates.len() {
            return Err(invalid("schedule.offsets", "needs one entry per rate"));
        }
        let pulses: Vec<ChirpProfile> = self
            .rates
            .iter()
            .enumerate()
            .map(|(m, &fc)| ChirpProfile::new(m, fc).with_offset(self.offsets.get(m).copied().unwrap_or(0.0)))
            .collect();
        Ok(pulses.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    /// Per-sample complex noise variance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    /// Per-sample SNR against a unit amplitude; used when `sigma2` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSection {
    pub fn to_spec(&self) -> Result<NoiseSpec> {
        let spec = match (self.sigma2, self.snr_db) {
            (Some(_), Some(_)) => return Err(invalid("noise", "give sigma2 or snr_db, not both")),
            (Some(s), None) => NoiseSpec::new(s, self.seed),
            (None, Some(db)) => NoiseSpec::from_snr_db(db, self.seed),
            (None, None) => NoiseSpec::new(0.0, self.seed),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentifySection {
    /// Number of targets; the scene's target count when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default = "default_mode")]
    pub mode: PredictorMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    #[serde(default)]
    pub denoise: bool,
}

fn default_mode() -> PredictorMode {
    PredictorMode::SvdTruncated
}

impl Default for IdentifySection {
    fn default() -> Self {
        Self {
            k: None,
            mode: default_mode(),
            order: None,
            denoise: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Targets per random scene.
    pub k: usize,
    pub snr_db: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Shrinks the delay and Doppler sampling ranges; 1 keeps them whole.
    #[serde(default = "default_divisor")]
    pub divisor: f64,
    #[serde(default)]
    pub denoise: bool,
    #[serde(default = "default_amp")]
    pub amp: AmpDistribution,
}

fn default_trials() -> usize {
    SweepConfig::DEFAULT_TRIALS
}

fn default_divisor() -> f64 {
    1.0
}

fn default_amp() -> AmpDistribution {
    AmpDistribution::Unit
}

/// The whole configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scene: Scene,
    pub timing: TimingPlan,
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identify: Option<IdentifySection>,
}

impl RunConfig {
    /// Checks every section and their mutual consistency.
    pub fn validate(&self) -> Result<()> {
        let schedule = self.schedule.to_schedule()?;
        self.timing.validate_with_schedule(&schedule)?;
        self.scene.validate()?;
        if self.scene.tau_max > self.timing.tau_max * (1.0 + 1e-12) || self.scene.f_max > self.timing.f_max * (1.0 + 1e-12) {
            return Err(invalid("scene", "bounds exceed the timing plan's tau_max/f_max"));
        }
        self.noise.to_spec()?;
        if let Some(s) = &self.sweep {
            if s.snr_db.is_empty() {
                return Err(invalid("sweep.snr_db", "must not be empty"));
            }
            if s.trials == 0 {
                return Err(invalid("sweep.trials", "must be positive"));
            }
            if !(s.divisor >= 1.0 && s.divisor.is_finite()) {
                return Err(invalid("sweep.divisor", "must be at least 1"));
            }
            self.sampler()?.validate()?;
            self.timing.validate_for_targets(s.k)?;
        }
        Ok(())
    }

    pub fn chirps(&self) -> Result<ChirpSchedule> {
        self.schedule.to_schedule()
    }

    pub fn noise_spec(&self) -> Result<NoiseSpec> {
        self.noise.to_spec()
    }

    /// Identification settings implied by the document.
    pub fn identify_config(&self) -> IdentifyConfig {
        let sec = self.identify.unwrap_or_default();
        let k = sec.k.unwrap_or(self.scene.targets.len());
        let mut c = IdentifyConfig::new(k, self.scene.tau_max, self.scene.f_max);
        c.mode = sec.mode;
        c.order = sec.order;
        c.denoise = sec.denoise;
        c
    }

    fn sampler(&self) -> Result<SceneSampler> {
        let s = self.sweep.as_ref().ok_or_else(|| invalid("sweep", "section missing"))?;
        let mut sampler = SceneSampler::new(s.k, self.scene.tau_max, self.scene.f_max);
        sampler.amp = s.amp;
        Ok(sampler.restricted(s.divisor))
    }

    /// Sweep settings implied by the document.
    pub fn sweep_config(&self) -> Result<SweepConfig> {
        let s = self.sweep.as_ref().ok_or_else(|| invalid("sweep", "section missing"))?;
        let sec = self.identify.unwrap_or_default();
        Ok(SweepConfig {
            template: TrialConfig {
                sampler: self.sampler()?,
                timing: self.timing,
                schedule: self.chirps()?,
                snr_db: f64::INFINITY,
                denoise: s.denoise,
                mode: sec.mode,
                seed: self.noise.seed,
                ast_tol: TrialConfig::AST_TOL,
            },
            snr_grid: s.snr_db.clone(),
            trials: s.trials,
        })
    }
}

/// Decodes a configuration document without validating it.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    toml::from_str(text).map_err(|e| Error::Parse {
        format: "toml",
        line: e.span().map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1),
        message: e.message().to_string(),
    })
}

pub fn to_toml(config: &RunConfig) -> Result<String> {
    toml::to_string(config).map_err(|e| invalid("config", e.to_string()))
}

/// Reads and validates a configuration file.
pub fn load_config(path: &std::path::Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let c = parse_config(&text)?;
    c.validate()?;
    Ok(c)
}

/// The reference five-target configuration.
pub fn reference_config(n: usize) -> RunConfig {
    let scene = crate::presets::reference_scene();
    RunConfig {
        timing: crate::presets::reference_timing(n),
        schedule: ScheduleSection {
            rates: crate::presets::reference_schedule().rates(),
            offsets: Vec::new(),
        },
        noise: NoiseSection::default(),
        sweep: None,
        identify: None,
        scene,
    }
}
