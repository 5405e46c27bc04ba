//! Identification of sparse delay/Doppler operators from linear-FM pulse
//! trains.
//!
//! Each received pulse is dechirped, which turns every scatterer into a beat
//! tone whose frequency mixes its delay and Doppler shift. The crate recovers
//! those tones per pulse ([`specest`]), optionally denoises the samples first
//! ([`denoise`]), and then works out which tone on which pulse belongs to
//! which scatterer ([`matcher`]). [`synth`] produces test data and
//! [`harness`] runs Monte Carlo sweeps.

pub mod denoise;
pub mod error;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod matcher;
pub mod model;
pub mod pipeline;
pub mod presets;
pub mod rng;
pub mod specest;
pub mod synth;

pub use error::{Error, Result};
pub use model::{BeatParams, ChirpProfile, ChirpSchedule, Scene, TargetParams, TimingPlan};
pub use synth::{NoiseSpec, PulseSamples};
