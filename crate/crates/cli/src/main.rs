use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use chirp_ident::denoise::{ast_denoise, ast_mse_bound, ASTConfig};
use chirp_ident::harness::{self, AmpDistribution};
use chirp_ident::io::config::{self, RunConfig, SweepSection};
use chirp_ident::io::{pulse, result, sweep};
use chirp_ident::pipeline::{identify, Identification};
use chirp_ident::synth::{add_noise, synth_train, NoiseSpec, PulseSamples};
use chirp_ident::{presets, rng, Error};
use clap::{Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

const EXIT_VALIDATION: u8 = 2;
const EXIT_AMBIGUOUS: u8 = 3;
const EXIT_NOT_CONVERGED: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "chirp-ident", version, about = "Delay/Doppler identification from linear-FM pulse trains")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the noise seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    denoise: Option<Toggle>,
    /// Overrides the trial count of a sweep.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Uses a built-in configuration instead of --config.
    #[arg(long, global = true)]
    reproduce: Option<Figure>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize the dechirped samples of every pulse.
    Simulate,
    /// Recover target parameters from pulse files, or from a simulation of
    /// the configured scene when no files are given.
    Identify {
        /// Pulse sample files (`.txt` tables or `.json` documents).
        pulses: Vec<PathBuf>,
    },
    /// Monte Carlo RMSE sweep over SNR.
    Sweep,
    /// Denoiser error against its mean-squared-error bound on random tones.
    DenoiseEval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Figure {
    Fig6,
    Fig8,
    Fig9,
    Fig10,
}

#[derive(Debug, Serialize)]
struct RunManifest {
    command: String,
    config_path: Option<PathBuf>,
    reproduce: Option<Figure>,
    /// SHA-256 of the resolved configuration written next to the manifest.
    config_sha256: String,
    seed: u64,
    tool_version: &'static str,
    threads: Option<String>,
    outputs: Vec<PathBuf>,
    wall_clock_s: f64,
}

/// An error carrying its process exit code.
#[derive(Debug)]
struct Exit {
    code: u8,
    error: anyhow::Error,
}

fn classify(e: anyhow::Error) -> Exit {
    let code = match e.downcast_ref::<Error>() {
        Some(Error::Io(_)) | None => 1,
        Some(_) => EXIT_VALIDATION,
    };
    Exit { code, error: e }
}

fn sweep_section(divisor: f64, denoise: bool) -> SweepSection {
    SweepSection {
        k: presets::SWEEP_TARGETS,
        snr_db: harness::SweepConfig::standard_grid(),
        trials: harness::SweepConfig::DEFAULT_TRIALS,
        divisor,
        denoise,
        amp: AmpDistribution::Unit,
    }
}

fn builtin(fig: Figure) -> RunConfig {
    match fig {
        Figure::Fig6 => config::reference_config(64),
        Figure::Fig8 | Figure::Fig9 | Figure::Fig10 => {
            let mut c = config::reference_config(presets::SWEEP_SAMPLES);
            c.sweep = Some(sweep_section(if fig == Figure::Fig10 { 10.0 } else { 1.0 }, fig == Figure::Fig9));
            c
        }
    }
}

/// Applies the command-line overrides to the loaded configuration.
fn resolve(cli: &Cli) -> Result<RunConfig, Exit> {
    let mut cfg = match (&cli.reproduce, &cli.config) {
        (Some(_), Some(_)) => {
            return Err(Exit {
                code: EXIT_VALIDATION,
                error: anyhow::anyhow!("--config and --reproduce are mutually exclusive"),
            })
        }
        (Some(fig), None) => builtin(*fig),
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(|e| Exit { code: EXIT_VALIDATION, error: e })?;
            config::parse_config(&text).map_err(|e| classify(anyhow::Error::new(e).context(path.display().to_string())))?
        }
        (None, None) => {
            return Err(Exit {
                code: EXIT_VALIDATION,
                error: anyhow::anyhow!("one of --config or --reproduce is required"),
            })
        }
    };
    if let Some(seed) = cli.seed {
        cfg.noise.seed = seed;
    }
    if let Some(t) = cli.denoise {
        let on = t == Toggle::On;
        let mut id = cfg.identify.unwrap_or_default();
        id.denoise = on;
        cfg.identify = Some(id);
        if let Some(s) = cfg.sweep.as_mut() {
            s.denoise = on;
        }
    }
    if let Some(n) = cli.trials {
        if let Some(s) = cfg.sweep.as_mut() {
            s.trials = n;
        }
    }
    cfg.validate().map_err(|e| classify(e.into()))?;
    Ok(cfg)
}

struct Run<'a> {
    cli: &'a Cli,
    cfg: RunConfig,
    started: Instant,
    outputs: Vec<PathBuf>,
}

impl Run<'_> {
    fn write(&mut self, name: &str, contents: &str) -> anyhow::Result<()> {
        let path = self.cli.out.join(name);
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(PathBuf::from(name));
        Ok(())
    }

    fn finish(mut self, command: &str) -> anyhow::Result<()> {
        let resolved = config::to_toml(&self.cfg)?;
        self.write("config.toml", &resolved)?;
        let manifest = RunManifest {
            command: command.into(),
            config_path: self.cli.config.clone(),
            reproduce: self.cli.reproduce,
            config_sha256: hex(&Sha256::digest(resolved.as_bytes())),
            seed: self.cfg.noise.seed,
            tool_version: env!("CARGO_PKG_VERSION"),
            threads: std::env::var(harness::THREADS_ENV).ok(),
            outputs: self.outputs,
            wall_clock_s: self.started.elapsed().as_secs_f64(),
        };
        let path = self.cli.out.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn simulate(run: &mut Run) -> anyhow::Result<()> {
    let cfg = &run.cfg;
    let pulses = synth_train(&cfg.scene, &cfg.chirps()?, &cfg.timing, &cfg.noise_spec()?)?;
    for p in &pulses {
        run.write(&format!("pulse_{}.txt", p.m), &pulse::to_text(p))?;
    }
    println!("wrote {} pulse files of {} samples", pulses.len(), run.cfg.timing.n_samples);
    Ok(())
}

fn read_pulse(path: &Path) -> anyhow::Result<PulseSamples> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let p = if path.extension().is_some_and(|e| e == "json") {
        pulse::from_json(&text)
    } else {
        pulse::from_text(&text)
    };
    p.with_context(|| path.display().to_string())
}

fn load_pulses(cfg: &RunConfig, files: &[PathBuf]) -> anyhow::Result<Vec<PulseSamples>> {
    if files.is_empty() {
        return Ok(synth_train(&cfg.scene, &cfg.chirps()?, &cfg.timing, &cfg.noise_spec()?)?);
    }
    let mut pulses = files.iter().map(|f| read_pulse(f)).collect::<anyhow::Result<Vec<_>>>()?;
    pulses.sort_by_key(|p| p.m);
    let t = &cfg.timing;
    if pulses.len() != t.n_pulses || pulses.iter().enumerate().any(|(m, p)| p.m != m) {
        return Err(Error::Size(format!("expected pulses 0..{}, got {}", t.n_pulses, pulses.len())).into());
    }
    for p in &pulses {
        if p.len() != t.n_samples {
            return Err(Error::Size(format!("pulse {} has {} samples, config says N = {}", p.m, p.len(), t.n_samples)).into());
        }
        if ((p.ts * t.fs) - 1.0).abs() > 1e-9 {
            return Err(Error::Size(format!("pulse {} has Ts = {}, config says fs = {}", p.m, p.ts, t.fs)).into());
        }
    }
    Ok(pulses)
}

fn run_identify(cfg: &RunConfig, pulses: &[PulseSamples], denoise: bool) -> anyhow::Result<Identification> {
    let mut ic = cfg.identify_config();
    ic.denoise = denoise;
    if cfg.noise.sigma2.is_some() || cfg.noise.snr_db.is_some() {
        ic.sigma2 = Some(cfg.noise_spec()?.sigma2);
    }
    Ok(identify(pulses, &cfg.chirps()?, &ic)?)
}

#[derive(Serialize)]
struct Comparison {
    denoise_off: Summary,
    denoise_on: Summary,
    /// Largest triplet displacement between the two runs, in (s, Hz).
    max_tau_shift: f64,
    max_f_shift: f64,
}

#[derive(Serialize)]
struct Summary {
    residual: f64,
    flags: usize,
    converged: bool,
}

fn summary(id: &Identification) -> Summary {
    Summary {
        residual: id.result.residual,
        flags: id.result.ambiguity_flags.len(),
        converged: id.denoise_converged(),
    }
}

fn cmd_identify(run: &mut Run, files: &[PathBuf]) -> Result<(), Exit> {
    let pulses = load_pulses(&run.cfg, files).map_err(classify)?;
    let denoise = run.cfg.identify.unwrap_or_default().denoise;
    let id = run_identify(&run.cfg, &pulses, denoise).map_err(classify)?;
    run.write("result.json", &result::to_json(&id.result)).map_err(classify)?;
    if denoise {
        let plain = run_identify(&run.cfg, &pulses, false).map_err(classify)?;
        let shift = |pick: fn(&chirp_ident::TargetParams) -> f64| {
            id.result
                .triplets
                .iter()
                .map(|a| plain.result.triplets.iter().map(|b| (pick(a) - pick(b)).abs()).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max)
        };
        let cmp = Comparison {
            denoise_off: summary(&plain),
            denoise_on: summary(&id),
            max_tau_shift: shift(|t| t.tau),
            max_f_shift: shift(|t| t.f),
        };
        run.write("comparison.json", &serde_json::to_string_pretty(&cmp).expect("comparison serializes"))
            .map_err(classify)?;
    }
    for t in &id.result.triplets {
        println!("tau={:.12e} f={:.12e} amp={:.12e} phi={:.12e}", t.tau, t.f, t.amp, t.phi);
    }
    println!("residual={:.3e}", id.result.residual);
    if !id.result.ambiguity_flags.is_empty() {
        for f in &id.result.ambiguity_flags {
            eprintln!("flag: {:?} components {:?} ({} matchings)", f.kind, f.components, f.matchings);
        }
        return Err(Exit {
            code: EXIT_AMBIGUOUS,
            error: anyhow::anyhow!("{} ambiguity flag(s); partial result written", id.result.ambiguity_flags.len()),
        });
    }
    if !id.denoise_converged() {
        return Err(Exit {
            code: EXIT_NOT_CONVERGED,
            error: anyhow::anyhow!("denoiser did not converge on every pulse"),
        });
    }
    Ok(())
}

fn cmd_sweep(run: &mut Run) -> anyhow::Result<()> {
    let sc = run.cfg.sweep_config()?;
    let table = harness::run_sweep(&sc)?;
    run.write("sweep.csv", &sweep::to_csv(&table))?;
    if run.cli.reproduce == Some(Figure::Fig10) {
        let mut full = run.cfg.clone();
        if let Some(s) = full.sweep.as_mut() {
            s.divisor = 1.0;
        }
        let base = harness::run_sweep(&full.sweep_config()?)?;
        run.write("sweep_unrestricted.csv", &sweep::to_csv(&base))?;
    }
    print!("{}", sweep::to_csv(&table));
    Ok(())
}

#[derive(Serialize)]
struct EvalRow {
    trial: usize,
    mse: f64,
    bound: f64,
    converged: bool,
    iterations: usize,
}

fn cmd_denoise_eval(run: &mut Run) -> Result<(), Exit> {
    let cfg = &run.cfg;
    let n = cfg.timing.n_samples;
    let k = cfg.sweep.as_ref().map_or(cfg.scene.len().max(1), |s| s.k);
    let trials = cfg.sweep.as_ref().map_or(harness::SweepConfig::DEFAULT_TRIALS, |s| s.trials);
    let snr_db = cfg.noise.snr_db.unwrap_or(5.0);
    let sigma2 = cfg.noise.sigma2.unwrap_or(10f64.powf(-snr_db / 10.0));
    if sigma2 <= 0.0 {
        return Err(Exit {
            code: EXIT_VALIDATION,
            error: anyhow::anyhow!("denoise-eval needs a positive noise level"),
        });
    }
    let sigma = sigma2.sqrt();
    let bound = ast_mse_bound(sigma, n, k as f64);
    let ast = ASTConfig::for_noise(sigma, n);
    let seed = cfg.noise.seed;
    let mut rows = Vec::with_capacity(trials);
    let mut trace = Vec::new();
    for trial in 0..trials {
        let mut r = rng::substream(seed, rng::stream_id(trial as u64, 0));
        let freqs: Vec<(f64, f64)> = (0..k).map(|_| (r.random_range(-0.5..0.5), r.random_range(0.0..1.0))).collect();
        let clean: Vec<Complex64> = (0..n)
            .map(|i| {
                freqs
                    .iter()
                    .map(|&(nu, ph)| Complex64::from_polar(1.0, std::f64::consts::TAU * (nu * i as f64 + ph)))
                    .sum()
            })
            .collect();
        let noisy = add_noise(PulseSamples::new(0, clean.clone(), 1.0), &NoiseSpec::new(sigma2, rng::stream_id(seed, trial as u64)));
        let res = ast_denoise(&noisy, &ast).map_err(|e| classify(e.into()))?;
        let mse = res.denoised.iter().zip(&clean).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / n as f64;
        if trial == 0 {
            trace = res.objective_trace.clone();
        }
        rows.push(EvalRow {
            trial,
            mse,
            bound,
            converged: res.converged,
            iterations: res.iterations,
        });
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r).map_err(|e| classify(e.into()))?;
    }
    let table = String::from_utf8(w.into_inner().map_err(|e| classify(anyhow::anyhow!(e.to_string())))?).expect("utf-8");
    run.write("denoise_eval.csv", &table).map_err(classify)?;
    let trace_text: String = trace.iter().enumerate().map(|(i, v)| format!("{i} {v:.16e}\n")).collect();
    run.write("objective_trace.txt", &trace_text).map_err(classify)?;
    let below = rows.iter().filter(|r| r.mse < r.bound).count();
    println!("{below}/{trials} trials below the bound {bound:.4e}");
    if rows.iter().any(|r| !r.converged) {
        return Err(Exit {
            code: EXIT_NOT_CONVERGED,
            error: anyhow::anyhow!("denoiser hit its iteration limit"),
        });
    }
    Ok(())
}

fn main_inner(cli: &Cli) -> Result<(), Exit> {
    let cfg = resolve(cli)?;
    if cli.reproduce.is_some_and(|f| f != Figure::Fig6) && !matches!(cli.command, Command::Sweep) {
        return Err(Exit {
            code: EXIT_VALIDATION,
            error: anyhow::anyhow!("--reproduce fig8/fig9/fig10 applies to the sweep subcommand"),
        });
    }
    if matches!(cli.command, Command::Sweep) && cfg.sweep.is_none() {
        return Err(Exit {
            code: EXIT_VALIDATION,
            error: anyhow::anyhow!("the configuration has no [sweep] section"),
        });
    }
    std::fs::create_dir_all(&cli.out)
        .with_context(|| format!("creating {}", cli.out.display()))
        .map_err(|e| Exit { code: 1, error: e })?;
    let mut run = Run {
        cli,
        cfg,
        started: Instant::now(),
        outputs: Vec::new(),
    };
    let (name, outcome) = match &cli.command {
        Command::Simulate => ("simulate", simulate(&mut run).map_err(classify)),
        Command::Identify { pulses } => ("identify", cmd_identify(&mut run, pulses)),
        Command::Sweep => ("sweep", cmd_sweep(&mut run).map_err(classify)),
        Command::DenoiseEval => ("denoise-eval", cmd_denoise_eval(&mut run)),
    };
    run.finish(name).map_err(|e| Exit { code: 1, error: e })?;
    outcome
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Exit { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_configs_validate() {
        for fig in [Figure::Fig6, Figure::Fig8, Figure::Fig9, Figure::Fig10] {
            builtin(fig).validate().unwrap();
        }
        assert_eq!(builtin(Figure::Fig8).sweep.unwrap().snr_db.len(), 9);
    }

    #[test]
    fn hex_encoding() {
        assert_eq!(hex(&[0, 15, 255]), "000fff");
    }
}
