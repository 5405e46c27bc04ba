use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chirp-ident"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("CHIRP_IDENT_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_owned()
}

const TWO_TARGETS: &str = r#"
[scene]
tau_max = 0.01
f_max = 100.0
targets = [
  { tau = 0.002, f = 30.0, amp = 1.0, phi = 0.25 },
  { tau = 0.0065, f = -45.0, amp = 0.7, phi = 0.6 },
]

[timing]
Tp = 0.16545454545454547
T = 0.17545454545454547
tau_max = 0.01
f_max = 100.0
fs = 440.0
N = 64
M = 4

[schedule]
rates = [3000.0, -3000.0, 6000.0, -6000.0]

[sweep]
k = 1
snr_db = [10.0, 30.0]
trials = 5
"#;

#[test]
fn simulate_reference_scene_writes_pulse_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["simulate", "--reproduce", "fig6"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for m in 0..4 {
        let text = std::fs::read_to_string(dir.path().join(format!("pulse_{m}.txt"))).unwrap();
        let p = chirp_ident::io::pulse::from_text(&text).unwrap();
        assert_eq!(p.len(), 64);
        assert_eq!(p.m, m);
    }
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert!(dir.path().join("config.toml").exists());
}

#[test]
fn simulate_then_identify_recovers_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "two.toml", TWO_TARGETS);
    let sim = dir.path().join("sim");
    assert!(run(&["simulate", "--config", &cfg], &sim).status.success());
    let pulses: Vec<String> = (0..4).map(|m| sim.join(format!("pulse_{m}.txt")).to_str().unwrap().to_owned()).collect();
    let mut args = vec!["identify", "--config", &cfg];
    args.extend(pulses.iter().map(String::as_str));
    let id = dir.path().join("id");
    let out = run(&args, &id);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let res = chirp_ident::io::result::from_json(&std::fs::read_to_string(id.join("result.json")).unwrap()).unwrap();
    let truth = chirp_ident::io::config::parse_config(TWO_TARGETS).unwrap().scene.targets;
    assert_eq!(res.triplets.len(), 2);
    for t in &truth {
        assert!(res
            .triplets
            .iter()
            .any(|g| (g.tau - t.tau).abs() < 1e-9 && (g.f - t.f).abs() < 1e-9 && (g.amp - t.amp).abs() < 1e-9));
    }
}

#[test]
fn builtin_reference_scene_identifies_without_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["identify", "--reproduce", "fig6"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let res = chirp_ident::io::result::from_json(&std::fs::read_to_string(dir.path().join("result.json")).unwrap()).unwrap();
    assert_eq!(res.triplets.len(), 5);
}

#[test]
fn identify_single_target() {
    let dir = tempfile::tempdir().unwrap();
    let body = TWO_TARGETS.replace("  { tau = 0.0065, f = -45.0, amp = 0.7, phi = 0.6 },\n", "");
    let cfg = write_config(dir.path(), "one.toml", &body);
    let out = run(&["identify", "--config", &cfg], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let res = chirp_ident::io::result::from_json(&std::fs::read_to_string(dir.path().join("result.json")).unwrap()).unwrap();
    assert_eq!(res.triplets.len(), 1);
}

#[test]
fn noisy_identify_with_and_without_denoising() {
    let dir = tempfile::tempdir().unwrap();
    let body = TWO_TARGETS.replace("[sweep]", "[noise]\nsnr_db = 25.0\nseed = 4\n\n[sweep]");
    let cfg = write_config(dir.path(), "noisy.toml", &body);
    let on = run(&["identify", "--config", &cfg, "--denoise", "on"], &dir.path().join("on"));
    let off = run(&["identify", "--config", &cfg, "--denoise", "off"], &dir.path().join("off"));
    for o in [&on, &off] {
        let code = o.status.code().unwrap();
        assert!(code == 0 || code == 3, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(dir.path().join("on/result.json").exists());
    assert!(dir.path().join("off/result.json").exists());
    let cmp: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("on/comparison.json")).unwrap()).unwrap();
    assert!(cmp["denoise_on"]["residual"].is_number());
    assert!(cmp["denoise_off"]["residual"].is_number());
}

#[test]
fn sweep_table_shape_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sweep.toml", TWO_TARGETS);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run(&["sweep", "--config", &cfg, "--seed", "9"], &a).status.success());
    assert!(run(&["sweep", "--config", &cfg, "--seed", "9"], &b).status.success());
    let ta = std::fs::read(a.join("sweep.csv")).unwrap();
    assert_eq!(ta, std::fs::read(b.join("sweep.csv")).unwrap());
    let table = chirp_ident::io::sweep::from_csv(std::str::from_utf8(&ta).unwrap()).unwrap();
    assert_eq!(table.rows.len(), 2);
    assert!(table.rows.iter().all(|r| r.trials == 5));
}

#[test]
fn builtin_sweep_has_nine_points() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["sweep", "--reproduce", "fig8", "--trials", "1"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = chirp_ident::io::sweep::from_csv(&std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap()).unwrap();
    assert_eq!(table.rows.len(), 9);
    assert_eq!(table.rows[8].snr_db, 40.0);
}

#[test]
fn empty_scene_gives_zero_samples() {
    let dir = tempfile::tempdir().unwrap();
    let body = TWO_TARGETS.replace(
        "targets = [\n  { tau = 0.002, f = 30.0, amp = 1.0, phi = 0.25 },\n  { tau = 0.0065, f = -45.0, amp = 0.7, phi = 0.6 },\n]\n",
        "targets = []\n",
    );
    let cfg = write_config(dir.path(), "empty.toml", &body);
    let out = run(&["simulate", "--config", &cfg], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let p = chirp_ident::io::pulse::from_text(&std::fs::read_to_string(dir.path().join("pulse_0.txt")).unwrap()).unwrap();
    assert_eq!(p.len(), 64);
    assert!(p.samples.iter().all(|z| z.norm() == 0.0));
}

#[test]
fn steep_chirp_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let body = TWO_TARGETS.replace("6000.0, -6000.0", "20000.0, -20000.0");
    let cfg = write_config(dir.path(), "steep.toml", &body);
    let out = run(&["simulate", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("chirp rate"));
}

#[test]
fn missing_config_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["simulate"], dir.path()).status.code(), Some(2));
}

#[test]
fn ambiguity_exits_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    // Equal pulses leave delay and Doppler undetermined; the two targets share
    // a beat frequency on every pulse.
    let body = TWO_TARGETS
        .replace("rates = [3000.0, -3000.0, 6000.0, -6000.0]", "rates = [3000.0, -3000.0, 3000.0, -3000.0]")
        .replace("{ tau = 0.0065, f = -45.0, amp = 0.7, phi = 0.6 }", "{ tau = 0.0065, f = 57.0, amp = 0.7, phi = 0.6 }");
    let cfg = write_config(dir.path(), "amb.toml", &body);
    let out = run(&["identify", "--config", &cfg], dir.path());
    assert_ne!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn denoise_eval_writes_table_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let body = TWO_TARGETS
        .replace("N = 64", "N = 16")
        .replace("Tp = 0.16545454545454547", "Tp = 0.046363636363636364")
        .replace("T = 0.17545454545454547", "T = 0.056363636363636364")
        .replace("trials = 5", "trials = 3")
        .replace("[sweep]", "[noise]\nsnr_db = 5.0\nseed = 1\n\n[sweep]");
    let cfg = write_config(dir.path(), "eval.toml", &body);
    let out = run(&["denoise-eval", "--config", &cfg], dir.path());
    let code = out.status.code().unwrap();
    assert!(code == 0 || code == 4, "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(dir.path().join("denoise_eval.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(std::fs::read_to_string(dir.path().join("objective_trace.txt")).unwrap().lines().count() > 0);
}
