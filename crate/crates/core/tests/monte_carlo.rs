use chirp_ident::harness::{run_sweep, run_trials, SweepConfig};
use chirp_ident::io::sweep;
use chirp_ident::presets;
use chirp_ident::specest::crlb_frequency_var_hz;

fn at_snr(snr_db: f64, trials: usize) -> SweepConfig {
    let mut c = presets::threshold_sweep(trials, false, 11);
    c.snr_grid = vec![snr_db];
    c
}

fn bound_hz(snr_db: f64) -> f64 {
    let t = presets::reference_timing(presets::SWEEP_SAMPLES);
    crlb_frequency_var_hz(10f64.powf(snr_db / 10.0), t.n_samples, t.sample_period())
}

#[test]
fn doppler_rmse_tracks_frequency_bound_at_30db() {
    let row = run_sweep(&at_snr(30.0, 200)).unwrap().rows[0];
    let ratio = row.rmse_f_hz / bound_hz(30.0).sqrt();
    assert!(row.failures < 10, "{row:?}");
    assert!((1.0..=5.0).contains(&ratio), "rmse_f {} is {ratio:.2}x the bound", row.rmse_f_hz);
}

#[test]
fn error_variance_not_below_half_the_bound() {
    let cfg = at_snr(40.0, 200);
    let mut t = cfg.template.clone();
    t.snr_db = 40.0;
    let errs: Vec<f64> = run_trials(&t, cfg.trials)
        .unwrap()
        .iter()
        .filter(|o| !o.failed())
        .flat_map(|o| o.errors.iter().map(|e| e.f))
        .collect();
    let n = errs.len() as f64;
    let mean = errs.iter().sum::<f64>() / n;
    let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!(var >= 0.5 * bound_hz(40.0), "var {var:.3e} bound {:.3e}", bound_hz(40.0));
}

#[test]
fn sweep_tables_are_byte_identical_and_sane() {
    let mut c = presets::threshold_sweep(20, false, 5);
    c.snr_grid = vec![0.0, 20.0, f64::INFINITY];
    let a = sweep::to_csv(&run_sweep(&c).unwrap());
    let b = sweep::to_csv(&run_sweep(&c).unwrap());
    assert_eq!(a, b);
    let table = sweep::from_csv(&a).unwrap();
    for r in &table.rows {
        assert!(r.failures <= r.trials);
        if r.failures < r.trials {
            for v in [r.rmse_tau_s, r.rmse_f_hz, r.rmse_amp] {
                assert!(v.is_finite() && v >= 0.0, "{r:?}");
            }
        }
    }
    assert!(table.rows[2].rmse_f_hz < 1e-6);
}
