use approx::assert_abs_diff_eq;
use phononmem::analysis::fit_half_life;
use phononmem::model::{ExperimentConfig, ScenarioId};
use phononmem::montecarlo::SimOptions;
use phononmem::scenario::{run, run_with_manifest, EngineKind, Manifest, Scenario, REFERENCE_PULSES};

fn analytic(id: ScenarioId) -> Vec<Vec<f64>> {
    let cfg = ExperimentConfig::default();
    let s = Scenario::new(id, &cfg, EngineKind::Analytic, REFERENCE_PULSES, 1);
    run(&cfg, &s, &SimOptions::default()).unwrap().rows
}

fn csv_of(id: ScenarioId, pulses: u64, seed: u64, workers: usize) -> String {
    let cfg = ExperimentConfig::default();
    let s = Scenario::new(id, &cfg, EngineKind::MonteCarlo, pulses, seed);
    let opts = SimOptions {
        workers,
        chunk_pulses: 1 << 18,
    };
    let mut buf = Vec::new();
    run(&cfg, &s, &opts).unwrap().write_csv(&mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

#[test]
fn absorption_minimum_sits_at_zero_delay() {
    let rows = analytic(ScenarioId::Fig2Absorption);
    let min = rows.iter().min_by(|a, b| a[1].total_cmp(&b[1])).unwrap();
    assert_eq!(min[0], 0.0);
    assert_abs_diff_eq!(min[1], 0.80, epsilon = 1e-3);
    assert_abs_diff_eq!(rows[0][1], 1.0, epsilon = 1e-3);
}

#[test]
fn fig4_starts_at_calibrated_value_and_rises() {
    let rows = analytic(ScenarioId::Fig4G2);
    assert_eq!(rows[0][0], 0.5);
    assert_abs_diff_eq!(rows[0][1], 0.65, epsilon = 1e-3);
    assert!(rows.windows(2).all(|w| w[1][1] > w[0][1]));
    assert!(rows.iter().all(|r| r[2] > 0.0));
}

#[test]
fn readout_signal_decays_with_calibrated_half_life() {
    let rows = analytic(ScenarioId::Fig2Readout);
    let pts: Vec<_> = rows.iter().map(|r| (r[0], r[1])).collect();
    let fit = fit_half_life(&pts).unwrap();
    assert_abs_diff_eq!(fit.half_life_ps, 3.5, epsilon = 1e-3);
    // Blocked-input noise does not depend on storage time.
    assert!(rows.iter().all(|r| (r[3] - rows[0][3]).abs() < 1e-9 * rows[0][3]));
}

#[test]
fn analytic_histogram_has_a_peak_every_period() {
    let rows = analytic(ScenarioId::Fig3Histogram);
    assert_eq!(rows.len(), 1280);
    let total: f64 = rows.iter().map(|r| r[1]).sum();
    let centre: f64 = rows.iter().filter(|r| r[0].abs() < 6.25).map(|r| r[1]).sum();
    let side: f64 = rows.iter().filter(|r| (r[0] - 12.5).abs() < 6.25).map(|r| r[1]).sum();
    assert!(total > 0.0);
    assert!(centre / side > 4.0 && centre / side < 6.0, "ratio {}", centre / side);
}

#[test]
fn rerun_is_byte_identical() {
    for id in [ScenarioId::Fig4G2, ScenarioId::Fig3Histogram, ScenarioId::Custom] {
        assert_eq!(csv_of(id, 2_000_000, 7, 1), csv_of(id, 2_000_000, 7, 1), "{id}");
    }
    assert_ne!(
        csv_of(ScenarioId::Fig4G2, 2_000_000, 7, 1),
        csv_of(ScenarioId::Fig4G2, 2_000_000, 8, 1)
    );
}

#[test]
fn worker_count_does_not_change_output() {
    for id in [ScenarioId::Fig4G2, ScenarioId::Fig2Readout, ScenarioId::Fig3Histogram] {
        assert_eq!(csv_of(id, 3_000_000, 11, 1), csv_of(id, 3_000_000, 11, 8), "{id}");
    }
}

#[test]
fn manifest_reproduces_the_run() {
    let mut cfg = ExperimentConfig::default();
    cfg.detectors.herald.dark_cps = 123.0;
    let s = Scenario::new(ScenarioId::Fig2Absorption, &cfg, EngineKind::MonteCarlo, 200_000, 5);
    let (out, manifest) = run_with_manifest(&cfg, &s, &SimOptions::default()).unwrap();
    let json = serde_json::to_string_pretty(&manifest).unwrap();
    let back: Manifest = serde_json::from_str(&json).unwrap();
    let (cfg2, s2) = back.inputs().unwrap();
    assert_eq!(run(&cfg2, &s2, &SimOptions::default()).unwrap(), out);
}

#[test]
fn invalid_scenarios_are_rejected() {
    let cfg = ExperimentConfig::default();
    let mut s = Scenario::new(ScenarioId::Fig4G2, &cfg, EngineKind::MonteCarlo, 0, 1);
    assert!(run(&cfg, &s, &SimOptions::default()).is_err());
    s.pulses = 10;
    s.grid = vec![2.0, 1.0];
    assert!(run(&cfg, &s, &SimOptions::default()).is_err());
}
