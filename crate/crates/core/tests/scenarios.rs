use std::path::Path;
use std::time::Instant;

use lcerod::scenario::{
    preset_buckling, preset_magnetic_bending, read_trace_csv, run_scenario, sweep, CoefficientSource, InitialState,
    ScenarioConfig, Snapshot, SweepParam,
};

fn minimal() -> ScenarioConfig {
    ScenarioConfig::from_toml_str(
        r#"
name = "relaxed"
[rod]
length = 1.0
h = 0.1
[model]
rbar = 0.0
kappa = 1.0
eps = 0.005
[initial]
kind = "straight"
b = [0.0, 1.0, 0.0]
nhat = [0.0, 1.0, 0.0]
[flow]
tau = 0.01
eps_stop = 1e-6
t_final = 1.0
abort_residual = 1e-6
"#,
    )
    .unwrap()
}

fn column<'a>(cols: &'a [(String, Vec<f64>)], name: &str) -> &'a [f64] {
    &cols.iter().find(|c| c.0 == name).unwrap_or_else(|| panic!("no column {name}")).1
}

fn snapshots(dir: &Path) -> Vec<Snapshot> {
    std::fs::read_to_string(dir.join("snapshots.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn uncoupled_straight_rod_converges_in_one_step() {
    let dir = tempfile::tempdir().unwrap();
    let s = run_scenario(&minimal(), dir.path()).unwrap();
    assert_eq!((s.stop_reason.as_str(), s.steps), ("converged", 1));
    let cols = read_trace_csv(dir.path().join("trace.csv")).unwrap();
    assert_eq!(column(&cols, "k"), &[1.0]);
    assert!(column(&cols, "E_total")[0].abs() < 1e-20);
    assert!(dir.path().join("manifest.json").exists());
    // Initial and final state.
    assert_eq!(snapshots(dir.path()).len(), 2);
}

#[test]
fn missing_coefficients_file_writes_nothing() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("run");
    let mut c = minimal();
    c.coefficients = CoefficientSource::File { path: root.path().join("absent.json") };
    let err = run_scenario(&c, &out).unwrap_err();
    assert!(err.to_string().contains("absent.json"), "{err}");
    assert!(!out.exists());
    // An invalid initial frame is caught up front as well.
    let mut c = minimal();
    c.initial = InitialState::Straight { b: [1.0, 0.0, 0.0], nhat: [0.0, 1.0, 0.0] };
    assert!(run_scenario(&c, &out).is_err());
    assert!(!out.exists());
}

#[test]
fn relative_coefficient_paths_follow_the_config_file() {
    let root = tempfile::tempdir().unwrap();
    let sub = root.path().join("cfg");
    std::fs::create_dir(&sub).unwrap();
    lcerod::cross_section::EffectiveCoefficients::disc_halfplane_reference()
        .write_json(sub.join("coeffs.json"))
        .unwrap();
    let mut c = minimal();
    c.coefficients = CoefficientSource::File { path: "coeffs.json".into() };
    std::fs::write(sub.join("run.toml"), c.to_toml_string().unwrap()).unwrap();
    let loaded = ScenarioConfig::load(sub.join("run.toml")).unwrap();
    assert!(loaded.prepare().is_ok());
}

#[test]
fn reduced_magnetic_bending_run() {
    let mut c = preset_magnetic_bending();
    c.rod.h = 1.0 / 50.0;
    c.flow.tau = 1.0 / 100.0;
    c.flow.t_final = 20.0;
    c.output.snapshot_dt = 3.0;
    c.output.vtk = true;
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let s = run_scenario(&c, dir.path()).unwrap();
    let wall = start.elapsed().as_secs_f64();
    assert!(wall < 60.0, "took {wall} s");
    assert_eq!((s.stop_reason.as_str(), s.steps), ("final_time", 2000));
    assert!(s.max_unit_defects.iter().all(|d| *d < 0.05), "{:?}", s.max_unit_defects);

    let cols = read_trace_csv(dir.path().join("trace.csv")).unwrap();
    assert_eq!(column(&cols, "t").len(), 2000);
    let snaps = snapshots(dir.path());
    let times: Vec<f64> = snaps.iter().map(|s| s.t).collect();
    // Cadence 3 plus the field switches at 10 and 20.
    for want in [0.0, 3.0, 6.0, 9.0, 10.0, 12.0, 18.0, 20.0] {
        assert!(times.iter().any(|t| (t - want).abs() < 1e-9), "no snapshot at {want}: {times:?}");
    }
    assert_eq!(std::fs::read_dir(dir.path().join("snapshots")).unwrap().count(), snaps.len());
    let last = snaps.last().unwrap();
    assert_eq!(last.curvature.len(), 100);
    assert_eq!(last.y.len(), 101);
    // The clamped end stays put and the rod has bent.
    assert!(last.y[0].iter().all(|v| v.abs() < 1e-12));
    assert!(last.curvature.iter().cloned().fold(0.0, f64::max) > 0.1);
}

#[test]
fn manifest_reproduces_the_trace() {
    let mut c = preset_buckling(2.0);
    c.rod.h = 0.1;
    c.flow.tau = 0.02;
    c.flow.t_final = 2.0;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_scenario(&c, a.path()).unwrap();
    let again = ScenarioConfig::load(a.path().join("manifest.json")).unwrap();
    assert!(matches!(again.coefficients, CoefficientSource::Inline { .. }));
    run_scenario(&again, b.path()).unwrap();
    let ta = std::fs::read(a.path().join("trace.csv")).unwrap();
    let tb = std::fs::read(b.path().join("trace.csv")).unwrap();
    assert_eq!(ta, tb);
    // The end of the compression phase is captured.
    assert!(snapshots(a.path()).iter().any(|s| (s.t - 1.0).abs() < 1e-9 && (s.y.last().unwrap()[0] - 1.0).abs() < 1e-12));
}

#[test]
fn sweep_deduplicates_and_summarises() {
    let mut c = preset_buckling(1.0);
    c.rod.h = 0.2;
    c.flow.tau = 0.05;
    c.flow.t_final = 1.0;
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("sweep");
    let entries = sweep(&c, SweepParam::Rbar, &[1.0, 3.0, 1.0, 5.0], &out).unwrap();
    assert_eq!(entries.iter().map(|e| e.value).collect::<Vec<_>>(), vec![1.0, 3.0, 5.0]);
    assert!(entries.iter().all(|e| e.outcome.is_ok()));
    for v in ["1", "3", "5"] {
        assert!(out.join(format!("rbar_{v}")).join("trace.csv").exists());
    }
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
    assert!(summary.starts_with("rbar,status"));

    // A failing member is recorded and the rest still run.
    let bad = sweep(&c, SweepParam::Eps, &[-1.0, 0.01], &root.path().join("eps")).unwrap();
    assert!(bad[0].outcome.is_err() && bad[1].outcome.is_ok());
    let summary = std::fs::read_to_string(root.path().join("eps/summary.csv")).unwrap();
    assert!(summary.lines().nth(1).unwrap().contains("failed"));

    let empty = root.path().join("empty");
    assert!(sweep(&c, SweepParam::Rbar, &[], &empty).unwrap().is_empty());
    assert!(!empty.exists());
}
