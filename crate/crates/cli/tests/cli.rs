use std::process::{Command, Output};

fn lcerod(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lcerod")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn presets_list_and_show() {
    let o = lcerod(&["presets", "list"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("magnetic-bending") && s.contains("buckling"));

    let o = lcerod(&["presets", "show", "buckling"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("kind = \"twisted\""));
    assert!(!lcerod(&["presets", "show", "nonsense"]).status.success());
}

#[test]
fn run_with_overrides_and_rerun_from_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a");
    let o = lcerod(&[
        "run", "--preset", "buckling", "--rbar", "3", "--h", "0.1", "--tau", "0.05", "--T", "1.5", "--snapshot-dt",
        "0.5", "--vtk", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["model"]["rbar"], 3.0);
    assert_eq!(manifest["config"]["flow"]["t_final"], 1.5);
    assert_eq!(manifest["n_elements"], 20);
    // Snapshots at 0, 0.5, 1.0 and 1.5.
    assert_eq!(std::fs::read_dir(out.join("snapshots")).unwrap().count(), 4);

    let again = dir.path().join("b");
    let o = lcerod(&["run", "--config", out.join("manifest.json").to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(out.join("trace.csv")).unwrap(), std::fs::read(again.join("trace.csv")).unwrap());
}

#[test]
fn bad_config_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    let text = std::process::Command::new(env!("CARGO_BIN_EXE_lcerod")).args(["presets", "show", "buckling"]).output().unwrap();
    let text = String::from_utf8(text.stdout).unwrap().replace("kind = \"disc_halfplane\"", "kind = \"file\"\npath = \"missing.json\"");
    std::fs::write(&cfg, text).unwrap();
    let out = dir.path().join("out");
    let o = lcerod(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.json"));
    assert!(!out.exists());
    assert!(!lcerod(&["run", "--out", out.to_str().unwrap()]).status.success());
}

#[test]
fn sweep_and_empty_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sw");
    let o = lcerod(&[
        "sweep", "--preset", "buckling", "--h", "0.2", "--tau", "0.1", "--T", "1", "--param", "rbar", "--values", "1,2,2",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("rbar_1").is_dir() && out.join("rbar_2").is_dir());
    assert_eq!(std::fs::read_to_string(out.join("summary.csv")).unwrap().lines().count(), 3);

    let empty = dir.path().join("none");
    let o = lcerod(&["sweep", "--preset", "buckling", "--param", "rbar", "--values", "--out", empty.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(!empty.exists());
}

#[test]
fn coefficients_on_a_small_square() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c.json");
    let mesh = dir.path().join("m.txt");
    let o = lcerod(&[
        "coefficients", "--section", "square", "--refine", "0", "--order", "p1", "--write-mesh", mesh.to_str().unwrap(),
        "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let c: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(c["M"].as_array().unwrap().len(), 3);
    assert_eq!(c["Eres"].as_array().unwrap().len(), 5);
    assert!(c["q1"].as_f64().unwrap() > 0.0);
    // The written mesh is accepted back.
    let again = dir.path().join("d.json");
    let o = lcerod(&["coefficients", "--mesh", mesh.to_str().unwrap(), "--order", "p1", "--out", again.to_str().unwrap()]);
    assert!(o.status.success());
    let d: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&again).unwrap()).unwrap();
    assert!((c["q2"].as_f64().unwrap() - d["q2"].as_f64().unwrap()).abs() < 1e-12);
}
