use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use moser::format::{read_field, read_json, write_density, write_homeo, write_measure_csv};
use moser_core::instances;
use moser_core::measure::{AtomicMeasure, Domain};
use moser_core::smoothing::SampledHomeo;
use moser_core::{Grid, GridDensity};
use serde_json::Value;

fn moser(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moser")).arg("--out").arg(out).args(args).output().expect("binary runs")
}

fn summary(o: &Output) -> Value {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("summary is JSON")
}

fn failure(o: &Output) -> (i32, Value) {
    let v: Value = serde_json::from_slice(&o.stderr).expect("error report is JSON");
    (o.status.code().expect("exit code"), v)
}

fn path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn equal_cube_densities_give_the_identity() {
    let dir = tempfile::tempdir().unwrap();
    let inst = instances::interior_bump(65, 0.2).unwrap();
    let g = path(dir.path(), "g.json");
    write_density(&g, &inst.g).unwrap();
    let out = path(dir.path(), "out");
    let v = summary(&moser(&out, &["solve-cube", "--f", s(&g), "--g", s(&g)]));
    assert_eq!(v["u_sup"], 0.0);
    let diag: Value = read_json(&out.join("diagnostics.json")).unwrap();
    assert_eq!(diag["u_sup"], 0.0);
}

#[test]
fn built_in_cube_instance_meets_the_residual_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "out");
    let v = summary(&moser(&out, &["solve-cube"]));
    assert!(v["residual_sup"].as_f64().unwrap() <= 5e-3);
    let m: Value = read_json(&out.join("manifest.json")).unwrap();
    assert_eq!(m["command"], "solve-cube");
    assert_eq!(m["config"]["cube"]["res"], 129);
    let artifacts: Vec<&str> = m["artifacts"].as_array().unwrap().iter().map(|a| a.as_str().unwrap()).collect();
    assert_eq!(artifacts, ["diagnostics.json", "residual.csv", "solution"]);
    let sol = moser::format::read_solution(&out.join("solution")).unwrap();
    assert_eq!(sol.grid().res(), 129);
    let csv = fs::read_to_string(out.join("residual.csv")).unwrap();
    assert!(csv.starts_with("x1,x2,residual\n"));
    assert_eq!(csv.lines().count(), 1 + 129 * 129);
}

#[test]
fn mass_mismatch_exits_with_a_precondition_code() {
    let dir = tempfile::tempdir().unwrap();
    let grid = Grid::cube(2, 1.0, 65).unwrap();
    let f = path(dir.path(), "f.json");
    let g = path(dir.path(), "g.json");
    write_density(&f, &GridDensity::constant(grid, 1.0).unwrap()).unwrap();
    write_density(&g, &GridDensity::constant(grid, 2.0).unwrap()).unwrap();
    let out = path(dir.path(), "out");
    let (code, err) = failure(&moser(&out, &["solve-cube", "--f", s(&f), "--g", s(&g)]));
    assert_eq!(code, 2);
    assert_eq!(err["code"], "mass_mismatch");
    let stored: Value = read_json(&out.join("error.json")).unwrap();
    assert_eq!(stored, err);
}

#[test]
fn missing_input_file_is_a_precondition_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "out");
    let (code, err) = failure(&moser(&out, &["solve-cube", "--f", "nope.json", "--g", "nope.json"]));
    assert_eq!(code, 2);
    assert_eq!(err["code"], "io");
}

#[test]
fn sweep_is_deterministic_and_zero_at_eps_zero() {
    let dir = tempfile::tempdir().unwrap();
    let a = path(dir.path(), "a");
    let b = path(dir.path(), "b");
    let args = ["coercive-sweep", "--res", "65", "--eps", "0.5,0.25,0"];
    summary(&moser(&a, &args));
    summary(&moser(&b, &args));
    let ca = fs::read(a.join("sweep.csv")).unwrap();
    assert_eq!(ca, fs::read(b.join("sweep.csv")).unwrap());
    assert_eq!(fs::read(a.join("sweep.svg")).unwrap(), fs::read(b.join("sweep.svg")).unwrap());
    let text = String::from_utf8(ca).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "eps,dM,box,u_sup,dbar,2MgdM,bound_ok,applicable");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(&rows[2][..6], &[0.0; 6]);
    assert!(rows[0][3] >= rows[1][3]);
}

#[test]
fn torus_solve_writes_maps_and_atlas() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "out");
    let v = summary(&moser(&out, &["solve-torus", "--res", "32"]));
    assert!(v["dbar"].as_f64().unwrap() <= v["dbar_sum"].as_f64().unwrap() + 1e-9);
    let (grid, components, disp) = read_field(&out.join("map.json")).unwrap();
    assert_eq!((grid.res(), components), (32, 2));
    assert!(disp.iter().any(|&d| d != 0.0));
    let atlas: Value = read_json(&out.join("atlas.json")).unwrap();
    assert_eq!(atlas["per_axis"], 2);
}

#[test]
fn identity_homeomorphism_is_left_alone() {
    let dir = tempfile::tempdir().unwrap();
    let grid = Grid::torus(2, 1.0, 32).unwrap();
    let h = path(dir.path(), "h.json");
    write_homeo(&h, &SampledHomeo::identity(grid).unwrap()).unwrap();
    let out = path(dir.path(), "out");
    let v = summary(&moser(&out, &["smooth", "--homeo", s(&h), "--scale", "0.1"]));
    assert!(v["det_defect"].as_f64().unwrap() <= 1e-12);
    assert_eq!(v["dbar_phi_h"], 0.0);
    let (_, _, after) = read_field(&out.join("defect_after.json")).unwrap();
    assert!(after.iter().all(|d| d.abs() <= 1e-12));
}

#[test]
fn sheared_instance_meets_the_determinant_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "out");
    let v = summary(&moser(&out, &["smooth"]));
    assert!(v["det_defect"].as_f64().unwrap() <= 1e-2);
    let lhs = v["dbar_phi_h"].as_f64().unwrap();
    assert!(lhs <= v["dbar_psi1_h"].as_f64().unwrap() + v["dbar_correction"].as_f64().unwrap() + 1e-9);
}

#[test]
fn compressing_input_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let grid = Grid::torus(2, 1.0, 32).unwrap();
    let squeeze = SampledHomeo::from_map(grid, |p| [p[0] + 0.15 * (2.0 * std::f64::consts::PI * p[0]).sin() / (2.0 * std::f64::consts::PI), p[1]], false, 0.0).unwrap();
    let h = path(dir.path(), "h.json");
    write_homeo(&h, &squeeze).unwrap();
    let cfg = path(dir.path(), "c.json");
    fs::write(&cfg, r#"{"smooth": {"area_tol": 1e-3}}"#).unwrap();
    let out = path(dir.path(), "out");
    let (code, err) = failure(&moser(&out, &["--config", s(&cfg), "smooth", "--homeo", s(&h)]));
    assert_eq!(code, 3);
    assert_eq!(err["code"], "not_area_preserving");
}

#[test]
fn isotopy_starts_at_the_identity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = path(dir.path(), "c.json");
    fs::write(&cfg, r#"{"smooth": {"res": 64, "count": 3, "scale": 0.08}}"#).unwrap();
    let out = path(dir.path(), "out");
    let v = summary(&moser(&out, &["--config", s(&cfg), "smooth-isotopy"]));
    assert_eq!(v["identity_start"], true);
    assert!(v["max_ratio"].as_f64().unwrap() <= 2.0);
    let steps = fs::read_to_string(out.join("steps.csv")).unwrap();
    assert_eq!(steps.lines().count(), 3);
    let m: Value = read_json(&out.join("manifest.json")).unwrap();
    let overrides: Vec<&str> = m["overrides"].as_array().unwrap().iter().map(|a| a.as_str().unwrap()).collect();
    assert_eq!(overrides, ["smooth.count", "smooth.res", "smooth.scale"]);
}

fn measure(dir: &Path, name: &str, points: Vec<f64>, weights: Vec<f64>) -> PathBuf {
    let p = path(dir, name);
    write_measure_csv(&p, &AtomicMeasure::new(1, Domain::Cube { side: 1.0 }, points, weights).unwrap()).unwrap();
    p
}

#[test]
fn metric_on_identical_and_two_atom_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let a = measure(dir.path(), "a.csv", vec![0.0], vec![1.0]);
    let b = measure(dir.path(), "b.csv", vec![0.3], vec![1.0]);
    let out = path(dir.path(), "out");
    let same = summary(&moser(&out, &["metric", s(&a), s(&a)]));
    assert_eq!(same["value"], 0.0);
    let v = summary(&moser(&out, &["metric", s(&a), s(&b)]));
    assert!((v["value"].as_f64().unwrap() - 0.3).abs() < 1e-12);
    let report: Value = read_json(&out.join("metric.json")).unwrap();
    for key in ["value", "b", "method", "certificate", "box"] {
        assert!(report.get(key).is_some(), "{key}");
    }
}

#[test]
fn larger_b_never_decreases_the_metric() {
    let dir = tempfile::tempdir().unwrap();
    let a = measure(dir.path(), "a.csv", vec![0.1, 0.8, 0.4], vec![0.7, 1.9, 0.2]);
    let b = measure(dir.path(), "b.csv", vec![0.35, 0.9], vec![1.2, 0.3]);
    let out = path(dir.path(), "out");
    let one = summary(&moser(&out, &["metric", s(&a), s(&b)]))["value"].as_f64().unwrap();
    let two = summary(&moser(&out, &["metric", s(&a), s(&b), "--lid-b", "2"]))["value"].as_f64().unwrap();
    assert!(two >= one - 1e-12, "{two} < {one}");
}

#[test]
fn atom_cap_exits_with_a_size_code() {
    let dir = tempfile::tempdir().unwrap();
    let pts: Vec<f64> = (0..20).map(|i| i as f64 / 20.0).collect();
    let a = measure(dir.path(), "a.csv", pts.clone(), vec![1.0; 20]);
    let b = measure(dir.path(), "b.csv", pts.iter().map(|x| x + 0.01).collect(), vec![1.0; 20]);
    let out = path(dir.path(), "out");
    let (code, err) = failure(&moser(&out, &["metric", s(&a), s(&b), "--atom-cap", "10"]));
    assert_eq!(code, 4);
    assert_eq!(err["code"], "too_many_atoms");
}

#[test]
fn selftest_passes_and_echoes_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "out");
    let v = summary(&moser(&out, &["--seed", "11", "--threads", "2", "selftest"]));
    assert_eq!(v["failed"].as_array().unwrap().len(), 0);
    let m: Value = read_json(&out.join("manifest.json")).unwrap();
    assert_eq!(m["config"]["seed"], 11);
    assert_eq!(m["config"]["threads"], 2);
    assert_eq!(m["overrides"], serde_json::json!(["seed", "threads"]));
}
