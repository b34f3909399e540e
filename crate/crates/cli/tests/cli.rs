use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cqbem_cli::config::Geometry;
use cqbem_cli::{CliError, RunConfig};

const QUAD: &str = r#"
geometry = "paper-quad"
rho = 1.5
kappa = 1.2
scheme = "bdf:2"
step = 0.0625
final_time = 1.0
degree = 1
mesh_size = 0.5

[manufactured]
source = [1.5, 1.6]
t_lag = 0.0
"#;

/// Horseshoe with a 9×10 grid; the columns run along the vertical edges, so some points sit on the boundary.
const HORSESHOE: &str = r#"
geometry = "horseshoe"
rho = 1.0
kappa = 100.0
scheme = "bdf:4"
step = 0.0625
final_time = 1.0
degree = 1
mesh_size = 0.25

[sources]
center = [0.0, 0.0]
radius = 0.9
count = 8
t_lag = 0.001

[snapshots]
times = [0.0, 0.06, 0.2, 0.375, 0.75, 1.0]

[snapshots.grid]
x_min = -1.0
x_max = 1.0
y_min = -1.0
y_max = 1.0
nx = 9
ny = 10
"#;

fn run(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("run.toml");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_cqbem"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap()
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map(|r| r.map(|e| e.unwrap().path()).collect())
        .unwrap_or_default();
    v.retain(|p| p.extension().is_some_and(|e| e == "csv"));
    v.sort();
    v
}

#[test]
fn solve_writes_one_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run(dir.path(), QUAD, &["solve", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("densities.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "time,norm_lambda,norm_phi");
    assert_eq!(lines.len(), 17);
    for line in &lines[1..] {
        let vals: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert!(vals.iter().all(|v| v.is_finite()));
    }
    // 17 significant digits
    assert_eq!(lines[1].split(',').next().unwrap(), "6.2500000000000000e-2");
}

#[test]
fn negative_kappa_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &QUAD.replace("kappa = 1.2", "kappa = -1.0"), &["solve"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("kappa"));
}

#[test]
fn unknown_preset_and_bad_scheme_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &QUAD.replace("paper-quad", "triangle"), &["solve"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("geometry"));
    let o = run(dir.path(), &QUAD.replace("bdf:2", "bdf:9"), &["solve"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("scheme"));
    let o = run(dir.path(), &QUAD.replace("step = 0.0625", "step = 0.3"), &["solve"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("step"));
}

#[test]
fn numerical_failures_map_to_exit_three() {
    let e: CliError = cqbem::Error::SingularMatrix("test".into()).into();
    assert_eq!(e.exit_code(), 3);
    let e: CliError = cqbem::Error::InvalidParameter {
        name: "kappa".into(),
        detail: "x".into(),
    }
    .into();
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn reruns_are_byte_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let cfg = QUAD.replace("bdf:2", "radau:2");
    let o = run(dir.path(), &cfg, &["solve", "--out", a.to_str().unwrap(), "--workers", "1"]);
    assert!(o.status.success());
    let o = run(dir.path(), &cfg, &["solve", "--out", b.to_str().unwrap(), "--workers", "3"]);
    assert!(o.status.success());
    let x = fs::read(a.join("densities.csv")).unwrap();
    let y = fs::read(b.join("densities.csv")).unwrap();
    assert_eq!(x, y);
}

#[test]
fn convergence_needs_three_levels() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &format!("levels = 1\n{QUAD}"), &["convergence"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("levels"));
}

#[test]
fn convergence_writes_levels_and_rate_footer() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = format!("levels = 3\n{}", QUAD.replace("step = 0.0625", "step = 0.125"));
    let o = run(dir.path(), &cfg, &["convergence", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("convergence.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "level,k,h,E_phi,E_lambda_0,E_lambda_mhalf");
    assert_eq!(lines.len(), 5);
    let k: Vec<f64> = lines[1..4].iter().map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(k, vec![0.125, 0.0625, 0.03125]);
    let h: Vec<f64> = lines[1..4].iter().map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert!((h[0] / h[1] - 2.0).abs() < 1e-12 && (h[1] / h[2] - 2.0).abs() < 1e-12);
    assert!(lines[4].starts_with("rate,,,"));
    assert_eq!(lines[4].split(',').count(), 6);
}

#[test]
fn fields_write_one_file_per_snapshot_time() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run(dir.path(), HORSESHOE, &["fields", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let files = csv_files(&out);
    assert_eq!(files.len(), 6);
    let log = fs::read_to_string(out.join("fields_skipped.log")).unwrap();
    let skipped: usize = log.split_whitespace().next().unwrap().parse().unwrap();
    assert!(skipped > 0);
    assert_eq!(log.lines().filter(|l| l.starts_with("warning")).count(), skipped);
    let last = fs::read_to_string(&files[5]).unwrap();
    let rows: Vec<&str> = last.lines().skip(1).collect();
    assert_eq!(rows.len() + skipped, 90);
    let mut regions = std::collections::HashSet::new();
    for r in rows {
        let cols: Vec<&str> = r.split(',').collect();
        regions.insert(cols[2].to_string());
        assert!(cols[3].parse::<f64>().unwrap().is_finite());
    }
    assert!(regions.contains("-") && regions.contains("+"));
}

#[test]
fn empty_time_list_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = HORSESHOE.replace("times = [0.0, 0.06, 0.2, 0.375, 0.75, 1.0]", "times = []");
    let o = run(dir.path(), &cfg, &["fields", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(csv_files(&out).is_empty());
}

#[test]
fn weights_dump_lists_every_entry() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = QUAD.replace("step = 0.0625", "step = 0.25");
    let o = run(dir.path(), &cfg, &["weights-dump", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("weights.csv")).unwrap();
    let parsed = RunConfig::from_toml(&cfg).unwrap();
    let poly = parsed.polygon().unwrap();
    let mesh = cqbem::geometry::BoundaryMesh::from_polygon(&poly, 0.5).unwrap();
    let spaces = cqbem::trace_spaces::TraceSpacePair::new(mesh, 1).unwrap();
    let d = spaces.dim_x() + spaces.dim_y();
    assert_eq!(text.lines().count(), 1 + d * d * 5);
}

#[test]
fn config_round_trip_is_canonical() {
    for text in [QUAD, HORSESHOE] {
        let cfg = RunConfig::from_toml(text).unwrap();
        let canonical = cfg.to_toml();
        let again = RunConfig::from_toml(&canonical).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.to_toml(), canonical);
    }
    let cfg = RunConfig::from_toml(&QUAD.replace("\"paper-quad\"", "[[0.0, 0.0], [2.0, 0.0], [0.0, 1.0]]")).unwrap();
    assert!(matches!(cfg.geometry, Geometry::Vertices(ref v) if v.len() == 3));
    assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["paper-quad.toml", "horseshoe.toml"] {
        RunConfig::load(&root.join(name)).unwrap();
    }
}

#[test]
fn unknown_keys_are_rejected() {
    let err = RunConfig::from_toml(&format!("kapa = 3.0\n{QUAD}")).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("kapa"));
}
