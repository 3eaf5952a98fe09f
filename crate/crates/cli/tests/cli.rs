use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn elastodyn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_elastodyn"))
        .args(args)
        .env("SOLVER_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn run_small(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "run",
        "--scenario",
        "unit_square_bf",
        "--refine",
        "2,2",
        "--scheme",
        "msbdf2",
        "--dt",
        "1e-3",
        "--t-end",
        "3e-3",
        "--deterministic",
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    elastodyn(&args)
}

fn vtk_files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".vtk"))
        .collect();
    v.sort();
    v
}

#[test]
fn run_writes_one_row_per_step_plus_initial() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_small(dir.path(), &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("series.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], elastodyn::output::SERIES_HEADER);
    assert_eq!(lines.len(), 5);
    let ncol = lines[0].split(',').count();
    for l in &lines[1..] {
        assert_eq!(l.split(',').count(), ncol);
    }
    assert!(vtk_files(dir.path()).is_empty());
    assert!(!String::from_utf8_lossy(&o.stdout).contains("wall time"));
}

#[test]
fn deterministic_runs_are_bit_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(run_small(a.path(), &[]).status.success());
    let o = Command::new(env!("CARGO_BIN_EXE_elastodyn"))
        .args([
            "run",
            "--scenario",
            "unit_square_bf",
            "--refine",
            "2,2",
            "--scheme",
            "msbdf2",
            "--dt",
            "1e-3",
            "--t-end",
            "3e-3",
            "--deterministic",
            "--out",
            b.path().to_str().unwrap(),
        ])
        .env("SOLVER_THREADS", "1")
        .output()
        .unwrap();
    assert!(o.status.success());
    let sa = fs::read(a.path().join("series.csv")).unwrap();
    let sb = fs::read(b.path().join("series.csv")).unwrap();
    assert_eq!(sa, sb);
}

/// Minimal structural reader for legacy ASCII unstructured grids.
fn parse_vtk(text: &str) -> (usize, usize, Vec<u8>, usize) {
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# vtk DataFile Version"));
    lines.next();
    assert_eq!(lines.next().unwrap().trim(), "ASCII");
    assert_eq!(lines.next().unwrap().trim(), "DATASET UNSTRUCTURED_GRID");
    let tokens: Vec<&str> = lines.flat_map(|l| l.split_whitespace()).collect();
    let find = |key: &str| tokens.iter().position(|&t| t == key).unwrap_or_else(|| panic!("{key} missing"));
    let pi = find("POINTS");
    let n_points: usize = tokens[pi + 1].parse().unwrap();
    let ci = find("CELLS");
    let n_cells: usize = tokens[ci + 1].parse().unwrap();
    let size: usize = tokens[ci + 2].parse().unwrap();
    let cells = &tokens[ci + 3..ci + 3 + size];
    let mut k = 0;
    while k < cells.len() {
        let n: usize = cells[k].parse().unwrap();
        for c in &cells[k + 1..k + 1 + n] {
            assert!(c.parse::<usize>().unwrap() < n_points);
        }
        k += n + 1;
    }
    let ti = find("CELL_TYPES");
    let types: Vec<u8> = tokens[ti + 2..ti + 2 + n_cells].iter().map(|t| t.parse().unwrap()).collect();
    let di = find("POINT_DATA");
    let n_data: usize = tokens[di + 1].parse().unwrap();
    (n_points, n_cells, types, n_data)
}

#[test]
fn vtk_snapshots_match_the_mesh() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_small(dir.path(), &["--snapshot-stride", "2"]);
    assert!(o.status.success());
    let files = vtk_files(dir.path());
    assert_eq!(files, ["field_0000.vtk", "field_0002.vtk"]);
    let text = fs::read_to_string(dir.path().join(&files[1])).unwrap();
    let (np, nc, types, nd) = parse_vtk(&text);
    assert_eq!((np, nc, nd), (25, 4, 25));
    assert!(types.iter().all(|&t| t == elastodyn::output::VTK_BIQUADRATIC_QUAD));
    for field in ["displacement", "velocity", "pressure", "jacobian_min"] {
        assert!(text.contains(field), "{field}");
    }
}

#[test]
fn column_snapshot_uses_hexahedra() {
    let dir = tempfile::tempdir().unwrap();
    let o = elastodyn(&[
        "run",
        "--scenario",
        "column",
        "--refine",
        "1x1x2",
        "--nu",
        "0.5",
        "--dt",
        "1e-5",
        "--t-end",
        "1e-5",
        "--snapshot-stride",
        "1",
        "--deterministic",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("field_0001.vtk")).unwrap();
    let (np, nc, types, _) = parse_vtk(&text);
    assert_eq!((np, nc), (3 * 3 * 5, 2));
    assert!(types.iter().all(|&t| t == elastodyn::output::VTK_TRIQUADRATIC_HEXAHEDRON));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        "# small run\n[scenario]\nname = unit_square_iv\nrefine = 2,2\nt_end = 0.01\n[scheme]\nname = febdf2\ndt = 1e-3\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = elastodyn(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--t-end",
        "2e-3",
        "--deterministic",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("series.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3);
}

#[test]
fn converge_with_one_level_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = elastodyn(&[
        "converge",
        "--refine",
        "2,2",
        "--dt",
        "1e-3",
        "--t-end",
        "4e-3",
        "--levels",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("usage error"));
}

#[test]
fn converge_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = elastodyn(&[
        "converge",
        "--refine",
        "2,2",
        "--dt",
        "2e-3",
        "--t-end",
        "8e-3",
        "--levels",
        "3",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let conv = fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    assert_eq!(conv.lines().count(), 1 + 2);
    let orders = fs::read_to_string(dir.path().join("orders.csv")).unwrap();
    assert_eq!(orders.lines().count(), 1 + 9);
}

#[test]
fn stability_sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = elastodyn(&[
        "stability",
        "--scheme",
        "febdf2",
        "--lambda",
        "1,4",
        "--c",
        "0,1",
        "--dt-points",
        "5",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rho = fs::read_to_string(dir.path().join("rho.csv")).unwrap();
    assert_eq!(rho.lines().count(), 1 + 2 * 2 * 5);
    let dtm = fs::read_to_string(dir.path().join("dt_max.csv")).unwrap();
    let rows: Vec<Vec<f64>> = dtm
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 4);
    // lambda 1 -> 4 halves the bound at c = lambda
    assert!((rows[3][2] / rows[1][2] - 0.5).abs() < 1e-4);
}

#[test]
fn bad_input_is_reported() {
    let o = elastodyn(&["run", "--scenario", "nope"]);
    assert!(!o.status.success());
    let o = elastodyn(&["run", "--dt", "1e-3", "--cfl", "0.5"]);
    assert!(!o.status.success());
    let o = elastodyn(&["run", "--scheme", "msbdf2", "--out", "/nonexistent/x"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("dt"));
}
