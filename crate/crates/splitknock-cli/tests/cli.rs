//! End-to-end CLI contract tests, including acceptance criterion 11
//! (byte-identical result payloads for identical flags and seed).

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_splitknock")
}

fn tmp(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli");
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary launches")
}

/// Deterministic toy regression data written as CSV.
fn write_toy_data(n: usize, p: usize, seed: u64) -> (PathBuf, PathBuf) {
    // Simple LCG so the fixture does not depend on library internals.
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
    let mut next = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let beta: Vec<f64> = (0..p).map(|j| if j % 2 == 0 { 3.0 } else { 0.0 }).collect();
    let mut x_csv = String::new();
    let mut y_csv = String::from("y\n");
    for _ in 0..n {
        let row: Vec<f64> = (0..p).map(|_| next() * 2.0).collect();
        let mut y: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
        y += next() * 0.5;
        x_csv.push_str(
            &row.iter()
                .map(|v| format!("{v:.12}"))
                .collect::<Vec<_>>()
                .join(","),
        );
        x_csv.push('\n');
        y_csv.push_str(&format!("{y:.12}\n"));
    }
    let x_path = tmp(&format!("x_{n}_{p}_{seed}.csv"));
    let y_path = tmp(&format!("y_{n}_{p}_{seed}.csv"));
    std::fs::write(&x_path, x_csv).unwrap();
    std::fs::write(&y_path, y_csv).unwrap();
    (x_path, y_path)
}

fn strip_wall_clock(v: &mut Value) {
    if let Some(m) = v.get_mut("manifest").and_then(|m| m.as_object_mut()) {
        m.remove("wall_clock_ms");
    }
}

#[test]
fn acceptance_11_cli_determinism() {
    // filter: identical flags + seed => identical JSON up to the timestamp.
    let (x, y) = write_toy_data(60, 6, 5);
    let out1 = tmp("det1.json");
    let out2 = tmp("det2.json");
    for out in [&out1, &out2] {
        let st = run(&[
            "filter", "--x", x.to_str().unwrap(), "--y", y.to_str().unwrap(),
            "--transform", "identity", "--nu", "1.0", "--q", "0.3",
            "--seed", "11", "--out", out.to_str().unwrap(),
        ]);
        assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    }
    let mut a: Value = serde_json::from_str(&std::fs::read_to_string(&out1).unwrap()).unwrap();
    let mut b: Value = serde_json::from_str(&std::fs::read_to_string(&out2).unwrap()).unwrap();
    strip_wall_clock(&mut a);
    strip_wall_clock(&mut b);
    let filter_ok = a == b;

    // simulate under --jobs 2: CSV outputs byte-identical across runs.
    let csv1 = tmp("sim1.csv");
    let csv2 = tmp("sim2.csv");
    for csv in [&csv1, &csv2] {
        let st = run(&[
            "simulate", "--scenario", "d1", "--n", "60", "--p", "8",
            "--q", "0.3", "--nu-grid", "0:1:0.5", "--reps", "3",
            "--seed", "9", "--jobs", "2", "--out-csv", csv.to_str().unwrap(),
        ]);
        assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    }
    let bytes1 = std::fs::read(&csv1).unwrap();
    let bytes2 = std::fs::read(&csv2).unwrap();
    let agg1 = std::fs::read(tmp("sim1.agg.csv")).unwrap();
    let agg2 = std::fs::read(tmp("sim2.agg.csv")).unwrap();
    let simulate_ok = bytes1 == bytes2 && agg1 == agg2;

    let pass = filter_ok && simulate_ok;
    println!(
        "ACCEPTANCE 11 (CLI determinism): {} - filter JSON identical: {filter_ok}, simulate CSV identical under --jobs 2: {simulate_ok}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}

#[test]
fn filter_json_schema() {
    let (x, y) = write_toy_data(50, 5, 7);
    let st = run(&[
        "filter", "--x", x.to_str().unwrap(), "--y", y.to_str().unwrap(),
        "--transform", "identity", "--nu", "1.0", "--q", "0.3", "--seed", "2",
    ]);
    assert!(st.status.success());
    let v: Value = serde_json::from_slice(&st.stdout).unwrap();
    assert_eq!(v["schema"], "splitknock/1");
    for key in ["W", "Z", "Z_tilde", "r", "T", "selected", "signs"] {
        assert!(v.get(key).is_some(), "missing key {key}");
    }
    assert_eq!(v["W"].as_array().unwrap().len(), 5);
    // Round trip: the parsed value re-serializes to the same structure.
    let again: Value = serde_json::from_str(&v.to_string()).unwrap();
    assert_eq!(v, again);
    // 1-based external indices.
    for idx in v["selected"].as_array().unwrap() {
        let i = idx.as_u64().unwrap();
        assert!((1..=5).contains(&i));
    }
}

#[test]
fn filter_line_and_graph_transforms() {
    let (x, y) = write_toy_data(50, 5, 13);
    let st = run(&[
        "filter", "--x", x.to_str().unwrap(), "--y", y.to_str().unwrap(),
        "--transform", "line", "--nu", "1.0", "--q", "0.3", "--seed", "2",
    ]);
    assert!(st.status.success());
    let v: Value = serde_json::from_slice(&st.stdout).unwrap();
    assert_eq!(v["W"].as_array().unwrap().len(), 4);

    let edges = tmp("edges.csv");
    std::fs::write(&edges, "tail,head\n1,2\n3,4\n5,1\n").unwrap();
    let st = run(&[
        "filter", "--x", x.to_str().unwrap(), "--y", y.to_str().unwrap(),
        "--transform", "graph", "--edges", edges.to_str().unwrap(),
        "--nu", "1.0", "--q", "0.3", "--seed", "2",
    ]);
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let v: Value = serde_json::from_slice(&st.stdout).unwrap();
    assert_eq!(v["W"].as_array().unwrap().len(), 3);
}

#[test]
fn filter_custom_d_dense_and_triplet_agree() {
    let (x, y) = write_toy_data(50, 4, 17);
    let dense = tmp("d_dense.csv");
    std::fs::write(&dense, "1,-1,0,0\n0,1,-1,0\n0,0,1,-1\n").unwrap();
    let triplet = tmp("d_triplet.csv");
    std::fs::write(
        &triplet,
        "row,col,value\n1,1,1\n1,2,-1\n2,2,1\n2,3,-1\n3,3,1\n3,4,-1\n",
    )
    .unwrap();
    let mut payloads = Vec::new();
    for d in [&dense, &triplet] {
        let st = run(&[
            "filter", "--x", x.to_str().unwrap(), "--y", y.to_str().unwrap(),
            "--d", d.to_str().unwrap(), "--nu", "1.0", "--q", "0.3", "--seed", "3",
        ]);
        assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
        let mut v: Value = serde_json::from_slice(&st.stdout).unwrap();
        strip_wall_clock(&mut v);
        // Input digests differ between the two encodings; drop them too.
        v.get_mut("manifest").unwrap().as_object_mut().unwrap().remove("inputs");
        payloads.push(v);
    }
    assert_eq!(payloads[0], payloads[1]);
}

#[test]
fn exit_codes() {
    // no-split without enough rows: validation failure, exit 2, message
    // names the requirement.
    let (x, y) = write_toy_data(7, 4, 19);
    let st = run(&[
        "filter", "--x", x.to_str().unwrap(), "--y", y.to_str().unwrap(),
        "--transform", "identity", "--nu", "1.0", "--q", "0.3", "--no-split",
    ]);
    assert_eq!(st.status.code(), Some(2));
    let err = String::from_utf8_lossy(&st.stderr);
    assert!(err.contains("m + p"), "unexpected message: {err}");

    // Malformed CSV: exit 2 with row/column diagnostics.
    let bad = tmp("bad.csv");
    std::fs::write(&bad, "1.0,2.0\n3.0,oops\n").unwrap();
    let st = run(&[
        "filter", "--x", bad.to_str().unwrap(), "--y", bad.to_str().unwrap(),
        "--transform", "identity", "--nu", "1.0", "--q", "0.3",
    ]);
    assert_eq!(st.status.code(), Some(2));
    let err = String::from_utf8_lossy(&st.stderr);
    assert!(err.contains("row 2") && err.contains("column 2"), "{err}");

    // Boundary rejection in copy-check: n2 = m + p - 1.
    let st = run(&["copy-check", "--random", "3", "3", "5", "--nu", "1.0"]);
    assert_eq!(st.status.code(), Some(2));

    // Unknown flags are usage errors (clap exits 2).
    let st = run(&["filter", "--bogus"]);
    assert_eq!(st.status.code(), Some(2));
}

#[test]
fn copy_check_passes_on_feasible_instance() {
    let st = run(&["copy-check", "--random", "4", "6", "12", "--nu", "0.5", "--seed", "3"]);
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let out = String::from_utf8_lossy(&st.stdout);
    assert!(out.lines().count() >= 7, "six residuals plus header: {out}");
    for line in out.lines().skip(1) {
        let residual: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(residual <= 1e-8);
    }
}

#[test]
fn cv_nu_single_grid_point() {
    let (x, y) = write_toy_data(50, 4, 23);
    let st = run(&[
        "cv-nu", "--x", x.to_str().unwrap(), "--y", y.to_str().unwrap(),
        "--transform", "identity", "--nu-grid", "0.5:0.5:0.2",
        "--folds", "3", "--n1", "30", "--seed", "4",
    ]);
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let out = String::from_utf8_lossy(&st.stdout);
    let first = out.lines().next().unwrap();
    assert!(first.starts_with("nu_star,"));
    let nu: f64 = first.split(',').nth(1).unwrap().parse().unwrap();
    assert!((nu - 10f64.powf(0.5)).abs() < 1e-9);

    // Deterministic per seed.
    let st2 = run(&[
        "cv-nu", "--x", x.to_str().unwrap(), "--y", y.to_str().unwrap(),
        "--transform", "identity", "--nu-grid", "0.5:0.5:0.2",
        "--folds", "3", "--n1", "30", "--seed", "4",
    ]);
    assert_eq!(st.stdout, st2.stdout);
}

#[test]
fn simulate_row_count_law() {
    let csv = tmp("rowcount.csv");
    let st = run(&[
        "simulate", "--scenario", "d2", "--n", "60", "--p", "8",
        "--q", "0.3", "--nu-grid", "0:1:0.5", "--reps", "2",
        "--seed", "1", "--out-csv", csv.to_str().unwrap(),
    ]);
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    // 2 reps x 3 grid points x 2 variants data rows + header.
    assert_eq!(text.lines().count(), 2 * 3 * 2 + 1);
    let header = text.lines().next().unwrap();
    assert_eq!(
        header,
        "scenario,mode,variant,log10_nu,replicate,fdp_dir,mfdp,power,n_selected,threshold"
    );
}

#[test]
fn version_prints_schema() {
    let st = run(&["--version"]);
    assert!(st.status.success());
    let out = String::from_utf8_lossy(&st.stdout);
    assert!(out.contains("schema splitknock/1"), "{out}");
}
