use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn contagion(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_contagion"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = contagion(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

fn json(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&read(dir, name)).unwrap()
}

const MAPPING: &str = r#"{"date_column": "date", "date_format": "%Y-%m-%d", "mark_column": "victims",
    "mark_rule": "as_is", "window_start": "2005-02-01", "window_end": "2005-03-31"}"#;

fn setup() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "mapping.json", MAPPING);
    write(
        dir.path(),
        "poisson.json",
        r#"{"mu": 0.5, "g": {"edges": [0, 1], "values": [0]}, "k": {"edges": [1, 2], "values": [0]}}"#,
    );
    dir
}

#[test]
fn ingest_sorts_and_summarizes() {
    let dir = setup();
    let d = dir.path();
    write(
        d,
        "raw.csv",
        "date,victims\n2005-02-10,4\n2005-02-01,3\n2006-01-01,5\n",
    );
    ok(
        d,
        &[
            "ingest",
            "--input",
            "raw.csv",
            "--mapping",
            "mapping.json",
            "--out",
            "out",
        ],
    );
    assert_eq!(
        read(d, "out/catalog.csv"),
        "date,victims\n2005-02-01,3\n2005-02-10,4\n"
    );
    let s = json(d, "out/summary.json");
    assert_eq!(s["n"], 2);
    assert_eq!(s["T"], 59.0);
    assert_eq!(s["dropped_outside_window"], 1);
    assert_eq!(s["monthly_counts"][0]["month"], "2005-02");
    assert_eq!(s["monthly_counts"][0]["count"], 2);
    assert_eq!(s["monthly_counts"][1]["count"], 0);
    let meta = json(d, "out/catalog.meta.json");
    assert_eq!(meta["window_end"], "2005-03-31");
    let m = json(d, "out/manifest.json");
    assert_eq!(m["command"], "ingest");
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(m["input_digests"].as_object().unwrap().len(), 2);
}

#[test]
fn ingest_missing_column_exits_2() {
    let dir = setup();
    let d = dir.path();
    write(d, "raw.csv", "day,victims\n2005-02-10,4\n");
    let out = contagion(
        d,
        &[
            "ingest",
            "--input",
            "raw.csv",
            "--mapping",
            "mapping.json",
            "--out",
            "out",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("date"), "{err}");
    assert!(err.contains("raw.csv"), "{err}");
}

#[test]
fn ingest_bad_row_names_row() {
    let dir = setup();
    let d = dir.path();
    write(d, "raw.csv", "date,victims\n2005-02-10,notanumber\n");
    let out = contagion(
        d,
        &[
            "ingest",
            "--input",
            "raw.csv",
            "--mapping",
            "mapping.json",
            "--out",
            "out",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 2"));
}

#[test]
fn ingest_empty_window_is_success() {
    let dir = setup();
    let d = dir.path();
    write(d, "raw.csv", "date,victims\n2010-01-01,4\n");
    ok(
        d,
        &[
            "ingest",
            "--input",
            "raw.csv",
            "--mapping",
            "mapping.json",
            "--out",
            "out",
        ],
    );
    assert_eq!(json(d, "out/summary.json")["n"], 0);
}

#[test]
fn single_event_fit_has_mu_one_over_t() {
    let dir = setup();
    let d = dir.path();
    write(d, "raw.csv", "date,victims\n2005-02-10,4\n");
    ok(
        d,
        &[
            "ingest",
            "--input",
            "raw.csv",
            "--mapping",
            "mapping.json",
            "--out",
            "cat",
        ],
    );
    ok(d, &["fit", "--input", "cat/catalog.csv", "--out", "fit"]);
    let m = json(d, "fit/model.json");
    assert!((m["mu"].as_f64().unwrap() - 1.0 / 59.0).abs() < 1e-15);
    assert_eq!(m["converged"], true);
    let off = json(d, "fit/offspring.json");
    assert_eq!(off["diagonal_mass_fraction"], 1.0);
}

#[test]
fn non_convergence_exits_0_with_warning() {
    let dir = setup();
    let d = dir.path();
    write(
        d,
        "raw.csv",
        "date,victims\n2005-02-01,3\n2005-02-02,4\n2005-02-03,3\n2005-02-20,6\n2005-03-01,3\n",
    );
    ok(
        d,
        &[
            "ingest",
            "--input",
            "raw.csv",
            "--mapping",
            "mapping.json",
            "--out",
            "cat",
        ],
    );
    let out = ok(
        d,
        &[
            "fit",
            "--input",
            "cat/catalog.csv",
            "--time-edges",
            "0,3,30",
            "--mark-edges",
            "3,4",
            "--max-iter",
            "2",
            "--dump-p",
            "--out",
            "fit",
        ],
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("not converged"));
    let m = json(d, "fit/model.json");
    assert_eq!(m["converged"], false);
    assert_eq!(m["iterations"], 2);

    let g = read(d, "fit/g_plot.csv");
    assert!(g.starts_with("lo,hi,value,se,lower,upper\n"));
    for line in g.lines().skip(1) {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert!(cols[4] >= 0.0 && cols[4] <= cols[2] && cols[5] >= cols[2]);
    }
    assert!(read(d, "fit/k_plot.csv").contains(",inf,"));

    let p = read(d, "fit/p_matrix.csv");
    let mut rows = [0.0; 5];
    for line in p.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let i: usize = f[0].parse().unwrap();
        let j: usize = f[1].parse().unwrap();
        assert!(j >= 1 && j <= i);
        rows[i - 1] += f[2].parse::<f64>().unwrap();
    }
    assert!(rows.iter().all(|s| (s - 1.0).abs() < 1e-10));
}

#[test]
fn superthin_at_true_homogeneous_rate_returns_catalog() {
    let dir = setup();
    let d = dir.path();
    write(
        d,
        "raw.csv",
        "date,victims\n2005-02-01,3\n2005-02-09,4\n2005-03-20,3\n",
    );
    ok(
        d,
        &[
            "ingest",
            "--input",
            "raw.csv",
            "--mapping",
            "mapping.json",
            "--out",
            "cat",
        ],
    );
    ok(
        d,
        &[
            "superthin",
            "--input",
            "cat/catalog.csv",
            "--model",
            "poisson.json",
            "--b",
            "fixed:0.5",
            "--seed",
            "1",
            "--out",
            "thin",
        ],
    );
    assert_eq!(
        read(d, "thin/residual.csv"),
        "t,label\n0,retained\n8,retained\n47,retained\n"
    );
    let u = json(d, "thin/uniformity.json");
    assert_eq!(u["n"], 3);
    assert_eq!(u["simulated"], 0);
    let hist = read(d, "thin/residual_histogram.csv");
    assert_eq!(hist, "month,count\n2005-02,2\n2005-03,1\n");
}

#[test]
fn superthin_rejects_events_outside_window() {
    let dir = setup();
    let d = dir.path();
    write(d, "cat.csv", "date,victims\n2005-02-01,3\n2005-05-01,3\n");
    write(
        d,
        "cat.meta.json",
        r#"{"window_start": "2005-02-01", "window_end": "2005-03-31", "T": 59}"#,
    );
    let out = contagion(
        d,
        &[
            "superthin",
            "--input",
            "cat.csv",
            "--model",
            "poisson.json",
            "--seed",
            "1",
            "--out",
            "thin",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("outside"));
}

#[test]
fn bad_rate_mode_and_usage_errors_exit_2() {
    let dir = setup();
    let d = dir.path();
    write(d, "raw.csv", "date,victims\n2005-02-01,3\n");
    ok(
        d,
        &[
            "ingest",
            "--input",
            "raw.csv",
            "--mapping",
            "mapping.json",
            "--out",
            "cat",
        ],
    );
    let out = contagion(
        d,
        &[
            "superthin",
            "--input",
            "cat/catalog.csv",
            "--model",
            "poisson.json",
            "--b",
            "max",
            "--seed",
            "1",
            "--out",
            "x",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    // randomized commands have no default seed
    let out = contagion(
        d,
        &[
            "superthin",
            "--input",
            "cat/catalog.csv",
            "--model",
            "poisson.json",
            "--out",
            "x",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    let out = contagion(d, &["fit", "--input", "missing.csv", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_is_reproducible_and_refuses_supercritical() {
    let dir = setup();
    let d = dir.path();
    write(
        d,
        "model.json",
        r#"{"mu": 0.3, "g": {"edges": [0, 5], "values": [0.2]}, "k": {"edges": [1, 3, 1.7976931348623157e308], "values": [0.2, 0.6]}}"#,
    );
    write(d, "marks.json", r#"{"1": 0.5, "4": 0.5}"#);
    for out in ["a", "b"] {
        ok(
            d,
            &[
                "simulate",
                "--model",
                "model.json",
                "--T",
                "400",
                "--marks",
                "marks.json",
                "--seed",
                "7",
                "--out",
                out,
            ],
        );
    }
    for f in [
        "catalog.csv",
        "catalog.meta.json",
        "events.csv",
        "simulation.json",
    ] {
        assert_eq!(
            read(d, &format!("a/{f}")),
            read(d, &format!("b/{f}")),
            "{f}"
        );
    }
    let s = json(d, "a/simulation.json");
    assert!((s["branching_ratio"].as_f64().unwrap() - 0.4).abs() < 1e-12);
    ok(
        d,
        &[
            "fit",
            "--input",
            "a/events.csv",
            "--time-edges",
            "0,5",
            "--mark-edges",
            "1,3",
            "--out",
            "fit",
        ],
    );

    write(
        d,
        "hot.json",
        r#"{"mu": 0.3, "g": {"edges": [0, 5], "values": [0.2]}, "k": {"edges": [1, 3, 1.7976931348623157e308], "values": [1.0, 1.5]}}"#,
    );
    let out = contagion(
        d,
        &[
            "simulate",
            "--model",
            "hot.json",
            "--T",
            "50",
            "--marks",
            "marks.json",
            "--seed",
            "1",
            "--out",
            "c",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    ok(
        d,
        &[
            "simulate",
            "--model",
            "hot.json",
            "--T",
            "20",
            "--marks",
            "marks.json",
            "--seed",
            "1",
            "--allow-supercritical",
            "--out",
            "c",
        ],
    );
}

#[test]
fn report_on_homogeneous_model_is_mu_times_days() {
    let dir = setup();
    let d = dir.path();
    write(d, "raw.csv", "date,victims\n2005-02-03,3\n2005-03-04,4\n");
    ok(
        d,
        &[
            "ingest",
            "--input",
            "raw.csv",
            "--mapping",
            "mapping.json",
            "--out",
            "cat",
        ],
    );
    ok(
        d,
        &[
            "report",
            "--input",
            "cat/catalog.csv",
            "--model",
            "poisson.json",
            "--monthly",
            "--out",
            "rep",
        ],
    );
    assert_eq!(
        read(d, "rep/monthly.csv"),
        "month,observed,expected\n2005-02,1,14\n2005-03,1,15.5\n"
    );
    assert_eq!(
        read(d, "rep/intensity.csv"),
        "t,victims,lambda\n2,3,0.5\n31,4,0.5\n"
    );
}

#[test]
fn baseline_day_one_increment() {
    let dir = setup();
    let d = dir.path();
    write(d, "raw.csv", "date,victims\n2005-02-11,4\n");
    write(
        d,
        "towers.json",
        r#"{"t_excite": 13, "n_secondary": 0.3, "n0": 0.01}"#,
    );
    ok(
        d,
        &[
            "ingest",
            "--input",
            "raw.csv",
            "--mapping",
            "mapping.json",
            "--out",
            "cat",
        ],
    );
    ok(
        d,
        &[
            "baseline",
            "--input",
            "cat/catalog.csv",
            "--config",
            "towers.json",
            "--out",
            "base",
        ],
    );
    let report = json(d, "base/comparison.json");
    let daily = report["daily"].as_array().unwrap();
    assert_eq!(daily.len(), 59);
    let inc = daily[11]["towers"].as_f64().unwrap() - daily[10]["towers"].as_f64().unwrap();
    assert!((inc - 0.3 * (1.0 - (-1.0f64 / 13.0).exp())).abs() < 1e-15);
    assert!(report["hawkes_mean_offspring"].is_null());
    let csv = read(d, "base/daily.csv");
    assert!(csv.starts_with("day,date,observed,towers,hawkes\n0,2005-02-01,0,0.01,\n"));

    ok(
        d,
        &[
            "baseline",
            "--input",
            "cat/catalog.csv",
            "--config",
            "towers.json",
            "--model",
            "poisson.json",
            "--out",
            "both",
        ],
    );
    let report = json(d, "both/comparison.json");
    assert_eq!(report["hawkes_mean_offspring"], 0.0);
    assert_eq!(report["daily"][0]["hawkes"], 0.5);
}
