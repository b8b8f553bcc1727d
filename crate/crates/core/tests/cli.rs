use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nvsd::io::read_numeric_csv;
use nvsd::{gaussian_width_heuristic, DataMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn nvsd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nvsd"))
        .args(args)
        .env("NVSD_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// y depends on the first two of three inputs.
fn write_data(dir: &Path, n: usize, seed: u64) -> (PathBuf, PathBuf) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = String::from("a,b,c\n");
    let mut ys = String::from("y\n");
    for _ in 0..n {
        let r: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        xs.push_str(&format!("{},{},{}\n", r[0], r[1], r[2]));
        ys.push_str(&format!("{}\n", r[0].sin() + r[1] * r[1]));
    }
    let x = dir.join(format!("x{seed}.csv"));
    let y = dir.join(format!("y{seed}.csv"));
    std::fs::write(&x, xs).unwrap();
    std::fs::write(&y, ys).unwrap();
    (x, y)
}

#[test]
fn fit_then_predict_reproduces_fitted_values() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = write_data(dir.path(), 20, 1);
    let model = dir.path().join("m.json");
    let report = dir.path().join("r.json");
    let o = nvsd(&[
        "fit", "--x", s(&x), "--y", s(&y), "--kernel", "gaussian", "--sigma", "auto", "--reg", "l", "--tau", "0.01",
        "--model", s(&model), "--report", s(&report),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    for a in rep["support"].as_array().unwrap() {
        let a = a.as_u64().unwrap();
        assert!((1..=3).contains(&a));
    }

    // The recorded width is the heuristic on the same file.
    let (_, rows) = read_numeric_csv(&x).unwrap();
    let width = gaussian_width_heuristic(&DataMatrix::from_rows(&rows).unwrap(), 20).unwrap();
    assert_eq!(rep["kernel"]["width"].as_f64().unwrap(), width);

    let out = dir.path().join("p.csv");
    let o = nvsd(&["predict", "--model", s(&model), "--x", s(&x), "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    let (header, preds) = read_numeric_csv(&out).unwrap();
    assert_eq!(header, vec!["prediction"]);
    let fitted = rep["fitted_values"].as_array().unwrap();
    assert_eq!(preds.len(), 20);
    for (p, f) in preds.iter().zip(fitted) {
        assert!((p[0] - f.as_f64().unwrap()).abs() <= 1e-8);
    }
}

#[test]
fn group_lasso_without_groups_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = write_data(dir.path(), 10, 2);
    let m = dir.path().join("m.json");
    let o = nvsd(&["fit", "--x", s(&x), "--y", s(&y), "--reg", "gl", "--tau", "0.1", "--model", s(&m)]);
    assert_eq!(code(&o), 2);
    assert!(!m.exists());
}

#[test]
fn group_file_is_one_based() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = write_data(dir.path(), 12, 3);
    let g = dir.path().join("g.json");
    std::fs::write(&g, "[[1, 2], [3]]").unwrap();
    let m = dir.path().join("m.json");
    let o = nvsd(&[
        "fit", "--x", s(&x), "--y", s(&y), "--reg", "gl", "--groups", s(&g), "--tau", "0.01", "--model", s(&m),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    std::fs::write(&g, "[[0, 1], [2]]").unwrap();
    let o = nvsd(&[
        "fit", "--x", s(&x), "--y", s(&y), "--reg", "gl", "--groups", s(&g), "--tau", "0.01", "--model", s(&m),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn malformed_csv_names_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let (_, y) = write_data(dir.path(), 3, 4);
    let x = dir.path().join("bad.csv");
    std::fs::write(&x, "a,b,c\n1,2,3\n4,five,6\n7,8,9\n").unwrap();
    let m = dir.path().join("m.json");
    let o = nvsd(&["fit", "--x", s(&x), "--y", s(&y), "--tau", "0.1", "--model", s(&m)]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.csv:3"), "{err}");
}

#[test]
fn predict_handles_empty_and_wrong_width_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = write_data(dir.path(), 10, 5);
    let m = dir.path().join("m.json");
    let o = nvsd(&["fit", "--x", s(&x), "--y", s(&y), "--sigma", "1", "--tau", "0.1", "--model", s(&m)]);
    assert_eq!(code(&o), 0);

    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let out = dir.path().join("p.csv");
    let o = nvsd(&["predict", "--model", s(&m), "--x", s(&empty), "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    assert!(read_numeric_csv(&out).unwrap().1.is_empty());

    let wide = dir.path().join("wide.csv");
    std::fs::write(&wide, "a,b\n1,2\n").unwrap();
    let o = nvsd(&["predict", "--model", s(&m), "--x", s(&wide), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn path_writes_one_row_per_tau_and_selects() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = write_data(dir.path(), 20, 6);
    let (xv, yv) = write_data(dir.path(), 30, 7);
    let out = dir.path().join("path.csv");
    let m = dir.path().join("sel.json");
    let o = nvsd(&[
        "path", "--x", s(&x), "--y", s(&y), "--sigma", "1", "--reg", "en", "--mu", "grid", "--tau", "1,0.1,0.01",
        "--out", s(&out), "--x-val", s(&xv), "--y-val", s(&yv), "--debias", "--model", s(&m),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 1 + 3 * 5);
    assert!(m.exists());
}

#[test]
fn bench_krls_rows_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str| {
        let raw = dir.path().join(format!("raw{tag}.csv"));
        let agg = dir.path().join(format!("agg{tag}.csv"));
        let o = nvsd(&[
            "bench", "e1", "--methods", "krls", "--sizes", "30", "--reps", "2", "--seed", "7", "--raw", s(&raw),
            "--aggregate", s(&agg),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        (std::fs::read(&raw).unwrap(), std::fs::read_to_string(&agg).unwrap())
    };
    let (raw_a, agg) = run("a");
    let (raw_b, _) = run("b");
    assert_eq!(raw_a, raw_b);

    let mut r = csv::Reader::from_reader(raw_a.as_slice());
    let header: Vec<String> = r.headers().unwrap().iter().map(str::to_string).collect();
    let sel = header.iter().position(|h| h == "selection_error").unwrap();
    let size = header.iter().position(|h| h == "support_size").unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 2);
    for row in &rows {
        let e: f64 = row[sel].parse().unwrap();
        assert!((e - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(&row[size], "18");
    }
    assert!(agg.starts_with("experiment,metric,method,statistic,n=30"));
}

#[test]
fn bench_rejects_unknown_method() {
    let o = nvsd(&["bench", "e2", "--methods", "svm", "--sizes", "30", "--reps", "1"]);
    assert_eq!(code(&o), 2);
}
