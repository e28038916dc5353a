use std::fs;
use std::path::{Path, PathBuf};

use mmqr::sim::{sample_hetero, ErrorDistribution};
use mmqr_cli::{load_csv, run, CliError};
use tempfile::TempDir;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn sim_csv(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let s = sample_hetero(ErrorDistribution::Normal, n, seed).unwrap();
    let mut text = String::from("y,x\n");
    for (x, y) in s.x().iter().zip(s.y()) {
        text.push_str(&format!("{y},{x}\n"));
    }
    write(dir, "sim.csv", &text)
}

fn go(args: &[&str]) -> i32 {
    let mut argv = vec!["mmqr"];
    argv.extend_from_slice(args);
    run(argv)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn load_csv_prepends_intercept() {
    let dir = TempDir::new().unwrap();
    let p = write(dir.path(), "a.csv", "y,x1,x2\n1,0.5,2\n2,1.5,1\n3,2.0,5\n4,3.5,3\n");
    let loaded = load_csv(&p, "y").unwrap();
    assert_eq!((loaded.data.n(), loaded.data.p()), (4, 3));
    assert_eq!(loaded.terms, ["intercept", "x1", "x2"]);
    assert!(loaded.digest.starts_with("sha256:"));
    assert_eq!(loaded.data.x().column(0).to_vec(), vec![1.0; 4]);
}

#[test]
fn load_csv_errors() {
    let dir = TempDir::new().unwrap();
    let three = write(dir.path(), "three.csv", "y,x1,x2\n1,0.5,2\n2,1.5,1\n3,2.0,5\n");
    assert_eq!(load_csv(&three, "y").unwrap_err().category(), "domain");

    let dup = write(dir.path(), "dup.csv", "y,a,b\n1,1,1\n2,2,2\n3,4,4\n5,3,3\n");
    match load_csv(&dup, "y").unwrap_err() {
        CliError::Rank { column, earlier } => {
            assert_eq!(column, "b");
            assert!(earlier.contains("`a`"));
        }
        other => panic!("unexpected {other:?}"),
    }

    let bad = write(dir.path(), "bad.csv", "y,x1,x2\n1,2,3\n4,oops,6\n");
    match load_csv(&bad, "y").unwrap_err() {
        CliError::Cell { line, column, .. } => assert_eq!((line, column.as_str()), (3, "x1")),
        other => panic!("unexpected {other:?}"),
    }

    let missing = write(dir.path(), "missing.csv", "y,x1\n1,\n2,3\n");
    assert_eq!(load_csv(&missing, "y").unwrap_err().category(), "csv");
    assert!(matches!(load_csv(&dup, "mort"), Err(CliError::MissingColumn(_))));
}

#[test]
fn fit_is_byte_reproducible_and_writes_manifest() {
    let dir = TempDir::new().unwrap();
    let data = sim_csv(dir.path(), 200, 1);
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for out in [&a, &b] {
        assert_eq!(go(&["fit", "--data", s(&data), "--q", "0.25,0.5", "--out", s(out)]), 0);
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "term,q=0.25,q=0.5");
    assert!(lines[1].starts_with("intercept,"));
    assert_eq!(lines.len(), 3);
    let manifest = fs::read_to_string(dir.path().join("a.csv.manifest.toml")).unwrap();
    assert!(manifest.contains("subcommand = \"fit\""));
    assert!(manifest.contains("sha256:"));
}

#[test]
fn curves_shape() {
    let dir = TempDir::new().unwrap();
    let data = sim_csv(dir.path(), 150, 2);
    let out = dir.path().join("c.csv");
    assert_eq!(go(&["curves", "--data", s(&data), "--basis", "logistic", "--grid", "9", "--out", s(&out)]), 0);
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "q,intercept,x");
    assert_eq!(lines.len(), 10);
    assert!(lines[1].starts_with("0.1,"));
}

#[test]
fn lasso_writes_path_and_sorted_coefficients() {
    let dir = TempDir::new().unwrap();
    let mut text = String::from("y,x1,x2,x3\n");
    let s1 = sample_hetero(ErrorDistribution::Normal, 120, 5).unwrap();
    for (i, (x, y)) in s1.x().iter().zip(s1.y()).enumerate() {
        let (z2, z3) = (((i * 37) % 17) as f64 / 17.0, ((i * 11) % 13) as f64 / 13.0);
        text.push_str(&format!("{y},{x},{z2},{z3}\n"));
    }
    let data = write(dir.path(), "l.csv", &text);
    let out = dir.path().join("coef.csv");
    let code = go(&["lasso", "--data", s(&data), "--lambda-grid", "0.001:0.5:5", "--max-iter", "500", "--out", s(&out)]);
    assert_eq!(code, 0);
    let coef = fs::read_to_string(&out).unwrap();
    let path = fs::read_to_string(dir.path().join("coef.csv.path.csv")).unwrap();
    assert_eq!(path.lines().count(), 6);
    assert_eq!(path.lines().skip(1).filter(|l| l.ends_with(",1")).count(), 1);
    let mags: Vec<f64> =
        coef.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap().abs()).collect();
    assert_eq!(mags.len(), 4);
    assert!(mags.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn transform_then_cv() {
    let dir = TempDir::new().unwrap();
    let data = sim_csv(dir.path(), 60, 3);
    let t = dir.path().join("t.csv");
    assert_eq!(go(&["transform", "--data", s(&data), "--knots", "seq4", "--out", s(&t)]), 0);
    let header = fs::read_to_string(&t).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "y,x,x_s1,x_s2");
    let cv = dir.path().join("cv.csv");
    let code = go(&[
        "cv", "--data", s(&data), "--knots", "seq3;seq4", "--basis", "logistic;ns:seq3", "--folds", "5", "--grid", "19",
        "--max-iter", "200", "--tol", "1e-6", "--out", s(&cv),
    ]);
    assert_eq!(code, 0);
    let text = fs::read_to_string(&cv).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.contains("seq4,\"ns:0.25,0.5,0.75\","));
}

#[test]
fn dk_and_lcv_shapes() {
    let dir = TempDir::new().unwrap();
    let data = sim_csv(dir.path(), 80, 4);
    let out = dir.path().join("dk.csv");
    let code = go(&["dk", "--data", s(&data), "--h1", "0.2", "--h2", "0.01", "--quantiles", "0.1,0.5", "--points", "5", "--out", s(&out)]);
    assert_eq!(code, 0);
    let rows: Vec<Vec<f64>> = fs::read_to_string(&out)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 10);
    for pair in rows.chunks(2) {
        assert!(pair[0][2] <= pair[1][2]);
    }
    let lcv = dir.path().join("lcv.csv");
    assert_eq!(go(&["lcv", "--data", s(&data), "--h1", "0.1,0.3", "--h2", "0.01,0.1", "--out", s(&lcv)]), 0);
    assert_eq!(fs::read_to_string(&lcv).unwrap().lines().count(), 5);
}

#[test]
fn simulate_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let sc = write(
        dir.path(),
        "normal.toml",
        "model = \"hetero\"\ndist = \"normal\"\nn = 60\nreplicates = 3\nseed = 9\n\
         estimators = [\"separate\", \"mm:logistic\"]\nquantiles = [0.25, 0.5]\ngrid = 19\n",
    );
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    assert_eq!(go(&["simulate", "--scenario", s(&sc), "--out", s(&a)]), 0);
    assert_eq!(go(&["--threads", "1", "simulate", "--scenario", s(&sc), "--out", s(&b)]), 0);
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    assert_eq!(text.lines().next().unwrap(), "method,q=0.25,q=0.5");
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn imse_of_constant_offset() {
    let dir = TempDir::new().unwrap();
    let p = write(dir.path(), "p.csv", "1.5,2.5,3.5\n0.5,0.5,0.5\n");
    let t = write(dir.path(), "t.csv", "1,2,3\n0,0,0\n");
    let out = dir.path().join("i.csv");
    assert_eq!(go(&["imse", "--predicted", s(&p), "--truth", s(&t), "--out", s(&out)]), 0);
    let v: f64 = fs::read_to_string(&out).unwrap().lines().nth(1).unwrap().parse().unwrap();
    assert!((v - 0.75).abs() < 1e-15);
}

#[test]
fn error_exit_codes() {
    assert_eq!(go(&["fit", "--data", "/definitely/not/here.csv"]), 1);
    assert_eq!(go(&["fit", "--bogus-flag"]), 2);
    assert_eq!(go(&["curves", "--data", "x.csv", "--basis", "ns:0.5"]), 1);
    let dir = TempDir::new().unwrap();
    let data = sim_csv(dir.path(), 30, 6);
    assert_eq!(go(&["fit", "--data", s(&data), "--q", "1.5"]), 1);
    assert_eq!(go(&["dk", "--data", s(&data), "--h1=-1"]), 1);
}
