use std::path::Path;
use std::process::{Command, Output};

use particle_nmf::matrix::Matrix;
use particle_nmf::pipeline::io::{read_vector_csv, write_matrix_csv};
use particle_nmf::qtransform::{generate_synthetic, SyntheticSpec, TransformLibrary};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_particle-nmf"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_data(dir: &Path) -> std::path::PathBuf {
    let x = generate_synthetic(&SyntheticSpec {
        rows: 20,
        cols: 15,
        rank: 3,
        noise: 0.1,
        seed: 1,
    })
    .unwrap();
    let path = dir.join("x.csv");
    write_matrix_csv(&path, &x).unwrap();
    path
}

#[test]
fn seed_is_required() {
    for sub in [
        &["gen-q", "--output", "lib.json"][..],
        &["posterior"],
        &["calibrate-eps"],
        &["align", "--reference", "a.csv", "--other", "b.csv"],
        &["experiment", "noise"],
        &["experiment", "rank-sweep"],
    ] {
        let o = run(sub);
        assert_eq!(o.status.code(), Some(2), "{sub:?}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("--seed"));
    }
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{not json").unwrap();
    let o = run(&["posterior", "--seed", "1", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&[
        "posterior",
        "--seed",
        "1",
        "--data",
        p(&dir.path().join("none.csv")),
        "--r-nmf",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let data = write_data(dir.path());
    let o = run(&["posterior", "--seed", "1", "--data", p(&data)]);
    assert_eq!(o.status.code(), Some(2), "r_nmf defaults to unset");
    let o = run(&[
        "posterior",
        "--seed",
        "1",
        "--data",
        p(&data),
        "--r-nmf",
        "2",
        "--init",
        "sideways",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_numbers_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.csv");
    std::fs::write(&path, "1,2,3\n4,NaN,6\n7,8,9\n").unwrap();
    let o = run(&[
        "posterior",
        "--seed",
        "1",
        "--data",
        p(&path),
        "--r-nmf",
        "2",
        "--init",
        "random",
    ]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn degenerate_input_exits_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    write_matrix_csv(&a, &Matrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0])).unwrap();
    write_matrix_csv(&b, &Matrix::identity(2, 2)).unwrap();
    let o = run(&[
        "align",
        "--seed",
        "0",
        "--reference",
        p(&a),
        "--other",
        p(&b),
    ]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn align_prints_the_matching() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let m = Matrix::from_row_slice(3, 2, &[1.0, 0.1, 0.2, 1.0, 0.3, 0.4]);
    let swapped = Matrix::from_fn(3, 2, |i, j| m[(i, 1 - j)] * 2.0);
    write_matrix_csv(&a, &m).unwrap();
    write_matrix_csv(&b, &swapped).unwrap();
    let o = run(&[
        "align",
        "--seed",
        "0",
        "--reference",
        p(&a),
        "--other",
        p(&b),
    ]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["permutation"], serde_json::json!([1, 0]));
    assert!(v["cost"].as_f64().unwrap() < 1e-12);
}

#[test]
fn gen_q_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("spec.json");
    std::fs::write(
        &cfg,
        r#"{"datasets": 3, "restarts": 2, "r_svd": 2, "r_t": 2}"#,
    )
    .unwrap();
    let out = dir.path().join("lib.json");
    let o = run(&[
        "gen-q",
        "--seed",
        "4",
        "--config",
        p(&cfg),
        "--restarts",
        "1",
        "--output",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lib = TransformLibrary::load(&out).unwrap();
    assert_eq!(lib.len(), 3);
    assert!(lib.pairs.iter().all(|q| q.r_svd() == 2 && q.r_t() == 2));
}

#[test]
fn calibrate_prints_json() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path());
    let o = run(&[
        "calibrate-eps",
        "--seed",
        "3",
        "--data",
        p(&data),
        "--r-nmf",
        "3",
        "--runs",
        "4",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let objs: Vec<f64> = v["objectives"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect();
    assert_eq!(objs.len(), 4);
    let max = objs.iter().copied().fold(0.0, f64::max);
    assert_eq!(v["epsilon"].as_f64().unwrap(), 1.2 * max);
}

#[test]
fn posterior_with_random_init_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path());
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"r_nmf": 2, "m": 3, "calibration_runs": 5}"#).unwrap();
    let out = dir.path().join("out");
    let o = run(&[
        "posterior",
        "--seed",
        "8",
        "--config",
        p(&cfg),
        "--data",
        p(&data),
        "--m",
        "4",
        "--init",
        "random",
        "--output",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["particles"], 4);
    let w = read_vector_csv(&out.join("weights.csv")).unwrap();
    assert_eq!(w.len(), 4);
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    let a0 = std::fs::read_to_string(out.join("A_0.csv")).unwrap();
    assert_eq!(a0.lines().next().unwrap().split(',').count(), 2);
}

#[test]
fn experiments_print_csv() {
    let o = run(&[
        "experiment",
        "noise",
        "--seed",
        "1",
        "--rows",
        "30",
        "--cols",
        "30",
        "--rank",
        "3",
        "--noise-grid",
        "0,1",
        "--pairs",
        "3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "noise,error_ratio,time_ratio,iteration_ratio,objective_ratio"
    );
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0,"));

    let o = run(&[
        "experiment",
        "rank-sweep",
        "--seed",
        "1",
        "--rows",
        "30",
        "--cols",
        "30",
        "--rank",
        "3",
        "--grid",
        "1,3",
        "--pairs",
        "5",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "r_t,median_init_error,min_init_error,max_init_error"
    );
    assert_eq!(lines.len(), 5);
    assert!(lines[3].starts_with("# best_random_init_error,"));
}
