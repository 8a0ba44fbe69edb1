use std::fs;
use std::path::Path;
use std::process::Command;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;
use vctail::cli::{ingest_csv, read_grid_fit, write_grid_fit, ColumnMapping};
use vctail::estimator::fit_grid;
use vctail::simulation::{gen_dataset, SimSetting};
use vctail::{Error, ExecMode, FitConfig, KernelSpec};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vctail"))
}

fn mapping(x: &[&str]) -> ColumnMapping {
    ColumnMapping {
        response: "y".into(),
        x: x.iter().map(|s| s.to_string()).collect(),
        t: vec!["t1".into()],
    }
}

fn write_setting1_csv(path: &Path, n: usize, seed: u64) {
    let setting = SimSetting::new(1, n, 0.1).unwrap();
    let data = gen_dataset(&setting, &mut ChaCha8Rng::seed_from_u64(seed));
    let mut w = csv::Writer::from_path(path).unwrap();
    w.write_record(["y", "x1", "x2", "x3", "t1"]).unwrap();
    for i in 0..data.n() {
        let mut row = vec![data.y(i).to_string()];
        row.extend(data.x_row(i).iter().map(|v| v.to_string()));
        row.push(data.t_row(i)[0].to_string());
        w.write_record(&row).unwrap();
    }
    w.flush().unwrap();
}

fn setting1_args(input: &Path, output: &Path) -> Vec<String> {
    [
        "--input",
        input.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
        "--response",
        "y",
        "--x-cols",
        "x1,x2,x3",
        "--t-cols",
        "t1",
        "--no-intercept",
    ]
    .map(String::from)
    .to_vec()
}

#[test]
fn ingest_small_file() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("d.csv");
    fs::write(&path, "y,x1,t1\n1.5,0.2,0\n2.5,-1,5\n9,3,10\n").unwrap();
    let (data, maps) = ingest_csv(&path, &mapping(&["x1"])).unwrap();
    assert_eq!((data.n(), data.p(), data.q()), (3, 1, 1));
    assert_eq!(data.t_row(1), &[0.5]);
    assert_eq!((maps[0].min, maps[0].max), (0.0, 10.0));
}

#[test]
fn ingest_errors() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("d.csv");
    fs::write(&path, "y,x1,t1\n1.5,0.2,0\n2.5,abc,5\n9,3,10\n").unwrap();
    match ingest_csv(&path, &mapping(&["x1"])) {
        Err(Error::Parse { row, column, .. }) => assert_eq!((row, column.as_str()), (2, "x1")),
        other => panic!("unexpected {other:?}"),
    }
    fs::write(&path, "y,x1,t1\n1.5,0.2,0\n-1,1,5\n9,3,10\n").unwrap();
    assert!(matches!(
        ingest_csv(&path, &mapping(&["x1"])),
        Err(Error::NonPositiveResponse { row: 2, .. })
    ));
    assert!(matches!(
        ingest_csv(&dir.path().join("missing.csv"), &mapping(&["x1"])),
        Err(Error::FileNotFound(_))
    ));
    assert!(matches!(ingest_csv(&path, &mapping(&["x9"])), Err(Error::InvalidConfig(_))));
}

#[test]
fn grid_fit_file_round_trips() {
    let setting = SimSetting::new(1, 400, 0.1).unwrap();
    let data = gen_dataset(&setting, &mut ChaCha8Rng::seed_from_u64(5));
    let cfg = FitConfig::new(KernelSpec::epanechnikov(1), vec![0.25], 1.5, false).unwrap();
    let fit = fit_grid(&data, 21, &cfg, ExecMode::Serial).unwrap();
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("grid.csv");
    write_grid_fit(&path, &fit, &["t1".to_string()]).unwrap();
    let back = read_grid_fit(&path, cfg).unwrap();
    assert_eq!(back.grid, fit.grid);
    for (a, b) in fit.fits.iter().zip(&back.fits) {
        match (a, b) {
            (Ok(a), Ok(b)) => {
                for (x, y) in a.theta.iter().zip(&b.theta) {
                    assert!((x - y).abs() <= 1e-12);
                }
                assert_eq!(a.iterations, b.iterations);
                assert_eq!(a.converged, b.converged);
            }
            (Err(a), Err(b)) => assert_eq!(a.kind, b.kind),
            _ => panic!("status mismatch"),
        }
    }
}

#[test]
fn test_command_writes_table_shape() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("d.csv");
    write_setting1_csv(&input, 500, 11);
    let out = dir.path().join("out");
    let mut args = setting1_args(&input, &out);
    args.extend(["--command", "test", "--bandwidth", "0.3", "--fraction", "0.2", "--serial"].map(String::from));
    let status = bin().args(&args).status().unwrap();
    assert!(status.success());
    let mut reader = csv::Reader::from_path(out.join("tests.csv")).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    for col in ["coefficient", "null", "statistic", "p_value", "rejected"] {
        assert!(header.iter().any(|h| h == col), "missing {col}");
    }
    assert_eq!(reader.records().count(), 6);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 0);
    assert_eq!(manifest["variants"]["xi"], "rosenblatt");
    assert_eq!(manifest["variants"]["discrepancy"], "literal");
    assert_eq!(manifest["data"]["n"], 500);
}

#[test]
fn simulate_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str, serial: bool| {
        let out = dir.path().join(name);
        let mut cmd = bin();
        cmd.args(["--command", "simulate", "--setting", "1", "--n", "200", "--replications", "3", "--seed", "9"])
            .args(["--bandwidth-grid", "0.3,0.5", "--fraction-grid", "0.2,0.1", "--folds", "5", "--grid-size", "11"])
            .arg("--output")
            .arg(&out);
        if serial {
            cmd.arg("--serial");
        }
        assert!(cmd.status().unwrap().success());
        (
            fs::read(out.join("mc_summary.csv")).unwrap(),
            fs::read(out.join("mc_replications.csv")).unwrap(),
        )
    };
    let a = run("a", false);
    assert_eq!(a, run("b", false));
    assert_eq!(a, run("c", true));
}

#[test]
fn tune_and_qq_are_reproducible_across_modes() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("d.csv");
    write_setting1_csv(&input, 300, 3);
    for (command, files) in [("tune", &["cv_table.csv", "dm_table.csv"][..]), ("qq", &["qq.csv"][..])] {
        let run = |name: &str, serial: bool| {
            let out = dir.path().join(name);
            let mut args = setting1_args(&input, &out);
            args.extend(["--command", command, "--seed", "4", "--folds", "5", "--envelope-reps", "100"].map(String::from));
            args.extend(["--bandwidth-grid", "0.2,0.4", "--fraction-grid", "0.25,0.15"].map(String::from));
            if serial {
                args.push("--serial".into());
            }
            assert!(bin().args(&args).status().unwrap().success());
            files.iter().map(|f| fs::read(out.join(f)).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(&format!("{command}-p"), false), run(&format!("{command}-s"), true));
    }
}

#[test]
fn exit_codes_and_error_records() {
    let dir = TempDir::new().unwrap();
    let out = bin()
        .args(["--command", "fit", "--input", "/nonexistent/file.csv", "--response", "y", "--t-cols", "t"])
        .arg("--output")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    let record: serde_json::Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert_eq!(record["error"]["kind"], "FileNotFound");

    let out = bin().args(["--command", "nonsense", "--output", "x"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let out = bin()
        .args(["--command", "simulate", "--alpha", "2"])
        .arg("--output")
        .arg(dir.path().join("o2"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
}

#[test]
fn fit_writes_intervals_and_normal_scores_apply() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("d.csv");
    write_setting1_csv(&input, 400, 8);
    let out = dir.path().join("fit");
    let mut args = setting1_args(&input, &out);
    args.extend(
        ["--command", "fit", "--bandwidth", "0.3", "--fraction", "0.2", "--grid-size", "11", "--normal-score", "x3"]
            .map(String::from),
    );
    assert!(bin().args(&args).status().unwrap().success());
    let mut reader = csv::Reader::from_path(out.join("intervals.csv")).unwrap();
    let mut rows = 0;
    for r in reader.records() {
        let r = r.unwrap();
        let (est, lo, hi): (f64, f64, f64) = (r[3].parse().unwrap(), r[4].parse().unwrap(), r[5].parse().unwrap());
        assert!(lo < est && est < hi);
        rows += 1;
    }
    assert_eq!(rows, 33);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["data"]["normal_score"][0], "x3");
    assert!(manifest["tuning"]["threshold"].as_f64().unwrap() > 1.0);
}
