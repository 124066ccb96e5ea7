use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hermite-moments"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn short_advection(out: &Path, extra: &[&str]) -> Output {
    let out = out.to_str().unwrap();
    let mut args = vec!["run", "--scenario", "advection", "--n", "16", "--t-final", "1.0", "--out", out];
    args.extend_from_slice(extra);
    run(&args)
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn identical_runs_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(short_advection(&a, &["--set", "reversal_time=0.5", "--snapshot-every", "5"]).status.success());
    assert!(short_advection(&b, &["--set", "reversal_time=0.5", "--snapshot-every", "5"]).status.success());
    let (fa, fb) = (files(&a), files(&b));
    let names: Vec<&str> = fa.iter().map(|(n, _)| n.as_str()).collect();
    assert!(names.contains(&"norms.csv") && names.contains(&"config_echo") && names.contains(&"snapshot_10.csv"));
    for ((na, ca), (nb, cb)) in fa.iter().zip(&fb) {
        assert_eq!(na, nb);
        if na != "config_echo" {
            assert_eq!(ca, cb, "{na} differs");
        }
    }
}

#[test]
fn config_echo_reproduces_the_run() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(short_advection(&a, &["--method", "pen", "--eps", "1e-10", "--set", "reversal_time=0.5"]).status.success());
    let echo = a.join("config_echo");
    let out = run(&["run", "--config", echo.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["norms.csv", "snapshot_0.csv", "snapshot_10.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let strip = |p: &Path| {
        fs::read_to_string(p)
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with("out ="))
            .map(String::from)
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&echo), strip(&b.join("config_echo")));
}

#[test]
fn norms_csv_layout() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("run");
    assert!(short_advection(&dir, &[]).status.success());
    let text = fs::read_to_string(dir.join("norms.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "step,time,l2_A,l2_eps,mass,momentum,kinetic_energy,potential_energy");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 11);
    let first: Vec<f64> = rows[0].split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    assert_eq!(first[1], 0.5);
    for row in &rows {
        assert!(row.split(',').skip(1).all(|v| v.contains('e') && v.parse::<f64>().unwrap().is_finite()));
    }
    let snap = fs::read_to_string(dir.join("snapshot_0.csv")).unwrap();
    assert_eq!(snap.lines().next().unwrap(), "x,v,f");
    assert_eq!(snap.lines().count(), 402);
}

#[test]
fn flags_override_the_config_file() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("cfg");
    fs::write(&cfg, "# short run\nscenario = advection\nn = 8\nt_final = 0.5\n").unwrap();
    let dir = tmp.path().join("run");
    let out = run(&["run", "--config", cfg.to_str().unwrap(), "--n", "16", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success());
    let echo = fs::read_to_string(dir.join("config_echo")).unwrap();
    assert!(echo.lines().any(|l| l == "n = 16"));
    assert!(echo.lines().any(|l| l == "temp = 2.0"));
    assert!(echo.lines().any(|l| l == "dt = 0.1"));
}

#[test]
fn configuration_errors_exit_with_2() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("cfg");
    fs::write(&cfg, "scenario = advection\n\nbogus = 1\n").unwrap();
    let out = run(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3") && err.contains("bogus"), "{err}");
    assert_eq!(err.trim().lines().count(), 1);

    let dir = tmp.path().join("pen");
    assert_eq!(short_advection(&dir, &["--method", "pen"]).status.code(), Some(2));
    assert_eq!(short_advection(&dir, &["--dt", "-0.1"]).status.code(), Some(2));
    assert_eq!(short_advection(&dir, &["--set", "nokey"]).status.code(), Some(2));
}

#[test]
fn solver_failure_exits_with_3() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("run");
    let out = short_advection(
        &dir,
        &["--set", "n=64", "--solver", "gmres", "--tol", "1e-15", "--set", "max_iter=1", "--set", "restart=1"],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gram_dump_to_stdout() {
    let out = run(&["gram", "--n", "2", "--temp", "1"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<Vec<f64>> = text.lines().map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][0], 2f64.sqrt().recip());
    assert_eq!(rows[0][1], 0.0);
    assert_eq!(rows[0][2], -0.25);
    assert!((rows[2][2] - 0.265_165_042_944_955_3).abs() < 1e-16);
}

#[test]
fn operator_dump_to_file() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("d.csv");
    let out = run(&["op", "--kind", "d", "--method", "proj", "--n", "2", "--temp", "2", "--e", "1", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    let text = fs::read_to_string(&path).unwrap();
    let rows: Vec<Vec<f64>> = text.lines().map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert!((rows[1][2] - 1.060_660_171_779_821_3).abs() < 1e-15);
    assert_eq!(rows[1][0], -1.0);
    let bad = run(&["op", "--kind", "q", "--method", "proj", "--n", "2", "--temp", "2"]);
    assert_eq!(bad.status.code(), Some(2));
    let pen = run(&["op", "--kind", "b", "--method", "pen", "--n", "4", "--temp", "2"]);
    assert_eq!(pen.status.code(), Some(2));
}
