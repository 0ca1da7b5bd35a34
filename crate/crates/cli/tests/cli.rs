use std::path::Path;
use std::process::{Command, Output};

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpt-bench"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("exp.cfg");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

const SMALL: &str = "scheme = dpt\ngrid_side = 2\nnum_users = 20\nseeds = 4,5\nmax_iters = 25\n";

#[test]
fn run_verify_plotdata() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = bench(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["metrics.csv", "run.cfg", "dpt-s4.alloc", "dpt-s4.weights", "dpt-s5.weights"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }

    let csv = out.join("metrics.csv");
    let o = bench(&["verify", "--csv", csv.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().filter(|l| l.starts_with("ok")).count(), 2);

    let plot = dir.path().join("plot");
    let o = bench(&["plotdata", "--csv", csv.to_str().unwrap(), "--out", plot.to_str().unwrap()]);
    assert!(o.status.success());
    let index = std::fs::read_to_string(plot.join("index.tsv")).unwrap();
    assert_eq!(index.lines().count(), 3);
    let series = std::fs::read_to_string(plot.join("dpt_seed4.dat")).unwrap();
    assert!(series.lines().count() <= 25);
}

#[test]
fn seed_override_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = bench(&["run", "--config", &cfg, "--seed", "9", "--out", out.to_str().unwrap()]);
        assert!(o.status.success());
        assert!(!out.join("dpt-s4.alloc").exists());
        outputs.push((
            std::fs::read(out.join("metrics.csv")).unwrap(),
            std::fs::read(out.join("dpt-s9.weights")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn tampered_allocation_fails_verify() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "scheme = maxpower\ngrid_side = 2\nnum_users = 20\nseeds = 1\n");
    let out = dir.path().join("out");
    assert!(bench(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let alloc = out.join("maxpower-s1.alloc");
    let text = std::fs::read_to_string(&alloc).unwrap().replacen("1e0", "5e-1", 1);
    std::fs::write(&alloc, text).unwrap();
    let o = bench(&["verify", "--csv", out.join("metrics.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stdout).contains("MISMATCH"));
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    for body in ["scheme = dpt\nlearning_rate = 0.1\n", "grid_side = 2\n", "scheme = dpt\nlr = fast\n"] {
        let cfg = write_config(dir.path(), body);
        let o = bench(&["run", "--config", &cfg]);
        assert_eq!(o.status.code(), Some(1), "{body}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
    }
    let o = bench(&["run", "--config", dir.path().join("absent.cfg").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(bench(&["run"]).status.code(), Some(1));
    assert_eq!(bench(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(bench(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "scheme = abs\ngrid_side = 2\nnum_users = 20\n");
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "not a directory").unwrap();
    let o = bench(&["run", "--config", &cfg, "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = bench(&["plotdata", "--csv", dir.path().join("none.csv").to_str().unwrap(), "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
}
