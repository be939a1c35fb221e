use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_lazymg");

fn run(dir: &Path, config: &str, overrides: &[&str]) -> std::process::Output {
    let path = dir.join("run.cfg");
    std::fs::write(&path, config).unwrap();
    let mut cmd = Command::new(BIN);
    cmd.arg("run").arg("--config").arg(&path);
    for o in overrides {
        cmd.arg("--override").arg(o);
    }
    cmd.output().unwrap()
}

const ROUGH: &str = "# rough material, delayed assembly\nsetup = theta\ntheta = 16\ndepth = 3\nassembly = anarchic\nworkers = 1\n";

#[test]
fn exit_status_encodes_termination() {
    let dir = tempfile::tempdir().unwrap();
    let ok = run(dir.path(), "depth = 2\n", &[]);
    assert_eq!(ok.status.code(), Some(0));
    let csv = String::from_utf8(ok.stdout).unwrap();
    assert!(csv.starts_with("# "));
    assert!(csv.lines().nth(1).unwrap().starts_with("cycle,residual,normalized"));
    assert!(csv.trim_end().ends_with(",converged,0.000"));

    let timeout = run(dir.path(), "depth = 2\n", &["max_cycles=3"]);
    assert_eq!(timeout.status.code(), Some(3));

    let bad = run(dir.path(), "depth = 2\nflux_capacitor = on\n", &[]);
    assert_eq!(bad.status.code(), Some(1));
    let bad = run(dir.path(), "depth = 2\n", &["omega=1.5"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn single_worker_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let out = dir.path().join(name);
        let o = run(dir.path(), ROUGH, &[&format!("output={}", out.display())]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        files.push(std::fs::read_to_string(out).unwrap());
    }
    assert!(files[0] == files[1], "telemetry differs between identical runs");
}

#[test]
fn compare_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a.csv"), dir.path().join("b.csv"), dir.path().join("c.csv"));
    run(dir.path(), ROUGH, &[&format!("output={}", a.display()), "assembly=eager"]);
    run(dir.path(), ROUGH, &[&format!("output={}", b.display())]);
    run(dir.path(), ROUGH, &[&format!("output={}", c.display()), "theta=1"]);

    let cmp = Command::new(BIN).arg("compare").arg(&a).arg(&b).output().unwrap();
    assert_eq!(cmp.status.code(), Some(0));
    let text = String::from_utf8(cmp.stdout).unwrap();
    assert!(text.contains("status,converged,converged"));
    assert!(text.contains("assembly,eager,anarchic"));

    let mismatch = Command::new(BIN).arg("compare").arg(&a).arg(&c).output().unwrap();
    assert_eq!(mismatch.status.code(), Some(1));

    let table = Command::new(BIN).arg("table").arg(&c).output().unwrap();
    assert_eq!(table.status.code(), Some(0));
    let text = String::from_utf8(table.stdout).unwrap();
    assert!(text.starts_with("theta = 1\n"));
}
