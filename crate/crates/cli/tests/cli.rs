use std::path::Path;
use std::process::{Command, Output};

fn tfrcast(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tfrcast"))
        .args(args)
        .current_dir(cwd)
        .env_remove("TFR_ENGINE_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Synthetic inputs plus a small annual AR store with uncertainty.
fn store(dir: &Path) {
    let o = tfrcast(&["simulate", "--output-dir", "data", "--countries", "3", "--periods", "25"], dir);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = tfrcast(
        &[
            "run", "--output-dir", "st", "--raw-file", "data/raw.csv", "--ref-file", "data/reference.csv",
            "--annual", "--ar-phase2", "--uncertainty", "--iso-unbiased", "101,102", "--chains", "2",
            "--iters", "150", "--burnin", "50", "--seed", "4",
        ],
        dir,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn workflow_and_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    store(dir);

    assert_eq!(code(&tfrcast(&["continue", "--output-dir", "st", "--iters", "50"], dir)), 0);
    let o = tfrcast(&["predict", "--output-dir", "st", "--end-year", "2030", "--burnin", "100", "--nr-traj", "40"], dir);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let traj = std::fs::read_to_string(dir.join("st/predictions/101.csv")).unwrap();
    assert_eq!(traj.lines().count(), 41);

    let o = tfrcast(&["table", "--output-dir", "st", "--country", "101"], dir);
    let text = stdout(&o);
    assert_eq!(text.lines().next().unwrap(), "year,median,0.025,0.1,0.9,0.975,-0.5child,+0.5child");
    assert!(text.lines().nth(1).unwrap().ends_with(",NA,NA"));
    assert!(!text.lines().last().unwrap().contains("NA"));

    let out = dir.join("sum.csv");
    let o = tfrcast(
        &["summarize", "--output-dir", "st", "--params", "rho_phase2", "--burnin", "100", "--out", out.to_str().unwrap()],
        dir,
    );
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).is_empty());
    assert!(std::fs::read_to_string(&out).unwrap().lines().nth(1).unwrap().starts_with("rho_phase2,"));

    let o = tfrcast(&["estimate", "--output-dir", "st", "--country", "102", "--burnin", "100", "--levels", "0.1,0.5,0.9"], dir);
    assert_eq!(stdout(&o).lines().next().unwrap(), "year,0.1,median,0.9");
    assert_eq!(stdout(&o).lines().count(), 26);

    let o = tfrcast(&["bias-sd", "--output-dir", "st", "--country", "103"], dir);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("source,bias,sd\n"));

    let o = tfrcast(&["diagnose", "--output-dir", "st", "--burnin", "0"], dir);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(dir.join("st/diagnostics/1_0.txt").is_file());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    store(dir);

    assert_eq!(code(&tfrcast(&["--help"], dir)), 0);
    assert_eq!(code(&tfrcast(&["no-such-command"], dir)), 1);
    assert_eq!(code(&tfrcast(&["continue", "--output-dir", "st"], dir)), 1);

    // flags are fixed at creation
    let o = tfrcast(
        &["run", "--output-dir", "st", "--raw-file", "data/raw.csv", "--ref-file", "data/reference.csv", "--uncertainty", "--iters", "20"],
        dir,
    );
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("annual"));

    let o = tfrcast(&["summarize", "--output-dir", "st", "--params", "nope"], dir);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("sigma0"));

    std::fs::write(dir.join("bad.csv"), "country_code,year,tfr,source\n101,abc,2.0,VR\n").unwrap();
    let o = tfrcast(&["bias-sd", "--raw-file", "bad.csv", "--ref-file", "data/reference.csv", "--country", "101"], dir);
    assert_eq!(code(&o), 2);

    let trace = dir.join("st/mc2/sigma0.txt");
    let mut bytes = std::fs::read(&trace).unwrap();
    bytes.extend_from_slice(b"0.5\n");
    std::fs::write(&trace, bytes).unwrap();
    let o = tfrcast(&["continue", "--output-dir", "st", "--iters", "5"], dir);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("sigma0"));
}

#[test]
fn thread_cap_is_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_tfrcast"))
        .args(["simulate", "--output-dir", "d", "--countries", "2", "--periods", "20"])
        .current_dir(tmp.path())
        .env("TFR_ENGINE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
    let o = Command::new(env!("CARGO_BIN_EXE_tfrcast"))
        .args(["simulate", "--output-dir", "d", "--countries", "2", "--periods", "20"])
        .current_dir(tmp.path())
        .env("TFR_ENGINE_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
}
