use std::path::Path;
use std::process::{Command, Output};

fn flowlab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowlab")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn dry_run_prints_plan_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let o = flowlab(&["--dry", "--seed", "3", "langevin", "--potential", "wedge", "--T", "0.2", "--steps", "1e7"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("experiment: langevin"));
    assert!(text.contains("\"steps\": 10000000"));
    assert!(text.contains("histogram.csv"));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"seed": 1, "experiment": {"margin": {"schedul": {}}}}"#).unwrap();
    let o = flowlab(&["--config", cfg.to_str().unwrap(), "margin"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("schedul"), "{}", stderr(&o));

    let o = flowlab(&["--config", cfg.to_str().unwrap(), "flow"], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let o = flowlab(&["margin", "--rhos", "1:64"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = flowlab(&["langevin", "--steps", "1.5"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = flowlab(&["flow", "--kind", "weightnorm", "--p", "3", "--dry"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"seed": 9, "experiment": {"normloss": {"inits": 4}}}"#).unwrap();
    let o = flowlab(&["--config", cfg.to_str().unwrap(), "--dry", "normloss", "--steps", "50"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("\"inits\": 4") && text.contains("\"steps\": 50") && text.contains("seed: 9"), "{text}");
}

#[test]
fn run_then_replay_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    std::fs::write(&data, "1,1.0,0.2\n1,0.8,-0.5\n-1,-1.0,0.1\n-1,-0.6,0.7\n").unwrap();
    let out = dir.path().join("run");
    let o = flowlab(
        &["--seed", "1", "--out", out.to_str().unwrap(), "flow", "--kind", "tangent", "--p", "3", "--data", data.to_str().unwrap(), "--steps", "300", "--record-every", "10"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["trace.csv", "summary.json", "final_network.txt", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.starts_with("# format_version=1"));
    assert_eq!(trace.lines().filter(|l| !l.starts_with('#')).count(), 1 + 31);

    let manifest = out.join("manifest.json");
    let o = flowlab(&["--out", dir.path().join("again").to_str().unwrap(), "replay", manifest.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(out.join("trace.csv")).unwrap(), std::fs::read(dir.path().join("again/trace.csv")).unwrap());

    let text = std::fs::read_to_string(&manifest).unwrap();
    let tampered = text.replacen("\"sha256\": \"", "\"sha256\": \"00", 1);
    std::fs::write(&manifest, tampered).unwrap();
    let o = flowlab(&["--out", dir.path().join("third").to_str().unwrap(), "replay", manifest.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("replay mismatch"));
}

#[test]
fn default_output_directory_is_hashed() {
    let dir = tempfile::tempdir().unwrap();
    let o = flowlab(&["--seed", "2", "margin", "--rhos", "1:4:geometric"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let runs: Vec<_> = std::fs::read_dir(dir.path().join("runs")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(runs.len(), 1);
    let name = runs[0].to_str().unwrap().to_string();
    assert!(name.starts_with("margin-") && name.len() == "margin-".len() + 12, "{name}");
    let report = std::fs::read_to_string(dir.path().join("runs").join(&name).join("margin.json")).unwrap();
    assert!(report.contains("\"format_version\": 1") && report.contains("oracle_margin"));
}
