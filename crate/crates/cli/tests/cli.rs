use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn harmony(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_harmony")).args(args).output().expect("runs")
}

fn trio() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scores/c_to_f_trio.json")
}

fn core_fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name).display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn validate_exit_codes() {
    let ok = harmony(&["validate", trio().to_str().unwrap()]);
    assert_eq!(ok.status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let mut score: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(trio()).unwrap()).unwrap();
    score["measures"][1][1] = 69.into();
    let leap = dir.path().join("leap.json");
    std::fs::write(&leap, score.to_string()).unwrap();
    let bad = harmony(&["validate", leap.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("part vla moves +5"));

    let garbage = dir.path().join("garbage.json");
    std::fs::write(&garbage, "{").unwrap();
    assert_eq!(harmony(&["validate", garbage.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(harmony(&["validate", "/no/such/score.json"]).status.code(), Some(3));
}

#[test]
fn simulate_then_replay_and_mine() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("s.jsonl");
    let sim = harmony(&["simulate", trio().to_str().unwrap(), "--seed", "5", "--log", log.to_str().unwrap()]);
    assert_eq!(sim.status.code(), Some(0), "{}", String::from_utf8_lossy(&sim.stderr));
    assert!(stdout(&sim).contains("sustain   1: C4 F4 A3"));
    assert!(stdout(&sim).contains("EndOfPiece"));

    let rep = harmony(&["replay", log.to_str().unwrap()]);
    assert_eq!(rep.status.code(), Some(0));
    assert!(stdout(&rep).contains("to EndOfPiece"));

    let prefs = harmony(&["prefs", log.to_str().unwrap()]);
    assert_eq!(prefs.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&prefs.stdout).unwrap();
    assert!(report.get("[0,4,7]").is_some() && report.get("[0,5,9]").is_some());
}

#[test]
fn tampered_log_fails_replay() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(core_fixture("golden_trio.jsonl")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let cut: Vec<&str> = lines.iter().enumerate().filter(|(i, _)| *i != 8).map(|(_, l)| *l).collect();
    let path = dir.path().join("cut.jsonl");
    std::fs::write(&path, cut.join("\n") + "\n").unwrap();
    assert_eq!(harmony(&["replay", path.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(harmony(&["replay", &core_fixture("golden_trio.jsonl")]).status.code(), Some(0));
}

#[test]
fn prefs_over_the_fixture() {
    let out = harmony(&["prefs", &core_fixture("preferences.jsonl")]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["[0,4,7]"]["mean_ms"], 6000.0);
    assert_eq!(report["[0,5,9]"]["mean_ms"], 5000.0);
}

#[test]
fn drive_against_the_in_process_camera() {
    let out = harmony(&["drive", "--sim", "--gesture", "downbeat"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("81 01 06 02 18 14"), "{text}");
    assert!(text.contains("downbeat done at"));

    let missing_part = harmony(&["drive", "--sim", "--gesture", "eye_contact"]);
    assert_eq!(missing_part.status.code(), Some(3));
}

#[test]
fn drive_without_a_camera_is_a_runtime_fault() {
    let dead = std::net::UdpSocket::bind("127.0.0.1:0").unwrap();
    let port = dead.local_addr().unwrap().port().to_string();
    drop(dead);
    let out = harmony(&["drive", "--host", "127.0.0.1", "--port", &port, "--gesture", "downbeat"]);
    assert_eq!(out.status.code(), Some(3));
}
