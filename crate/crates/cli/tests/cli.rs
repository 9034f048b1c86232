use std::process::{Command, Output};

fn birdmil(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_birdmil")).args(args).output().unwrap()
}

fn error_kind(out: &Output) -> String {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("an error line");
    let value: serde_json::Value = serde_json::from_str(line).expect("JSON error line");
    value["error"]["kind"].as_str().unwrap().to_string()
}

#[test]
fn missing_wav_is_reported_as_unreadable() {
    let dir = tempfile::tempdir().unwrap();
    let out = birdmil(&[
        "detect",
        dir.path().join("missing.wav").to_str().unwrap(),
        "--out",
        dir.path().join("e.json").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert_eq!(error_kind(&out), "unreadable");
}

#[test]
fn empty_class_directory_fails_manifest() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("empty")).unwrap();
    let out = birdmil(&["manifest", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert_eq!(error_kind(&out), "empty_class");
}

#[test]
fn bad_usage_is_machine_readable() {
    let out = birdmil(&["train", "--mode", "sepia"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out), "usage");
}

#[test]
fn help_succeeds() {
    let out = birdmil(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["synth", "detect", "featurize", "colorize", "train", "eval", "ablate"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}
