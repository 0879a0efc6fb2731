use std::fs;
use std::process::Command;

fn mots() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mots"));
    c.env_remove("MOTS_OUT_DIR");
    c
}

const ARTIFACTS: [&str; 4] = ["capture.pcap", "listing.txt", "forged.sidecar", "report.txt"];

#[test]
fn run_writes_identical_artifacts_for_same_seed() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let st = mots().args(["run", "--experiment", "3", "--seed", "7", "--out"]).arg(d.path()).status().unwrap();
        assert!(st.success());
    }
    for name in ARTIFACTS {
        let a = fs::read(dirs[0].path().join("exp3").join(name)).unwrap();
        let b = fs::read(dirs[1].path().join("exp3").join(name)).unwrap();
        assert!(!a.is_empty() || name == "forged.sidecar");
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn output_dir_from_environment() {
    let d = tempfile::tempdir().unwrap();
    let st = mots().env("MOTS_OUT_DIR", d.path()).args(["run", "-e", "baseline-http"]).status().unwrap();
    assert!(st.success());
    for name in ARTIFACTS {
        assert!(d.path().join("baseline-http").join(name).exists(), "{name}");
    }
}

#[test]
fn matrix_reproduces_overlap_row() {
    let out = mots().args(["matrix", "--seed", "7"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for (col, state) in [("exp1", "fired"), ("exp2", "fired"), ("exp3", "silent"), ("exp4", "fired")] {
        let needle = format!("matrix.R1_OverlapDiffData.{col}={state}");
        assert!(text.contains(&needle), "missing {needle}");
    }
}

#[test]
fn detect_reads_pcap_and_scores() {
    let d = tempfile::tempdir().unwrap();
    assert!(mots().args(["run", "-e", "1", "--out"]).arg(d.path()).status().unwrap().success());
    let exp = d.path().join("exp1");
    let report = d.path().join("detect.txt");
    let st = mots()
        .args(["detect", "--rules", "r1,r2", "--pcap"])
        .arg(exp.join("capture.pcap"))
        .arg("--ground-truth")
        .arg(exp.join("forged.sidecar"))
        .arg("--report")
        .arg(&report)
        .status()
        .unwrap();
    assert!(st.success());
    let text = fs::read_to_string(report).unwrap();
    assert!(text.contains("matrix.R1_OverlapDiffData.capture=fired count=1"));
    assert!(text.contains("score.R1_OverlapDiffData alerts=1 true_positives=1 precision=1.000 recall=1.000"));
    assert!(!text.contains("R4_WindowRecision"));
}

#[test]
fn race_echoes_seed() {
    let out = mots().args(["race", "--server-delay", "0", "--trials", "1000", "--seed", "4"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("seed=4 trials=1000"));
    assert!(text.contains("win_rate="));
}

#[test]
fn bad_arguments_fail() {
    assert!(!mots().args(["run", "-e", "9"]).status().unwrap().success());
    assert!(!mots().args(["detect", "--pcap", "/nonexistent.pcap"]).status().unwrap().success());
    assert!(!mots().args(["run", "-e", "1", "--server-delay", "-1"]).status().unwrap().success());
}
