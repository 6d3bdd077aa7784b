use std::fs;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_influence-bench");

#[test]
fn run_then_summarize() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(
        &cfg,
        "experiment_id = \"smoke\"\ncontroller = \"noise\"\nhuman = \"memory\"\ninteractions = 3\nseeds = [0]\nsteps = 12\nblock_size = 1\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let run = Command::new(BIN)
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--seeds", "4,2"])
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let csv = fs::read_to_string(out.join("smoke.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 7);
    assert!(lines[1].starts_with("smoke,4,highway,noise,memory,0,"));
    assert!(lines[4].starts_with("smoke,2,highway,noise,memory,0,"));
    for ext in ["json", "txt", "png"] {
        assert!(out.join(format!("smoke.{ext}")).exists(), "{ext}");
    }

    let sum = Command::new(BIN)
        .args(["summarize", "--block", "1", "--metric", "human_return", "--in"])
        .arg(out.join("smoke.csv"))
        .output()
        .unwrap();
    assert!(sum.status.success());
    let text = String::from_utf8(sum.stdout).unwrap();
    assert!(text.contains("experiment smoke: human_return"));
    assert!(text.contains("seeds 2 x interactions 3"));
}

#[test]
fn errors_exit_nonzero_with_context() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let out = Command::new(BIN).arg("summarize").arg("--in").arg(&missing).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.csv"));

    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "controller = \"telepathy\"\n").unwrap();
    let out = Command::new(BIN).args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert!(!out.status.success());
}
