use std::process::Command;

fn llmwalk(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_llmwalk")).args(args).output().expect("binary runs")
}

#[test]
fn run_then_replay_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = llmwalk(&[
        "run",
        "--set", "policy.kind=\"nn_pattern\"",
        "--set", "trials=2",
        "--set", "episode_length=1.0",
        "-o", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("trials.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    let t = out.join("trial_00.jsonl");
    let o = llmwalk(&["replay", t.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("identical trajectory"));

    let o = llmwalk(&["plot", t.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(std::fs::read_to_string(out.join("trial_00.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn collect_writes_line_format() {
    let dir = tempfile::tempdir().unwrap();
    let o = llmwalk(&["collect", "--set", "trials=1", "--steps", "5", "-o", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(dir.path().join("rollout_00.p2w")).unwrap();
    assert!(text.lines().filter(|l| l.contains(" | ")).count() == 5, "{text}");
}

#[test]
fn config_errors_exit_with_2() {
    let o = llmwalk(&["config", "--set", "no_such_field=1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = llmwalk(&["ablate", "bogus"]);
    assert_eq!(o.status.code(), Some(2));
    let o = llmwalk(&["config", "--set", "history_length=7"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("history_length = 7"));
}
