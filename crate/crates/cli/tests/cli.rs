use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
[experiment]
profiles = ["quorum"]
clock = "virtual"
seed = 5

[plan]
families = ["do-nothing"]
clients = 2
workload_threads_per_client = 1
rate_limiter = 20
send_duration = 2.0
listen_grace = 1.0
hard_stop = 4.0
repetitions = 2

[sweep]
rate_limiter = [10, 20]
"#;

fn chainbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chainbench"))
        .args(args)
        .env_remove("CHAINBENCH_OUT")
        .output()
        .expect("spawn chainbench")
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("exp.toml");
    fs::write(&path, CONFIG).unwrap();
    path.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("out");
    let o = chainbench(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["events.jsonl", "results.csv", "aggregate.csv", "heatmap.svg", "experiment.toml"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert!(stdout(&o).contains("quorum"));
    let results = fs::read_to_string(out.join("results.csv")).unwrap();
    // Header plus one row per repetition.
    assert_eq!(results.lines().count(), 3);
}

#[test]
fn sweep_report_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("sweep");
    let out_s = out.to_str().unwrap();
    let o = chainbench(&["sweep", &cfg, "--out", out_s, "--format", "csv", "--repetitions", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("heatmap.csv").is_file());
    let results = fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 1 + 2 * 3);

    let before = fs::read(out.join("aggregate.csv")).unwrap();
    let o = chainbench(&["report", out_s, "--format", "csv"]);
    assert!(o.status.success());
    assert_eq!(fs::read(out.join("aggregate.csv")).unwrap(), before);

    let o = chainbench(&["replay", out_s, "--row", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("identical"));
    assert!(out.join("replay-row-4.jsonl").is_file());
}

#[test]
fn replay_mismatch_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    assert!(chainbench(&["run", &cfg, "--out", out_s]).status.success());
    let events = out.join("events.jsonl");
    let text = fs::read_to_string(&events).unwrap();
    let first = text.lines().next().unwrap().to_string();
    let tampered = first.replacen("\"starttime_ns\":", "\"starttime_ns\":1", 1);
    fs::write(&events, text.replacen(&first, &tampered, 1)).unwrap();
    let o = chainbench(&["replay", out_s, "--row", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn env_var_sets_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_chainbench"))
        .args(["run", &cfg])
        .env("CHAINBENCH_OUT", &out)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(out.join("results.csv").is_file());
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(chainbench(&["run", "--no-such-flag", "x.toml"]).status.code(), Some(1));
    assert_eq!(chainbench(&["run", "/definitely/missing.toml"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[experiment]\nprofiles = [\"nope\"]\n").unwrap();
    assert_eq!(chainbench(&["run", bad.to_str().unwrap()]).status.code(), Some(1));
    // An unreadable results directory is a runtime fault.
    assert_eq!(chainbench(&["report", dir.path().join("absent").to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(chainbench(&["--help"]).status.code(), Some(0));
}

#[test]
fn profiles_list_names_presets() {
    let o = chainbench(&["profiles", "list"]);
    assert!(o.status.success());
    let s = stdout(&o);
    for name in ["corda-os", "corda-ent", "bitshares", "fabric", "quorum", "sawtooth", "diem"] {
        assert!(s.contains(name), "{name}");
    }
}
