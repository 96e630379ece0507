use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn sdnlb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdnlb"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("sdnlb-cli-{}-{name}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn default_config_round_trips_through_validate() {
    let out = sdnlb(&["print-default-config"]);
    assert!(out.status.success());
    let flag = sdnlb(&["--print-default-config"]);
    assert_eq!(out.stdout, flag.stdout);

    let dir = scratch("validate");
    let path = dir.join("default.toml");
    fs::write(&path, &out.stdout).unwrap();
    let v = sdnlb(&["validate", path.to_str().unwrap()]);
    assert_eq!(
        v.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&v.stderr)
    );
    fs::remove_dir_all(dir).ok();
}

#[test]
fn invalid_config_exits_one_and_names_the_field() {
    let dir = scratch("invalid");
    let text = String::from_utf8(sdnlb(&["print-default-config"]).stdout).unwrap();
    let bad = text
        .lines()
        .map(|l| {
            if l.starts_with("f_alpha") {
                "f_alpha = 1.5"
            } else {
                l
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    assert_ne!(bad, text.trim_end());
    let path = dir.join("bad.toml");
    fs::write(&path, bad).unwrap();
    let v = sdnlb(&["validate", path.to_str().unwrap()]);
    assert_eq!(v.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&v.stderr).contains("f_alpha"));

    let missing = sdnlb(&["validate", dir.join("nope.toml").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(1));

    let sched = sdnlb(&["run", "--scheduler", "fastest", "--duration", "5"]);
    assert_eq!(sched.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&sched.stderr).contains("round-robin"));
    fs::remove_dir_all(dir).ok();
}

#[test]
fn run_writes_its_artifacts() {
    let dir = scratch("run");
    let out = dir.join("out");
    let r = sdnlb(&[
        "run",
        "--seed",
        "3",
        "--duration",
        "30",
        "--scheduler",
        "variance",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        r.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&r.stderr)
    );
    for f in [
        "events.jsonl",
        "timeseries.csv",
        "fcurve.csv",
        "report.json",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let ts = fs::read_to_string(out.join("timeseries.csv")).unwrap();
    assert_eq!(
        ts.lines().next(),
        Some("t_s,server_id,active_sessions,window_bytes,f_value")
    );
    let fc = fs::read_to_string(out.join("fcurve.csv")).unwrap();
    assert_eq!(fc.lines().next(), Some("t_s,scheduler,f_value"));
    let first: serde_json::Value = serde_json::from_str(
        fs::read_to_string(out.join("events.jsonl"))
            .unwrap()
            .lines()
            .next()
            .unwrap(),
    )
    .unwrap();
    assert!(first.get("t_ns").is_some() && first.get("kind").is_some());

    // the same seed twice gives the same event log
    let again = dir.join("again");
    sdnlb(&[
        "run",
        "--seed",
        "3",
        "--duration",
        "30",
        "--scheduler",
        "variance",
        "--out",
        again.to_str().unwrap(),
    ]);
    assert_eq!(
        fs::read(out.join("events.jsonl")).unwrap(),
        fs::read(again.join("events.jsonl")).unwrap()
    );
    fs::remove_dir_all(dir).ok();
}

#[test]
fn compare_writes_per_seed_and_mean_curves() {
    let dir = scratch("compare");
    let r = sdnlb(&[
        "compare",
        "--seeds",
        "2",
        "--duration",
        "20",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(
        r.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&r.stderr)
    );
    let stdout = String::from_utf8_lossy(&r.stdout);
    for name in ["round-robin", "greedy", "variance"] {
        assert!(stdout.contains(name));
        assert!(dir.join(format!("seed-1/{name}.csv")).is_file());
        assert!(dir.join(format!("seed-2/{name}.csv")).is_file());
    }
    assert!(dir.join("fcurve.csv").is_file());
    assert!(dir.join("summary.json").is_file());
    fs::remove_dir_all(dir).ok();
}

#[test]
fn unwritable_output_exits_two() {
    let dir = scratch("unwritable");
    let blocker = dir.join("file");
    fs::write(&blocker, "x").unwrap();
    let r = sdnlb(&[
        "run",
        "--duration",
        "5",
        "--out",
        blocker.join("sub").to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(2));
    fs::remove_dir_all(dir).ok();
}
