use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn sorts(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sorts"))
        .args(args)
        .env("SORTS_LOG_LEVEL", "warn")
        .output()
        .unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("sorts-cli-{name}-{}", std::process::id()));
    std::fs::remove_dir_all(&dir).ok();
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn count(haystack: &str, needle: &str) -> usize {
    haystack.matches(needle).count()
}

#[test]
fn smoke_selfplay_replay_and_plot() {
    let dir = scratch("smoke");
    let out = dir.join("run");
    let spec = configs().join("smoke.json");
    let o = sorts(&["selfplay", "--spec", spec.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let episodes: Vec<PathBuf> = std::fs::read_dir(out.join("episodes"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(episodes.len(), 20);
    let csv = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);
    assert!(csv.starts_with("episode,seed,n_agents,algorithm,success_pct,ls_pct,timeout_pct,offtrack_pct,mean_re_km,file"));
    assert!(std::fs::read_to_string(out.join("summary.md")).unwrap().contains("| Agents |"));

    let logged = out.join("episodes/n2-ep000-sorts.json");
    let o = sorts(&["replay", logged.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.lines().count() > 0);
    for line in stdout.lines() {
        let d: Value = serde_json::from_str(line).unwrap();
        assert!(d.get("action").is_some());
    }

    // nudge one logged state
    let mut doc: Value = serde_json::from_str(&std::fs::read_to_string(&logged).unwrap()).unwrap();
    let x = doc["trajectories"][0]["states"][5]["x"].as_f64().unwrap();
    doc["trajectories"][0]["states"][5]["x"] = (x + 1e-9).into();
    let tampered = dir.join("tampered.json");
    std::fs::write(&tampered, doc.to_string()).unwrap();
    let o = sorts(&["replay", "--quiet", tampered.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("tick 5"));

    doc["version"] = "v0".into();
    std::fs::write(&tampered, doc.to_string()).unwrap();
    let o = sorts(&["replay", "--quiet", tampered.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));

    let figs = dir.join("figs");
    let o = sorts(&["plot", "--summary", out.join("summary.csv").to_str().unwrap(), "--out", figs.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_dir(&figs).unwrap().count(), 21);
    let svg = std::fs::read_to_string(figs.join("n2-ep000-sorts.svg")).unwrap();
    assert_eq!(count(&svg, r#"class="reference""#), 2);
    assert_eq!(count(&svg, r#"class="executed""#), 2);
    assert_eq!(count(&svg, "stroke-dasharray"), 2);
    let bars = std::fs::read_to_string(figs.join("success.svg")).unwrap();
    assert_eq!(count(&bars, r#"class="bar""#), 4);

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn selfplay_is_deterministic_across_worker_counts() {
    let dir = scratch("determinism");
    let spec = configs().join("smoke.json");
    let one = sorts(&["selfplay", "--spec", spec.to_str().unwrap(), "--out", dir.join("a").to_str().unwrap()]);
    let two = sorts(&["selfplay", "--spec", spec.to_str().unwrap(), "--out", dir.join("b").to_str().unwrap(), "--jobs", "2"]);
    assert!(one.status.success() && two.status.success());
    let a = std::fs::read(dir.join("a/summary.csv")).unwrap();
    let b = std::fs::read(dir.join("b/summary.csv")).unwrap();
    assert_eq!(a, b);
    let ea = std::fs::read(dir.join("a/episodes/n3-ep004-sorts.json")).unwrap();
    let eb = std::fs::read(dir.join("b/episodes/n3-ep004-sorts.json")).unwrap();
    assert_eq!(ea, eb);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn usage_and_config_errors() {
    assert_eq!(sorts(&["--help"]).status.code(), Some(0));
    assert_eq!(sorts(&["fly"]).status.code(), Some(1));
    assert_eq!(sorts(&["selfplay", "--spec", "/nonexistent/spec.json"]).status.code(), Some(1));

    let dir = scratch("errors");
    let bad = dir.join("bad.json");
    let mut doc: Value = serde_json::from_str(&std::fs::read_to_string(configs().join("smoke.json")).unwrap()).unwrap();
    doc["planner"]["expansions_per_plan"] = 0.into();
    std::fs::write(&bad, doc.to_string()).unwrap();
    let o = sorts(&["selfplay", "--spec", bad.to_str().unwrap(), "--out", dir.join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!dir.join("o/summary.csv").exists());

    doc["planner"]["expansions_per_plan"] = 50.into();
    doc["planner"]["expansion_count"] = 50.into();
    std::fs::write(&bad, doc.to_string()).unwrap();
    let o = sorts(&["selfplay", "--spec", bad.to_str().unwrap(), "--out", dir.join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("expansion_count"));

    std::fs::write(dir.join("empty.csv"), "episode,seed,n_agents,algorithm,success_pct,ls_pct,timeout_pct,offtrack_pct,mean_re_km,file\n").unwrap();
    let o = sorts(&["plot", "--summary", dir.join("empty.csv").to_str().unwrap(), "--out", dir.join("f").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(!dir.join("f").exists());
    std::fs::remove_dir_all(&dir).ok();
}
