use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn memlab(args: &[&str], threads: Option<&str>) -> std::process::Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_memlab"));
    cmd.args(args).env_remove("MEMLAB_THREADS");
    if let Some(t) = threads {
        cmd.env("MEMLAB_THREADS", t);
    }
    cmd.output().unwrap()
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn data_rows(dir: &Path) -> Vec<String> {
    std::fs::read_to_string(dir.join("raw.csv"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(String::from)
        .collect()
}

#[test]
fn capacity_sweep_flips_after_dk() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("cap");
    let o = memlab(&["capacity", "--out", out.to_str().unwrap(), "--d_k", "8", "--m_min", "4", "--m_max", "12"], None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = data_rows(&out);
    assert_eq!(rows.len(), 9);
    for r in &rows {
        let cols: Vec<&str> = r.split(',').collect();
        let m: usize = cols[1].parse().unwrap();
        assert_eq!(cols[11] == "true", m <= 8, "{r}");
    }
    assert_eq!(summary(&out)["metrics"]["boundaries"][0]["boundary"], 8);
}

#[test]
fn equivalence_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = tmp.path().join("ok");
    let o = memlab(&["equivalence", "--out", ok.to_str().unwrap(), "--rule", "omega", "--c", "3", "--b", "1"], None);
    assert_eq!(o.status.code(), Some(0));
    let s = summary(&ok);
    assert_eq!(s["pass"], true);
    assert!(s["metrics"]["max_abs_diff"].as_f64().unwrap() <= 1e-12);

    let bad = tmp.path().join("bad");
    let o = memlab(&["equivalence", "--out", bad.to_str().unwrap(), "--rule", "omega", "--c", "3", "--b", "8"], None);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(summary(&bad)["pass"], false);
}

#[test]
fn config_errors_exit_one_with_named_field() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let o = memlab(&["capacity", "--out", out.to_str().unwrap(), "--seeds", "[]"], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`seeds`"));
    let o = memlab(&["recall", "--out", out.to_str().unwrap(), "--rule", "detla"], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("delta"));
}

#[test]
fn io_failure_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let out = blocker.join("sub");
    let o = memlab(&["capacity", "--out", out.to_str().unwrap(), "--m_max", "2"], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("I/O"));
}

#[test]
fn file_then_flags_and_thread_independent_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    std::fs::write(&cfg, r#"{"command": "recall", "out": "ignored", "d": 8, "seeds": [0, 1, 2]}"#).unwrap();
    let mut bytes = Vec::new();
    let out = tmp.path().join("r");
    for threads in [None, Some("1"), Some("4")] {
        let o = memlab(&["recall", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--d", "12"], threads);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let s = summary(&out);
        assert_eq!(s["config"]["d"], 12);
        assert!(s["config"].get("threads").is_none());
        bytes.push(std::fs::read(out.join("raw.csv")).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
    assert_eq!(bytes[1], bytes[2]);
}

#[test]
fn bad_thread_env_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let o = memlab(&["capacity", "--out", out.to_str().unwrap(), "--m_max", "2"], Some("zero"));
    assert_eq!(o.status.code(), Some(1));
}
