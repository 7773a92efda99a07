use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const TINY: &str = r#"{
  "task": "cn",
  "algorithm": "md-maddpg",
  "episodes": 3,
  "batch_size": 32,
  "update_every": 10,
  "memory_size": 6,
  "embed": 8,
  "context": 8,
  "enc_hidden": 12,
  "act_hidden": 12,
  "critic_hidden": [16],
  "eval_every": 2,
  "eval_episodes": 2
}
"#;

struct Sandbox {
    tmp: TempDir,
}

impl Sandbox {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        fs::write(tmp.path().join("tiny.json"), TINY).unwrap();
        Self { tmp }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.tmp.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_memshare"))
            .args(args)
            .current_dir(self.tmp.path())
            .env("MEMSHARE_RUNS_DIR", self.path("runs"))
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
        out
    }

    /// Trains into `runs/<name>` and returns the directory.
    fn train(&self, name: &str, extra: &[&str]) -> PathBuf {
        let dir = self.path(&format!("runs/{name}"));
        let mut args = vec!["train", "--config", "tiny.json", "--run-dir", dir.to_str().unwrap()];
        args.extend_from_slice(extra);
        self.ok(&args);
        dir
    }
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn missing_required_key_exits_2_naming_it() {
    let sb = Sandbox::new();
    fs::write(sb.path("no_algo.json"), "{\n  \"task\": \"cn\"\n}\n").unwrap();
    let out = sb.run(&["train", "--config", "no_algo.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("\"algorithm\""), "{}", stderr(&out));
}

#[test]
fn config_errors_are_line_anchored() {
    let sb = Sandbox::new();
    let cases = [
        ("{\n  \"task\": \"cn\",\n  \"algorithm\": \"maddpg\",\n  \"gamma\": \"high\"\n}\n", "bad.json:4"),
        ("{\n  \"task\": \"cn\",\n  \"algorithm\": \"maddpg\",\n  \"gamma\": 1.5\n}\n", "bad.json:4"),
        ("{\n  \"task\": \"cn\",\n  \"algorithm\": \"maddpg\",\n\n  \"gama\": 0.9\n}\n", "bad.json:5"),
        ("{\n  \"task\": \"cn\",\n  \"algorithm\": \"maddpg\",\n}\n", "bad.json:4"),
        ("{\n  \"task\": \"mars\",\n  \"algorithm\": \"maddpg\"\n}\n", "bad.json:2"),
    ];
    for (text, anchor) in cases {
        fs::write(sb.path("bad.json"), text).unwrap();
        let out = sb.run(&["train", "--config", "bad.json"]);
        assert_eq!(out.status.code(), Some(2), "{text}");
        assert!(stderr(&out).contains(anchor), "{anchor} not in {}", stderr(&out));
    }
    assert!(!sb.path("runs").exists());
}

#[test]
fn overrides_reach_the_manifest() {
    let sb = Sandbox::new();
    let out = sb.ok(&["train", "--config", "tiny.json", "--seed", "7", "--episodes", "10"]);
    let dir = PathBuf::from(String::from_utf8(out.stdout).unwrap().trim());
    let name = dir.file_name().unwrap().to_str().unwrap().to_string();
    assert!(name.starts_with("cn-md-maddpg-7-"), "{name}");
    let m = manifest(&dir);
    assert_eq!(m["seed"], 7);
    assert_eq!(m["config"]["seed"], 7);
    assert_eq!(m["config"]["episodes"], 10);
    assert_eq!(m["config"]["memory_size"], 6);
    assert_eq!(m["status"], "complete");
    assert!(m["finished"].is_string());
    // every listed artifact exists
    for a in m["artifacts"].as_array().unwrap() {
        assert!(dir.join(a.as_str().unwrap()).is_file(), "{a}");
    }
    let curve = fs::read_to_string(dir.join("learning_curve.csv")).unwrap();
    let episodes: Vec<&str> = curve.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(episodes, ["0", "2", "4", "6", "8", "10"]);
}

#[test]
fn identical_runs_have_identical_curves() {
    let sb = Sandbox::new();
    let a = sb.train("a", &["--seed", "3"]);
    let b = sb.train("b", &["--seed", "3"]);
    let c = sb.train("c", &["--seed", "4"]);
    let read = |d: &Path| fs::read(d.join("learning_curve.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    for i in 0..2 {
        let ck = format!("checkpoints/agent_{i}.ckpt");
        assert_eq!(fs::read(a.join(&ck)).unwrap(), fs::read(b.join(&ck)).unwrap());
    }
}

#[test]
fn run_dir_is_never_reused() {
    let sb = Sandbox::new();
    let dir = sb.train("once", &[]);
    let out = sb.run(&["train", "--config", "tiny.json", "--run-dir", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_and_zero_noise_corruption_agree_bytewise() {
    let sb = Sandbox::new();
    let run = sb.train("r", &[]);
    let r = run.to_str().unwrap();
    sb.ok(&["eval", "--run", r, "--episodes", "1", "--out", "e1"]);
    let csv = fs::read_to_string(sb.path("e1/episodes.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2, "{csv}");

    sb.ok(&["eval", "--run", r, "--episodes", "6", "--out", "clean"]);
    sb.ok(&["corrupt", "--run", r, "--episodes", "6", "--noise-std", "0", "--out", "zero"]);
    sb.ok(&["corrupt", "--run", r, "--episodes", "6", "--noise-std", "1", "--out", "noisy", "--jobs", "3"]);
    for f in ["episodes.csv", "report.csv"] {
        let clean = fs::read(sb.path(&format!("clean/{f}"))).unwrap();
        assert_eq!(clean, fs::read(sb.path(&format!("zero/{f}"))).unwrap(), "{f}");
        assert_ne!(clean, fs::read(sb.path(&format!("noisy/{f}"))).unwrap(), "{f}");
    }
    let m = manifest(&sb.path("noisy"));
    assert_eq!(m["command"], "corrupt");
    assert_eq!(m["inputs"]["memory"]["std"], 1.0);
}

#[test]
fn eval_is_repeatable_and_job_count_independent() {
    let sb = Sandbox::new();
    let run = sb.train("r", &[]);
    let r = run.to_str().unwrap();
    sb.ok(&["eval", "--run", r, "--episodes", "5", "--out", "x"]);
    sb.ok(&["eval", "--run", r, "--episodes", "5", "--out", "y", "--jobs", "4"]);
    sb.ok(&["eval", "--run", r, "--episodes", "5", "--out", "x"]);
    for f in ["episodes.csv", "report.csv"] {
        assert_eq!(fs::read(sb.path(&format!("x/{f}"))).unwrap(), fs::read(sb.path(&format!("y/{f}"))).unwrap());
    }
}

#[test]
fn incompatible_environment_exits_4_with_shapes() {
    let sb = Sandbox::new();
    let run = sb.train("r", &[]);
    let r = run.to_str().unwrap();
    let out = sb.run(&["eval", "--run", r, "--episodes", "1", "--n-agents", "3"]);
    assert_eq!(out.status.code(), Some(4));
    let msg = stderr(&out);
    assert!(msg.contains('2') && msg.contains('3'), "{msg}");

    let out = sb.run(&["eval", "--run", r, "--episodes", "1", "--task", "po-cn"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("expected task po-cn, found cn"), "{}", stderr(&out));

    // Agent 1 replaced by an agent with a different memory size.
    let other = sb.train("m9", &["--memory-size", "9"]);
    for ext in ["", ".json"] {
        fs::copy(other.join(format!("checkpoints/agent_1.ckpt{ext}")), run.join(format!("checkpoints/agent_1.ckpt{ext}"))).unwrap();
    }
    let out = sb.run(&["eval", "--run", r, "--episodes", "1"]);
    assert_eq!(out.status.code(), Some(4));
    let msg = stderr(&out);
    assert!(msg.contains("expected 6, found 9"), "{msg}");
}

#[test]
fn training_fault_exits_3_with_diagnostics() {
    let sb = Sandbox::new();
    let dir = sb.path("runs/fault");
    let out = sb.run(&["train", "--config", "tiny.json", "--lr-critic", "1e300", "--run-dir", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    let m = manifest(&dir);
    assert_eq!(m["status"], "fault");
    assert!(m["error"].as_str().unwrap().contains("non-finite"));
    assert!(dir.join("fault/agent_0.ckpt").is_file());
    assert!(!dir.join("checkpoints").exists());
    let out = sb.run(&["eval", "--run", dir.to_str().unwrap(), "--episodes", "1"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn sweep_emits_one_row_per_value() {
    let sb = Sandbox::new();
    let dir = sb.path("runs/sweep");
    sb.ok(&[
        "sweep", "--config", "tiny.json", "--axis", "memory-size=32,64,128,200", "--report-episodes", "2",
        "--jobs", "4", "--episodes", "1", "--run-dir", dir.to_str().unwrap(),
    ]);
    let grid = fs::read_to_string(dir.join("grid.csv")).unwrap();
    let rows: Vec<&str> = grid.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    for (row, v) in rows.iter().zip(["32", "64", "128", "200"]) {
        assert!(row.starts_with(&format!("memory-size,{v},ok,2,")), "{row}");
    }
    let m = manifest(&dir);
    assert_eq!(m["command"], "sweep");
    assert_eq!(m["config"]["episodes"], 1);
}

#[test]
fn ablate_covers_the_variants() {
    let sb = Sandbox::new();
    let dir = sb.path("runs/ablate");
    sb.ok(&["ablate", "--config", "tiny.json", "--report-episodes", "2", "--jobs", "4", "--run-dir", dir.to_str().unwrap()]);
    let grid = fs::read_to_string(dir.join("grid.csv")).unwrap();
    let values: Vec<&str> = grid.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(values, ["full", "no-context", "no-read", "no-write"]);
    assert!(grid.lines().skip(1).all(|l| l.split(',').nth(2) == Some("ok")));

    let out = sb.run(&["ablate", "--config", "tiny.json", "--algorithm", "maddpg", "--report-episodes", "2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn analyze_writes_heatmaps_deterministically() {
    let sb = Sandbox::new();
    let run = sb.train("r", &[]);
    let r = run.to_str().unwrap();
    sb.ok(&["analyze", "--run", r, "--out", "a1"]);
    sb.ok(&["analyze", "--run", r, "--out", "a2"]);
    for f in ["write_heatmap.svg", "write_heatmap.csv", "read_heatmap.csv", "pca_summary.csv", "trace.csv", "write_agent0.bin"] {
        let a = fs::read(sb.path(&format!("a1/{f}"))).unwrap();
        assert!(!a.is_empty(), "{f}");
        assert_eq!(a, fs::read(sb.path(&format!("a2/{f}"))).unwrap(), "{f}");
    }
    let bin = fs::read(sb.path("a1/write_agent1.bin")).unwrap();
    assert_eq!(&bin[..8], b"MEMSHTRC");
    // one trace row per step, memory_size columns
    assert_eq!(bin.len(), 8 + 4 + 8 + 8 + 100 * 6 * 8);
}

#[test]
fn analyze_handles_ablations_and_memoryless_runs() {
    let sb = Sandbox::new();
    let nw = sb.train("nw", &["--variant", "no-write"]);
    sb.ok(&["analyze", "--run", nw.to_str().unwrap(), "--out", "nw"]);
    let summary = fs::read_to_string(sb.path("nw/pca_summary.csv")).unwrap();
    assert!(summary.contains("write,0,degenerate"), "{summary}");
    assert!(!sb.path("nw/write_heatmap.svg").exists());

    let nr = sb.train("nr", &["--variant", "no-read"]);
    sb.ok(&["analyze", "--run", nr.to_str().unwrap(), "--out", "nr"]);
    let summary = fs::read_to_string(sb.path("nr/pca_summary.csv")).unwrap();
    assert!(!summary.contains("read,"), "{summary}");

    let base = sb.train("base", &["--algorithm", "maddpg"]);
    let out = sb.run(&["analyze", "--run", base.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn inspect_prints_checkpoint_manifest() {
    let sb = Sandbox::new();
    let run = sb.train("r", &[]);
    let out = sb.ok(&["inspect", run.join("checkpoints/agent_1.ckpt").to_str().unwrap()]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["descriptor"]["agent"], 1);
    assert_eq!(v["descriptor"]["task"], "cn");
    let names: Vec<&str> = v["blocks"].as_array().unwrap().iter().map(|b| b["name"].as_str().unwrap()).collect();
    assert!(names.contains(&"actor/W_k.w") && names.contains(&"target_critic/l0.w"), "{names:?}");

    let out = sb.ok(&["inspect", run.to_str().unwrap()]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["command"], "train");

    fs::write(sb.path("junk.ckpt"), b"not a checkpoint").unwrap();
    let out = sb.run(&["inspect", "junk.ckpt"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn shipped_configs_load() {
    let sb = Sandbox::new();
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let run = sb.path(&format!("runs/{}", path.file_stem().unwrap().to_str().unwrap()));
        sb.ok(&["train", "--config", path.to_str().unwrap(), "--episodes", "0", "--eval-every", "0", "--run-dir", run.to_str().unwrap()]);
        assert_eq!(manifest(&run)["status"], "complete");
        seen += 1;
    }
    assert!(seen >= 3);
}
