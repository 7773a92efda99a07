//! Run directories and their manifests.

use std::fs;
use std::path::{Path, PathBuf};

use memshare::nn::Checkpoint;
use memshare::training::{env_dims, team_from_checkpoints, Team};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::RunConfig;
use crate::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const RUNS_DIR_VAR: &str = "MEMSHARE_RUNS_DIR";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Running,
    Complete,
    Fault,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub code_version: String,
    pub seed: u64,
    /// Resolved configuration (every key, defaults filled in).
    pub config: Value,
    /// Command-specific inputs beyond the config (source run, flags).
    pub inputs: Value,
    pub started: String,
    pub finished: Option<String>,
    pub status: Status,
    /// Paths relative to the manifest's directory.
    pub artifacts: Vec<String>,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn begin(command: &str, cfg: &RunConfig, inputs: Value) -> Self {
        Self {
            command: command.into(),
            code_version: env!("CARGO_PKG_VERSION").into(),
            seed: cfg.train.seed,
            config: cfg.resolved(),
            inputs,
            started: now(),
            finished: None,
            status: Status::Running,
            artifacts: Vec::new(),
            error: None,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(dir.join(MANIFEST), text + "\n").map_err(|e| CliError::io(dir, e))
    }

    pub fn finish(&mut self, dir: &Path, status: Status, error: Option<String>) -> Result<(), CliError> {
        self.finished = Some(now());
        self.status = status;
        self.error = error;
        self.write(dir)
    }

    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    pub fn run_config(&self) -> Result<RunConfig, CliError> {
        RunConfig::from_resolved(&self.config)
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

pub fn runs_root() -> PathBuf {
    std::env::var_os(RUNS_DIR_VAR).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

/// Creates `<root>/<task>-<algo>-<seed>-<timestamp>`, suffixing `-2`, `-3`, ...
/// when a run with the same name already exists.
pub fn create_run_dir(root: &Path, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let base = format!(
        "{}-{}-{}-{stamp}",
        cfg.env.task.name(),
        cfg.train.algorithm.name(),
        cfg.train.seed
    );
    fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
    for k in 1.. {
        let name = if k == 1 { base.clone() } else { format!("{base}-{k}") };
        let dir = root.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(CliError::io(&dir, e)),
        }
    }
    unreachable!()
}

/// Uses `dir` as given (created if missing, refused if it holds a manifest).
pub fn claim_dir(dir: &Path) -> Result<PathBuf, CliError> {
    if dir.join(MANIFEST).exists() {
        return Err(CliError::config(format!(
            "{} already holds a run manifest",
            dir.display()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    Ok(dir.to_path_buf())
}

pub fn checkpoint_path(i: usize) -> String {
    format!("checkpoints/agent_{i}.ckpt")
}

pub fn write_text(dir: &Path, rel: &str, text: &str, manifest: &mut RunManifest) -> Result<(), CliError> {
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    manifest.artifacts.push(rel.to_string());
    Ok(())
}

pub fn write_bytes(dir: &Path, rel: &str, bytes: &[u8], manifest: &mut RunManifest) -> Result<(), CliError> {
    let path = dir.join(rel);
    fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
    manifest.artifacts.push(rel.to_string());
    Ok(())
}

pub fn save_checkpoints(dir: &Path, sub: &str, cks: &[Checkpoint], manifest: &mut RunManifest) -> Result<(), CliError> {
    for (i, ck) in cks.iter().enumerate() {
        let rel = format!("{sub}/agent_{i}.ckpt");
        ck.save(&dir.join(&rel))?;
        manifest.artifacts.push(rel.clone());
        manifest.artifacts.push(format!("{rel}.json"));
    }
    Ok(())
}

/// A trained run reloaded as an execution team.
pub struct LoadedRun {
    pub dir: PathBuf,
    pub config: RunConfig,
    pub team: Team,
}

pub fn load_run(dir: &Path, env_overrides: &[(String, Value)]) -> Result<LoadedRun, CliError> {
    let manifest = RunManifest::read(dir)?;
    if manifest.command != "train" {
        return Err(CliError::config(format!(
            "{} was produced by `{}`, not `train`",
            dir.display(),
            manifest.command
        )));
    }
    if manifest.status != Status::Complete {
        return Err(CliError::incompatible(format!(
            "{} did not complete (status {:?})",
            dir.display(),
            manifest.status
        )));
    }
    let trained = manifest.run_config()?;
    let mut resolved = manifest.config.clone();
    let env_keys = crate::config::env_keys();
    for (k, v) in env_overrides {
        if crate::config::train_keys().contains(k) {
            return Err(CliError::config(format!(
                "--{} is a training key; only environment keys can be overridden here",
                k.replace('_', "-")
            )));
        }
        if env_keys.contains(k) {
            resolved[k] = v.clone();
        } else {
            return Err(CliError::config(format!("unknown key \"{k}\"")));
        }
    }
    let config = RunConfig::from_resolved(&resolved)?;
    let cks = (0..trained.env.n_agents)
        .map(|i| Checkpoint::load(&dir.join(checkpoint_path(i))))
        .collect::<memshare::Result<Vec<_>>>()?;
    for (i, ck) in cks.iter().enumerate() {
        let task = ck.descriptor.get("task").and_then(Value::as_str).unwrap_or("?");
        if task != config.env.task.name() {
            return Err(CliError::incompatible(format!(
                "agent {i} checkpoint: expected task {}, found {task}",
                config.env.task.name()
            )));
        }
    }
    let team = team_from_checkpoints(&cks)?;
    let (obs_dims, action_dim, _) = env_dims(&config.env);
    team.check_dims(&obs_dims, action_dim)?;
    Ok(LoadedRun {
        dir: dir.to_path_buf(),
        config,
        team,
    })
}
