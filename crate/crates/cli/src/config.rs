//! Flat run configuration: one JSON object holding both training and
//! environment keys, plus `--key value` overrides.

use std::path::Path;

use memshare::envs::{EnvConfig, Task};
use memshare::training::TrainConfig;
use serde_json::{Map, Value};

use crate::CliError;

pub const REQUIRED: [&str; 2] = ["task", "algorithm"];

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub env: EnvConfig,
}

impl RunConfig {
    /// Every resolved key, training and environment together.
    pub fn resolved(&self) -> Value {
        let mut all = object(&self.train);
        all.extend(object(&self.env));
        Value::Object(all)
    }

    /// Splits a resolved snapshot (as stored in a run manifest).
    pub fn from_resolved(value: &Value) -> Result<Self, CliError> {
        let map = value
            .as_object()
            .ok_or_else(|| CliError::config("manifest config is not an object"))?;
        build(map, &Source::Snapshot)
    }
}

fn object<T: serde::Serialize>(v: &T) -> Map<String, Value> {
    match serde_json::to_value(v).expect("config serializes") {
        Value::Object(m) => m,
        _ => unreachable!("configs serialize to objects"),
    }
}

pub fn train_keys() -> Vec<String> {
    object(&TrainConfig::default()).keys().cloned().collect()
}

pub fn env_keys() -> Vec<String> {
    object(&EnvConfig::default()).keys().cloned().collect()
}

/// Where a key came from, for error messages.
enum Source<'a> {
    File { path: &'a Path, text: &'a str, overridden: Vec<String> },
    Snapshot,
}

impl Source<'_> {
    fn locate(&self, key: &str) -> String {
        match self {
            Source::File { path, overridden, .. } if overridden.iter().any(|k| k == key) => {
                format!("{}: override --{}", path.display(), key.replace('_', "-"))
            }
            Source::File { path, text, .. } => match line_of(text, key) {
                Some(line) => format!("{}:{line}", path.display()),
                None => path.display().to_string(),
            },
            Source::Snapshot => "run manifest".into(),
        }
    }
}

/// 1-based line of the first `"key":` in a JSON text.
pub fn line_of(text: &str, key: &str) -> Option<usize> {
    let quoted = format!("\"{key}\"");
    text.lines().enumerate().find_map(|(i, line)| {
        let at = line.find(&quoted)?;
        line[at + quoted.len()..].trim_start().starts_with(':').then_some(i + 1)
    })
}

/// Parses `--key value` pairs. Values are JSON when they parse as JSON and
/// plain strings otherwise; `-` and `_` are interchangeable in keys.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, Value)>, CliError> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(flag) = it.next() {
        let key = flag
            .strip_prefix("--")
            .filter(|k| !k.is_empty())
            .ok_or_else(|| CliError::config(format!("expected an override like --key value, found {flag:?}")))?;
        let raw = it
            .next()
            .ok_or_else(|| CliError::config(format!("override --{key} is missing a value")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.clone()));
        out.push((key.replace('-', "_"), value));
    }
    Ok(out)
}

/// Reads a config file and applies overrides on top of it.
pub fn load(path: &Path, overrides: &[(String, Value)]) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("{}: cannot read config: {e}", path.display())))?;
    let parsed: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column())))?;
    let Value::Object(mut map) = parsed else {
        return Err(CliError::config(format!("{}:1: config must be a JSON object", path.display())));
    };
    for (k, v) in overrides {
        map.insert(k.clone(), v.clone());
    }
    for key in REQUIRED {
        if !map.contains_key(key) {
            return Err(CliError::config(format!(
                "{}: missing required key \"{key}\"",
                path.display()
            )));
        }
    }
    let source = Source::File {
        path,
        text: &text,
        overridden: overrides.iter().map(|(k, _)| k.clone()).collect(),
    };
    build(&map, &source)
}

fn build(map: &Map<String, Value>, source: &Source) -> Result<RunConfig, CliError> {
    let (tkeys, ekeys) = (train_keys(), env_keys());
    let mut tmap = Map::new();
    let mut emap = Map::new();
    for (k, v) in map {
        if tkeys.contains(k) {
            tmap.insert(k.clone(), v.clone());
        } else if ekeys.contains(k) {
            emap.insert(k.clone(), v.clone());
        } else {
            return Err(CliError::config(format!("{}: unknown key \"{k}\"", source.locate(k))));
        }
    }
    let task: Task = match emap.get("task") {
        Some(v) => serde_json::from_value(v.clone())
            .map_err(|e| CliError::config(format!("{}: key \"task\": {e}", source.locate("task"))))?,
        None => Task::Cn,
    };
    let train: TrainConfig = overlay(object(&TrainConfig::default()), &tmap, source)?;
    let env: EnvConfig = overlay(object(&EnvConfig::new(task)), &emap, source)?;
    train.validate().map_err(|e| CliError::config(anchor(e.to_string(), &tkeys, source)))?;
    env.validate().map_err(|e| CliError::config(anchor(e.to_string(), &ekeys, source)))?;
    Ok(RunConfig { train, env })
}

/// Overlays keys one at a time so a bad value is reported with its key.
fn overlay<T: serde::de::DeserializeOwned>(
    base: Map<String, Value>,
    keys: &Map<String, Value>,
    source: &Source,
) -> Result<T, CliError> {
    let mut acc = base;
    for (k, v) in keys {
        let mut trial = acc.clone();
        trial.insert(k.clone(), v.clone());
        serde_json::from_value::<T>(Value::Object(trial.clone()))
            .map_err(|e| CliError::config(format!("{}: key \"{k}\": {e}", source.locate(k))))?;
        acc = trial;
    }
    serde_json::from_value(Value::Object(acc)).map_err(|e| CliError::config(e.to_string()))
}

/// Prefixes a validation message with the location of the key it names.
fn anchor(msg: String, keys: &[String], source: &Source) -> String {
    let named = keys
        .iter()
        .filter(|k| msg.split(|c: char| !(c.is_alphanumeric() || c == '_')).any(|w| w == k.as_str()))
        .max_by_key(|k| k.len());
    match named {
        Some(k) => format!("{}: {msg}", source.locate(k)),
        None => msg,
    }
}
