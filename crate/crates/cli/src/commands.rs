use std::fmt::Write as _;
use std::io::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use memshare::commanalysis::{heatmap_csv, pca_trace, record_traces, render_svg, standardize01, trace_to_bytes, HeatmapPanel, TraceMatrix};
use memshare::envs::write_trace_csv;
use memshare::evaluation::{episodes_csv, evaluate, grid_csv, grid_episodes_csv, run_experiment_grid, EvalOptions, GridAxis, MemoryMode};
use memshare::nn::Checkpoint;
use memshare::training::{curve_csv, Trainer};
use memshare::Error;
use serde_json::{json, Value};

use crate::config::{self, RunConfig};
use crate::run::{self, RunManifest, Status};
use crate::{AnalyzeArgs, CliError, EvalArgs, GridArgs};

fn new_dir(explicit: Option<&Path>, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    match explicit {
        Some(d) => run::claim_dir(d),
        None => run::create_run_dir(&run::runs_root(), cfg),
    }
}

/// Reuses an output directory, clearing the artifacts of a previous manifest.
fn output_dir(dir: &Path) -> Result<(), CliError> {
    if let Ok(old) = RunManifest::read(dir) {
        if old.command == "train" {
            return Err(CliError::config(format!("{} is a training run, not an output directory", dir.display())));
        }
        for rel in old.artifacts {
            let _ = fs::remove_file(dir.join(rel));
        }
    }
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn train(config_path: &Path, run_dir: Option<&Path>, overrides: &[String]) -> Result<(), CliError> {
    let ov = config::parse_overrides(overrides)?;
    let cfg = config::load(config_path, &ov)?;
    let mut trainer = Trainer::new(cfg.train.clone(), cfg.env.clone())?;
    let dir = new_dir(run_dir, &cfg)?;
    let mut manifest = RunManifest::begin("train", &cfg, json!({ "config_file": config_path }));
    manifest.write(&dir)?;
    eprintln!("run directory {}", dir.display());

    let outcome = trainer.train();
    let n = cfg.env.n_agents;
    run::write_text(&dir, "learning_curve.csv", &curve_csv(trainer.curve(), n), &mut manifest)?;
    match outcome {
        Ok(()) => {
            run::save_checkpoints(&dir, "checkpoints", &trainer.checkpoints(), &mut manifest)?;
            manifest.finish(&dir, Status::Complete, None)?;
            if let Some(last) = trainer.curve().last() {
                let mean = last.rewards.iter().sum::<f64>() / n as f64;
                eprintln!("episode {} mean eval reward {mean:.4}", last.episode);
            }
            println!("{}", dir.display());
            Ok(())
        }
        Err(e) => {
            // Diagnostic state at the moment of the fault.
            run::save_checkpoints(&dir, "fault", &trainer.checkpoints(), &mut manifest)?;
            manifest.finish(&dir, Status::Fault, Some(e.to_string()))?;
            let mut err = CliError::from(e);
            err.message = format!("{} (episode {}; diagnostic checkpoints in {})", err.message, trainer.episode(), dir.join("fault").display());
            Err(err)
        }
    }
}

pub fn eval(args: &EvalArgs, noise: Option<(f64, bool)>) -> Result<(), CliError> {
    let ov = config::parse_overrides(&args.overrides)?;
    let loaded = run::load_run(&args.run, &ov)?;
    let seed = args.seed.unwrap_or(loaded.config.train.seed);
    let memory = match noise {
        None => MemoryMode::Clean,
        Some((std, _)) if !(std >= 0.0 && std.is_finite()) => {
            return Err(CliError::config(format!("--noise-std must be finite and non-negative, got {std}")))
        }
        Some((std, false)) => MemoryMode::Corrupted { std },
        Some((std, true)) => MemoryMode::Randomized { std },
    };
    let opts = EvalOptions {
        episodes: args.episodes,
        seed,
        memory,
        jobs: args.jobs,
    };
    let ev = evaluate(&loaded.team, &loaded.config.env, &opts)?;

    let (command, default_name) = match memory {
        MemoryMode::Clean => ("eval", format!("eval-s{seed}-e{}", args.episodes)),
        MemoryMode::Corrupted { std } => ("corrupt", format!("corrupt-std{std}-s{seed}-e{}", args.episodes)),
        MemoryMode::Randomized { std } => ("corrupt", format!("randomized-std{std}-s{seed}-e{}", args.episodes)),
    };
    let dir = args.out.clone().unwrap_or_else(|| loaded.dir.join(default_name));
    output_dir(&dir)?;
    let inputs = json!({
        "run": loaded.dir,
        "episodes": args.episodes,
        "eval_seed": seed,
        "memory": memory,
    });
    let mut manifest = RunManifest::begin(command, &loaded.config, inputs);
    manifest.write(&dir)?;
    let n = loaded.config.env.n_agents;
    run::write_text(&dir, "episodes.csv", &episodes_csv(&ev.episodes, n), &mut manifest)?;
    let report = ev.report.to_csv();
    run::write_text(&dir, "report.csv", &report, &mut manifest)?;
    manifest.finish(&dir, Status::Complete, None)?;
    print!("{report}");
    eprintln!("wrote {}", dir.display());
    Ok(())
}

pub fn grid(args: &GridArgs, axis_spec: &str, command: &str, overrides: &[String]) -> Result<(), CliError> {
    let ov = config::parse_overrides(overrides)?;
    let cfg = config::load(&args.config, &ov)?;
    let axis = GridAxis::parse(axis_spec)?;
    if matches!(axis, GridAxis::Variant(_)) && !cfg.train.algorithm.uses_memory() {
        return Err(CliError::config(format!(
            "ablations need md-maddpg, config has {}",
            cfg.train.algorithm.name()
        )));
    }
    let dir = new_dir(args.run_dir.as_deref(), &cfg)?;
    let inputs = json!({
        "config_file": args.config,
        "axis": axis_spec,
        "report_episodes": args.report_episodes,
    });
    let mut manifest = RunManifest::begin(command, &cfg, inputs);
    manifest.write(&dir)?;
    let opts = EvalOptions {
        episodes: args.report_episodes,
        seed: cfg.train.seed,
        memory: MemoryMode::Clean,
        jobs: 1,
    };
    let cells = run_experiment_grid(&axis, &cfg.train, &cfg.env, &opts, args.jobs);
    let table = grid_csv(&cells);
    run::write_text(&dir, "grid.csv", &table, &mut manifest)?;
    run::write_text(&dir, "grid_episodes.csv", &grid_episodes_csv(&cells), &mut manifest)?;
    let failed: Vec<String> = cells
        .iter()
        .filter_map(|c| c.outcome.as_ref().err().map(|e| format!("{}={}: {e}", c.axis, c.value)))
        .collect();
    let error = (!failed.is_empty()).then(|| failed.join("; "));
    manifest.finish(&dir, Status::Complete, error)?;
    for f in &failed {
        eprintln!("warning: cell {f}");
    }
    print!("{table}");
    eprintln!("wrote {}", dir.display());
    Ok(())
}

pub fn analyze(args: &AnalyzeArgs) -> Result<(), CliError> {
    let ov = config::parse_overrides(&args.overrides)?;
    let loaded = run::load_run(&args.run, &ov)?;
    if args.components == 0 {
        return Err(CliError::config("--components must be positive"));
    }
    let seed = args.seed.unwrap_or(loaded.config.train.seed);
    let traces = record_traces(&loaded.team, &loaded.config.env, seed)?;
    let dir = args.out.clone().unwrap_or_else(|| loaded.dir.join(format!("analysis-s{seed}")));
    output_dir(&dir)?;
    let inputs = json!({ "run": loaded.dir, "trace_seed": seed, "components": args.components });
    let mut manifest = RunManifest::begin("analyze", &loaded.config, inputs);
    manifest.write(&dir)?;

    run::write_text(&dir, "trace.csv", &write_trace_csv(&traces.steps), &mut manifest)?;
    let mut summary = String::from("kind,agent,status,component,explained_ratio\n");
    for set in [&traces.write, &traces.read] {
        analyze_set(&dir, set, args.components, &mut summary, &mut manifest)?;
    }
    run::write_text(&dir, "pca_summary.csv", &summary, &mut manifest)?;
    manifest.finish(&dir, Status::Complete, None)?;
    print!("{summary}");
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn analyze_set(dir: &Path, set: &[TraceMatrix<f64>], k: usize, summary: &mut String, manifest: &mut RunManifest) -> Result<(), CliError> {
    let Some(first) = set.first() else { return Ok(()) };
    let kind = first.kind.name();
    let mut panels = Vec::with_capacity(set.len());
    for tr in set {
        run::write_bytes(dir, &format!("{kind}_agent{}.bin", tr.agent), &trace_to_bytes(tr.rows, tr.cols, &tr.data), manifest)?;
        match pca_trace(tr, k) {
            Ok(res) => {
                for (j, r) in res.explained_ratio.iter().enumerate() {
                    let _ = writeln!(summary, "{kind},{},ok,{j},{r:.16e}", tr.agent);
                }
                panels.push(HeatmapPanel {
                    agent: tr.agent,
                    values: standardize01(&res.scores),
                });
            }
            Err(Error::DegenerateTrace(_)) => {
                let _ = writeln!(summary, "{kind},{},degenerate,,", tr.agent);
            }
            Err(e) => return Err(e.into()),
        }
    }
    if panels.len() == set.len() {
        run::write_text(dir, &format!("{kind}_heatmap.svg"), &render_svg(&panels, &first.phases)?, manifest)?;
        run::write_text(dir, &format!("{kind}_heatmap.csv"), &heatmap_csv(&panels, &first.phases)?, manifest)?;
    }
    Ok(())
}

pub fn inspect(path: &Path) -> Result<(), CliError> {
    let value: Value = if path.is_dir() {
        serde_json::to_value(RunManifest::read(path)?).expect("manifest serializes")
    } else {
        serde_json::to_value(Checkpoint::load(path)?.manifest()).expect("manifest serializes")
    };
    let text = serde_json::to_string_pretty(&value).expect("manifest serializes");
    // A closed pipe (`inspect ... | head`) is not an error.
    let _ = writeln!(std::io::stdout(), "{text}");
    Ok(())
}
