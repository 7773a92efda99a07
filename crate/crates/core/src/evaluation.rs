//! Greedy rollouts, metrics, memory corruption and experiment grids.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{self, fmt_real, phase_of, EnvConfig, StepRecord, Task};
use crate::error::{Error, Result};
use crate::memdevice::{ActionHead, Variant};
use crate::training::{argmax, derive_seed, env_dims, one_hot, stream, Team, TrainConfig, Trainer, Turn};

/// How the shared message is treated during execution.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum MemoryMode {
    #[default]
    Clean,
    /// Adds N(0, std²) noise to the message after every write commit.
    Corrupted { std: f64 },
    /// Every agent reads a fresh N(0, std²) vector instead of the message.
    Randomized { std: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub episodes: usize,
    pub seed: u64,
    pub memory: MemoryMode,
    /// Worker threads; 0 or 1 runs serially.
    pub jobs: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            episodes: 1000,
            seed: 0,
            memory: MemoryMode::Clean,
            jobs: 1,
        }
    }
}

/// Metrics of one evaluation episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub seed: u64,
    /// Episode return averaged over agents.
    pub reward: f64,
    pub agent_rewards: Vec<f64>,
    /// Mean per-step landmark distance, or total path length on the
    /// sequential and swapping tasks.
    pub avg_distance: f64,
    pub collisions: f64,
    pub sync: f64,
    pub not_sync: f64,
    pub food: f64,
    pub poison: f64,
}

/// One agent's turn as seen by an instrumented rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnTrace {
    /// Message the agent read.
    pub memory_in: Vec<f64>,
    pub turn: Turn,
    /// Action passed to the environment.
    pub action: Vec<f64>,
}

/// Full record of an instrumented episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub metrics: EpisodeMetrics,
    pub steps: Vec<StepRecord>,
    /// `turns[t][i]` is agent `i`'s turn at step `t`.
    pub turns: Vec<Vec<TurnTrace>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Sample mean and (n - 1) standard deviation; a single value has std 0.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    pub episodes: usize,
    pub reward: Stat,
    pub avg_distance: Stat,
    pub collisions: Stat,
    pub sync: Stat,
    pub not_sync: Stat,
    pub food: Stat,
    pub poison: Stat,
}

impl MetricsReport {
    pub fn from_episodes(task: Task, eps: &[EpisodeMetrics]) -> Self {
        let col = |f: fn(&EpisodeMetrics) -> f64| Stat::of(&eps.iter().map(f).collect::<Vec<_>>());
        Self {
            task,
            episodes: eps.len(),
            reward: col(|e| e.reward),
            avg_distance: col(|e| e.avg_distance),
            collisions: col(|e| e.collisions),
            sync: col(|e| e.sync),
            not_sync: col(|e| e.not_sync),
            food: col(|e| e.food),
            poison: col(|e| e.poison),
        }
    }

    /// `(name, stat)` pairs for the metrics that apply to the task.
    pub fn applicable(&self) -> Vec<(&'static str, Stat)> {
        let mut out = vec![("reward", self.reward)];
        match self.task {
            Task::Cn | Task::PoCn => {
                out.push(("avg_distance", self.avg_distance));
                out.push(("collisions", self.collisions));
            }
            Task::SyncCn => {
                out.push(("sync", self.sync));
                out.push(("not_sync", self.not_sync));
            }
            Task::SequentialCn | Task::SwappingCn => out.push(("avg_distance", self.avg_distance)),
            Task::Waterworld => {
                out.push(("food", self.food));
                out.push(("poison", self.poison));
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,mean,std,episodes\n");
        for (name, st) in self.applicable() {
            let _ = writeln!(s, "{name},{},{},{}", fmt_real(st.mean), fmt_real(st.std), self.episodes);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub episodes: Vec<EpisodeMetrics>,
}

pub fn episodes_header(n_agents: usize) -> String {
    let mut h = String::from("episode,seed,reward");
    for i in 0..n_agents {
        let _ = write!(h, ",reward_{i}");
    }
    h.push_str(",avg_distance,collisions,sync,not_sync,food,poison");
    h
}

/// Per-episode metrics CSV, fixed column order, 17 significant digits.
pub fn episodes_csv(eps: &[EpisodeMetrics], n_agents: usize) -> String {
    let mut s = episodes_header(n_agents);
    s.push('\n');
    for e in eps {
        let _ = write!(s, "{},{},{}", e.episode, e.seed, fmt_real(e.reward));
        for r in &e.agent_rewards {
            let _ = write!(s, ",{}", fmt_real(*r));
        }
        for v in [e.avg_distance, e.collisions, e.sync, e.not_sync, e.food, e.poison] {
            let _ = write!(s, ",{}", fmt_real(v));
        }
        s.push('\n');
    }
    s
}

/// Greedy action from a head output: one-hot argmax or the squashed vector.
pub fn greedy_action(head: ActionHead, output: &[f64]) -> Vec<f64> {
    match head {
        ActionHead::Logits => one_hot(output.len(), argmax(output)),
        ActionHead::Tanh => output.to_vec(),
    }
}

fn gaussian(rng: &mut ChaCha8Rng, len: usize, std: f64) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            std * z
        })
        .collect()
}

fn check_mode(team: &Team, mode: MemoryMode) -> Result<()> {
    match mode {
        MemoryMode::Clean => Ok(()),
        MemoryMode::Corrupted { std } | MemoryMode::Randomized { std } => {
            if team.memory_dim() == 0 {
                return Err(Error::Config(format!(
                    "memory corruption needs a memory-driven team; {} has no memory device",
                    team.algorithm.name()
                )));
            }
            if !(std >= 0.0 && std.is_finite()) {
                return Err(Error::Config(format!("noise std must be finite and non-negative, got {std}")));
            }
            Ok(())
        }
    }
}

/// One greedy episode. `episode` indexes the derived environment and noise seeds.
pub fn rollout(
    team: &Team,
    env: &EnvConfig,
    master_seed: u64,
    episode: usize,
    mode: MemoryMode,
    record: bool,
) -> Result<EpisodeTrace> {
    check_mode(team, mode)?;
    let (obs_dims, action_dim, _) = env_dims(env);
    team.check_dims(&obs_dims, action_dim)?;
    let env_seed = derive_seed(master_seed, stream::EVAL, episode as u64);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, stream::NOISE, episode as u64));
    let (mut state, mut obs) = envs::reset(env, env_seed)?;
    let n = team.n_agents();
    let m_dim = team.memory_dim();
    let mut memory = vec![0.0; m_dim];
    let mut totals = vec![0.0; n];
    let mut events = Vec::with_capacity(env.horizon);
    let mut steps = Vec::new();
    let mut turns = Vec::new();
    for t in 0..env.horizon {
        let mut actions = Vec::with_capacity(n);
        let mut step_turns = Vec::new();
        for (i, actor) in team.actors.iter().enumerate() {
            if let MemoryMode::Randomized { std } = mode {
                memory = gaussian(&mut noise_rng, m_dim, std);
            }
            let turn = actor.turn(&team.actor_input(i, &obs), &memory)?;
            let action = greedy_action(actor.head(), &turn.output);
            let memory_in = std::mem::take(&mut memory);
            memory = turn.m_prime.clone();
            if let MemoryMode::Corrupted { std } = mode {
                if std > 0.0 {
                    for v in memory.iter_mut() {
                        let z: f64 = noise_rng.sample(StandardNormal);
                        *v += std * z;
                    }
                }
            }
            if record {
                step_turns.push(TurnTrace {
                    memory_in,
                    turn,
                    action: action.clone(),
                });
            }
            actions.push(action);
        }
        let result = envs::step(&mut state, &actions)?;
        for (acc, r) in totals.iter_mut().zip(&result.rewards) {
            *acc += r;
        }
        if record {
            steps.push(StepRecord {
                t,
                positions: state.agents.iter().map(|a| a.pos).collect(),
                actions,
                rewards: result.rewards.clone(),
                events: result.events.clone(),
                phase: 0,
            });
            turns.push(step_turns);
        }
        events.push(result.events);
        obs = result.observations;
        if result.done {
            break;
        }
    }
    if record {
        for (s, p) in steps.iter_mut().zip(phase_of(&events, env.task)) {
            s.phase = p;
        }
    }
    let len = events.len().max(1) as f64;
    let avg_distance = match env.task {
        Task::SequentialCn | Task::SwappingCn => events.iter().map(|e| e.path_length).sum(),
        _ => events.iter().map(|e| e.landmark_distance).sum::<f64>() / len,
    };
    let metrics = EpisodeMetrics {
        episode,
        seed: env_seed,
        reward: totals.iter().sum::<f64>() / n as f64,
        agent_rewards: totals,
        avg_distance,
        collisions: events.iter().map(|e| f64::from(e.collisions)).sum(),
        sync: events.iter().filter(|e| e.sync_occupied).count() as f64,
        not_sync: events.iter().filter(|e| e.not_sync_occupied).count() as f64,
        food: events.iter().map(|e| f64::from(e.food_captured)).sum(),
        poison: events.iter().map(|e| f64::from(e.poison_hits)).sum(),
    };
    Ok(EpisodeTrace { metrics, steps, turns })
}

fn run_jobs<T: Send, F: Fn(usize) -> Result<T> + Sync + Send>(count: usize, jobs: usize, f: F) -> Result<Vec<T>> {
    if jobs <= 1 || count <= 1 {
        return (0..count).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
    pool.install(|| (0..count).into_par_iter().map(f).collect())
}

/// Greedy evaluation over `opts.episodes` episodes; identical for any `jobs`.
pub fn evaluate(team: &Team, env: &EnvConfig, opts: &EvalOptions) -> Result<Evaluation> {
    env.validate()?;
    check_mode(team, opts.memory)?;
    let (obs_dims, action_dim, _) = env_dims(env);
    team.check_dims(&obs_dims, action_dim)?;
    let episodes = run_jobs(opts.episodes, opts.jobs, |k| {
        rollout(team, env, opts.seed, k, opts.memory, false).map(|t| t.metrics)
    })?;
    Ok(Evaluation {
        report: MetricsReport::from_episodes(env.task, &episodes),
        episodes,
    })
}

/// Grid axis with its values.
#[derive(Debug, Clone, PartialEq)]
pub enum GridAxis {
    NAgents(Vec<usize>),
    MemorySize(Vec<usize>),
    Seed(Vec<u64>),
    Variant(Vec<Variant>),
}

impl GridAxis {
    pub fn name(&self) -> &'static str {
        match self {
            GridAxis::NAgents(_) => "n-agents",
            GridAxis::MemorySize(_) => "memory-size",
            GridAxis::Seed(_) => "seed",
            GridAxis::Variant(_) => "variant",
        }
    }

    /// Parses `name=v1,v2,...`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (name, values) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("axis {spec:?} must look like name=v1,v2")))?;
        let items: Vec<&str> = values.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        if items.is_empty() {
            return Err(Error::Config(format!("axis {name} has no values")));
        }
        fn nums<T: std::str::FromStr>(name: &str, items: &[&str]) -> Result<Vec<T>> {
            items
                .iter()
                .map(|s| s.parse().map_err(|_| Error::Config(format!("axis {name}: cannot parse {s:?}"))))
                .collect()
        }
        match name.trim() {
            "n-agents" | "n_agents" => Ok(GridAxis::NAgents(nums(name, &items)?)),
            "memory-size" | "memory_size" => Ok(GridAxis::MemorySize(nums(name, &items)?)),
            "seed" => Ok(GridAxis::Seed(nums(name, &items)?)),
            "variant" => Ok(GridAxis::Variant(items.iter().map(|s| Variant::parse(s)).collect::<Result<_>>()?)),
            other => Err(Error::Config(format!(
                "unknown axis {other:?}; expected n-agents, memory-size, seed or variant"
            ))),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            GridAxis::NAgents(v) | GridAxis::MemorySize(v) => v.len(),
            GridAxis::Seed(v) => v.len(),
            GridAxis::Variant(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Base configs with point `k` applied, plus its printable value.
    fn apply(&self, k: usize, train: &TrainConfig, env: &EnvConfig) -> (String, TrainConfig, EnvConfig) {
        let (mut t, mut e) = (train.clone(), env.clone());
        let value = match self {
            GridAxis::NAgents(v) => {
                e.n_agents = v[k];
                v[k].to_string()
            }
            GridAxis::MemorySize(v) => {
                t.memory_size = v[k];
                v[k].to_string()
            }
            GridAxis::Seed(v) => {
                t.seed = v[k];
                v[k].to_string()
            }
            GridAxis::Variant(v) => {
                t.variant = v[k];
                v[k].name().to_string()
            }
        };
        (value, t, e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub axis: &'static str,
    pub value: String,
    pub outcome: std::result::Result<Evaluation, String>,
}

/// Trains and evaluates one grid point.
pub fn train_and_evaluate(train: &TrainConfig, env: &EnvConfig, opts: &EvalOptions) -> Result<Evaluation> {
    let mut trainer = Trainer::new(train.clone(), env.clone())?;
    trainer.train()?;
    evaluate(&trainer.team(), env, opts)
}

/// One independent train + evaluate per axis value. Failed cells are kept
/// with their error message; the grid continues.
pub fn run_experiment_grid(axis: &GridAxis, train: &TrainConfig, env: &EnvConfig, opts: &EvalOptions, jobs: usize) -> Vec<GridCell> {
    let cell_opts = EvalOptions { jobs: 1, ..opts.clone() };
    let cells = run_jobs(axis.len(), jobs, |k| {
        let (value, t, e) = axis.apply(k, train, env);
        let outcome = train_and_evaluate(&t, &e, &cell_opts).map_err(|err| err.to_string());
        Ok(GridCell {
            axis: axis.name(),
            value,
            outcome,
        })
    });
    cells.expect("cells never fail as a whole")
}

/// One row per grid cell: coordinates, status, and mean/std per metric.
pub fn grid_csv(cells: &[GridCell]) -> String {
    const METRICS: [&str; 7] = ["reward", "avg_distance", "collisions", "sync", "not_sync", "food", "poison"];
    let mut s = String::from("axis,value,status,episodes");
    for m in METRICS {
        let _ = write!(s, ",{m}_mean,{m}_std");
    }
    s.push_str(",error\n");
    for c in cells {
        match &c.outcome {
            Ok(ev) => {
                let r = &ev.report;
                let _ = write!(s, "{},{},ok,{}", c.axis, c.value, r.episodes);
                for st in [r.reward, r.avg_distance, r.collisions, r.sync, r.not_sync, r.food, r.poison] {
                    let _ = write!(s, ",{},{}", fmt_real(st.mean), fmt_real(st.std));
                }
                s.push_str(",\n");
            }
            Err(msg) => {
                let _ = write!(s, "{},{},failed,0", c.axis, c.value);
                s.push_str(&",".repeat(2 * METRICS.len()));
                let _ = writeln!(s, ",{}", msg.replace([',', '\n'], ";"));
            }
        }
    }
    s
}

/// Long-format per-episode rewards for every successful cell.
pub fn grid_episodes_csv(cells: &[GridCell]) -> String {
    let mut s = String::from("axis,value,episode,seed,reward\n");
    for c in cells {
        if let Ok(ev) = &c.outcome {
            for e in &ev.episodes {
                let _ = writeln!(s, "{},{},{},{},{}", c.axis, c.value, e.episode, e.seed, fmt_real(e.reward));
            }
        }
    }
    s
}
