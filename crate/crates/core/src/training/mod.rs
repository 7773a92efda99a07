//! Centralized-critic training: replay, exploration, actor and critic
//! updates, target networks, and the MADDPG / meta-agent baselines.

mod actor;
mod buffer;
mod noise;
mod update;

pub use actor::{mlp_actor_spec, mlp_block_names, Actor, ActorCache, ActorSpec, Team, Turn};
pub use buffer::{ReplayBuffer, Transition};
pub use noise::{argmax, gumbel, gumbel_softmax, gumbel_softmax_backward, gumbel_softmax_batch, one_hot, OuState};
pub use update::{AgentNets, Learners, Minibatch, UpdateParams};

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{self, obs_dim, EnvConfig};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalOptions};
use crate::memdevice::{ActionHead, MdShape, Variant};
use crate::nn::{Activation, Checkpoint, Mlp, MlpSpec, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    MdMaddpg,
    Maddpg,
    MaMaddpg,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::MdMaddpg, Algorithm::Maddpg, Algorithm::MaMaddpg];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::MdMaddpg => "md-maddpg",
            Algorithm::Maddpg => "maddpg",
            Algorithm::MaMaddpg => "ma-maddpg",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm {s:?}; expected one of md-maddpg, maddpg, ma-maddpg")))
    }

    pub fn uses_memory(self) -> bool {
        self == Algorithm::MdMaddpg
    }
}

/// Learning hyperparameters and network sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub episodes: usize,
    pub seed: u64,
    pub gamma: f64,
    pub tau: f64,
    pub lr_critic: f64,
    pub lr_actor: f64,
    pub batch_size: usize,
    /// Environment steps between update rounds.
    pub update_every: usize,
    /// Transitions required before the first update; 0 means `batch_size`.
    pub warmup: usize,
    pub buffer_capacity: usize,
    pub memory_size: usize,
    pub embed: usize,
    pub context: usize,
    pub enc_hidden: usize,
    pub act_hidden: usize,
    pub variant: Variant,
    /// Hidden widths of the baseline actors.
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub gumbel_temperature: f64,
    pub ou_theta: f64,
    pub ou_sigma: f64,
    /// Fraction of episodes over which σ decays linearly to 0; 0 keeps σ fixed.
    pub noise_decay_fraction: f64,
    /// Global-norm gradient clip; 0 disables.
    pub grad_clip: f64,
    pub actor_logit_reg: f64,
    /// Episodes between learning-curve evaluations; 0 disables them.
    pub eval_every: usize,
    pub eval_episodes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::MdMaddpg,
            episodes: 60_000,
            seed: 0,
            gamma: 0.95,
            tau: 0.01,
            lr_critic: 1e-3,
            lr_actor: 1e-4,
            batch_size: 1024,
            update_every: 100,
            warmup: 0,
            buffer_capacity: 1_000_000,
            memory_size: 200,
            embed: 200,
            context: 200,
            enc_hidden: 512,
            act_hidden: 256,
            variant: Variant::Full,
            actor_hidden: vec![512, 256],
            critic_hidden: vec![1024, 512, 256],
            gumbel_temperature: 1.0,
            ou_theta: 0.15,
            ou_sigma: 0.3,
            noise_decay_fraction: 0.8,
            grad_clip: 0.5,
            actor_logit_reg: 1e-3,
            eval_every: 100,
            eval_episodes: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        for (name, v) in [("lr_critic", self.lr_critic), ("lr_actor", self.lr_actor), ("gumbel_temperature", self.gumbel_temperature)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("update_every", self.update_every),
            ("buffer_capacity", self.buffer_capacity),
            ("embed", self.embed),
            ("enc_hidden", self.enc_hidden),
            ("act_hidden", self.act_hidden),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.algorithm.uses_memory() && self.variant != Variant::NoContext && self.memory_size > 0 && self.context == 0 {
            return bad("context must be positive when the read gate uses a context vector".into());
        }
        if !self.algorithm.uses_memory() && self.variant != Variant::Full {
            return bad(format!("variant {} only applies to md-maddpg", self.variant.name()));
        }
        if self.actor_hidden.contains(&0) || self.critic_hidden.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.noise_decay_fraction) {
            return bad(format!("noise_decay_fraction must lie in [0, 1], got {}", self.noise_decay_fraction));
        }
        if self.ou_theta < 0.0 || self.ou_sigma < 0.0 || self.grad_clip < 0.0 || self.actor_logit_reg < 0.0 {
            return bad("ou_theta, ou_sigma, grad_clip and actor_logit_reg must be non-negative".into());
        }
        Ok(())
    }

    pub fn update_params(&self) -> UpdateParams {
        UpdateParams {
            gamma: self.gamma,
            tau: self.tau,
            lr_critic: self.lr_critic,
            lr_actor: self.lr_actor,
            temperature: self.gumbel_temperature,
            grad_clip: self.grad_clip,
            logit_reg: self.actor_logit_reg,
        }
    }

    fn effective_warmup(&self) -> usize {
        if self.warmup == 0 {
            self.batch_size
        } else {
            self.warmup
        }
    }

    /// OU volatility for a (zero-based) episode index.
    pub fn sigma_at(&self, episode: usize) -> f64 {
        if self.noise_decay_fraction <= 0.0 || self.episodes == 0 {
            return self.ou_sigma;
        }
        let span = self.noise_decay_fraction * self.episodes as f64;
        self.ou_sigma * (1.0 - episode as f64 / span).max(0.0)
    }
}

/// Stream tags for [`derive_seed`].
pub mod stream {
    pub const INIT: u64 = 1;
    pub const ENV: u64 = 2;
    pub const EXPLORE: u64 = 3;
    pub const SAMPLE: u64 = 4;
    pub const UPDATE: u64 = 5;
    pub const EVAL: u64 = 6;
    pub const NOISE: u64 = 7;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent child seed for `(master, stream, index)`.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ stream) ^ index)
}

/// Action head and widths implied by an environment.
pub fn env_dims(env: &EnvConfig) -> (Vec<usize>, usize, ActionHead) {
    let obs = vec![obs_dim(env); env.n_agents];
    let head = if env.task.is_discrete() { ActionHead::Logits } else { ActionHead::Tanh };
    (obs, env.task.action_dim(), head)
}

/// Actor architecture for agent `i`.
pub fn actor_spec(cfg: &TrainConfig, env: &EnvConfig) -> ActorSpec {
    let (obs, action_dim, head) = env_dims(env);
    match cfg.algorithm {
        Algorithm::MdMaddpg => ActorSpec::Md {
            shape: MdShape {
                obs_dim: obs[0],
                enc_hidden: cfg.enc_hidden,
                embed: cfg.embed,
                context: cfg.context,
                memory: cfg.memory_size,
                act_hidden: cfg.act_hidden,
                action_dim,
                head,
                variant: cfg.variant,
            },
        },
        Algorithm::Maddpg => ActorSpec::Mlp {
            spec: mlp_actor_spec(obs[0], &cfg.actor_hidden, action_dim, head),
            head,
        },
        Algorithm::MaMaddpg => ActorSpec::Mlp {
            spec: mlp_actor_spec(obs.iter().sum(), &cfg.actor_hidden, action_dim, head),
            head,
        },
    }
}

/// Centralized critic: `[x, a_1..a_N] -> hidden (ReLU) -> Q`.
pub fn critic_spec(cfg: &TrainConfig, env: &EnvConfig) -> MlpSpec {
    let (obs, action_dim, _) = env_dims(env);
    let input = obs.iter().sum::<usize>() + action_dim * obs.len();
    MlpSpec::stack(input, &cfg.critic_hidden, Activation::Relu, 1, Activation::Linear)
}

/// Freshly initialized learners for a run.
pub fn init_learners(cfg: &TrainConfig, env: &EnvConfig) -> Result<Learners> {
    cfg.validate()?;
    env.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, stream::INIT, 0));
    let a_spec = actor_spec(cfg, env);
    let c_spec = critic_spec(cfg, env);
    let agents = (0..env.n_agents)
        .map(|_| {
            let actor = Actor::new(&a_spec, &mut rng)?;
            let critic = Mlp::new(c_spec.clone(), &mut rng)?;
            Ok(AgentNets::new(actor, critic))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Learners {
        algorithm: cfg.algorithm,
        agents,
    })
}

/// One learning-curve row.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    /// Training episodes completed when the evaluation ran.
    pub episode: usize,
    /// Mean evaluation return per agent.
    pub rewards: Vec<f64>,
    /// Mean critic loss of the latest update round (NaN before any update).
    pub critic_loss: f64,
    /// Mean pre-clip actor gradient norm of the latest update round.
    pub actor_grad_norm: f64,
}

pub fn curve_header(n_agents: usize) -> String {
    let mut h = String::from("episode");
    for i in 0..n_agents {
        let _ = write!(h, ",reward_{i}");
    }
    h.push_str(",critic_loss,actor_grad_norm");
    h
}

/// Learning curve as CSV with 17 significant digits per float.
pub fn curve_csv(rows: &[CurveRow], n_agents: usize) -> String {
    let mut out = curve_header(n_agents);
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{}", r.episode);
        for v in &r.rewards {
            let _ = write!(out, ",{}", envs::fmt_real(*v));
        }
        let _ = writeln!(out, ",{},{}", envs::fmt_real(r.critic_loss), envs::fmt_real(r.actor_grad_norm));
    }
    out
}

/// Per-episode training statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub episode: usize,
    pub rewards: Vec<f64>,
    pub updates: usize,
}

/// Stepwise trainer; [`Trainer::train`] runs the whole schedule.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    env: EnvConfig,
    learners: Learners,
    buffer: ReplayBuffer,
    explore_rng: ChaCha8Rng,
    sample_rng: ChaCha8Rng,
    update_rng: ChaCha8Rng,
    episode: usize,
    steps: usize,
    updates: usize,
    last_loss: f64,
    last_norm: f64,
    curve: Vec<CurveRow>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, env: EnvConfig) -> Result<Self> {
        let learners = init_learners(&cfg, &env)?;
        let seed = cfg.seed;
        Ok(Self {
            buffer: ReplayBuffer::new(cfg.buffer_capacity)?,
            explore_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, stream::EXPLORE, 0)),
            sample_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, stream::SAMPLE, 0)),
            update_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, stream::UPDATE, 0)),
            cfg,
            env,
            learners,
            episode: 0,
            steps: 0,
            updates: 0,
            last_loss: f64::NAN,
            last_norm: f64::NAN,
            curve: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn env(&self) -> &EnvConfig {
        &self.env
    }

    pub fn learners(&self) -> &Learners {
        &self.learners
    }

    pub fn learners_mut(&mut self) -> &mut Learners {
        &mut self.learners
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn curve(&self) -> &[CurveRow] {
        &self.curve
    }

    pub fn team(&self) -> Team {
        self.learners.team()
    }

    /// Runs one exploratory episode, storing transitions and updating on schedule.
    pub fn run_episode(&mut self) -> Result<EpisodeLog> {
        let n = self.env.n_agents;
        let env_seed = derive_seed(self.cfg.seed, stream::ENV, self.episode as u64);
        let (mut state, mut obs) = envs::reset(&self.env, env_seed)?;
        let team = self.learners.team();
        let action_dim = self.env.task.action_dim();
        let sigma = self.cfg.sigma_at(self.episode);
        let mut ou: Vec<OuState> = (0..n)
            .map(|_| OuState::with_params(action_dim, self.cfg.ou_theta, sigma, 0.0))
            .collect();
        let mut memory = vec![0.0; team.memory_dim()];
        let mut totals = vec![0.0; n];
        let updates_before = self.updates;
        for _ in 0..self.env.horizon {
            let mut actions = Vec::with_capacity(n);
            let mut memories = Vec::with_capacity(if team.memory_dim() > 0 { n } else { 0 });
            for (i, actor) in team.actors.iter().enumerate() {
                if team.memory_dim() > 0 {
                    memories.push(memory.clone());
                }
                let turn = actor.turn(&team.actor_input(i, &obs), &memory)?;
                let noise = ou[i].next(&mut self.explore_rng);
                let action = match actor.head() {
                    ActionHead::Logits => {
                        let noisy: Vec<f64> = turn.output.iter().zip(noise).map(|(l, z)| l + z).collect();
                        gumbel_softmax(&noisy, self.cfg.gumbel_temperature, &mut self.explore_rng)
                    }
                    ActionHead::Tanh => turn.output.iter().zip(noise).map(|(a, z)| (a + z).clamp(-1.0, 1.0)).collect(),
                };
                if team.memory_dim() > 0 {
                    memory = turn.m_prime;
                }
                actions.push(action);
            }
            let result = envs::step(&mut state, &actions)?;
            for (t, r) in totals.iter_mut().zip(&result.rewards) {
                *t += r;
            }
            self.buffer.push(Transition {
                obs: std::mem::replace(&mut obs, result.observations.clone()),
                next_obs: result.observations,
                actions,
                memories,
                rewards: result.rewards,
            });
            self.steps += 1;
            if self.steps % self.cfg.update_every == 0 && self.buffer.len() >= self.cfg.effective_warmup() {
                self.update_round()?;
            }
            if result.done {
                break;
            }
        }
        self.episode += 1;
        Ok(EpisodeLog {
            episode: self.episode,
            rewards: totals,
            updates: self.updates - updates_before,
        })
    }

    /// One critic and one actor step per agent, then soft target updates.
    pub fn update_round(&mut self) -> Result<()> {
        let p = self.cfg.update_params();
        let n = self.learners.n_agents();
        let (mut loss, mut norm) = (0.0, 0.0);
        for i in 0..n {
            let idx = self.buffer.sample_indices(self.cfg.batch_size, &mut self.sample_rng)?;
            let items: Vec<&Transition> = idx.iter().map(|&k| self.buffer.get(k)).collect();
            let batch = Minibatch::from_transitions(&items)?;
            loss += self.learners.critic_update(i, &batch, &p, &mut self.update_rng)?;
            norm += self.learners.actor_update(i, &batch, &p, &mut self.update_rng)?;
        }
        self.learners.update_targets(p.tau)?;
        self.updates += 1;
        self.last_loss = loss / n as f64;
        self.last_norm = norm / n as f64;
        Ok(())
    }

    /// Greedy evaluation appended to the learning curve.
    pub fn log_evaluation(&mut self) -> Result<&CurveRow> {
        let opts = EvalOptions {
            episodes: self.cfg.eval_episodes.max(1),
            seed: derive_seed(self.cfg.seed, stream::EVAL, 0),
            ..EvalOptions::default()
        };
        let eval = evaluate(&self.learners.team(), &self.env, &opts)?;
        let n = self.env.n_agents;
        let mut rewards = vec![0.0; n];
        for ep in &eval.episodes {
            for (acc, r) in rewards.iter_mut().zip(&ep.agent_rewards) {
                *acc += r;
            }
        }
        let count = eval.episodes.len() as f64;
        rewards.iter_mut().for_each(|r| *r /= count);
        self.curve.push(CurveRow {
            episode: self.episode,
            rewards,
            critic_loss: self.last_loss,
            actor_grad_norm: self.last_norm,
        });
        Ok(self.curve.last().expect("just pushed"))
    }

    /// Runs the remaining episodes with periodic evaluations (including one
    /// before the first episode and one after the last).
    pub fn train(&mut self) -> Result<()> {
        let every = self.cfg.eval_every;
        if every > 0 && self.curve.is_empty() {
            self.log_evaluation()?;
        }
        while self.episode < self.cfg.episodes {
            self.run_episode()?;
            if every > 0 && (self.episode % every == 0 || self.episode == self.cfg.episodes) {
                self.log_evaluation()?;
            }
        }
        Ok(())
    }

    /// Per-agent checkpoints of the current state.
    pub fn checkpoints(&self) -> Vec<Checkpoint> {
        learner_checkpoints(&self.learners, &self.env, self.episode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDescriptor {
    pub algorithm: Algorithm,
    pub agent: usize,
    pub n_agents: usize,
    pub task: envs::Task,
    pub episodes: usize,
    pub actor: ActorSpec,
    pub critic: MlpSpec,
}

pub fn learner_checkpoints(learners: &Learners, env: &EnvConfig, episodes: usize) -> Vec<Checkpoint> {
    learners
        .agents
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let desc = AgentDescriptor {
                algorithm: learners.algorithm,
                agent: i,
                n_agents: learners.n_agents(),
                task: env.task,
                episodes,
                actor: a.actor.spec(),
                critic: a.critic.spec().clone(),
            };
            let mut ck = Checkpoint::new(serde_json::to_value(desc).expect("descriptor serializes"));
            let critic_names = mlp_block_names(a.critic.spec());
            for (prefix, names, blocks) in [
                ("actor/", a.actor.block_names(), a.actor.blocks()),
                ("target_actor/", a.target_actor.block_names(), a.target_actor.blocks()),
                ("critic/", critic_names.clone(), a.critic.blocks()),
                ("target_critic/", critic_names, a.target_critic.blocks()),
            ] {
                for (name, m) in names.iter().zip(blocks) {
                    ck.push(format!("{prefix}{name}"), m.clone());
                }
            }
            ck
        })
        .collect()
}

/// Rebuilds an execution team from per-agent checkpoints.
pub fn team_from_checkpoints(checkpoints: &[Checkpoint]) -> Result<Team> {
    if checkpoints.is_empty() {
        return Err(Error::Incompatible("no agent checkpoints".into()));
    }
    let mut algorithm = None;
    let mut actors = Vec::with_capacity(checkpoints.len());
    for (i, ck) in checkpoints.iter().enumerate() {
        let desc: AgentDescriptor = serde_json::from_value(ck.descriptor.clone())
            .map_err(|e| Error::Incompatible(format!("checkpoint {i} descriptor: {e}")))?;
        if desc.agent != i || desc.n_agents != checkpoints.len() {
            return Err(Error::Incompatible(format!(
                "checkpoint {i} is agent {} of {}, expected agent {i} of {}",
                desc.agent,
                desc.n_agents,
                checkpoints.len()
            )));
        }
        if *algorithm.get_or_insert(desc.algorithm) != desc.algorithm {
            return Err(Error::Incompatible("checkpoints mix algorithms".into()));
        }
        let mut actor = Actor::zeros(&desc.actor)?;
        let blocks: Vec<_> = ck.with_prefix("actor/").into_iter().map(|b| (b.name, b.matrix)).collect();
        actor.load_blocks(&blocks)?;
        actors.push(actor);
    }
    Ok(Team {
        algorithm: algorithm.expect("non-empty"),
        actors,
    })
}
