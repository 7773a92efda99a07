//! Cooperative 2-D particle tasks on a shared point-mass kernel.
//!
//! Space is continuous (`[-1, 1]^2`, hard clamped), time is discrete. All
//! randomness lives in a seeded stream carried inside [`WorldState`], so
//! `step` is a pure function of `(state, joint_action)`.

mod config;
mod observe;
mod phase;
mod trace;

pub use config::{EnvConfig, Task};
pub use observe::{obs_dim, observe};
pub use phase::phase_of;
pub use trace::{read_trace_csv, trace_header, write_trace_csv, StepRecord};
pub(crate) use trace::fmt_real;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = [f64; 2];

/// Five discrete moves: stay, +x, -x, +y, -y.
pub const N_MOVES: usize = 5;

#[inline]
pub(crate) fn dist(a: Vec2, b: Vec2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Body {
    pub pos: Vec2,
    pub vel: Vec2,
    pub radius: f64,
}

impl Body {
    fn at(pos: Vec2, radius: f64) -> Self {
        Self {
            pos,
            vel: [0.0, 0.0],
            radius,
        }
    }
}

/// Swapping task bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapState {
    /// 0 = reach, 1 = swap, 2 = reach again.
    pub phase: u32,
    /// Agent that held each landmark at the first simultaneous occupation.
    pub owners: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct WorldState {
    pub config: EnvConfig,
    pub agents: Vec<Body>,
    pub landmarks: Vec<Body>,
    pub food: Vec<Body>,
    pub poison: Vec<Body>,
    pub t: usize,
    pub occupied: Vec<bool>,
    pub swap: SwapState,
    rng: ChaCha8Rng,
}

/// Per-step event counts used by the metrics and phase labelling.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepEvents {
    /// Colliding agent pairs this step.
    pub collisions: u32,
    /// Every landmark occupied at once.
    pub sync_occupied: bool,
    /// Some, but not all, landmarks occupied.
    pub not_sync_occupied: bool,
    pub food_captured: u32,
    pub poison_hits: u32,
    pub occupied_count: u32,
    /// Landmarks occupied now that were free on the previous step.
    pub newly_occupied: u32,
    /// Swapping task phase in effect while this step was scored.
    pub swap_phase: u32,
    /// Mean over landmarks of the nearest agent's distance.
    pub landmark_distance: f64,
    /// Total distance travelled by all agents this step.
    pub path_length: f64,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub observations: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub events: StepEvents,
    pub done: bool,
}

fn sample_point<R: Rng>(rng: &mut R, radius: f64) -> Vec2 {
    let lim = (1.0 - radius).max(0.0);
    if lim == 0.0 {
        return [0.0, 0.0];
    }
    [rng.random_range(-lim..lim), rng.random_range(-lim..lim)]
}

/// Places bodies of the given radii uniformly without overlap.
fn place<R: Rng>(rng: &mut R, radii: &[f64], retries: usize) -> Result<Vec<Body>> {
    let mut placed: Vec<Body> = Vec::with_capacity(radii.len());
    for &r in radii {
        let mut ok = None;
        for _ in 0..retries {
            let p = sample_point(rng, r);
            if placed.iter().all(|b| dist(b.pos, p) >= b.radius + r) {
                ok = Some(p);
                break;
            }
        }
        match ok {
            Some(p) => placed.push(Body::at(p, r)),
            None => {
                return Err(Error::Config(format!(
                    "could not place {} non-overlapping entities after {retries} attempts each; arena too crowded",
                    radii.len()
                )))
            }
        }
    }
    Ok(placed)
}

/// Fresh episode: agents and targets placed uniformly without overlap,
/// velocities zero.
pub fn reset(config: &EnvConfig, seed: u64) -> Result<(WorldState, Vec<Vec<f64>>)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.n_agents;
    let mut radii = vec![config.agent_radius; n];
    let n_landmarks = config.n_landmarks();
    radii.extend(std::iter::repeat_n(config.landmark_radius, n_landmarks));
    radii.extend(std::iter::repeat_n(config.food_radius, config.n_food()));
    radii.extend(std::iter::repeat_n(config.poison_radius, config.n_poison()));
    let mut bodies = place(&mut rng, &radii, config.placement_retries)?;
    let poison = bodies.split_off(n + n_landmarks + config.n_food());
    let food = bodies.split_off(n + n_landmarks);
    let landmarks = bodies.split_off(n);
    let state = WorldState {
        config: config.clone(),
        agents: bodies,
        occupied: vec![false; landmarks.len()],
        landmarks,
        food,
        poison,
        t: 0,
        swap: SwapState {
            phase: 0,
            owners: Vec::new(),
        },
        rng,
    };
    let obs = (0..n).map(|i| observe(&state, i)).collect();
    Ok((state, obs))
}

impl WorldState {
    /// Nearest agent index and distance for each landmark, restricted to
    /// agents allowed by `eligible`.
    fn nearest_agents(&self, eligible: impl Fn(usize, usize) -> bool) -> Vec<Option<(usize, f64)>> {
        self.landmarks
            .iter()
            .enumerate()
            .map(|(j, l)| {
                self.agents
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| eligible(*i, j))
                    .map(|(i, a)| (i, dist(a.pos, l.pos)))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
            })
            .collect()
    }

    fn occupation_threshold(&self) -> f64 {
        self.config.agent_radius + self.config.landmark_radius
    }

    fn colliding_pairs(&self) -> (u32, Vec<u32>) {
        let n = self.agents.len();
        let mut per_agent = vec![0u32; n];
        let mut pairs = 0;
        for i in 0..n {
            for j in i + 1..n {
                let (a, b) = (&self.agents[i], &self.agents[j]);
                if dist(a.pos, b.pos) < a.radius + b.radius {
                    pairs += 1;
                    per_agent[i] += 1;
                    per_agent[j] += 1;
                }
            }
        }
        (pairs, per_agent)
    }

    fn respawn(&mut self, radius: f64) -> Body {
        let p = sample_point(&mut self.rng, radius);
        Body::at(p, radius)
    }

    fn drift_targets(&mut self) {
        let jitter = self.config.target_jitter;
        let max = self.config.target_speed;
        let mut targets = std::mem::take(&mut self.food);
        targets.append(&mut self.poison);
        for b in targets.iter_mut() {
            for d in 0..2 {
                let eps: f64 = self.rng.sample(StandardNormal);
                b.vel[d] += jitter * eps;
            }
            let speed = (b.vel[0].powi(2) + b.vel[1].powi(2)).sqrt();
            if speed > max {
                b.vel = [b.vel[0] * max / speed, b.vel[1] * max / speed];
            }
            let lim = 1.0 - b.radius;
            for d in 0..2 {
                b.pos[d] += b.vel[d];
                if b.pos[d] > lim {
                    b.pos[d] = 2.0 * lim - b.pos[d];
                    b.vel[d] = -b.vel[d];
                } else if b.pos[d] < -lim {
                    b.pos[d] = -2.0 * lim - b.pos[d];
                    b.vel[d] = -b.vel[d];
                }
                b.pos[d] = b.pos[d].clamp(-lim, lim);
            }
        }
        self.poison = targets.split_off(self.config.n_food());
        self.food = targets;
    }
}

fn force_from_action(task: Task, action: &[f64]) -> Result<Vec2> {
    if action.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("actions must be finite".into()));
    }
    if task.is_discrete() {
        if action.len() != N_MOVES {
            return Err(Error::dim("discrete action", N_MOVES, action.len()));
        }
        Ok([action[1] - action[2], action[3] - action[4]])
    } else {
        if action.len() != 2 {
            return Err(Error::dim("continuous action", 2, action.len()));
        }
        Ok([action[0].clamp(-1.0, 1.0), action[1].clamp(-1.0, 1.0)])
    }
}

/// Advances the world by one timestep.
///
/// Discrete tasks take a 5-vector of move weights per agent (a one-hot
/// vector selects a single move); the applied force is
/// `(w[+x] - w[-x], w[+y] - w[-y])`. Waterworld takes a force in `[-1, 1]^2`.
pub fn step(state: &mut WorldState, joint_action: &[Vec<f64>]) -> Result<StepResult> {
    let cfg = state.config.clone();
    if joint_action.len() != cfg.n_agents {
        return Err(Error::dim("joint action arity", cfg.n_agents, joint_action.len()));
    }
    let forces = joint_action
        .iter()
        .map(|a| force_from_action(cfg.task, a))
        .collect::<Result<Vec<_>>>()?;

    let mut path_length = 0.0;
    for (agent, force) in state.agents.iter_mut().zip(&forces) {
        let mut v = [
            cfg.damping * agent.vel[0] + cfg.force_scale * force[0],
            cfg.damping * agent.vel[1] + cfg.force_scale * force[1],
        ];
        let speed = (v[0] * v[0] + v[1] * v[1]).sqrt();
        if speed > cfg.max_speed {
            v = [v[0] * cfg.max_speed / speed, v[1] * cfg.max_speed / speed];
        }
        let old = agent.pos;
        for d in 0..2 {
            let p = agent.pos[d] + v[d];
            let clamped = p.clamp(-1.0, 1.0);
            if clamped != p {
                v[d] = 0.0;
            }
            agent.pos[d] = clamped;
        }
        agent.vel = v;
        path_length += dist(old, agent.pos);
    }
    if cfg.task == Task::Waterworld {
        state.drift_targets();
    }

    let n = cfg.n_agents;
    let (collisions, per_agent_collisions) = state.colliding_pairs();
    let mut events = StepEvents {
        collisions,
        path_length,
        swap_phase: state.swap.phase,
        ..Default::default()
    };
    let mut rewards = vec![0.0; n];

    let nearest_any = state.nearest_agents(|_, _| true);
    let threshold = state.occupation_threshold();
    let n_landmarks = state.landmarks.len();
    if n_landmarks > 0 {
        events.landmark_distance =
            nearest_any.iter().map(|x| x.map_or(0.0, |(_, d)| d)).sum::<f64>() / n_landmarks as f64;
    }

    // Landmarks count as occupied by any agent, except in the swap phases
    // where each landmark must be taken by someone other than its first owner.
    let nearest = if cfg.task == Task::SwappingCn && state.swap.phase > 0 {
        let owners = state.swap.owners.clone();
        state.nearest_agents(move |i, j| owners.get(j).is_none_or(|&o| o != i))
    } else {
        nearest_any.clone()
    };
    let occupied: Vec<bool> = nearest.iter().map(|x| x.is_some_and(|(_, d)| d < threshold)).collect();
    let count = occupied.iter().filter(|&&o| o).count();
    events.occupied_count = count as u32;
    events.newly_occupied = occupied
        .iter()
        .zip(&state.occupied)
        .filter(|(now, before)| **now && !**before)
        .count() as u32;
    let all = n_landmarks > 0 && count == n_landmarks;
    events.sync_occupied = all;
    events.not_sync_occupied = count > 0 && !all;
    let nearest_sum: f64 = nearest.iter().map(|x| x.map_or(0.0, |(_, d)| d)).sum();

    let r = &cfg;
    match cfg.task {
        Task::Cn | Task::PoCn => {
            let shared = -nearest_any.iter().map(|x| x.map_or(0.0, |(_, d)| d)).sum::<f64>();
            for i in 0..n {
                rewards[i] = shared - r.collision_penalty * per_agent_collisions[i] as f64;
            }
        }
        Task::SyncCn | Task::SwappingCn => {
            let mut shared = -r.shaping * nearest_sum;
            if all {
                shared += r.sync_bonus;
            } else if count > 0 {
                shared -= r.not_sync_penalty;
            }
            rewards.iter_mut().for_each(|x| *x = shared);
            if cfg.task == Task::SwappingCn && all {
                match state.swap.phase {
                    0 => {
                        state.swap.owners = nearest.iter().map(|x| x.expect("landmark has an agent").0).collect();
                        state.swap.phase = 1;
                    }
                    1 => state.swap.phase = 2,
                    _ => {}
                }
            }
        }
        Task::SequentialCn => {
            let mut shared = 0.0;
            if count == 1 && events.newly_occupied == 1 {
                shared += r.sequential_bonus;
            }
            if all {
                shared -= r.simultaneous_penalty;
            }
            rewards.iter_mut().for_each(|x| *x = shared);
        }
        Task::Waterworld => {
            let capture = cfg.agent_radius + cfg.food_radius;
            for f in 0..state.food.len() {
                let food_pos = state.food[f].pos;
                if state.agents.iter().all(|a| dist(a.pos, food_pos) < capture) {
                    events.food_captured += 1;
                    rewards.iter_mut().for_each(|x| *x += r.food_reward);
                    state.food[f] = state.respawn(cfg.food_radius);
                }
            }
            let contact = cfg.agent_radius + cfg.poison_radius;
            for p in 0..state.poison.len() {
                let mut hit = false;
                for i in 0..n {
                    if dist(state.agents[i].pos, state.poison[p].pos) < contact {
                        events.poison_hits += 1;
                        rewards[i] -= r.poison_penalty;
                        hit = true;
                    }
                }
                if hit {
                    state.poison[p] = state.respawn(cfg.poison_radius);
                }
            }
        }
    }

    // The swap phase may have advanced; occupation memory follows the new rule.
    state.occupied = if cfg.task == Task::SwappingCn && state.swap.phase != events.swap_phase {
        vec![false; n_landmarks]
    } else {
        occupied
    };
    state.t += 1;
    let done = state.t >= cfg.horizon;
    let observations = (0..n).map(|i| observe(state, i)).collect();
    Ok(StepResult {
        observations,
        rewards,
        events,
        done,
    })
}
