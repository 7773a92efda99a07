use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Cn,
    PoCn,
    SyncCn,
    SequentialCn,
    SwappingCn,
    Waterworld,
}

impl Task {
    pub const ALL: [Task; 6] = [
        Task::Cn,
        Task::PoCn,
        Task::SyncCn,
        Task::SequentialCn,
        Task::SwappingCn,
        Task::Waterworld,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::Cn => "cn",
            Task::PoCn => "po-cn",
            Task::SyncCn => "sync-cn",
            Task::SequentialCn => "sequential-cn",
            Task::SwappingCn => "swapping-cn",
            Task::Waterworld => "waterworld",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown task tag `{s}`")))
    }

    pub fn is_discrete(self) -> bool {
        self != Task::Waterworld
    }

    pub fn action_dim(self) -> usize {
        if self.is_discrete() {
            super::N_MOVES
        } else {
            2
        }
    }

    /// Entities outside the vision radius are masked.
    pub fn partially_observed(self) -> bool {
        matches!(self, Task::PoCn | Task::Waterworld)
    }
}

/// Task layout, physics and reward constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub task: Task,
    pub n_agents: usize,
    pub horizon: usize,
    pub vision_radius: f64,
    pub agent_radius: f64,
    pub landmark_radius: f64,
    pub food_count: usize,
    pub poison_count: usize,
    pub food_radius: f64,
    pub poison_radius: f64,
    /// Maximum drift speed of Waterworld targets.
    pub target_speed: f64,
    /// Std of the per-step random-walk kick applied to target velocities.
    pub target_jitter: f64,
    pub sensors: usize,
    pub damping: f64,
    pub force_scale: f64,
    pub max_speed: f64,
    pub placement_retries: usize,
    pub collision_penalty: f64,
    pub sync_bonus: f64,
    pub not_sync_penalty: f64,
    pub shaping: f64,
    pub sequential_bonus: f64,
    pub simultaneous_penalty: f64,
    pub food_reward: f64,
    pub poison_penalty: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            task: Task::Cn,
            n_agents: 2,
            horizon: 100,
            vision_radius: 0.5,
            agent_radius: 0.05,
            landmark_radius: 0.05,
            food_count: 5,
            poison_count: 10,
            food_radius: 0.1,
            poison_radius: 0.05,
            target_speed: 0.01,
            target_jitter: 0.002,
            sensors: 16,
            damping: 0.75,
            force_scale: 0.1,
            max_speed: 1.0,
            placement_retries: 1000,
            collision_penalty: 1.0,
            sync_bonus: 2.0,
            not_sync_penalty: 0.25,
            shaping: 0.01,
            sequential_bonus: 2.0,
            simultaneous_penalty: 1.0,
            food_reward: 10.0,
            poison_penalty: 1.0,
        }
    }
}

impl EnvConfig {
    pub fn new(task: Task) -> Self {
        let mut cfg = Self {
            task,
            ..Self::default()
        };
        if task == Task::Waterworld {
            cfg.horizon = 1000;
        }
        cfg
    }

    pub fn n_landmarks(&self) -> usize {
        if self.task == Task::Waterworld {
            0
        } else {
            self.n_agents
        }
    }

    pub fn n_food(&self) -> usize {
        if self.task == Task::Waterworld {
            self.food_count
        } else {
            0
        }
    }

    pub fn n_poison(&self) -> usize {
        if self.task == Task::Waterworld {
            self.poison_count
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_agents < 2 {
            return fail(format!("n_agents must be at least 2, got {}", self.n_agents));
        }
        if self.horizon == 0 {
            return fail("horizon must be positive".into());
        }
        if self.task.partially_observed() && !(self.vision_radius > 0.0) {
            return fail(format!("vision_radius must be positive, got {}", self.vision_radius));
        }
        let radii = [
            ("agent_radius", self.agent_radius),
            ("landmark_radius", self.landmark_radius),
            ("food_radius", self.food_radius),
            ("poison_radius", self.poison_radius),
        ];
        if let Some((name, v)) = radii.iter().find(|(_, v)| !(*v > 0.0)) {
            return fail(format!("{name} must be positive, got {v}"));
        }
        if !(0.0..=1.0).contains(&self.damping) {
            return fail(format!("damping must lie in [0, 1], got {}", self.damping));
        }
        if !(self.max_speed > 0.0) || !(self.force_scale >= 0.0) {
            return fail("max_speed must be positive and force_scale non-negative".into());
        }
        if self.task == Task::Waterworld && self.sensors == 0 {
            return fail("waterworld needs at least one range sensor".into());
        }
        if self.placement_retries == 0 {
            return fail("placement_retries must be positive".into());
        }
        Ok(())
    }

    /// Upper bound on `|reward|` for any agent in any single step.
    pub fn max_abs_step_reward(&self) -> f64 {
        let diag = 2.0 * 2f64.sqrt();
        let l = self.n_landmarks() as f64;
        let others = (self.n_agents - 1) as f64;
        match self.task {
            Task::Cn | Task::PoCn => l * diag + self.collision_penalty * others,
            Task::SyncCn | Task::SwappingCn => self.shaping * l * diag + self.sync_bonus.max(self.not_sync_penalty),
            Task::SequentialCn => self.sequential_bonus.max(self.simultaneous_penalty),
            Task::Waterworld => self.food_reward * self.food_count as f64 + self.poison_penalty * self.poison_count as f64,
        }
    }
}
