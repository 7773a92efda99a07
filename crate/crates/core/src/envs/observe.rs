use std::f64::consts::PI;

use super::{dist, Body, EnvConfig, Task, Vec2, WorldState};

/// Observation length for agent policies under `config`.
///
/// Fully observed tasks: own position and velocity (4), then the relative
/// position of every landmark and of every other agent (2 each). Partially
/// observed tasks append a visibility bit to each entity. Waterworld has no
/// landmarks and adds `sensors x 3` range readings (food, poison, agent).
pub fn obs_dim(config: &EnvConfig) -> usize {
    let per_entity = if config.task.partially_observed() { 3 } else { 2 };
    let others = config.n_agents - 1;
    let base = 4 + per_entity * (config.n_landmarks() + others);
    if config.task == Task::Waterworld {
        base + 3 * config.sensors
    } else {
        base
    }
}

fn push_relative(out: &mut Vec<f64>, me: Vec2, other: Vec2, masked: Option<f64>) {
    let rel = [other[0] - me[0], other[1] - me[1]];
    match masked {
        None => out.extend_from_slice(&rel),
        Some(vision) => {
            if dist(me, other) < vision {
                out.extend_from_slice(&[rel[0], rel[1], 1.0]);
            } else {
                out.extend_from_slice(&[0.0, 0.0, 0.0]);
            }
        }
    }
}

/// Distance along the ray `origin + s * dir` to the first contact with
/// `body`, if any.
fn ray_hit(origin: Vec2, dir: Vec2, body: &Body) -> Option<f64> {
    let d = [body.pos[0] - origin[0], body.pos[1] - origin[1]];
    let along = d[0] * dir[0] + d[1] * dir[1];
    let perp_sq = d[0] * d[0] + d[1] * d[1] - along * along;
    let r_sq = body.radius * body.radius;
    if perp_sq >= r_sq {
        return None;
    }
    let hit = along - (r_sq - perp_sq).sqrt();
    if hit >= 0.0 {
        Some(hit)
    } else if along + (r_sq - perp_sq).sqrt() >= 0.0 {
        // origin inside the body
        Some(0.0)
    } else {
        None
    }
}

/// `1 - d / vision` for the nearest hit within vision, 0 when nothing is seen.
fn sensor_reading<'a>(origin: Vec2, dir: Vec2, vision: f64, bodies: impl Iterator<Item = &'a Body>) -> f64 {
    bodies
        .filter_map(|b| ray_hit(origin, dir, b))
        .filter(|&d| d < vision)
        .map(|d| 1.0 - d / vision)
        .fold(0.0, f64::max)
}

pub fn observe(state: &WorldState, agent: usize) -> Vec<f64> {
    let cfg = &state.config;
    let me = &state.agents[agent];
    let mut out = Vec::with_capacity(obs_dim(cfg));
    out.extend_from_slice(&me.pos);
    out.extend_from_slice(&me.vel);
    let mask = cfg.task.partially_observed().then_some(cfg.vision_radius);
    for l in &state.landmarks {
        push_relative(&mut out, me.pos, l.pos, mask);
    }
    for (j, other) in state.agents.iter().enumerate() {
        if j != agent {
            push_relative(&mut out, me.pos, other.pos, mask);
        }
    }
    if cfg.task == Task::Waterworld {
        let vision = cfg.vision_radius;
        for k in 0..cfg.sensors {
            let angle = 2.0 * PI * k as f64 / cfg.sensors as f64;
            let dir = [angle.cos(), angle.sin()];
            out.push(sensor_reading(me.pos, dir, vision, state.food.iter()));
            out.push(sensor_reading(me.pos, dir, vision, state.poison.iter()));
            let others = state.agents.iter().enumerate().filter(|(j, _)| *j != agent).map(|(_, b)| b);
            out.push(sensor_reading(me.pos, dir, vision, others));
        }
    }
    debug_assert_eq!(out.len(), obs_dim(cfg));
    out
}
