//! Episode trace CSV.
//!
//! Columns, in order:
//!
//! ```text
//! t,
//! x_<i>,y_<i>                       for each agent i
//! a_<i>_<k>                         for each agent i and action component k
//! r_<i>                             for each agent i
//! collisions,sync_occupied,not_sync_occupied,food_captured,poison_hit,
//! occupied_count,newly_occupied,swap_phase,landmark_distance,path_length,phase
//! ```
//!
//! Flags are written as 0/1. Reals use 17 significant digits.

use std::fmt::Write as _;

use super::{StepEvents, Vec2};
use crate::error::{Error, Result};

const EVENT_COLUMNS: [&str; 11] = [
    "collisions",
    "sync_occupied",
    "not_sync_occupied",
    "food_captured",
    "poison_hit",
    "occupied_count",
    "newly_occupied",
    "swap_phase",
    "landmark_distance",
    "path_length",
    "phase",
];

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    /// Agent positions after the step.
    pub positions: Vec<Vec2>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub events: StepEvents,
    pub phase: u32,
}

pub(crate) fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn trace_header(n_agents: usize, action_dim: usize) -> String {
    let mut cols = vec!["t".to_string()];
    for i in 0..n_agents {
        cols.push(format!("x_{i}"));
        cols.push(format!("y_{i}"));
    }
    for i in 0..n_agents {
        for k in 0..action_dim {
            cols.push(format!("a_{i}_{k}"));
        }
    }
    for i in 0..n_agents {
        cols.push(format!("r_{i}"));
    }
    cols.extend(EVENT_COLUMNS.iter().map(|s| s.to_string()));
    cols.join(",")
}

pub fn write_trace_csv(records: &[StepRecord]) -> String {
    let (n, a) = records
        .first()
        .map(|r| (r.positions.len(), r.actions.first().map_or(0, Vec::len)))
        .unwrap_or((0, 0));
    let mut out = trace_header(n, a);
    out.push('\n');
    for r in records {
        let mut cols = vec![r.t.to_string()];
        cols.extend(r.positions.iter().flat_map(|p| [fmt_real(p[0]), fmt_real(p[1])]));
        cols.extend(r.actions.iter().flatten().map(|&v| fmt_real(v)));
        cols.extend(r.rewards.iter().map(|&v| fmt_real(v)));
        let e = &r.events;
        cols.extend([
            e.collisions.to_string(),
            u8::from(e.sync_occupied).to_string(),
            u8::from(e.not_sync_occupied).to_string(),
            e.food_captured.to_string(),
            e.poison_hits.to_string(),
            e.occupied_count.to_string(),
            e.newly_occupied.to_string(),
            e.swap_phase.to_string(),
            fmt_real(e.landmark_distance),
            fmt_real(e.path_length),
            r.phase.to_string(),
        ]);
        let _ = writeln!(out, "{}", cols.join(","));
    }
    out
}

fn bad(line: usize, reason: impl Into<String>) -> Error {
    Error::Format {
        path: format!("trace csv line {line}").into(),
        reason: reason.into(),
    }
}

/// Parses a trace written by [`write_trace_csv`].
pub fn read_trace_csv(text: &str) -> Result<Vec<StepRecord>> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| bad(1, "empty trace"))?.split(',').collect();
    let n = header.iter().filter(|c| c.starts_with("x_")).count();
    let per_agent_actions = header.iter().filter(|c| c.starts_with("a_0_")).count();
    if trace_header(n, per_agent_actions) != header.join(",") {
        return Err(bad(1, "unexpected trace header"));
    }
    let mut out = Vec::new();
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != header.len() {
            return Err(bad(lineno, format!("expected {} columns, found {}", header.len(), cols.len())));
        }
        let real = |s: &str| s.parse::<f64>().map_err(|e| bad(lineno, format!("`{s}`: {e}")));
        let int = |s: &str| s.parse::<u32>().map_err(|e| bad(lineno, format!("`{s}`: {e}")));
        let mut it = cols.into_iter();
        let mut next = || it.next().expect("column count checked");
        let t = next().parse::<usize>().map_err(|e| bad(lineno, e.to_string()))?;
        let mut positions = Vec::with_capacity(n);
        for _ in 0..n {
            positions.push([real(next())?, real(next())?]);
        }
        let mut actions = Vec::with_capacity(n);
        for _ in 0..n {
            actions.push((0..per_agent_actions).map(|_| real(next())).collect::<Result<Vec<_>>>()?);
        }
        let rewards = (0..n).map(|_| real(next())).collect::<Result<Vec<_>>>()?;
        let events = StepEvents {
            collisions: int(next())?,
            sync_occupied: int(next())? != 0,
            not_sync_occupied: int(next())? != 0,
            food_captured: int(next())?,
            poison_hits: int(next())?,
            occupied_count: int(next())?,
            newly_occupied: int(next())?,
            swap_phase: int(next())?,
            landmark_distance: real(next())?,
            path_length: real(next())?,
        };
        let phase = int(next())?;
        out.push(StepRecord {
            t,
            positions,
            actions,
            rewards,
            events,
            phase,
        });
    }
    Ok(out)
}
