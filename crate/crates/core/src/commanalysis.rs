//! Communication analysis: record what agents write to and read from the
//! shared message, project it onto its principal components, and render the
//! projections over time as heatmaps annotated with task phases.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envs::{fmt_real, EnvConfig, StepRecord, Task};
use crate::error::{Error, Result};
use crate::evaluation::{rollout, MemoryMode};
use crate::scalar::Real;
use crate::training::Team;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceKind {
    /// The message `m'` an agent committed.
    Write,
    /// The read vector `r` an agent extracted.
    Read,
}

impl TraceKind {
    pub fn name(self) -> &'static str {
        match self {
            TraceKind::Write => "write",
            TraceKind::Read => "read",
        }
    }
}

/// `T x M` vectors recorded for one agent over one episode, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceMatrix<T> {
    pub agent: usize,
    pub kind: TraceKind,
    pub task: Task,
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
    pub phases: Vec<u32>,
}

impl<T: Real> TraceMatrix<T> {
    pub fn row(&self, t: usize) -> &[T] {
        &self.data[t * self.cols..(t + 1) * self.cols]
    }
}

/// Traces of one instrumented episode.
#[derive(Debug, Clone)]
pub struct EpisodeTraces {
    pub write: Vec<TraceMatrix<f64>>,
    /// Empty when the policies do not read (no-read ablation).
    pub read: Vec<TraceMatrix<f64>>,
    pub steps: Vec<StepRecord>,
}

/// Greedy episode with every write and read vector captured.
pub fn record_traces(team: &Team, env: &EnvConfig, seed: u64) -> Result<EpisodeTraces> {
    if team.memory_dim() == 0 {
        return Err(Error::Config(format!(
            "communication traces need a memory-driven team; {} has no memory device",
            team.algorithm.name()
        )));
    }
    let ep = rollout(team, env, seed, 0, MemoryMode::Clean, true)?;
    let phases: Vec<u32> = ep.steps.iter().map(|s| s.phase).collect();
    let build = |agent: usize, kind: TraceKind| -> Option<TraceMatrix<f64>> {
        let rows: Vec<&Vec<f64>> = ep
            .turns
            .iter()
            .map(|turn| match kind {
                TraceKind::Write => &turn[agent].turn.m_prime,
                TraceKind::Read => &turn[agent].turn.read,
            })
            .collect();
        let cols = rows.first().map_or(0, |r| r.len());
        if cols == 0 {
            return None;
        }
        Some(TraceMatrix {
            agent,
            kind,
            task: env.task,
            seed,
            rows: rows.len(),
            cols,
            data: rows.into_iter().flatten().copied().collect(),
            phases: phases.clone(),
        })
    };
    let n = team.n_agents();
    Ok(EpisodeTraces {
        write: (0..n).filter_map(|i| build(i, TraceKind::Write)).collect(),
        read: (0..n).filter_map(|i| build(i, TraceKind::Read)).collect(),
        steps: ep.steps,
    })
}

/// Eigenvalues (unsorted) and eigenvectors (columns of a row-major `n x n`
/// matrix) of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigen<T: Real>(matrix: &[T], n: usize) -> (Vec<T>, Vec<T>) {
    assert_eq!(matrix.len(), n * n, "square matrix");
    let mut a = matrix.to_vec();
    let mut v = vec![T::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = T::one();
    }
    let scale: T = a.iter().map(|x| *x * *x).sum::<T>().sqrt();
    if scale == T::zero() {
        return (vec![T::zero(); n], v);
    }
    let tol = T::epsilon() * scale;
    for _sweep in 0..100 {
        let off: T = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| a[p * n + q] * a[p * n + q])
            .sum::<T>()
            .sqrt();
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaResult<T> {
    /// `k` orthonormal directions of length `M`, by decreasing variance.
    pub components: Vec<Vec<T>>,
    /// `T x k` projections of the centered rows.
    pub scores: Vec<Vec<T>>,
    /// Share of total variance per returned component.
    pub explained_ratio: Vec<T>,
    pub mean: Vec<T>,
}

/// Sample covariance `(X - mean)^T (X - mean) / (T - 1)` and column means.
pub fn covariance<T: Real>(data: &[T], rows: usize, cols: usize) -> (Vec<T>, Vec<T>) {
    let count = T::from_usize(rows).expect("row count fits");
    let mut mean = vec![T::zero(); cols];
    for r in 0..rows {
        for c in 0..cols {
            mean[c] += data[r * cols + c];
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut cov = vec![T::zero(); cols * cols];
    for r in 0..rows {
        let row = &data[r * cols..(r + 1) * cols];
        for i in 0..cols {
            let di = row[i] - mean[i];
            for j in i..cols {
                cov[i * cols + j] += di * (row[j] - mean[j]);
            }
        }
    }
    let denom = count - T::one();
    for i in 0..cols {
        for j in i..cols {
            let v = cov[i * cols + j] / denom;
            cov[i * cols + j] = v;
            cov[j * cols + i] = v;
        }
    }
    (cov, mean)
}

/// Flips `v` so its largest-magnitude entry (first on ties) is positive.
pub fn orient<T: Real>(v: &mut [T]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|x| *x < T::zero()) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Top-`k` principal components of a row-major `rows x cols` matrix.
pub fn pca<T: Real>(data: &[T], rows: usize, cols: usize, k: usize) -> Result<PcaResult<T>> {
    if data.len() != rows * cols {
        return Err(Error::dim("pca input", rows * cols, data.len()));
    }
    if rows < 2 || cols == 0 {
        return Err(Error::DegenerateTrace(format!("need at least 2 rows and 1 column, got {rows}x{cols}")));
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::DegenerateTrace("trace contains non-finite values".into()));
    }
    let (cov, mean) = covariance(data, rows, cols);
    let total: T = (0..cols).map(|i| cov[i * cols + i]).sum();
    if total <= T::zero() {
        return Err(Error::DegenerateTrace("every column is constant; there is no variance to explain".into()));
    }
    let (values, vectors) = jacobi_eigen(&cov, cols);
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).expect("finite eigenvalues").then(a.cmp(&b)));
    let k = k.min(cols);
    let mut components = Vec::with_capacity(k);
    let mut explained_ratio = Vec::with_capacity(k);
    for &j in &order[..k] {
        let mut dir: Vec<T> = (0..cols).map(|r| vectors[r * cols + j]).collect();
        orient(&mut dir);
        components.push(dir);
        explained_ratio.push(values[j].max(T::zero()) / total);
    }
    let scores = (0..rows)
        .map(|r| {
            let row = &data[r * cols..(r + 1) * cols];
            components
                .iter()
                .map(|d| row.iter().zip(&mean).zip(d).map(|((x, m), w)| (*x - *m) * *w).sum())
                .collect()
        })
        .collect();
    Ok(PcaResult {
        components,
        scores,
        explained_ratio,
        mean,
    })
}

pub fn pca_trace<T: Real>(trace: &TraceMatrix<T>, k: usize) -> Result<PcaResult<T>> {
    pca(&trace.data, trace.rows, trace.cols, k)
}

/// Per-column min-max scaling to `[0, 1]`; constant columns become 0.5.
pub fn standardize01<T: Real>(scores: &[Vec<T>]) -> Vec<Vec<T>> {
    let k = scores.first().map_or(0, Vec::len);
    let mut out = scores.to_vec();
    for c in 0..k {
        let lo = scores.iter().map(|r| r[c]).fold(T::infinity(), T::min);
        let hi = scores.iter().map(|r| r[c]).fold(T::neg_infinity(), T::max);
        let span = hi - lo;
        for r in out.iter_mut() {
            r[c] = if span > T::zero() { (r[c] - lo) / span } else { T::lit(0.5) };
        }
    }
    out
}

/// Diverging blue (0,0,255) -> white -> red (255,0,0) map on `[0, 1]`.
pub fn colormap(v: f64) -> (u8, u8, u8) {
    let v = v.clamp(0.0, 1.0);
    let ch = |x: f64| (x * 255.0).round() as u8;
    if v <= 0.5 {
        let w = v / 0.5;
        (ch(w), ch(w), 255)
    } else {
        let w = (1.0 - v) / 0.5;
        (255, ch(w), ch(w))
    }
}

/// Standardized scores of one agent, `T x k`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapPanel {
    pub agent: usize,
    pub values: Vec<Vec<f64>>,
}

/// Lengths of consecutive runs of equal labels, with the label.
pub fn phase_runs(phases: &[u32]) -> Vec<(u32, usize, usize)> {
    let mut runs: Vec<(u32, usize, usize)> = Vec::new();
    for (t, &p) in phases.iter().enumerate() {
        match runs.last_mut() {
            Some((label, _, len)) if *label == p => *len += 1,
            _ => runs.push((p, t, 1)),
        }
    }
    runs
}

const CELL_W: usize = 6;
const CELL_H: usize = 18;
const LEFT: usize = 48;
const TOP: usize = 28;
const BAR_H: usize = 10;
const PANEL_GAP: usize = 40;

/// SVG heatmaps (one panel per agent, one row per component) over a
/// greyscale phase bar.
pub fn render_svg(panels: &[HeatmapPanel], phases: &[u32]) -> Result<String> {
    let t_len = phases.len();
    for p in panels {
        if p.values.len() != t_len {
            return Err(Error::dim(format!("heatmap agent {} rows vs phase labels", p.agent), t_len, p.values.len()));
        }
    }
    let k = panels.iter().flat_map(|p| p.values.first().map(Vec::len)).max().unwrap_or(0);
    let panel_h = k * CELL_H + 4 + BAR_H + 16;
    let width = LEFT + t_len * CELL_W + 16;
    let height = TOP + panels.len() * (panel_h + PANEL_GAP);
    let mut distinct: Vec<u32> = phases.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let grey = |label: u32| -> u8 {
        let rank = distinct.iter().position(|&d| d == label).unwrap_or(0);
        if distinct.len() <= 1 {
            200
        } else {
            (230 - rank * 200 / (distinct.len() - 1)) as u8
        }
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="10">"#
    );
    s.push_str("<metadata>colormap: linear diverging blue rgb(0,0,255) at 0, white rgb(255,255,255) at 0.5, red rgb(255,0,0) at 1; phase bar: greyscale, one shade per phase label</metadata>\n");
    for (pi, panel) in panels.iter().enumerate() {
        let y0 = TOP + pi * (panel_h + PANEL_GAP);
        let _ = writeln!(s, r#"<g id="agent-{}">"#, panel.agent);
        let _ = writeln!(s, r#"<text x="{LEFT}" y="{}">agent {}</text>"#, y0 - 8, panel.agent);
        for c in 0..k {
            let y = y0 + c * CELL_H;
            let _ = writeln!(s, r#"<text x="4" y="{}">PC{}</text>"#, y + CELL_H / 2 + 4, c + 1);
            for (t, row) in panel.values.iter().enumerate() {
                let (r, g, b) = colormap(row.get(c).copied().unwrap_or(0.5));
                let _ = writeln!(
                    s,
                    r#"<rect x="{}" y="{y}" width="{CELL_W}" height="{CELL_H}" fill="rgb({r},{g},{b})"/>"#,
                    LEFT + t * CELL_W
                );
            }
        }
        let bar_y = y0 + k * CELL_H + 4;
        let _ = writeln!(s, r#"<g class="phase-bar">"#);
        for (label, start, len) in phase_runs(phases) {
            let g = grey(label);
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{bar_y}" width="{}" height="{BAR_H}" fill="rgb({g},{g},{g})" data-phase="{label}"/>"#,
                LEFT + start * CELL_W,
                len * CELL_W
            );
        }
        s.push_str("</g>\n");
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">time step (0 to {})</text>"#,
            LEFT + t_len * CELL_W / 2,
            bar_y + BAR_H + 12,
            t_len.saturating_sub(1)
        );
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Plotted values as CSV: `t,phase,a{i}_pc{j}...`.
pub fn heatmap_csv(panels: &[HeatmapPanel], phases: &[u32]) -> Result<String> {
    let mut s = String::from("t,phase");
    for p in panels {
        let k = p.values.first().map_or(0, Vec::len);
        for c in 0..k {
            let _ = write!(s, ",a{}_pc{}", p.agent, c + 1);
        }
        if p.values.len() != phases.len() {
            return Err(Error::dim(format!("heatmap agent {} rows vs phase labels", p.agent), phases.len(), p.values.len()));
        }
    }
    s.push('\n');
    for (t, phase) in phases.iter().enumerate() {
        let _ = write!(s, "{t},{phase}");
        for p in panels {
            for v in &p.values[t] {
                let _ = write!(s, ",{}", fmt_real(*v));
            }
        }
        s.push('\n');
    }
    Ok(s)
}

/// Inverse of [`heatmap_csv`].
pub fn parse_heatmap_csv(text: &str) -> Result<(Vec<HeatmapPanel>, Vec<u32>)> {
    let bad = |line: usize, reason: String| Error::Format {
        path: "heatmap csv".into(),
        reason: format!("line {line}: {reason}"),
    };
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| bad(1, "empty file".into()))?.split(',').collect();
    if header.len() < 2 || header[0] != "t" || header[1] != "phase" {
        return Err(bad(1, "header must start with t,phase".into()));
    }
    let mut columns: Vec<(usize, usize)> = Vec::new();
    for h in &header[2..] {
        let parsed = h
            .strip_prefix('a')
            .and_then(|rest| rest.split_once("_pc"))
            .and_then(|(a, c)| Some((a.parse::<usize>().ok()?, c.parse::<usize>().ok()?)));
        columns.push(parsed.ok_or_else(|| bad(1, format!("bad column {h:?}")))?);
    }
    let mut panels: Vec<HeatmapPanel> = Vec::new();
    for &(agent, _) in &columns {
        if panels.last().is_none_or(|p| p.agent != agent) {
            panels.push(HeatmapPanel { agent, values: Vec::new() });
        }
    }
    let mut phases = Vec::new();
    for (ln, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(bad(ln + 2, format!("expected {} fields, found {}", header.len(), cells.len())));
        }
        phases.push(cells[1].parse().map_err(|_| bad(ln + 2, "bad phase".into()))?);
        for p in panels.iter_mut() {
            p.values.push(Vec::new());
        }
        for (cell, &(agent, _)) in cells[2..].iter().zip(&columns) {
            let v: f64 = cell.parse().map_err(|_| bad(ln + 2, format!("bad value {cell:?}")))?;
            let panel = panels.iter_mut().find(|p| p.agent == agent).expect("panel exists");
            panel.values.last_mut().expect("row pushed").push(v);
        }
    }
    Ok((panels, phases))
}

const TRACE_MAGIC: &[u8; 8] = b"MEMSHTRC";
const TRACE_VERSION: u32 = 1;

/// Binary vector container: magic, u32 version, u64 T, u64 M, then `T*M`
/// little-endian f64 values, row-major.
pub fn trace_to_bytes(rows: usize, cols: usize, data: &[f64]) -> Vec<u8> {
    assert_eq!(data.len(), rows * cols, "trace shape");
    let mut out = Vec::with_capacity(28 + data.len() * 8);
    out.extend_from_slice(TRACE_MAGIC);
    out.extend_from_slice(&TRACE_VERSION.to_le_bytes());
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn trace_from_bytes(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    };
    if bytes.len() < 28 || &bytes[..8] != TRACE_MAGIC {
        return Err(bad("not a trace container"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != TRACE_VERSION {
        return Err(bad(&format!("unsupported trace version {version}")));
    }
    let rows = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let cols = u64::from_le_bytes(bytes[20..28].try_into().expect("8 bytes")) as usize;
    let n = rows.checked_mul(cols).ok_or_else(|| bad("shape overflows"))?;
    if bytes.len() != 28 + n * 8 {
        return Err(bad(&format!("expected {} payload bytes, found {}", n * 8, bytes.len() - 28)));
    }
    let data = bytes[28..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((rows, cols, data))
}

/// Heatmap panels for a set of traces: top-`k` PCA per agent, standardized.
pub fn heatmap_panels(traces: &[TraceMatrix<f64>], k: usize) -> Result<Vec<(HeatmapPanel, PcaResult<f64>)>> {
    traces
        .iter()
        .map(|tr| {
            let res = pca_trace(tr, k)?;
            Ok((
                HeatmapPanel {
                    agent: tr.agent,
                    values: standardize01(&res.scores),
                },
                res,
            ))
        })
        .collect()
}
