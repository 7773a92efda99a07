//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

pub mod gradcheck;

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Central difference `(f(x + h) - f(x - h)) / 2h`.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Relative error with a small absolute floor for near-zero entries.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-7 {
        (analytic - numeric).abs() / 1e-7
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Upper-tail p-value of Pearson's χ² statistic against uniform cells.
pub fn chi_square_uniform_p(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).unwrap();
    1.0 - dist.cdf(stat)
}

pub struct OraclePca {
    pub components: Vec<Vec<f64>>,
    pub ratios: Vec<f64>,
    pub all_eigenvalues: Vec<f64>,
}

fn mat_vec(a: &[f64], n: usize, v: &[f64]) -> Vec<f64> {
    (0..n).map(|i| (0..n).map(|j| a[i * n + j] * v[j]).sum()).collect()
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// PCA by power iteration with deflation on the covariance, written
/// independently of the library (plain loops, Rayleigh quotients).
pub fn power_iteration_pca(data: &[f64], rows: usize, cols: usize, k: usize) -> OraclePca {
    let mut mean = vec![0.0; cols];
    for r in 0..rows {
        for c in 0..cols {
            mean[c] += data[r * cols + c] / rows as f64;
        }
    }
    let mut cov = vec![0.0; cols * cols];
    for i in 0..cols {
        for j in 0..cols {
            let mut s = 0.0;
            for r in 0..rows {
                s += (data[r * cols + i] - mean[i]) * (data[r * cols + j] - mean[j]);
            }
            cov[i * cols + j] = s / (rows as f64 - 1.0);
        }
    }
    let total: f64 = (0..cols).map(|i| cov[i * cols + i]).sum();
    let mut work = cov.clone();
    let mut components = Vec::new();
    let mut eigen = Vec::new();
    for comp in 0..cols {
        let mut v: Vec<f64> = (0..cols).map(|i| 1.0 + ((i * 7 + comp * 3) % 5) as f64 * 0.1).collect();
        normalize(&mut v);
        for _ in 0..20_000 {
            let mut w = mat_vec(&work, cols, &v);
            // re-orthogonalize against found components
            for u in &components {
                let d: f64 = w.iter().zip(u).map(|(a, b): (&f64, &f64)| a * b).sum();
                w.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
            }
            normalize(&mut w);
            let delta: f64 = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            v = w;
            if delta < 1e-15 {
                break;
            }
        }
        let av = mat_vec(&cov, cols, &v);
        let lambda: f64 = v.iter().zip(&av).map(|(a, b)| a * b).sum();
        for i in 0..cols {
            for j in 0..cols {
                work[i * cols + j] -= lambda * v[i] * v[j];
            }
        }
        let mut best = 0;
        for (i, x) in v.iter().enumerate() {
            if x.abs() > v[best].abs() {
                best = i;
            }
        }
        if v[best] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        eigen.push(lambda);
        components.push(v);
    }
    OraclePca {
        ratios: eigen.iter().take(k).map(|l| l / total).collect(),
        components: components.into_iter().take(k).collect(),
        all_eigenvalues: eigen,
    }
}

/// Largest absolute difference between two directions, up to sign.
pub fn direction_gap(a: &[f64], b: &[f64]) -> f64 {
    let same = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let flip = a.iter().zip(b).map(|(x, y)| (x + y).abs()).fold(0.0, f64::max);
    same.min(flip)
}
