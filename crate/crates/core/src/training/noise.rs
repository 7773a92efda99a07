use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

/// Ornstein-Uhlenbeck exploration process
/// `x <- x + theta * (mu - x) + sigma * N(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OuState {
    pub x: Vec<f64>,
    pub theta: f64,
    pub sigma: f64,
    pub mu: f64,
}

impl OuState {
    /// Starts at the mean with θ = 0.15, σ = 0.3, μ = 0.
    pub fn new(dim: usize) -> Self {
        Self::with_params(dim, 0.15, 0.3, 0.0)
    }

    pub fn with_params(dim: usize, theta: f64, sigma: f64, mu: f64) -> Self {
        Self {
            x: vec![mu; dim],
            theta,
            sigma,
            mu,
        }
    }

    pub fn reset(&mut self) {
        let mu = self.mu;
        self.x.iter_mut().for_each(|v| *v = mu);
    }

    /// Advances the process one step and returns the new noise vector.
    pub fn next<R: Rng + ?Sized>(&mut self, rng: &mut R) -> &[f64] {
        for v in self.x.iter_mut() {
            let eps: f64 = rng.sample(StandardNormal);
            *v += self.theta * (self.mu - *v) + self.sigma * eps;
        }
        &self.x
    }

    /// Variance of the stationary distribution, `σ² / (θ (2 - θ))`.
    pub fn stationary_variance(&self) -> f64 {
        self.sigma * self.sigma / (self.theta * (2.0 - self.theta))
    }
}

/// Standard Gumbel sample `-ln(-ln u)`, `u` uniform on (0, 1).
pub fn gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    -(-u.ln()).ln()
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    v.iter_mut().for_each(|x| *x /= sum);
}

/// `softmax((logits + g) / temperature)` with i.i.d. Gumbel noise `g`.
///
/// The output lies on the probability simplex and is differentiable in
/// the logits; see [`gumbel_softmax_backward`].
pub fn gumbel_softmax<R: Rng + ?Sized>(logits: &[f64], temperature: f64, rng: &mut R) -> Vec<f64> {
    assert!(temperature > 0.0, "temperature must be positive");
    let mut y: Vec<f64> = logits.iter().map(|&l| (l + gumbel(rng)) / temperature).collect();
    softmax_in_place(&mut y);
    y
}

/// Row-wise relaxed samples for a batch of logits.
pub fn gumbel_softmax_batch<R: Rng + ?Sized>(logits: ArrayView2<'_, f64>, temperature: f64, rng: &mut R) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let y = gumbel_softmax(&row.to_vec(), temperature, rng);
        row.iter_mut().zip(y).for_each(|(d, s)| *d = s);
    }
    out
}

/// Pulls `d_y` back through a relaxed sample `y`:
/// `d_logits = y ⊙ (d_y - <d_y, y>) / temperature`.
pub fn gumbel_softmax_backward(y: ArrayView2<'_, f64>, d_y: ArrayView2<'_, f64>, temperature: f64) -> Array2<f64> {
    let mut out = Array2::zeros(y.dim());
    for ((yr, dr), mut or) in y.rows().into_iter().zip(d_y.rows()).zip(out.rows_mut()) {
        let dot: f64 = yr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
        for ((o, &yv), &dv) in or.iter_mut().zip(yr.iter()).zip(dr.iter()) {
            *o = yv * (dv - dot) / temperature;
        }
    }
    out
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn one_hot(len: usize, idx: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[idx] = 1.0;
    v
}
