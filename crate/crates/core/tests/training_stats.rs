mod common;

use common::chi_square_uniform_p;
use memshare::training::{argmax, gumbel_softmax, OuState, ReplayBuffer, Transition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn ou_long_run_mean_and_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut ou = OuState::new(1);
    for _ in 0..1000 {
        ou.next(&mut rng);
    }
    let n = 100_000;
    let xs: Vec<f64> = (0..n).map(|_| ou.next(&mut rng)[0]).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let target = 0.09 / (0.15 * 1.85);
    assert!((var - target).abs() / target < 0.05, "variance {var} vs {target}");
    // AR(1) samples are correlated: effective size n (1 - ρ) / (1 + ρ), ρ = 0.85
    let rho = 0.85;
    let se = (target / (n as f64 * (1.0 - rho) / (1.0 + rho))).sqrt();
    assert!(mean.abs() < 3.0 * se, "mean {mean}, se {se}");
}

#[test]
fn gumbel_softmax_stays_on_simplex_and_is_uniform_under_equal_logits() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut counts = [0u64; 5];
    for _ in 0..10_000 {
        let y = gumbel_softmax(&[0.3; 5], 1.0, &mut rng);
        assert!(y.iter().all(|&v| v >= 0.0));
        assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        counts[argmax(&y)] += 1;
    }
    assert!(chi_square_uniform_p(&counts) > 0.001, "{counts:?}");
}

#[test]
fn gumbel_softmax_frequencies_follow_softmax_of_logits() {
    // argmax of logits + Gumbel noise is a categorical draw from softmax(logits)
    let logits = [1.0, 0.0, -1.0];
    let z: f64 = logits.iter().map(|l: &f64| l.exp()).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 20_000;
    let mut counts = [0u64; 3];
    for _ in 0..n {
        counts[argmax(&gumbel_softmax(&logits, 0.5, &mut rng))] += 1;
    }
    for (c, l) in counts.iter().zip(logits) {
        let p = l.exp() / z;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((*c as f64 / n as f64 - p).abs() < 4.0 * se);
    }
}

fn tagged(i: usize) -> Transition {
    Transition {
        obs: vec![vec![i as f64]],
        next_obs: vec![vec![0.0]],
        actions: vec![vec![0.0]],
        memories: vec![],
        rewards: vec![i as f64],
    }
}

#[test]
fn buffer_sampling_is_uniform() {
    let mut b = ReplayBuffer::new(100).unwrap();
    for i in 0..100 {
        b.push(tagged(i));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut counts = vec![0u64; 100];
    for _ in 0..1000 {
        for idx in b.sample_indices(100, &mut rng).unwrap() {
            counts[idx] += 1;
        }
    }
    assert!(chi_square_uniform_p(&counts) > 0.001);
}

#[test]
fn buffer_never_exceeds_capacity_and_evicts_in_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let cap = rng.random_range(1..20);
        let pushes = rng.random_range(0..60);
        let mut b = ReplayBuffer::new(cap).unwrap();
        for i in 0..pushes {
            b.push(tagged(i));
            assert!(b.len() <= cap);
        }
        let kept: Vec<f64> = b.iter_oldest_first().map(|t| t.rewards[0]).collect();
        let want: Vec<f64> = (pushes.saturating_sub(cap)..pushes).map(|i| i as f64).collect();
        assert_eq!(kept, want);
    }
}
