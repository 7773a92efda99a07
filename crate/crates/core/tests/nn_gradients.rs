mod common;

use std::collections::HashMap;

use common::gradcheck::{check_md, check_mlp, random_shape, repo_specs, weights, TOL};
use memshare::memdevice::{ActionHead, MdPolicy, MdShape, Variant};
use memshare::nn::ParamMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn every_mlp_layout_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut instances = 0;
    let mut worst: f64 = 0.0;
    while instances < 120 {
        for spec in repo_specs(&mut rng) {
            worst = worst.max(check_mlp(spec, &mut rng));
            instances += 1;
        }
    }
    assert!(worst <= TOL, "worst relative error {worst}");
}


#[test]
fn composed_policy_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    for _ in 0..120 {
        let shape = random_shape(&mut rng);
        worst = worst.max(check_md(shape, &mut rng));
    }
    assert!(worst <= TOL, "worst relative error {worst}");
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn affine(w: &ParamMatrix<f64>, b: Option<&ParamMatrix<f64>>, x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|r| {
            let mut s = b.map_or(0.0, |b| b.as_slice()[r]);
            for c in 0..w.cols() {
                s += w.get(r, c) * x[c];
            }
            s
        })
        .collect()
}

/// Plain-loop re-implementation of one turn, reading blocks by name.
fn oracle_turn(p: &MdPolicy<f64>, o: &[f64], m: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let blocks: HashMap<String, ParamMatrix<f64>> = p.named_blocks().into_iter().map(|(n, b)| (n, b.clone())).collect();
    let get = |n: &str| blocks.get(n);
    let relu = |v: Vec<f64>| v.into_iter().map(|x| x.max(0.0)).collect::<Vec<_>>();
    let e = affine(&blocks["enc.1.w"], get("enc.1.b"), &relu(affine(&blocks["enc.0.w"], get("enc.0.b"), o)));
    let s = p.shape();
    let read = if s.has_read() {
        let mut input = e.clone();
        if s.has_context() {
            input.extend(affine(&blocks["W_h.w"], None, &e));
        }
        input.extend_from_slice(m);
        let k: Vec<f64> = affine(&blocks["W_k.w"], get("W_k.b"), &input).into_iter().map(sigmoid).collect();
        m.iter().zip(&k).map(|(a, b)| a * b).collect()
    } else {
        Vec::new()
    };
    let m_prime: Vec<f64> = if s.has_write() {
        let em: Vec<f64> = e.iter().chain(m).copied().collect();
        let c: Vec<f64> = affine(&blocks["W_c.w"], get("W_c.b"), &em).into_iter().map(f64::tanh).collect();
        let g: Vec<f64> = affine(&blocks["W_g.w"], get("W_g.b"), &em).into_iter().map(sigmoid).collect();
        let f: Vec<f64> = affine(&blocks["W_f.w"], get("W_f.b"), &em).into_iter().map(sigmoid).collect();
        (0..m.len()).map(|j| g[j] * c[j] + f[j] * m[j]).collect()
    } else {
        m.to_vec()
    };
    let head_in: Vec<f64> = e.iter().chain(&read).chain(&m_prime).copied().collect();
    let mut action = affine(&blocks["act.1.w"], get("act.1.b"), &relu(affine(&blocks["act.0.w"], get("act.0.b"), &head_in)));
    if s.head == ActionHead::Tanh {
        action.iter_mut().for_each(|a| *a = a.tanh());
    }
    (read, m_prime, action)
}

#[test]
fn policy_turn_matches_straight_line_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let shape = random_shape(&mut rng);
        let p = MdPolicy::<f64>::new(shape, &mut rng).unwrap();
        let o = weights(&mut rng, shape.obs_dim);
        let m = weights(&mut rng, shape.memory);
        let out = p.policy_step(&o, &m).unwrap();
        let (r, mp, a) = oracle_turn(&p, &o, &m);
        for (x, y) in out.read.iter().zip(&r).chain(out.m_prime.iter().zip(&mp)).chain(out.action.iter().zip(&a)) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
        assert_eq!((out.read.len(), out.m_prime.len(), out.action.len()), (r.len(), mp.len(), a.len()));
    }
}

#[test]
fn single_precision_policy_tracks_double() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let shape = MdShape {
        variant: Variant::Full,
        ..random_shape(&mut rng)
    };
    let p = MdPolicy::<f64>::new(shape, &mut rng).unwrap();
    let p32 = p.cast::<f32>();
    let o = weights(&mut rng, shape.obs_dim);
    let m = weights(&mut rng, shape.memory);
    let a = p.policy_step(&o, &m).unwrap();
    let o32: Vec<f32> = o.iter().map(|&v| v as f32).collect();
    let m32: Vec<f32> = m.iter().map(|&v| v as f32).collect();
    let b = p32.policy_step(&o32, &m32).unwrap();
    for (x, y) in a.action.iter().zip(&b.action).chain(a.m_prime.iter().zip(&b.m_prime)) {
        assert!((x - f64::from(*y)).abs() < 1e-4);
    }
}
