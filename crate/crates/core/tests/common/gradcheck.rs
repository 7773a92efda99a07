//! Finite-difference checks of every network layout the library builds.

use memshare::envs::{EnvConfig, Task};
use memshare::memdevice::{ActionHead, MdPolicy, MdShape, Variant};
use memshare::nn::{Activation, LayerSpec, Mlp, MlpSpec, ParamSet};
use memshare::training::{critic_spec, mlp_actor_spec, TrainConfig};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{central_difference, rel_err};

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub fn weights(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Every network layout the library builds, at small widths.
pub fn repo_specs(rng: &mut ChaCha8Rng) -> Vec<MlpSpec> {
    let small = TrainConfig {
        actor_hidden: vec![6, 5],
        critic_hidden: vec![7, 6, 5],
        ..TrainConfig::default()
    };
    let env = EnvConfig {
        n_agents: 2,
        ..EnvConfig::new(Task::Cn)
    };
    let (i, e, m, hid) = (rng.random_range(2..6), rng.random_range(2..5), rng.random_range(1..4), rng.random_range(2..6));
    let acts = [
        Activation::Relu,
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::Linear,
        Activation::GumbelSoftmaxHead,
    ];
    let mut specs = vec![
        mlp_actor_spec(i, &[hid, hid], 5, ActionHead::Logits),
        mlp_actor_spec(i, &[hid, hid], 2, ActionHead::Tanh),
        critic_spec(&small, &env),
        // memory-device sub-networks
        MlpSpec::stack(i, &[hid], Activation::Relu, e, Activation::Linear),
        MlpSpec::new(e, vec![LayerSpec::new(3, Activation::Linear).without_bias()]),
        MlpSpec::new(e + 3 + m, vec![LayerSpec::new(m, Activation::Sigmoid)]),
        MlpSpec::new(e + m, vec![LayerSpec::new(m, Activation::Tanh)]),
        MlpSpec::new(e + m, vec![LayerSpec::new(m, Activation::Sigmoid)]),
        MlpSpec::stack(e + 2 * m, &[hid], Activation::Relu, 5, Activation::GumbelSoftmaxHead),
    ];
    let depth = rng.random_range(1..4);
    let layers = (0..depth)
        .map(|_| {
            let l = LayerSpec::new(rng.random_range(1..6), acts[rng.random_range(0..acts.len())]);
            if rng.random_bool(0.3) { l.without_bias() } else { l }
        })
        .collect();
    specs.push(MlpSpec::new(i, layers));
    specs
}

pub fn mlp_objective(net: &Mlp<f64>, x: &[f64], batch: usize, w: &[f64]) -> f64 {
    let out = net.predict_batch(ndarray::ArrayView2::from_shape((batch, net.input_dim()), x).unwrap());
    out.iter().zip(w).map(|(a, b)| a * b).sum()
}

pub fn check_mlp(spec: MlpSpec, rng: &mut ChaCha8Rng) -> f64 {
    let batch = 3;
    let mut net = Mlp::new(spec.clone(), rng).unwrap();
    // non-zero biases so every block is exercised
    for b in net.blocks_mut() {
        for v in b.as_mut_slice() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let x = weights(rng, batch * spec.input);
    let w = weights(rng, batch * spec.output());
    let cache = net.forward_batch(&x, batch).unwrap();
    let (grads, dx) = net.backward(&cache, &w).unwrap();
    let mut worst: f64 = 0.0;
    for b in 0..grads.len() {
        for e in 0..grads[b].len() {
            let base = net.clone();
            let fd = central_difference(
                |v| {
                    let mut n = base.clone();
                    n.blocks_mut()[b].as_mut_slice()[e] = v;
                    mlp_objective(&n, &x, batch, &w)
                },
                base.blocks()[b].as_slice()[e],
                H,
            );
            worst = worst.max(rel_err(grads[b].as_slice()[e], fd));
        }
    }
    for k in 0..x.len() {
        let fd = central_difference(
            |v| {
                let mut xs = x.clone();
                xs[k] = v;
                mlp_objective(&net, &xs, batch, &w)
            },
            x[k],
            H,
        );
        worst = worst.max(rel_err(dx.iter().nth(k).copied().unwrap(), fd));
    }
    worst
}

pub fn random_shape(rng: &mut ChaCha8Rng) -> MdShape {
    let head = if rng.random_bool(0.5) { ActionHead::Logits } else { ActionHead::Tanh };
    let variants = [Variant::Full, Variant::NoContext, Variant::NoRead, Variant::NoWrite];
    MdShape {
        obs_dim: rng.random_range(1..5),
        enc_hidden: rng.random_range(1..6),
        embed: rng.random_range(1..5),
        context: rng.random_range(1..4),
        memory: rng.random_range(1..5),
        act_hidden: rng.random_range(1..6),
        action_dim: if head == ActionHead::Logits { 5 } else { 2 },
        head,
        variant: if rng.random_bool(0.5) { Variant::Full } else { variants[rng.random_range(0..4)] },
    }
}

/// `sum(wa * action) + sum(wm * m')` through single-sample steps.
pub fn md_objective(p: &MdPolicy<f64>, obs: &[f64], mem: &[f64], batch: usize, wa: &[f64], wm: &[f64]) -> f64 {
    let s = p.shape();
    let mut total = 0.0;
    for b in 0..batch {
        let out = p
            .policy_step(&obs[b * s.obs_dim..(b + 1) * s.obs_dim], &mem[b * s.memory..(b + 1) * s.memory])
            .unwrap();
        total += out.action.iter().zip(&wa[b * s.action_dim..]).map(|(x, y)| x * y).sum::<f64>();
        total += out.m_prime.iter().zip(&wm[b * s.memory..]).map(|(x, y)| x * y).sum::<f64>();
    }
    total
}

/// Worst relative error over parameters, memory and observation gradients.
pub fn check_md(shape: MdShape, rng: &mut ChaCha8Rng) -> f64 {
    let batch = 2;
    let mut p = MdPolicy::<f64>::new(shape, rng).unwrap();
    for b in p.blocks_mut() {
        for v in b.as_mut_slice() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let obs = weights(rng, batch * shape.obs_dim);
    let mem = weights(rng, batch * shape.memory);
    let wa = weights(rng, batch * shape.action_dim);
    let wm = weights(rng, batch * shape.memory);
    let ov = Array2::from_shape_vec((batch, shape.obs_dim), obs.clone()).unwrap();
    let mv = Array2::from_shape_vec((batch, shape.memory), mem.clone()).unwrap();
    let cache = p.forward_batch(ov.view(), mv.view()).unwrap();
    let da = Array2::from_shape_vec((batch, shape.action_dim), wa.clone()).unwrap();
    let dm = Array2::from_shape_vec((batch, shape.memory), wm.clone()).unwrap();
    let g = p.backward(&cache, da.view(), Some(dm.view())).unwrap();

    let mut worst: f64 = 0.0;
    for b in 0..g.params.len() {
        for e in 0..g.params[b].len() {
            let fd = central_difference(
                |v| {
                    let mut q = p.clone();
                    q.blocks_mut()[b].as_mut_slice()[e] = v;
                    md_objective(&q, &obs, &mem, batch, &wa, &wm)
                },
                p.blocks()[b].as_slice()[e],
                H,
            );
            worst = worst.max(rel_err(g.params[b].as_slice()[e], fd));
        }
    }
    for k in 0..mem.len() {
        let fd = central_difference(
            |v| {
                let mut m2 = mem.clone();
                m2[k] = v;
                md_objective(&p, &obs, &m2, batch, &wa, &wm)
            },
            mem[k],
            H,
        );
        worst = worst.max(rel_err(g.memory[[k / shape.memory, k % shape.memory]], fd));
    }
    for k in 0..obs.len() {
        let fd = central_difference(
            |v| {
                let mut o2 = obs.clone();
                o2[k] = v;
                md_objective(&p, &o2, &mem, batch, &wa, &wm)
            },
            obs[k],
            H,
        );
        worst = worst.max(rel_err(g.obs[[k / shape.obs_dim, k % shape.obs_dim]], fd));
    }
    worst
}
