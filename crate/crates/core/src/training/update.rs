use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::memdevice::ActionHead;
use crate::nn::{clip_global_norm, global_norm, soft_update, AdamState, Mlp, ParamMatrix};

use super::actor::{Actor, Team};
use super::buffer::Transition;
use super::noise::{gumbel_softmax_backward, gumbel_softmax_batch};
use super::Algorithm;

/// Hyperparameters consumed by a single update round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateParams {
    pub gamma: f64,
    pub tau: f64,
    pub lr_critic: f64,
    pub lr_actor: f64,
    pub temperature: f64,
    /// Global-norm clip; non-positive disables clipping.
    pub grad_clip: f64,
    /// Weight of the mean squared logit penalty on discrete actors.
    pub logit_reg: f64,
}

/// Minibatch laid out as per-agent blocks plus joint matrices.
#[derive(Debug, Clone)]
pub struct Minibatch {
    pub obs: Vec<Array2<f64>>,
    pub next_obs: Vec<Array2<f64>>,
    pub actions: Vec<Array2<f64>>,
    pub memories: Vec<Array2<f64>>,
    /// `B x N`.
    pub rewards: Array2<f64>,
    pub joint_obs: Array2<f64>,
    pub joint_next_obs: Array2<f64>,
    pub joint_actions: Array2<f64>,
}

fn stack_rows(rows: &[&[f64]], width: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), width));
    for (mut dst, src) in out.rows_mut().into_iter().zip(rows) {
        dst.as_slice_mut().expect("standard layout").copy_from_slice(src);
    }
    out
}

fn hcat(parts: &[Array2<f64>]) -> Array2<f64> {
    let views: Vec<ArrayView2<'_, f64>> = parts.iter().map(|p| p.view()).collect();
    concatenate(Axis(1), &views).expect("row counts agree")
}

impl Minibatch {
    pub fn from_transitions(items: &[&Transition]) -> Result<Self> {
        let first = items.first().ok_or(Error::NotReady { have: 0, need: 1 })?;
        let n = first.obs.len();
        let per_agent = |pick: &dyn Fn(&Transition) -> &Vec<Vec<f64>>| -> Result<Vec<Array2<f64>>> {
            (0..n)
                .map(|k| {
                    let width = pick(first).get(k).map_or(0, Vec::len);
                    let rows: Vec<&[f64]> = items.iter().map(|t| pick(t)[k].as_slice()).collect();
                    if rows.iter().any(|r| r.len() != width) {
                        return Err(Error::dim("minibatch row", width, rows.iter().map(|r| r.len()).max().unwrap_or(0)));
                    }
                    Ok(stack_rows(&rows, width))
                })
                .collect()
        };
        if items
            .iter()
            .any(|t| t.obs.len() != n || t.next_obs.len() != n || t.actions.len() != n || t.rewards.len() != n)
        {
            return Err(Error::dim("transition arity", n, 0));
        }
        let obs = per_agent(&|t| &t.obs)?;
        let next_obs = per_agent(&|t| &t.next_obs)?;
        let actions = per_agent(&|t| &t.actions)?;
        let memories = if first.memories.is_empty() {
            vec![Array2::zeros((items.len(), 0)); n]
        } else {
            per_agent(&|t| &t.memories)?
        };
        let rewards = stack_rows(&items.iter().map(|t| t.rewards.as_slice()).collect::<Vec<_>>(), n);
        Ok(Self {
            joint_obs: hcat(&obs),
            joint_next_obs: hcat(&next_obs),
            joint_actions: hcat(&actions),
            obs,
            next_obs,
            actions,
            memories,
            rewards,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Online and target networks plus optimizer state for one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentNets {
    pub actor: Actor,
    pub target_actor: Actor,
    pub critic: Mlp<f64>,
    pub target_critic: Mlp<f64>,
    pub actor_opt: AdamState<f64>,
    pub critic_opt: AdamState<f64>,
}

impl AgentNets {
    /// Targets start as exact copies of the online networks.
    pub fn new(actor: Actor, critic: Mlp<f64>) -> Self {
        Self {
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor_opt: AdamState::new(&actor),
            critic_opt: AdamState::new(&critic),
            actor,
            critic,
        }
    }
}

/// All learners of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Learners {
    pub algorithm: Algorithm,
    pub agents: Vec<AgentNets>,
}

fn policy_input(algorithm: Algorithm, k: usize, per_agent: &[Array2<f64>], joint: &Array2<f64>) -> Array2<f64> {
    match algorithm {
        Algorithm::MaMaddpg => joint.clone(),
        _ => per_agent[k].clone(),
    }
}

fn to_action<R: Rng + ?Sized>(raw: &Array2<f64>, head: ActionHead, temperature: f64, rng: &mut R) -> Array2<f64> {
    match head {
        ActionHead::Logits => gumbel_softmax_batch(raw.view(), temperature, rng),
        ActionHead::Tanh => raw.clone(),
    }
}

fn finite_or_fault(grads: &[ParamMatrix<f64>], what: &str, agent: usize) -> Result<()> {
    if grads.iter().all(ParamMatrix::is_finite) {
        Ok(())
    } else {
        Err(Error::TrainingFault(format!("non-finite {what} gradient for agent {agent}")))
    }
}

impl Learners {
    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    /// Online policies as an execution team.
    pub fn team(&self) -> Team {
        Team {
            algorithm: self.algorithm,
            actors: self.agents.iter().map(|a| a.actor.clone()).collect(),
        }
    }

    /// One Adam step on agent `i`'s critic; returns the mean squared TD error.
    pub fn critic_update<R: Rng + ?Sized>(&mut self, i: usize, batch: &Minibatch, p: &UpdateParams, rng: &mut R) -> Result<f64> {
        let b = batch.len();
        let mut next_actions = Vec::with_capacity(self.n_agents());
        for (k, agent) in self.agents.iter().enumerate() {
            let input = policy_input(self.algorithm, k, &batch.next_obs, &batch.joint_next_obs);
            let cache = agent.target_actor.forward_batch(input.view(), batch.memories[k].view())?;
            next_actions.push(to_action(cache.output(), agent.target_actor.head(), p.temperature, rng));
        }
        let mut next_in = vec![batch.joint_next_obs.clone()];
        next_in.extend(next_actions);
        let agent = &mut self.agents[i];
        let q_next = agent.target_critic.predict_batch(hcat(&next_in).view());
        let y: Vec<f64> = (0..b).map(|r| batch.rewards[[r, i]] + p.gamma * q_next[[r, 0]]).collect();

        let input = hcat(&[batch.joint_obs.clone(), batch.joint_actions.clone()]);
        let cache = agent.critic.forward_array(input);
        let q = cache.output();
        let mut loss = 0.0;
        let mut upstream = Array2::zeros((b, 1));
        for r in 0..b {
            let diff = q[[r, 0]] - y[r];
            loss += diff * diff;
            upstream[[r, 0]] = 2.0 * diff / b as f64;
        }
        loss /= b as f64;
        if !loss.is_finite() {
            return Err(Error::TrainingFault(format!("non-finite critic loss for agent {i}")));
        }
        let (mut grads, _) = agent.critic.backward_array(&cache, upstream.view())?;
        finite_or_fault(&grads, "critic", i)?;
        if p.grad_clip > 0.0 {
            clip_global_norm(&mut grads, p.grad_clip);
        }
        agent.critic_opt.step(&mut agent.critic, &grads, p.lr_critic)?;
        Ok(loss)
    }

    /// Gradient of `-mean Q_i` with respect to agent `i`'s policy parameters,
    /// with its action recomputed from the stored memory snapshot.
    pub fn actor_gradient<R: Rng + ?Sized>(
        &self,
        i: usize,
        batch: &Minibatch,
        p: &UpdateParams,
        rng: &mut R,
    ) -> Result<Vec<ParamMatrix<f64>>> {
        let b = batch.len() as f64;
        let agent = &self.agents[i];
        let input = policy_input(self.algorithm, i, &batch.obs, &batch.joint_obs);
        let cache = agent.actor.forward_batch(input.view(), batch.memories[i].view())?;
        let raw = cache.output();
        let head = agent.actor.head();
        let a_i = to_action(raw, head, p.temperature, rng);

        let mut actions = batch.actions.clone();
        actions[i] = a_i.clone();
        let mut critic_in = vec![batch.joint_obs.clone()];
        critic_in.extend(actions);
        let c_cache = agent.critic.forward_array(hcat(&critic_in));
        let upstream = Array2::from_elem((batch.len(), 1), -1.0 / b);
        let (_, d_in) = agent.critic.backward_array(&c_cache, upstream.view())?;

        let offset = batch.joint_obs.ncols() + batch.actions[..i].iter().map(|a| a.ncols()).sum::<usize>();
        let d_a = d_in.slice(s![.., offset..offset + a_i.ncols()]);
        let d_raw = match head {
            ActionHead::Logits => {
                let mut d = gumbel_softmax_backward(a_i.view(), d_a, p.temperature);
                if p.logit_reg > 0.0 {
                    d.zip_mut_with(raw, |dv, &l| *dv += 2.0 * p.logit_reg * l / b);
                }
                d
            }
            ActionHead::Tanh => d_a.to_owned(),
        };
        agent.actor.backward(&cache, d_raw.view())
    }

    /// One Adam step on agent `i`'s policy; returns the pre-clip gradient norm.
    pub fn actor_update<R: Rng + ?Sized>(&mut self, i: usize, batch: &Minibatch, p: &UpdateParams, rng: &mut R) -> Result<f64> {
        let mut grads = self.actor_gradient(i, batch, p, rng)?;
        finite_or_fault(&grads, "actor", i)?;
        let norm = global_norm(&grads);
        if p.grad_clip > 0.0 {
            clip_global_norm(&mut grads, p.grad_clip);
        }
        let agent = &mut self.agents[i];
        agent.actor_opt.step(&mut agent.actor, &grads, p.lr_actor)?;
        Ok(norm)
    }

    /// Polyak-averages every target network toward its online network.
    pub fn update_targets(&mut self, tau: f64) -> Result<()> {
        for a in &mut self.agents {
            soft_update(&mut a.target_actor, &a.actor, tau)?;
            soft_update(&mut a.target_critic, &a.critic, tau)?;
        }
        Ok(())
    }
}
