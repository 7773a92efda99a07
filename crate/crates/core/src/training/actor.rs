use std::borrow::Cow;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memdevice::{ActionHead, MdCache, MdPolicy, MdShape, Variant};
use crate::nn::{Activation, Mlp, MlpCache, MlpSpec, ParamMatrix, ParamSet};

use super::Algorithm;

/// Architecture of one actor, as recorded in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ActorSpec {
    /// Memory-driven policy.
    Md { shape: MdShape },
    /// Feed-forward policy without a memory device.
    Mlp { spec: MlpSpec, head: ActionHead },
}

impl ActorSpec {
    pub fn input_dim(&self) -> usize {
        match self {
            ActorSpec::Md { shape } => shape.obs_dim,
            ActorSpec::Mlp { spec, .. } => spec.input,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self {
            ActorSpec::Md { shape } => shape.action_dim,
            ActorSpec::Mlp { spec, .. } => spec.output(),
        }
    }

    pub fn memory_dim(&self) -> usize {
        match self {
            ActorSpec::Md { shape } => shape.memory,
            ActorSpec::Mlp { .. } => 0,
        }
    }

    pub fn head(&self) -> ActionHead {
        match self {
            ActorSpec::Md { shape } => shape.head,
            ActorSpec::Mlp { head, .. } => *head,
        }
    }

    pub fn variant(&self) -> Option<Variant> {
        match self {
            ActorSpec::Md { shape } => Some(shape.variant),
            ActorSpec::Mlp { .. } => None,
        }
    }
}

/// Feed-forward actor spec: `input -> hidden (ReLU) -> action head`.
pub fn mlp_actor_spec(input: usize, hidden: &[usize], action_dim: usize, head: ActionHead) -> MlpSpec {
    let out = match head {
        ActionHead::Logits => Activation::GumbelSoftmaxHead,
        ActionHead::Tanh => Activation::Tanh,
    };
    MlpSpec::stack(input, hidden, Activation::Relu, action_dim, out)
}

/// A policy network of either family.
#[derive(Debug, Clone, PartialEq)]
pub enum Actor {
    Md(MdPolicy<f64>),
    Mlp { net: Mlp<f64>, head: ActionHead },
}

/// Result of one agent's turn at execution time.
#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    /// Raw head output: logits or tanh-squashed action.
    pub output: Vec<f64>,
    /// Message after this agent's write; equals the input for memoryless actors.
    pub m_prime: Vec<f64>,
    /// Read vector `r`; empty when the actor does not read.
    pub read: Vec<f64>,
}

#[derive(Debug, Clone)]
pub enum ActorCache {
    Md(MdCache<f64>),
    Mlp(MlpCache<f64>),
}

impl ActorCache {
    pub fn output(&self) -> &Array2<f64> {
        match self {
            ActorCache::Md(c) => c.action(),
            ActorCache::Mlp(c) => c.output(),
        }
    }
}

impl Actor {
    pub fn new<R: Rng + ?Sized>(spec: &ActorSpec, rng: &mut R) -> Result<Self> {
        Ok(match spec {
            ActorSpec::Md { shape } => Actor::Md(MdPolicy::new(*shape, rng)?),
            ActorSpec::Mlp { spec, head } => Actor::Mlp {
                net: Mlp::new(spec.clone(), rng)?,
                head: *head,
            },
        })
    }

    pub fn zeros(spec: &ActorSpec) -> Result<Self> {
        Ok(match spec {
            ActorSpec::Md { shape } => Actor::Md(MdPolicy::zeros(*shape)?),
            ActorSpec::Mlp { spec, head } => Actor::Mlp {
                net: Mlp::zeros(spec.clone())?,
                head: *head,
            },
        })
    }

    pub fn spec(&self) -> ActorSpec {
        match self {
            Actor::Md(p) => ActorSpec::Md { shape: *p.shape() },
            Actor::Mlp { net, head } => ActorSpec::Mlp {
                spec: net.spec().clone(),
                head: *head,
            },
        }
    }

    pub fn memory_dim(&self) -> usize {
        self.spec().memory_dim()
    }

    pub fn head(&self) -> ActionHead {
        self.spec().head()
    }

    /// Checkpoint block names in block order.
    pub fn block_names(&self) -> Vec<String> {
        match self {
            Actor::Md(p) => p.block_names(),
            Actor::Mlp { net, .. } => mlp_block_names(net.spec()),
        }
    }

    pub fn turn(&self, input: &[f64], m: &[f64]) -> Result<Turn> {
        match self {
            Actor::Md(p) => {
                let out = p.policy_step(input, m)?;
                Ok(Turn {
                    output: out.action,
                    m_prime: out.m_prime,
                    read: out.read,
                })
            }
            Actor::Mlp { net, .. } => {
                if !m.is_empty() {
                    return Err(Error::dim("memory", 0, m.len()));
                }
                Ok(Turn {
                    output: net.predict(input)?,
                    m_prime: Vec::new(),
                    read: Vec::new(),
                })
            }
        }
    }

    /// Batched forward; `memory` is `B x M` (`B x 0` for memoryless actors).
    pub fn forward_batch(&self, input: ArrayView2<'_, f64>, memory: ArrayView2<'_, f64>) -> Result<ActorCache> {
        match self {
            Actor::Md(p) => Ok(ActorCache::Md(p.forward_batch(input, memory)?)),
            Actor::Mlp { net, .. } => {
                if input.ncols() != net.input_dim() {
                    return Err(Error::dim("actor input", net.input_dim(), input.ncols()));
                }
                Ok(ActorCache::Mlp(net.forward_array(input.to_owned())))
            }
        }
    }

    /// Parameter gradients for upstream `d_output` on the head output.
    pub fn backward(&self, cache: &ActorCache, d_output: ArrayView2<'_, f64>) -> Result<Vec<ParamMatrix<f64>>> {
        match (self, cache) {
            (Actor::Md(p), ActorCache::Md(c)) => Ok(p.backward(c, d_output, None)?.params),
            (Actor::Mlp { net, .. }, ActorCache::Mlp(c)) => Ok(net.backward_array(c, d_output)?.0),
            _ => Err(Error::Usage("actor cache belongs to a different actor family".into())),
        }
    }

    /// Replaces all parameters from checkpoint blocks, checking names and shapes.
    pub fn load_blocks(&mut self, blocks: &[(String, ParamMatrix<f64>)]) -> Result<()> {
        match self {
            Actor::Md(p) => p.load_blocks(blocks),
            Actor::Mlp { net, .. } => load_named(net, &mlp_block_names(net.spec()), blocks, "actor"),
        }
    }
}

impl ParamSet<f64> for Actor {
    fn blocks(&self) -> Vec<&ParamMatrix<f64>> {
        match self {
            Actor::Md(p) => p.blocks(),
            Actor::Mlp { net, .. } => net.blocks(),
        }
    }

    fn blocks_mut(&mut self) -> Vec<&mut ParamMatrix<f64>> {
        match self {
            Actor::Md(p) => p.blocks_mut(),
            Actor::Mlp { net, .. } => net.blocks_mut(),
        }
    }
}

/// `l{j}.w` / `l{j}.b` per layer.
pub fn mlp_block_names(spec: &MlpSpec) -> Vec<String> {
    let mut names = Vec::new();
    for (j, layer) in spec.layers.iter().enumerate() {
        names.push(format!("l{j}.w"));
        if layer.bias {
            names.push(format!("l{j}.b"));
        }
    }
    names
}

pub(crate) fn load_named<P: ParamSet<f64>>(
    target: &mut P,
    names: &[String],
    blocks: &[(String, ParamMatrix<f64>)],
    what: &str,
) -> Result<()> {
    let expected: Vec<String> = names
        .iter()
        .zip(target.block_shapes())
        .map(|(n, (r, c))| format!("{n}[{r}x{c}]"))
        .collect();
    let found: Vec<String> = blocks
        .iter()
        .map(|(n, m)| format!("{n}[{}x{}]", m.rows(), m.cols()))
        .collect();
    if expected != found {
        return Err(Error::Incompatible(format!(
            "{what} blocks differ: expected {expected:?}, found {found:?}"
        )));
    }
    for (dst, (_, src)) in target.blocks_mut().into_iter().zip(blocks) {
        dst.as_mut_slice().copy_from_slice(src.as_slice());
    }
    Ok(())
}

/// Per-agent policies plus the observation routing of the algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct Team {
    pub algorithm: Algorithm,
    pub actors: Vec<Actor>,
}

impl Team {
    pub fn n_agents(&self) -> usize {
        self.actors.len()
    }

    /// Width of the shared message (0 for memoryless teams).
    pub fn memory_dim(&self) -> usize {
        self.actors.first().map_or(0, Actor::memory_dim)
    }

    /// What agent `i` conditions on: its own observation, or the joint
    /// observation for the meta-agent baseline.
    pub fn actor_input<'a>(&self, i: usize, obs: &'a [Vec<f64>]) -> Cow<'a, [f64]> {
        match self.algorithm {
            Algorithm::MaMaddpg => Cow::Owned(obs.concat()),
            _ => Cow::Borrowed(&obs[i]),
        }
    }

    /// Checks the team against per-agent observation and action widths.
    pub fn check_dims(&self, obs_dims: &[usize], action_dim: usize) -> Result<()> {
        if self.actors.len() != obs_dims.len() {
            return Err(Error::Incompatible(format!(
                "team has {} agents, environment has {}",
                self.actors.len(),
                obs_dims.len()
            )));
        }
        let joint: usize = obs_dims.iter().sum();
        let mut problems = Vec::new();
        for (i, a) in self.actors.iter().enumerate() {
            let spec = a.spec();
            let want_in = if self.algorithm == Algorithm::MaMaddpg { joint } else { obs_dims[i] };
            if spec.input_dim() != want_in {
                problems.push(format!("agent {i} input: expected {want_in}, found {}", spec.input_dim()));
            }
            if spec.action_dim() != action_dim {
                problems.push(format!("agent {i} action: expected {action_dim}, found {}", spec.action_dim()));
            }
            if spec.memory_dim() != self.memory_dim() {
                problems.push(format!("agent {i} memory: expected {}, found {}", self.memory_dim(), spec.memory_dim()));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Incompatible(problems.join("; ")))
        }
    }
}
