//! Memory-driven policy: every agent encodes its observation, reads the
//! shared message through a learned gate, writes an updated message through
//! LSTM-style input/forget gates, and picks an action from
//! `[encoding, read vector, new message]`.
//!
//! Agents act in turn; the caller commits `m_prime` to the shared device
//! before the next agent runs [`MdPolicy::policy_step`].

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, LayerSpec, Mlp, MlpCache, MlpSpec, ParamMatrix, ParamSet};
use crate::scalar::Real;

/// Which parts of the read/write machinery are present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Full,
    /// Read gate sees `[e, m]` only; there is no context projection.
    NoContext,
    /// No read vector; the action head sees `[e, m']`.
    NoRead,
    /// Memory is never written: `m' = m`.
    NoWrite,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoContext => "no-context",
            Variant::NoRead => "no-read",
            Variant::NoWrite => "no-write",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "no-context" => Ok(Variant::NoContext),
            "no-read" => Ok(Variant::NoRead),
            "no-write" => Ok(Variant::NoWrite),
            other => Err(Error::Config(format!(
                "unknown ablation variant `{other}` (expected full, no-context, no-read, no-write)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionHead {
    /// Unnormalized logits over discrete moves.
    Logits,
    /// Continuous action squashed to `[-1, 1]`.
    Tanh,
}

impl ActionHead {
    fn activation(self) -> Activation {
        match self {
            ActionHead::Logits => Activation::GumbelSoftmaxHead,
            ActionHead::Tanh => Activation::Tanh,
        }
    }
}

/// Dimensions of one memory-driven policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MdShape {
    pub obs_dim: usize,
    pub enc_hidden: usize,
    /// Encoding width `E`.
    pub embed: usize,
    /// Context width `H`.
    pub context: usize,
    /// Message width `M`; zero disables the device entirely.
    pub memory: usize,
    pub act_hidden: usize,
    pub action_dim: usize,
    pub head: ActionHead,
    pub variant: Variant,
}

impl MdShape {
    /// Full-size network: 512-unit encoder, E = H = M = 200, 256-unit action head.
    pub fn reference(obs_dim: usize, action_dim: usize, head: ActionHead) -> Self {
        Self {
            obs_dim,
            enc_hidden: 512,
            embed: 200,
            context: 200,
            memory: 200,
            act_hidden: 256,
            action_dim,
            head,
            variant: Variant::Full,
        }
    }

    pub fn has_read(&self) -> bool {
        self.memory > 0 && self.variant != Variant::NoRead
    }

    pub fn has_context(&self) -> bool {
        self.has_read() && self.variant != Variant::NoContext
    }

    pub fn has_write(&self) -> bool {
        self.memory > 0 && self.variant != Variant::NoWrite
    }

    pub fn head_input(&self) -> usize {
        let read = if self.has_read() { self.memory } else { 0 };
        self.embed + read + self.memory
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            ("obs_dim", self.obs_dim),
            ("enc_hidden", self.enc_hidden),
            ("embed", self.embed),
            ("act_hidden", self.act_hidden),
            ("action_dim", self.action_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("policy dimension `{name}` must be positive")));
        }
        if self.has_context() && self.context == 0 {
            return Err(Error::Config("context width must be positive when the context projection is used".into()));
        }
        Ok(())
    }

    fn encoder_spec(&self) -> MlpSpec {
        MlpSpec::stack(self.obs_dim, &[self.enc_hidden], Activation::Relu, self.embed, Activation::Linear)
    }

    fn context_spec(&self) -> MlpSpec {
        MlpSpec::new(self.embed, vec![LayerSpec::new(self.context, Activation::Linear).without_bias()])
    }

    fn read_gate_spec(&self) -> MlpSpec {
        let ctx = if self.has_context() { self.context } else { 0 };
        MlpSpec::new(self.embed + ctx + self.memory, vec![LayerSpec::new(self.memory, Activation::Sigmoid)])
    }

    fn write_spec(&self, act: Activation) -> MlpSpec {
        MlpSpec::new(self.embed + self.memory, vec![LayerSpec::new(self.memory, act)])
    }

    fn head_spec(&self) -> MlpSpec {
        MlpSpec::stack(self.head_input(), &[self.act_hidden], Activation::Relu, self.action_dim, self.head.activation())
    }
}

/// One agent's parameter bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct MdPolicy<T> {
    shape: MdShape,
    encoder: Mlp<T>,
    context: Option<Mlp<T>>,
    read_gate: Option<Mlp<T>>,
    candidate: Option<Mlp<T>>,
    input_gate: Option<Mlp<T>>,
    forget_gate: Option<Mlp<T>>,
    head: Mlp<T>,
}

/// Everything produced by one agent's turn.
#[derive(Debug, Clone, PartialEq)]
pub struct MdStepOutput<T> {
    pub encoding: Vec<T>,
    pub context: Vec<T>,
    pub read_gate: Vec<T>,
    pub read: Vec<T>,
    pub candidate: Vec<T>,
    pub input_gate: Vec<T>,
    pub forget_gate: Vec<T>,
    pub m_prime: Vec<T>,
    pub action: Vec<T>,
    /// The message this agent read, before its own write.
    pub memory_snapshot: Vec<T>,
}

/// Forward cache for a batch of turns.
#[derive(Debug, Clone)]
pub struct MdCache<T> {
    memory: Array2<T>,
    encoder: MlpCache<T>,
    context: Option<MlpCache<T>>,
    read_gate: Option<MlpCache<T>>,
    candidate: Option<MlpCache<T>>,
    input_gate: Option<MlpCache<T>>,
    forget_gate: Option<MlpCache<T>>,
    m_prime: Array2<T>,
    head: MlpCache<T>,
}

impl<T: Real> MdCache<T> {
    pub fn action(&self) -> &Array2<T> {
        self.head.output()
    }

    pub fn m_prime(&self) -> &Array2<T> {
        &self.m_prime
    }

    pub fn batch(&self) -> usize {
        self.encoder.batch()
    }
}

/// Gradients of a scalar loss with respect to parameters (block order),
/// the memory input and the observation input.
#[derive(Debug, Clone)]
pub struct MdGrads<T> {
    pub params: Vec<ParamMatrix<T>>,
    pub memory: Array2<T>,
    pub obs: Array2<T>,
}

fn hcat<T: Real>(parts: &[ArrayView2<'_, T>]) -> Array2<T> {
    concatenate(Axis(1), parts).expect("row counts agree")
}

impl<T: Real> MdPolicy<T> {
    pub fn new<R: Rng + ?Sized>(shape: MdShape, rng: &mut R) -> Result<Self> {
        Self::build(shape, |spec| Mlp::new(spec, rng))
    }

    pub fn zeros(shape: MdShape) -> Result<Self> {
        Self::build(shape, Mlp::zeros)
    }

    fn build(shape: MdShape, mut make: impl FnMut(MlpSpec) -> Result<Mlp<T>>) -> Result<Self> {
        shape.validate()?;
        let encoder = make(shape.encoder_spec())?;
        let context = shape.has_context().then(|| make(shape.context_spec())).transpose()?;
        let read_gate = shape.has_read().then(|| make(shape.read_gate_spec())).transpose()?;
        let (candidate, input_gate, forget_gate) = if shape.has_write() {
            (
                Some(make(shape.write_spec(Activation::Tanh))?),
                Some(make(shape.write_spec(Activation::Sigmoid))?),
                Some(make(shape.write_spec(Activation::Sigmoid))?),
            )
        } else {
            (None, None, None)
        };
        let head = make(shape.head_spec())?;
        Ok(Self {
            shape,
            encoder,
            context,
            read_gate,
            candidate,
            input_gate,
            forget_gate,
            head,
        })
    }

    pub fn shape(&self) -> &MdShape {
        &self.shape
    }

    pub fn cast<U: Real>(&self) -> MdPolicy<U> {
        MdPolicy {
            shape: self.shape,
            encoder: self.encoder.cast(),
            context: self.context.as_ref().map(Mlp::cast),
            read_gate: self.read_gate.as_ref().map(Mlp::cast),
            candidate: self.candidate.as_ref().map(Mlp::cast),
            input_gate: self.input_gate.as_ref().map(Mlp::cast),
            forget_gate: self.forget_gate.as_ref().map(Mlp::cast),
            head: self.head.cast(),
        }
    }

    fn nets(&self) -> [(&'static str, Option<&Mlp<T>>); 7] {
        [
            ("enc", Some(&self.encoder)),
            ("W_h", self.context.as_ref()),
            ("W_k", self.read_gate.as_ref()),
            ("W_c", self.candidate.as_ref()),
            ("W_g", self.input_gate.as_ref()),
            ("W_f", self.forget_gate.as_ref()),
            ("act", Some(&self.head)),
        ]
    }

    fn nets_mut(&mut self) -> [Option<&mut Mlp<T>>; 7] {
        [
            Some(&mut self.encoder),
            self.context.as_mut(),
            self.read_gate.as_mut(),
            self.candidate.as_mut(),
            self.input_gate.as_mut(),
            self.forget_gate.as_mut(),
            Some(&mut self.head),
        ]
    }

    /// Checkpoint names for every block, in block order.
    ///
    /// Multi-layer nets are numbered per layer (`enc.0`, `enc.1`, `act.0`,
    /// `act.1`); single-layer maps keep their symbol (`W_k`). Weight blocks end
    /// in `.w`, biases in `.b`.
    pub fn block_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (label, net) in self.nets() {
            let Some(net) = net else { continue };
            let multi = net.spec().layers.len() > 1;
            for (i, layer) in net.spec().layers.iter().enumerate() {
                let base = if multi { format!("{label}.{i}") } else { label.to_string() };
                names.push(format!("{base}.w"));
                if layer.bias {
                    names.push(format!("{base}.b"));
                }
            }
        }
        names
    }

    fn check_obs(&self, o: &[T]) -> Result<()> {
        if o.len() != self.shape.obs_dim {
            return Err(Error::dim("observation", self.shape.obs_dim, o.len()));
        }
        Ok(())
    }

    fn check_memory(&self, m: &[T]) -> Result<()> {
        if m.len() != self.shape.memory {
            return Err(Error::dim("memory", self.shape.memory, m.len()));
        }
        Ok(())
    }

    fn check_embed(&self, e: &[T]) -> Result<()> {
        if e.len() != self.shape.embed {
            return Err(Error::dim("encoding", self.shape.embed, e.len()));
        }
        Ok(())
    }

    /// `e = enc(o)`.
    pub fn encode(&self, o: &[T]) -> Result<Vec<T>> {
        self.check_obs(o)?;
        self.encoder.predict(o)
    }

    /// Gated read: returns `(r, k, h)`. Without a read path `r` and `k` are
    /// empty; without a context projection `h` is empty.
    pub fn read(&self, e: &[T], m: &[T]) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
        self.check_embed(e)?;
        self.check_memory(m)?;
        let Some(gate) = &self.read_gate else {
            return Ok((Vec::new(), Vec::new(), Vec::new()));
        };
        let h = match &self.context {
            Some(ctx) => ctx.predict(e)?,
            None => Vec::new(),
        };
        let input: Vec<T> = e.iter().chain(&h).chain(m).copied().collect();
        let k = gate.predict(&input)?;
        let r = m.iter().zip(&k).map(|(&mv, &kv)| mv * kv).collect();
        Ok((r, k, h))
    }

    /// Gated write: returns `(m', c, g, f)`. Without a write path `m' = m`
    /// and the gate vectors are empty.
    pub fn write(&self, e: &[T], m: &[T]) -> Result<(Vec<T>, Vec<T>, Vec<T>, Vec<T>)> {
        self.check_embed(e)?;
        self.check_memory(m)?;
        let (Some(cand), Some(ing), Some(forg)) = (&self.candidate, &self.input_gate, &self.forget_gate) else {
            return Ok((m.to_vec(), Vec::new(), Vec::new(), Vec::new()));
        };
        let input: Vec<T> = e.iter().chain(m).copied().collect();
        let c = cand.predict(&input)?;
        let g = ing.predict(&input)?;
        let f = forg.predict(&input)?;
        let m_prime = (0..m.len()).map(|j| g[j] * c[j] + f[j] * m[j]).collect();
        Ok((m_prime, c, g, f))
    }

    /// Action head over `[e, r, m']` (`[e, m']` without a read path).
    pub fn act(&self, e: &[T], r: &[T], m_prime: &[T]) -> Result<Vec<T>> {
        self.check_embed(e)?;
        self.check_memory(m_prime)?;
        let expected_r = if self.shape.has_read() { self.shape.memory } else { 0 };
        if r.len() != expected_r {
            return Err(Error::dim("read vector", expected_r, r.len()));
        }
        let input: Vec<T> = e.iter().chain(r).chain(m_prime).copied().collect();
        self.head.predict(&input)
    }

    /// One full turn: encode, read, write, act.
    pub fn policy_step(&self, o: &[T], m: &[T]) -> Result<MdStepOutput<T>> {
        let encoding = self.encode(o)?;
        let (read, read_gate, context) = self.read(&encoding, m)?;
        let (m_prime, candidate, input_gate, forget_gate) = self.write(&encoding, m)?;
        let action = self.act(&encoding, &read, &m_prime)?;
        Ok(MdStepOutput {
            encoding,
            context,
            read_gate,
            read,
            candidate,
            input_gate,
            forget_gate,
            m_prime,
            action,
            memory_snapshot: m.to_vec(),
        })
    }

    /// Batched forward with caches. `obs` is `B x obs_dim`, `memory` is `B x M`.
    pub fn forward_batch(&self, obs: ArrayView2<'_, T>, memory: ArrayView2<'_, T>) -> Result<MdCache<T>> {
        let batch = obs.nrows();
        if obs.ncols() != self.shape.obs_dim {
            return Err(Error::dim("observation batch width", self.shape.obs_dim, obs.ncols()));
        }
        if memory.dim() != (batch, self.shape.memory) {
            return Err(Error::dim(
                "memory batch",
                format!("{:?}", (batch, self.shape.memory)),
                format!("{:?}", memory.dim()),
            ));
        }
        let encoder = self.encoder.forward_array(obs.to_owned());
        let e = encoder.output().view();

        let context = self.context.as_ref().map(|ctx| ctx.forward_array(e.to_owned()));
        let read_gate = self.read_gate.as_ref().map(|gate| {
            let input = match &context {
                Some(h) => hcat(&[e, h.output().view(), memory]),
                None => hcat(&[e, memory]),
            };
            gate.forward_array(input)
        });
        let read = read_gate.as_ref().map(|k| &memory * k.output());

        let (candidate, input_gate, forget_gate, m_prime) =
            match (&self.candidate, &self.input_gate, &self.forget_gate) {
                (Some(cand), Some(ing), Some(forg)) => {
                    let input = hcat(&[e, memory]);
                    let c = cand.forward_array(input.clone());
                    let g = ing.forward_array(input.clone());
                    let f = forg.forward_array(input);
                    let m_prime = g.output() * c.output() + f.output() * &memory;
                    (Some(c), Some(g), Some(f), m_prime)
                }
                _ => (None, None, None, memory.to_owned()),
            };

        let head_input = match &read {
            Some(r) => hcat(&[e, r.view(), m_prime.view()]),
            None => hcat(&[e, m_prime.view()]),
        };
        let head = self.head.forward_array(head_input);
        Ok(MdCache {
            memory: memory.to_owned(),
            encoder,
            context,
            read_gate,
            candidate,
            input_gate,
            forget_gate,
            m_prime,
            head,
        })
    }

    /// Backpropagates `d_action` (`B x action_dim`) and optionally
    /// `d_m_prime` (`B x M`) through a cached batch.
    pub fn backward(
        &self,
        cache: &MdCache<T>,
        d_action: ArrayView2<'_, T>,
        d_m_prime: Option<ArrayView2<'_, T>>,
    ) -> Result<MdGrads<T>> {
        let batch = cache.batch();
        let (e_w, m_w) = (self.shape.embed, self.shape.memory);
        if let Some(dm) = &d_m_prime {
            if dm.dim() != (batch, m_w) {
                return Err(Error::dim("d_m_prime", format!("{:?}", (batch, m_w)), format!("{:?}", dm.dim())));
            }
        }
        let (head_grads, d_head_in) = self.head.backward_array(&cache.head, d_action)?;

        let mut d_e = d_head_in.slice(s![.., 0..e_w]).to_owned();
        let mut col = e_w;
        let d_r = self.shape.has_read().then(|| {
            let d = d_head_in.slice(s![.., col..col + m_w]).to_owned();
            col += m_w;
            d
        });
        let mut d_mp = d_head_in.slice(s![.., col..col + m_w]).to_owned();
        if let Some(dm) = d_m_prime {
            d_mp += &dm;
        }

        let mut d_m = Array2::<T>::zeros((batch, m_w));
        let m = &cache.memory;

        let mut write_grads = [None, None, None];
        match (&cache.candidate, &cache.input_gate, &cache.forget_gate) {
            (Some(cc), Some(gc), Some(fc)) => {
                let (c, g, f) = (cc.output(), gc.output(), fc.output());
                let d_c = &d_mp * g;
                let d_g = &d_mp * c;
                let d_f = &d_mp * m;
                d_m += &(&d_mp * f);
                let nets = [&self.candidate, &self.input_gate, &self.forget_gate];
                let caches = [cc, gc, fc];
                let ups = [d_c, d_g, d_f];
                for i in 0..3 {
                    let net = nets[i].as_ref().expect("write net present with cache");
                    let (pg, d_in) = net.backward_array(caches[i], ups[i].view())?;
                    d_e += &d_in.slice(s![.., 0..e_w]);
                    d_m += &d_in.slice(s![.., e_w..e_w + m_w]);
                    write_grads[i] = Some(pg);
                }
            }
            _ => d_m += &d_mp,
        }

        let mut context_grads = None;
        let mut read_grads = None;
        if let (Some(kc), Some(d_r)) = (&cache.read_gate, &d_r) {
            let k = kc.output();
            let d_k = d_r * m;
            d_m += &(d_r * k);
            let gate = self.read_gate.as_ref().expect("read gate present with cache");
            let (pg, d_in) = gate.backward_array(kc, d_k.view())?;
            read_grads = Some(pg);
            d_e += &d_in.slice(s![.., 0..e_w]);
            let ctx_w = if cache.context.is_some() { self.shape.context } else { 0 };
            d_m += &d_in.slice(s![.., e_w + ctx_w..e_w + ctx_w + m_w]);
            if let (Some(hc), Some(ctx)) = (&cache.context, &self.context) {
                let d_h = d_in.slice(s![.., e_w..e_w + ctx_w]);
                let (pg, d_e_ctx) = ctx.backward_array(hc, d_h)?;
                d_e += &d_e_ctx;
                context_grads = Some(pg);
            }
        }

        let (enc_grads, d_obs) = self.encoder.backward_array(&cache.encoder, d_e.view())?;

        let mut params = enc_grads;
        for g in [context_grads, read_grads].into_iter().chain(write_grads).flatten() {
            params.extend(g);
        }
        params.extend(head_grads);
        Ok(MdGrads {
            params,
            memory: d_m,
            obs: d_obs,
        })
    }

    /// Named parameter blocks for checkpointing.
    pub fn named_blocks(&self) -> Vec<(String, &ParamMatrix<T>)> {
        self.block_names().into_iter().zip(self.blocks()).collect()
    }

    /// Replaces every block from a name-ordered list, validating names and shapes.
    pub fn load_blocks(&mut self, blocks: &[(String, ParamMatrix<T>)]) -> Result<()> {
        let names = self.block_names();
        let expected: Vec<String> = names
            .iter()
            .zip(self.block_shapes())
            .map(|(n, (r, c))| format!("{n}[{r}x{c}]"))
            .collect();
        let found: Vec<String> = blocks
            .iter()
            .map(|(n, m)| format!("{n}[{}x{}]", m.rows(), m.cols()))
            .collect();
        if expected != found {
            return Err(Error::Incompatible(format!(
                "policy blocks differ: expected {expected:?}, found {found:?}"
            )));
        }
        for (dst, (_, src)) in self.blocks_mut().into_iter().zip(blocks) {
            dst.as_mut_slice().copy_from_slice(src.as_slice());
        }
        Ok(())
    }
}

impl<T: Real> ParamSet<T> for MdPolicy<T> {
    fn blocks(&self) -> Vec<&ParamMatrix<T>> {
        self.nets().into_iter().filter_map(|(_, n)| n).flat_map(|n| n.params().iter()).collect()
    }

    fn blocks_mut(&mut self) -> Vec<&mut ParamMatrix<T>> {
        self.nets_mut().into_iter().flatten().flat_map(|n| n.blocks_mut()).collect()
    }
}
