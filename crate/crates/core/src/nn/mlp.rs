//! Dense feed-forward networks with an explicit forward cache and analytic
//! backward pass.
//!
//! All entry points are batched: a batch is a row-major `B x in` slice. The
//! single-sample helpers are thin wrappers with `B = 1`.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::ParamMatrix;
use super::ParamSet;
use crate::error::{Error, Result};
use crate::scalar::Real;

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_NET_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Linear,
    /// Raw logits; the relaxed categorical sample is drawn downstream.
    GumbelSoftmaxHead,
}

impl Activation {
    #[inline]
    fn apply<T: Real>(self, z: T) -> T {
        match self {
            Activation::Relu => {
                if z > T::zero() {
                    z
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => z.sigmoid(),
            Activation::Linear | Activation::GumbelSoftmaxHead => z,
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn derivative_from_output<T: Real>(self, y: T) -> T {
        match self {
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Linear | Activation::GumbelSoftmaxHead => T::one(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
    #[serde(default = "default_bias")]
    pub bias: bool,
}

fn default_bias() -> bool {
    true
}

impl LayerSpec {
    pub fn new(width: usize, activation: Activation) -> Self {
        Self {
            width,
            activation,
            bias: true,
        }
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub layers: Vec<LayerSpec>,
}

impl MlpSpec {
    pub fn new(input: usize, layers: Vec<LayerSpec>) -> Self {
        Self { input, layers }
    }

    /// `input -> hidden... (activation hidden_act) -> output (output_act)`.
    pub fn stack(input: usize, hidden: &[usize], hidden_act: Activation, output: usize, output_act: Activation) -> Self {
        let mut layers: Vec<LayerSpec> = hidden.iter().map(|&w| LayerSpec::new(w, hidden_act)).collect();
        layers.push(LayerSpec::new(output, output_act));
        Self { input, layers }
    }

    pub fn output(&self) -> usize {
        self.layers.last().map(|l| l.width).unwrap_or(self.input)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        if self.layers.iter().any(|l| l.width == 0) {
            return Err(Error::Config(format!("layer widths must be positive: {:?}", self.widths())));
        }
        Ok(())
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input).chain(self.layers.iter().map(|l| l.width)).collect()
    }

    /// Parameter block shapes in storage order (weight, then bias if any, per layer).
    pub fn block_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut fan_in = self.input;
        for layer in &self.layers {
            shapes.push((layer.width, fan_in));
            if layer.bias {
                shapes.push((layer.width, 1));
            }
            fan_in = layer.width;
        }
        shapes
    }
}

/// Per-layer outputs recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache<T> {
    net_id: u64,
    generation: u64,
    batch: usize,
    /// `acts[0]` is the input; `acts[l + 1]` is the output of layer `l`.
    acts: Vec<Array2<T>>,
}

impl<T: Real> MlpCache<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn output(&self) -> &Array2<T> {
        self.acts.last().expect("cache holds input")
    }

    pub fn input(&self) -> &Array2<T> {
        &self.acts[0]
    }
}

#[derive(Debug)]
pub struct Mlp<T> {
    spec: MlpSpec,
    params: Vec<ParamMatrix<T>>,
    net_id: u64,
    generation: u64,
}

impl<T: Clone> Clone for Mlp<T> {
    fn clone(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            params: self.params.clone(),
            net_id: fresh_id(),
            generation: 0,
        }
    }
}

impl<T: PartialEq> PartialEq for Mlp<T> {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.params == other.params
    }
}

impl<T: Real> Mlp<T> {
    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights, zero biases.
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = Vec::new();
        let mut fan_in = spec.input;
        for layer in &spec.layers {
            let bound = if fan_in > 0 { 1.0 / (fan_in as f64).sqrt() } else { 0.0 };
            let values = (0..layer.width * fan_in)
                .map(|_| {
                    if bound > 0.0 {
                        T::lit(rng.random_range(-bound..bound))
                    } else {
                        T::zero()
                    }
                })
                .collect();
            params.push(ParamMatrix::from_vec(layer.width, fan_in, values)?);
            if layer.bias {
                params.push(ParamMatrix::zeros(layer.width, 1));
            }
            fan_in = layer.width;
        }
        Ok(Self::assemble(spec, params))
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let params = spec
            .block_shapes()
            .into_iter()
            .map(|(r, c)| ParamMatrix::zeros(r, c))
            .collect();
        Ok(Self::assemble(spec, params))
    }

    pub fn from_params(spec: MlpSpec, params: Vec<ParamMatrix<T>>) -> Result<Self> {
        spec.validate()?;
        let expected = spec.block_shapes();
        let found: Vec<_> = params.iter().map(|p| p.shape()).collect();
        if expected != found {
            return Err(Error::dim("Mlp::from_params", format!("{expected:?}"), format!("{found:?}")));
        }
        Ok(Self::assemble(spec, params))
    }

    fn assemble(spec: MlpSpec, params: Vec<ParamMatrix<T>>) -> Self {
        Self {
            spec,
            params,
            net_id: fresh_id(),
            generation: 0,
        }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output()
    }

    pub fn params(&self) -> &[ParamMatrix<T>] {
        &self.params
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp::assemble(self.spec.clone(), self.params.iter().map(|p| p.cast()).collect())
    }

    /// (weight block index, optional bias block index) per layer.
    fn layer_blocks(&self) -> impl Iterator<Item = (usize, Option<usize>)> + '_ {
        let mut idx = 0;
        self.spec.layers.iter().map(move |layer| {
            let w = idx;
            idx += 1;
            let b = if layer.bias {
                idx += 1;
                Some(idx - 1)
            } else {
                None
            };
            (w, b)
        })
    }

    fn check_input(&self, input: &[T], batch: usize) -> Result<()> {
        if input.len() != batch * self.spec.input {
            return Err(Error::dim(
                "mlp forward input",
                format!("{batch} x {} = {}", self.spec.input, batch * self.spec.input),
                input.len(),
            ));
        }
        Ok(())
    }

    fn layer_forward(&self, x: ArrayView2<'_, T>, layer: usize, w: usize, b: Option<usize>) -> Array2<T> {
        let mut z = x.dot(&self.params[w].view().t());
        if let Some(b) = b {
            let bias = self.params[b].as_slice();
            for mut row in z.rows_mut() {
                row.iter_mut().zip(bias).for_each(|(v, &bv)| *v += bv);
            }
        }
        let act = self.spec.layers[layer].activation;
        z.mapv_inplace(|v| act.apply(v));
        z
    }

    /// Batched forward pass with a cache for [`Mlp::backward`].
    pub fn forward_batch(&self, input: &[T], batch: usize) -> Result<MlpCache<T>> {
        self.check_input(input, batch)?;
        let x = Array2::from_shape_vec((batch, self.spec.input), input.to_vec()).expect("checked shape");
        Ok(self.forward_array(x))
    }

    pub fn forward_array(&self, x: Array2<T>) -> MlpCache<T> {
        assert_eq!(x.ncols(), self.spec.input, "mlp input width");
        let batch = x.nrows();
        let mut acts = Vec::with_capacity(self.spec.layers.len() + 1);
        acts.push(x);
        for (layer, (w, b)) in self.layer_blocks().enumerate() {
            let next = self.layer_forward(acts[layer].view(), layer, w, b);
            acts.push(next);
        }
        MlpCache {
            net_id: self.net_id,
            generation: self.generation,
            batch,
            acts,
        }
    }

    /// Single-sample forward: returns the output vector and the cache.
    pub fn forward(&self, input: &[T]) -> Result<(Vec<T>, MlpCache<T>)> {
        let cache = self.forward_batch(input, 1)?;
        let out = cache.output().iter().copied().collect();
        Ok((out, cache))
    }

    /// Forward pass without recording a cache.
    pub fn predict_batch(&self, input: ArrayView2<'_, T>) -> Array2<T> {
        assert_eq!(input.ncols(), self.spec.input, "mlp input width");
        let mut blocks = self.layer_blocks();
        let (w, b) = blocks.next().expect("at least one layer");
        let mut x = self.layer_forward(input, 0, w, b);
        for (layer, (w, b)) in blocks.enumerate() {
            x = self.layer_forward(x.view(), layer + 1, w, b);
        }
        x
    }

    pub fn predict(&self, input: &[T]) -> Result<Vec<T>> {
        self.check_input(input, 1)?;
        let x = ArrayView2::from_shape((1, self.spec.input), input).expect("checked shape");
        Ok(self.predict_batch(x).into_raw_vec_and_offset().0)
    }

    /// Backpropagates `upstream` (`B x out`, the gradient of a scalar loss
    /// with respect to the outputs recorded in `cache`).
    ///
    /// Returns parameter gradients summed over the batch, in block order, and
    /// the `B x in` input gradient.
    pub fn backward(&self, cache: &MlpCache<T>, upstream: &[T]) -> Result<(Vec<ParamMatrix<T>>, Array2<T>)> {
        let out = self.spec.output();
        if upstream.len() != cache.batch * out {
            return Err(Error::dim("mlp backward upstream", cache.batch * out, upstream.len()));
        }
        let dy = ArrayView2::from_shape((cache.batch, out), upstream).expect("checked shape");
        self.backward_array(cache, dy)
    }

    pub fn backward_array(&self, cache: &MlpCache<T>, upstream: ArrayView2<'_, T>) -> Result<(Vec<ParamMatrix<T>>, Array2<T>)> {
        if cache.net_id != self.net_id {
            return Err(Error::Usage("forward cache was produced by a different network".into()));
        }
        if cache.generation != self.generation {
            return Err(Error::Usage("forward cache is stale: parameters changed since the forward pass".into()));
        }
        if upstream.dim() != (cache.batch, self.spec.output()) {
            return Err(Error::dim(
                "mlp backward upstream",
                format!("{:?}", (cache.batch, self.spec.output())),
                format!("{:?}", upstream.dim()),
            ));
        }
        let mut grads: Vec<ParamMatrix<T>> = self.params.iter().map(|p| ParamMatrix::zeros(p.rows(), p.cols())).collect();
        let blocks: Vec<_> = self.layer_blocks().collect();
        let mut delta = upstream.to_owned();
        for (layer, &(w, b)) in blocks.iter().enumerate().rev() {
            let act = self.spec.layers[layer].activation;
            let y = &cache.acts[layer + 1];
            delta.zip_mut_with(y, |d, &yv| *d *= act.derivative_from_output(yv));
            let x = &cache.acts[layer];
            let dw = delta.t().dot(x);
            grads[w].as_mut_slice().iter_mut().zip(dw.iter()).for_each(|(g, &v)| *g = v);
            if let Some(b) = b {
                let db = delta.sum_axis(Axis(0));
                grads[b].as_mut_slice().iter_mut().zip(db.iter()).for_each(|(g, &v)| *g = v);
            }
            delta = delta.dot(&self.params[w].view());
        }
        Ok((grads, delta))
    }
}

impl<T: Real> ParamSet<T> for Mlp<T> {
    fn blocks(&self) -> Vec<&ParamMatrix<T>> {
        self.params.iter().collect()
    }

    fn blocks_mut(&mut self) -> Vec<&mut ParamMatrix<T>> {
        self.generation += 1;
        self.params.iter_mut().collect()
    }
}
