//! Fully-connected network with explicit forward and reverse passes.
//!
//! Batches are row-major `batch × width` buffers. Every layer except the last
//! applies the hidden activation; the last layer is linear so output heads
//! can be chosen by the caller.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::activation::Activation;
use crate::{Error, Result};

/// Floating-point types the network can be instantiated with.
pub trait Scalar: Float + Default + Debug + Send + Sync + 'static {
    #[inline]
    fn activate(act: Activation, x: Self) -> Self {
        act.eval(x)
    }

    #[inline]
    fn activate_grad(act: Activation, x: Self) -> Self {
        act.grad(x)
    }
}

impl Scalar for f32 {
    #[inline]
    fn activate(act: Activation, x: f32) -> f32 {
        act.eval_f32(x)
    }

    #[inline]
    fn activate_grad(act: Activation, x: f32) -> f32 {
        act.grad_f32(x)
    }
}

impl Scalar for f64 {}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T = f32> {
    inputs: usize,
    outputs: usize,
    /// `outputs × inputs`, row-major.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn new(inputs: usize, outputs: usize, weights: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if weights.len() != inputs * outputs {
            return Err(Error::ShapeMismatch {
                context: "layer weights",
                expected: inputs * outputs,
                found: weights.len(),
            });
        }
        if bias.len() != outputs {
            return Err(Error::ShapeMismatch {
                context: "layer bias",
                expected: outputs,
                found: bias.len(),
            });
        }
        Ok(Self {
            inputs,
            outputs,
            weights,
            bias,
        })
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn row(&self, o: usize) -> &[T] {
        &self.weights[o * self.inputs..(o + 1) * self.inputs]
    }

    /// `y = W x + b` for every row of `x`.
    fn forward(&self, x: &[T], batch: usize, y: &mut [T]) {
        for i in 0..batch {
            let xi = &x[i * self.inputs..(i + 1) * self.inputs];
            let yi = &mut y[i * self.outputs..(i + 1) * self.outputs];
            for (o, out) in yi.iter_mut().enumerate() {
                *out = self.bias[o] + dot(self.row(o), xi);
            }
        }
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] = acc[k] + x[k] * y[k];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s = s + *x * *y;
    }
    s
}

#[inline]
pub(crate) fn axpy<T: Scalar>(y: &mut [T], alpha: T, x: &[T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * *xi;
    }
}

/// Gradient storage shaped like an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads<T = f32> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> MlpGrads<T> {
    pub fn zero(&mut self) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|v| *v = T::zero());
            l.bias.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads<T>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            axpy(&mut a.weights, T::one(), &b.weights);
            axpy(&mut a.bias, T::one(), &b.bias);
        }
    }

    /// Weight and bias slices in the same order as [`Mlp::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// Per-layer inputs and pre-activations recorded by [`Mlp::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T = f32> {
    batch: usize,
    shapes: Vec<(usize, usize)>,
    inputs: Vec<Vec<T>>,
    pre: Vec<Vec<T>>,
}

impl<T> ForwardCache<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T = f32> {
    layers: Vec<Layer<T>>,
    activation: Activation,
}

impl Mlp<f32> {
    /// Xavier-uniform weights and zero biases: `layers` layers total, with
    /// `channels` hidden units between them.
    pub fn init(
        layers: usize,
        channels: usize,
        input_dim: usize,
        output_dim: usize,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        if layers == 0 || input_dim == 0 || output_dim == 0 || (layers > 1 && channels == 0) {
            return Err(Error::InvalidConfig(alloc::format!(
                "invalid network shape: {layers} layers, {channels} channels, {input_dim} -> {output_dim}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(layers);
        for i in 0..layers {
            let fan_in = if i == 0 { input_dim } else { channels };
            let fan_out = if i + 1 == layers {
                output_dim
            } else {
                channels
            };
            let bound = crate::math::sqrt(6.0 / (fan_in + fan_out) as f32);
            let weights = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            out.push(Layer::new(fan_in, fan_out, weights, vec![0.0; fan_out])?);
        }
        Self::new(out, activation)
    }
}

impl<T: Scalar> Mlp<T> {
    pub fn new(layers: Vec<Layer<T>>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig(
                "network needs at least one layer".into(),
            ));
        }
        for w in layers.windows(2) {
            if w[0].outputs != w[1].inputs {
                return Err(Error::ShapeMismatch {
                    context: "consecutive layers",
                    expected: w[0].outputs,
                    found: w[1].inputs,
                });
            }
        }
        Ok(Self { layers, activation })
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub fn zero_grads(&self) -> MlpGrads<T> {
        MlpGrads {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from(*x).unwrap()).collect::<Vec<U>>();
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    inputs: l.inputs,
                    outputs: l.outputs,
                    weights: conv(&l.weights),
                    bias: conv(&l.bias),
                })
                .collect(),
            activation: self.activation,
        }
    }

    fn check_input(&self, x: &[T], batch: usize) -> Result<()> {
        let expected = batch * self.input_dim();
        if x.len() != expected {
            return Err(Error::ShapeMismatch {
                context: "network input batch",
                expected,
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Layer-by-layer evaluation without recording a cache.
    pub fn infer(&self, x: &[T], batch: usize) -> Result<Vec<T>> {
        self.check_input(x, batch)?;
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = vec![T::zero(); batch * layer.outputs];
            layer.forward(&cur, batch, &mut next);
            if i != last {
                let act = self.activation;
                next.iter_mut().for_each(|v| *v = T::activate(act, *v));
            }
            cur = next;
        }
        Ok(cur)
    }

    /// Forward pass that keeps what the reverse pass needs.
    pub fn forward(&self, x: &[T], batch: usize) -> Result<(Vec<T>, ForwardCache<T>)> {
        self.check_input(x, batch)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut cur = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = vec![T::zero(); batch * layer.outputs];
            layer.forward(&cur, batch, &mut z);
            inputs.push(core::mem::take(&mut cur));
            if i == last {
                cur = z;
            } else {
                let act = self.activation;
                cur = z.iter().map(|v| T::activate(act, *v)).collect();
                pre.push(z);
            }
        }
        let cache = ForwardCache {
            batch,
            shapes: self.layers.iter().map(|l| (l.inputs, l.outputs)).collect(),
            inputs,
            pre,
        };
        Ok((cur, cache))
    }

    /// Reverse pass: adjoints of `sum(ȳ ⊙ y)` with respect to the inputs and
    /// every parameter.
    pub fn backward(&self, cache: &ForwardCache<T>, y_bar: &[T]) -> Result<(Vec<T>, MlpGrads<T>)> {
        let mut grads = self.zero_grads();
        let x_bar = self.backward_into(cache, y_bar, &mut grads, true)?;
        Ok((x_bar.unwrap_or_default(), grads))
    }

    /// Like [`Mlp::backward`] but accumulates into `grads`. The input adjoint
    /// is only computed when `input_grad` is set.
    pub fn backward_into(
        &self,
        cache: &ForwardCache<T>,
        y_bar: &[T],
        grads: &mut MlpGrads<T>,
        input_grad: bool,
    ) -> Result<Option<Vec<T>>> {
        let shapes: Vec<(usize, usize)> =
            self.layers.iter().map(|l| (l.inputs, l.outputs)).collect();
        if shapes != cache.shapes {
            return Err(Error::InvalidConfig(
                "forward cache does not match this network".into(),
            ));
        }
        let batch = cache.batch;
        let expected = batch * self.output_dim();
        if y_bar.len() != expected {
            return Err(Error::ShapeMismatch {
                context: "output adjoint",
                expected,
                found: y_bar.len(),
            });
        }
        let last = self.layers.len() - 1;
        let mut delta = y_bar.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let (n_in, n_out) = (layer.inputs, layer.outputs);
            if i != last {
                let act = self.activation;
                for (d, z) in delta.iter_mut().zip(&cache.pre[i]) {
                    *d = *d * T::activate_grad(act, *z);
                }
            }
            let x = &cache.inputs[i];
            let g = &mut grads.layers[i];
            for s in 0..batch {
                let xs = &x[s * n_in..(s + 1) * n_in];
                let ds = &delta[s * n_out..(s + 1) * n_out];
                for (o, &d) in ds.iter().enumerate() {
                    if d != T::zero() {
                        g.bias[o] = g.bias[o] + d;
                        axpy(&mut g.weights[o * n_in..(o + 1) * n_in], d, xs);
                    }
                }
            }
            if i == 0 && !input_grad {
                return Ok(None);
            }
            let mut prev = vec![T::zero(); batch * n_in];
            for s in 0..batch {
                let ps = &mut prev[s * n_in..(s + 1) * n_in];
                for (o, &d) in delta[s * n_out..(s + 1) * n_out].iter().enumerate() {
                    if d != T::zero() {
                        axpy(ps, d, layer.row(o));
                    }
                }
            }
            delta = prev;
        }
        Ok(Some(delta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_input(n: usize, d: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Straightforward triple-loop reference for the forward pass.
    fn reference_forward(net: &Mlp<f32>, x: &[f32], n: usize) -> Vec<f64> {
        let mut cur: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let last = net.num_layers() - 1;
        for (li, l) in net.layers().iter().enumerate() {
            let mut next = vec![0.0f64; n * l.outputs()];
            for s in 0..n {
                for o in 0..l.outputs() {
                    let mut acc = l.bias[o] as f64;
                    for k in 0..l.inputs() {
                        acc += l.weights[o * l.inputs() + k] as f64 * cur[s * l.inputs() + k];
                    }
                    next[s * l.outputs() + o] = if li == last {
                        acc
                    } else {
                        net.activation().eval(acc)
                    };
                }
            }
            cur = next;
        }
        cur
    }

    #[test]
    fn identity_layer_passes_input() {
        let mut w = vec![0.0f32; 9];
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let net = Mlp::new(
            vec![Layer::new(3, 3, w, vec![0.0; 3]).unwrap()],
            Activation::SnakeAlt,
        )
        .unwrap();
        let x = random_input(5, 3, 1);
        assert_eq!(net.infer(&x, 5).unwrap(), x);
    }

    #[test]
    fn zero_weights_output_bias() {
        let mut net = Mlp::init(3, 8, 4, 2, Activation::Relu, 0).unwrap();
        for l in net.layers_mut() {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        let nl = net.num_layers();
        net.layers_mut()[nl - 1].bias = vec![0.25, -1.5];
        let y = net.infer(&random_input(4, 4, 2), 4).unwrap();
        for row in y.chunks(2) {
            assert_eq!(row, &[0.25, -1.5]);
        }
    }

    #[test]
    fn forward_matches_reference_loops() {
        let net = Mlp::init(3, 16, 7, 3, Activation::SnakeAlt, 3).unwrap();
        let x = random_input(10, 7, 4);
        let (y, _) = net.forward(&x, 10).unwrap();
        let y_ref = reference_forward(&net, &x, 10);
        for (a, b) in y.iter().zip(&y_ref) {
            assert!((*a as f64 - b).abs() < 1e-5);
        }
        assert_eq!(net.infer(&x, 10).unwrap(), y);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = Mlp::init(4, 32, 47, 1, Activation::SnakeAlt, 7).unwrap();
        let b = Mlp::init(4, 32, 47, 1, Activation::SnakeAlt, 7).unwrap();
        assert_eq!(a, b);
        for l in a.layers() {
            let bound = (6.0 / (l.inputs() + l.outputs()) as f32).sqrt();
            assert!(l.weights.iter().all(|w| w.abs() <= bound));
            assert!(l.bias.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn default_network_parameter_count() {
        let net = Mlp::init(4, 32, 47, 1, Activation::SnakeAlt, 0).unwrap();
        assert_eq!(
            net.param_count(),
            47 * 32 + 2 * 32 * 32 + 32 + (32 + 32 + 32 + 1)
        );
        assert_eq!(net.param_count(), 3681);
    }

    #[test]
    fn zero_adjoint_gives_zero_gradients() {
        let net = Mlp::init(3, 8, 5, 2, Activation::SnakeAlt, 1).unwrap();
        let (_, cache) = net.forward(&random_input(6, 5, 1), 6).unwrap();
        let (xb, g) = net.backward(&cache, &[0.0; 12]).unwrap();
        assert!(xb.iter().all(|&v| v == 0.0));
        assert!(g.slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn linear_bias_gradient_counts_batch() {
        let net = Mlp::init(1, 0, 3, 2, Activation::Relu, 1).unwrap();
        let (_, cache) = net.forward(&random_input(7, 3, 2), 7).unwrap();
        let (_, g) = net.backward(&cache, &[1.0; 14]).unwrap();
        assert_eq!(g.layers[0].bias, vec![7.0, 7.0]);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let a = Mlp::init(2, 8, 3, 1, Activation::Relu, 1).unwrap();
        let b = Mlp::init(2, 9, 3, 1, Activation::Relu, 1).unwrap();
        let (_, cache) = a.forward(&random_input(2, 3, 1), 2).unwrap();
        assert!(b.backward(&cache, &[1.0; 2]).is_err());
        assert!(a.backward(&cache, &[1.0; 3]).is_err());
        assert!(a.forward(&[0.0; 5], 2).is_err());
    }

    #[test]
    fn batch_rows_are_independent() {
        let net = Mlp::init(3, 12, 4, 2, Activation::SnakeAlt, 5).unwrap();
        let x = random_input(6, 4, 6);
        let y = net.infer(&x, 6).unwrap();
        let perm = [3usize, 0, 5, 1, 4, 2];
        let xp: Vec<f32> = perm
            .iter()
            .flat_map(|&i| x[i * 4..(i + 1) * 4].to_vec())
            .collect();
        let yp = net.infer(&xp, 6).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(&yp[k * 2..k * 2 + 2], &y[i * 2..i * 2 + 2]);
        }
    }
}
