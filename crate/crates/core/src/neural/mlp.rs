use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    None,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    GlorotUniform,
    HeNormal,
}

/// Affine layer `y = x·W + b` with `W` stored `fan_in × fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Dense {
    fn zeros_like(&self) -> Self {
        Dense {
            weight: DMatrix::zeros(self.weight.nrows(), self.weight.ncols()),
            bias: DVector::zeros(self.bias.len()),
        }
    }
}

/// Fully connected network with ReLU hidden layers. A `Tanh` head is scaled
/// by `output_scale` (the action bound for actors).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    layers: Vec<Dense>,
    output: OutputActivation,
    output_scale: f64,
}

/// Gradients with the same layout as the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<Dense>,
}

/// Intermediate values of a forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<DMatrix<f64>>,
    pre: Vec<DMatrix<f64>>,
    output: DMatrix<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &DMatrix<f64> {
        &self.output
    }
}

impl Mlp {
    /// `dims` lists layer widths from input to output. Biases are drawn
    /// uniformly from `±1/√fan_in`.
    pub fn new(dims: &[usize], output: OutputActivation, output_scale: f64, init: InitScheme, rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::input(
                "network needs at least an input and an output layer of positive width",
            ));
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let weight = match init {
                    InitScheme::GlorotUniform => {
                        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                        DMatrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-limit..=limit))
                    }
                    InitScheme::HeNormal => {
                        let std = (2.0 / fan_in as f64).sqrt();
                        DMatrix::from_fn(fan_in, fan_out, |_, _| std * rng.sample::<f64, _>(StandardNormal))
                    }
                };
                let b = 1.0 / (fan_in as f64).sqrt();
                let bias = DVector::from_fn(fan_out, |_, _| rng.random_range(-b..=b));
                Dense { weight, bias }
            })
            .collect();
        Ok(Self {
            dims: dims.to_vec(),
            layers,
            output,
            output_scale,
        })
    }

    pub fn from_layers(layers: Vec<Dense>, output: OutputActivation, output_scale: f64) -> Result<Self> {
        let first = layers.first().ok_or_else(|| Error::input("network needs at least one layer"))?;
        let mut dims = vec![first.weight.nrows()];
        for l in &layers {
            if l.weight.nrows() != *dims.last().unwrap() || l.bias.len() != l.weight.ncols() {
                return Err(Error::input("layer dimensions do not chain"));
            }
            dims.push(l.weight.ncols());
        }
        Ok(Self {
            dims,
            layers,
            output,
            output_scale,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn output_scale(&self) -> f64 {
        self.output_scale
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Parameters flattened layer by layer, weights (column-major) before biases.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(l.bias.as_slice());
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::input("flat parameter vector has the wrong length"));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let n = l.weight.len();
            l.weight.as_mut_slice().copy_from_slice(&flat[at..at + n]);
            at += n;
            let n = l.bias.len();
            l.bias.as_mut_slice().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    pub fn forward(&self, input: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(input)?;
        let mut x = input.clone();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = affine(&x, l);
            if i < last {
                z.apply(|v| *v = v.max(0.0));
            } else {
                self.apply_head(&mut z);
            }
            x = z;
        }
        Ok(x)
    }

    /// Forward pass on one input row.
    pub fn forward_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        let out = self.forward(&DMatrix::from_row_slice(1, input.len(), input))?;
        Ok(out.row(0).iter().copied().collect())
    }

    pub fn forward_cached(&self, input: &DMatrix<f64>) -> Result<ForwardCache> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let z = affine(&x, l);
            let mut a = z.clone();
            if i < last {
                a.apply(|v| *v = v.max(0.0));
            } else {
                self.apply_head(&mut a);
            }
            inputs.push(x);
            pre.push(z);
            x = a;
        }
        Ok(ForwardCache { inputs, pre, output: x })
    }

    /// Reverse-mode gradients of `Σ upstream ⊙ output` with respect to the
    /// parameters and the input. ReLU uses subgradient 0 at 0.
    pub fn backward(&self, cache: &ForwardCache, upstream: &DMatrix<f64>) -> Result<(MlpGrads, DMatrix<f64>)> {
        if upstream.shape() != cache.output.shape() {
            return Err(Error::input("upstream gradient shape does not match the output"));
        }
        let last = self.layers.len() - 1;
        let mut delta = upstream.clone();
        match self.output {
            OutputActivation::None => {}
            OutputActivation::Tanh => {
                let scale = self.output_scale;
                delta.zip_apply(&cache.pre[last], |d, z| {
                    let t = z.tanh();
                    *d *= scale * (1.0 - t * t);
                });
            }
        }
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let l = &self.layers[i];
            let weight = cache.inputs[i].transpose() * &delta;
            let bias = DVector::from_iterator(delta.ncols(), delta.column_iter().map(|c| c.sum()));
            grads.push(Dense { weight, bias });
            let mut next = &delta * l.weight.transpose();
            if i > 0 {
                next.zip_apply(&cache.pre[i - 1], |d, z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            delta = next;
        }
        grads.reverse();
        Ok((MlpGrads { layers: grads }, delta))
    }

    fn apply_head(&self, z: &mut DMatrix<f64>) {
        if self.output == OutputActivation::Tanh {
            let s = self.output_scale;
            z.apply(|v| *v = s * v.tanh());
        }
    }

    fn check_input(&self, input: &DMatrix<f64>) -> Result<()> {
        if input.ncols() != self.dims[0] {
            return Err(Error::input(format!(
                "expected input width {}, got {}",
                self.dims[0],
                input.ncols()
            )));
        }
        if input.nrows() == 0 {
            return Err(Error::input("empty input batch"));
        }
        Ok(())
    }
}

fn affine(x: &DMatrix<f64>, l: &Dense) -> DMatrix<f64> {
    let mut z = x * &l.weight;
    for (mut col, b) in z.column_iter_mut().zip(l.bias.iter()) {
        col.add_scalar_mut(*b);
    }
    z
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        MlpGrads {
            layers: net.layers.iter().map(Dense::zeros_like).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(l.bias.as_slice());
        }
        out
    }
}

/// `target ← (1 − τ)·target + τ·online`.
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<()> {
    if target.dims != online.dims {
        return Err(Error::input("soft update between networks of different shapes"));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::input("tau must lie in [0, 1]"));
    }
    for (t, o) in target.layers.iter_mut().zip(&online.layers) {
        t.weight.zip_apply(&o.weight, |a, b| *a = (1.0 - tau) * *a + tau * b);
        t.bias.zip_apply(&o.bias, |a, b| *a = (1.0 - tau) * *a + tau * b);
    }
    Ok(())
}

/// Stacks rows into a batch matrix.
pub fn batch_from_rows<R: AsRef<[f64]>>(rows: &[R]) -> DMatrix<f64> {
    let cols = rows.first().map_or(0, |r| r.as_ref().len());
    DMatrix::from_fn(rows.len(), cols, |i, j| rows[i].as_ref()[j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn identity_layer(n: usize) -> Mlp {
        Mlp::from_layers(
            vec![Dense {
                weight: DMatrix::identity(n, n),
                bias: DVector::zeros(n),
            }],
            OutputActivation::None,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut r = rng::stream(0, "t", 0);
        let mut net = Mlp::new(&[3, 4, 2], OutputActivation::None, 1.0, InitScheme::GlorotUniform, &mut r).unwrap();
        let zeros = vec![0.0; net.num_params()];
        net.set_params_flat(&zeros).unwrap();
        let out = net.forward(&DMatrix::from_element(5, 3, 0.7)).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identity_layer_is_identity() {
        let net = identity_layer(3);
        let x = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 3.5, 0.0, 0.25, -7.0]);
        assert_eq!(net.forward(&x).unwrap(), x);
    }

    #[test]
    fn tanh_head_is_bounded() {
        let mut r = rng::stream(1, "t", 0);
        let net = Mlp::new(&[2, 8, 3], OutputActivation::Tanh, 1.0, InitScheme::HeNormal, &mut r).unwrap();
        let x = DMatrix::from_fn(50, 2, |i, j| (i as f64 - 25.0) * (j as f64 + 1.0));
        assert!(net.forward(&x).unwrap().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn dimension_mismatch_is_an_input_error() {
        let net = identity_layer(3);
        assert!(matches!(net.forward(&DMatrix::zeros(1, 2)), Err(Error::Input(_))));
    }

    #[test]
    fn scalar_linear_gradient_is_the_input() {
        let net = Mlp::from_layers(
            vec![Dense {
                weight: DMatrix::from_element(1, 1, 0.3),
                bias: DVector::zeros(1),
            }],
            OutputActivation::None,
            1.0,
        )
        .unwrap();
        let x = DMatrix::from_element(1, 1, 1.7);
        let cache = net.forward_cached(&x).unwrap();
        let (g, gx) = net.backward(&cache, &DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert_eq!(g.layers[0].weight[(0, 0)], 1.7);
        assert_eq!(g.layers[0].bias[0], 1.0);
        assert_eq!(gx[(0, 0)], 0.3);
    }

    #[test]
    fn relu_at_zero_uses_zero_subgradient() {
        // hidden unit pre-activation is exactly 0 for input 0
        let net = Mlp::from_layers(
            vec![
                Dense {
                    weight: DMatrix::from_element(1, 1, 1.0),
                    bias: DVector::zeros(1),
                },
                Dense {
                    weight: DMatrix::from_element(1, 1, 2.0),
                    bias: DVector::zeros(1),
                },
            ],
            OutputActivation::None,
            1.0,
        )
        .unwrap();
        let cache = net.forward_cached(&DMatrix::zeros(1, 1)).unwrap();
        let (g, gx) = net.backward(&cache, &DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert_eq!(g.layers[0].weight[(0, 0)], 0.0);
        assert_eq!(gx[(0, 0)], 0.0);
    }

    #[test]
    fn soft_update_extremes() {
        let mut r = rng::stream(2, "t", 0);
        let online = Mlp::new(&[2, 3, 1], OutputActivation::None, 1.0, InitScheme::GlorotUniform, &mut r).unwrap();
        let original = Mlp::new(&[2, 3, 1], OutputActivation::None, 1.0, InitScheme::GlorotUniform, &mut r).unwrap();
        let mut t = original.clone();
        soft_update(&mut t, &online, 0.0).unwrap();
        assert_eq!(t, original);
        soft_update(&mut t, &online, 1.0).unwrap();
        assert_eq!(t, online);

        let mut a = identity_layer(1);
        a.set_params_flat(&[0.0, 0.0]).unwrap();
        let mut b = identity_layer(1);
        b.set_params_flat(&[2.0, 2.0]).unwrap();
        soft_update(&mut a, &b, 0.5).unwrap();
        assert_eq!(a.params_flat(), vec![1.0, 1.0]);
    }

    #[test]
    fn glorot_weights_respect_their_bound() {
        let mut r = rng::stream(3, "t", 0);
        let net = Mlp::new(&[5, 16, 16, 1], OutputActivation::Tanh, 1.0, InitScheme::GlorotUniform, &mut r).unwrap();
        for l in net.layers() {
            let limit = (6.0 / (l.weight.nrows() + l.weight.ncols()) as f64).sqrt();
            assert!(l.weight.iter().all(|w| w.abs() <= limit));
        }
    }

    proptest! {
        #[test]
        fn forward_is_pure(seed in 0u64..1000) {
            let mut r = rng::stream(seed, "net", 0);
            let net = Mlp::new(&[3, 6, 2], OutputActivation::Tanh, 2.0, InitScheme::GlorotUniform, &mut r).unwrap();
            let x = DMatrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64 * 0.1 - 0.5);
            let a = net.forward(&x).unwrap();
            let b = net.forward_cached(&x).unwrap();
            prop_assert_eq!(&a, b.output());
            prop_assert_eq!(a, net.forward(&x).unwrap());
        }
    }
}
