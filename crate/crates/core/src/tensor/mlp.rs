use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

/// Ordered, named parameter arrays.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet<F> {
    entries: Vec<(String, Tensor<F>)>,
}

impl<F: Real> ParamSet<F> {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor<F>) {
        self.entries.push((name.into(), value));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<F>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// `self = tau * self + (1 - tau) * other`, matching names in order.
    pub fn polyak_from(&mut self, other: &ParamSet<F>, tau: F) {
        for ((_, dst), (_, src)) in self.entries.iter_mut().zip(&other.entries) {
            for (d, &s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d = tau * *d + (F::one() - tau) * s;
            }
        }
    }

    /// Copies values (not names) from another set with the same layout.
    pub fn copy_values_from(&mut self, other: &ParamSet<F>) {
        for ((_, dst), (_, src)) in self.entries.iter_mut().zip(&other.entries) {
            dst.data_mut().copy_from_slice(src.data());
        }
    }
}

/// Fully connected network: hidden layers use `activation`, the output
/// layer is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<F> {
    name: String,
    layer_sizes: Vec<usize>,
    activation: Activation,
    params: ParamSet<F>,
}

impl<F: Real> Mlp<F> {
    /// Weights are drawn uniformly from `±sqrt(6 / (fan_in + fan_out))`,
    /// biases start at zero.
    pub fn new(name: &str, layer_sizes: &[usize], activation: Activation, rng: &mut impl Rng) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::dim(
                format!("mlp `{name}` layer sizes"),
                "at least two positive sizes",
                format!("{layer_sizes:?}"),
            ));
        }
        let mut params = ParamSet::new();
        for (l, pair) in layer_sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<F> = (0..fan_in * fan_out)
                .map(|_| F::lit(rng.random_range(-bound..bound)))
                .collect();
            params.push(format!("{name}.w{l}"), Tensor::matrix(fan_in, fan_out, w)?);
            params.push(format!("{name}.b{l}"), Tensor::zeros(&[fan_out]));
        }
        Ok(Mlp {
            name: name.to_string(),
            layer_sizes: layer_sizes.to_vec(),
            activation,
            params,
        })
    }

    /// A net with every weight and bias set to zero.
    pub fn zeros(name: &str, layer_sizes: &[usize], activation: Activation) -> Result<Self> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut net = Self::new(name, layer_sizes, activation, &mut rng)?;
        for (_, t) in net.params.iter_mut() {
            t.data_mut().fill(F::zero());
        }
        Ok(net)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &ParamSet<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<F> {
        &mut self.params
    }

    pub fn weight(&self, layer: usize) -> &Tensor<F> {
        self.params.get(&format!("{}.w{layer}", self.name)).unwrap()
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut Tensor<F> {
        let n = format!("{}.w{layer}", self.name);
        self.params.get_mut(&n).unwrap()
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut Tensor<F> {
        let n = format!("{}.b{layer}", self.name);
        self.params.get_mut(&n).unwrap()
    }

    fn layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::dim(format!("mlp `{}` input", self.name), self.input_dim(), cols));
        }
        Ok(())
    }

    /// Records the forward pass; weights are trainable leaves.
    pub fn forward(&self, tape: &mut Tape<F>, input: Var) -> Result<Var> {
        self.forward_impl(tape, input, true)
    }

    /// Records the forward pass with weights as constants, so gradients
    /// flow to the input but not into this net.
    pub fn forward_frozen(&self, tape: &mut Tape<F>, input: Var) -> Result<Var> {
        self.forward_impl(tape, input, false)
    }

    fn forward_impl(&self, tape: &mut Tape<F>, input: Var, trainable: bool) -> Result<Var> {
        self.check_input(tape.value(input).cols())?;
        let mut h = input;
        let n = self.layers();
        for (l, pair) in self.params.entries.chunks(2).enumerate() {
            let (w, b) = if trainable {
                (tape.param(&pair[0].0, &pair[0].1), tape.param(&pair[1].0, &pair[1].1))
            } else {
                (tape.constant(pair[0].1.clone()), tape.constant(pair[1].1.clone()))
            };
            let z = tape.matmul(h, w)?;
            h = tape.add(z, b)?;
            if l + 1 < n {
                h = match self.activation {
                    Activation::Relu => tape.relu(h),
                    Activation::Tanh => tape.tanh(h),
                };
            }
        }
        Ok(h)
    }

    /// Forward pass without recording.
    pub fn infer(&self, input: &Tensor<F>) -> Result<Tensor<F>> {
        self.check_input(input.cols())?;
        let n = self.layers();
        let mut h = input.clone();
        for (l, pair) in self.params.entries.chunks(2).enumerate() {
            let mut z = h.matmul(&pair[0].1)?;
            let cols = z.cols();
            let bias = pair[1].1.data();
            let hidden = l + 1 < n;
            for row in z.data_mut().chunks_exact_mut(cols) {
                for (v, &b) in row.iter_mut().zip(bias) {
                    *v += b;
                }
                if hidden {
                    match self.activation {
                        Activation::Relu => row.iter_mut().for_each(|v| *v = v.max(F::zero())),
                        Activation::Tanh => row.iter_mut().for_each(|v| *v = v.tanh()),
                    }
                }
            }
            h = z;
        }
        Ok(h)
    }
}
