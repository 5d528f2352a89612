//! Dense layers and multi-layer perceptrons on the tape.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::param::{ParamId, ParamStore};
use super::rng::Rng;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Identity => x,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

/// Layer widths `[d_in, h_1, ..., d_out]` plus activations.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub sizes: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
}

impl MlpSpec {
    pub fn new(sizes: Vec<usize>, hidden: Activation, output: Activation) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Contract("an MLP needs at least input and output sizes".into()));
        }
        if sizes.contains(&0) {
            return Err(Error::Contract(format!("MLP sizes must be positive, got {sizes:?}")));
        }
        Ok(Self {
            sizes,
            hidden,
            output,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("validated")
    }
}

/// Glorot-uniform matrix: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.uniform(-a, a)).collect();
    Tensor::matrix(fan_in, fan_out, data).expect("sized")
}

/// `y = x W + b` with `W` stored `in × out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), glorot_uniform(rng, in_dim, out_dim))?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[1, out_dim]))?;
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight)?;
        let b = tape.param(store, self.bias)?;
        let xw = tape.matmul(x, w)?;
        tape.add_row(xw, b)
    }
}

#[derive(Clone, Debug)]
pub struct Mlp {
    pub name: String,
    pub spec: MlpSpec,
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, spec: MlpSpec, rng: &mut Rng) -> Result<Self> {
        let layers = spec
            .sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            name: name.to_string(),
            spec,
            layers,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.spec.output
        } else {
            self.spec.hidden
        }
    }

    /// Applies the network to a `batch × d_in` input.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, input: Var) -> Result<Var> {
        let (_, cols) = tape.dims(input);
        if cols != self.spec.input_dim() {
            return Err(Error::Dimension(format!(
                "{}.0: input width {cols}, layer expects {}",
                self.name,
                self.spec.input_dim()
            )));
        }
        let pre = self.layers[0].forward(tape, store, input)?;
        self.forward_tail(tape, store, pre)
    }

    /// Continues from the pre-activation of the first layer. Lets callers
    /// assemble the first affine map themselves (e.g. from split inputs).
    pub fn forward_tail(&self, tape: &mut Tape, store: &ParamStore, first_pre: Var) -> Result<Var> {
        let mut x = self.activation(0).apply(tape, first_pre);
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            if tape.dims(x).1 != layer.in_dim {
                return Err(Error::Dimension(format!(
                    "{}.{i}: input width {}, layer expects {}",
                    self.name,
                    tape.dims(x).1,
                    layer.in_dim
                )));
            }
            let pre = layer.forward(tape, store, x)?;
            x = self.activation(i).apply(tape, pre);
        }
        Ok(x)
    }
}

/// Mean binary cross-entropy of `probs` against 0/1 `labels`.
pub fn bce_loss(tape: &mut Tape, probs: Var, labels: &Tensor) -> Result<Var> {
    tape.bce(probs, labels)
}

/// Mean of squared elementwise differences.
pub fn mse_loss(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    tape.mse(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::tape::sigmoid;

    fn single_layer(store: &mut ParamStore, act: Activation) -> Mlp {
        let spec = MlpSpec::new(vec![2, 2], act, act).unwrap();
        Mlp::new(store, "m", spec, &mut Rng::new(0)).unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut store = ParamStore::new();
        let mlp = single_layer(&mut store, Activation::Identity);
        store.get_mut(mlp.layers[0].weight).value = Tensor::identity(2);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![1.0, 2.0])).unwrap();
        let y = mlp.forward(&mut tape, &store, x).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn sigmoid_of_zero_preactivation_is_half() {
        let mut store = ParamStore::new();
        let mlp = single_layer(&mut store, Activation::Sigmoid);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[3, 2])).unwrap();
        let y = mlp.forward(&mut tape, &store, x).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.5));
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn output_shape_follows_spec() {
        let mut store = ParamStore::new();
        let spec = MlpSpec::new(vec![3, 256, 1], Activation::Relu, Activation::Sigmoid).unwrap();
        let mlp = Mlp::new(&mut store, "m", spec, &mut Rng::new(1)).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Rng::new(2).standard_normal(&[5, 3])).unwrap();
        let y = mlp.forward(&mut tape, &store, x).unwrap();
        assert_eq!(tape.dims(y), (5, 1));
    }

    #[test]
    fn width_mismatch_names_the_layer() {
        let mut store = ParamStore::new();
        let spec = MlpSpec::new(vec![3, 4, 1], Activation::Relu, Activation::Sigmoid).unwrap();
        let mlp = Mlp::new(&mut store, "encoder", spec, &mut Rng::new(1)).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 2])).unwrap();
        let err = mlp.forward(&mut tape, &store, x).unwrap_err().to_string();
        assert!(err.contains("encoder.0"), "{err}");
    }

    #[test]
    fn spec_needs_two_sizes() {
        assert!(MlpSpec::new(vec![3], Activation::Relu, Activation::Relu).is_err());
    }

    #[test]
    fn glorot_bounds_and_zero_bias() {
        let mut store = ParamStore::new();
        let l = Linear::new(&mut store, "l", 10, 20, &mut Rng::new(9)).unwrap();
        let a = (6.0f64 / 30.0).sqrt();
        assert!(store.get(l.weight).value.data().iter().all(|w| w.abs() <= a));
        assert!(store.get(l.bias).value.data().iter().all(|&b| b == 0.0));
    }

    fn scalar_loss(f: impl FnOnce(&mut Tape, Var, Var) -> Var, p: Vec<f64>, y: Vec<f64>) -> f64 {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::row(p)).unwrap();
        let b = tape.constant(Tensor::row(y)).unwrap();
        let l = f(&mut tape, a, b);
        tape.scalar(l)
    }

    #[test]
    fn bce_examples() {
        let bce = |p: Vec<f64>, y: Vec<f64>| {
            let y = Tensor::row(y);
            scalar_loss(move |t, a, _| bce_loss(t, a, &y).unwrap(), p, vec![0.0])
        };
        assert!((bce(vec![0.5], vec![1.0]) - 2f64.ln()).abs() < 1e-12);
        let perfect = bce(vec![1.0], vec![1.0]);
        assert!((0.0..1e-6).contains(&perfect));
        assert!((perfect - (-(1.0 - super::super::tape::BCE_EPS).ln())).abs() < 1e-15);
        let two = bce(vec![0.9, 0.2], vec![1.0, 0.0]);
        assert!((two - 0.164252).abs() < 1e-6, "{two}");
        assert!((two - (-(0.9f64).ln() - (0.8f64).ln()) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn bce_length_mismatch() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::row(vec![0.5, 0.5])).unwrap();
        assert!(bce_loss(&mut tape, a, &Tensor::row(vec![1.0])).is_err());
    }

    #[test]
    fn mse_examples() {
        let mse = |a: Vec<f64>, b: Vec<f64>| scalar_loss(|t, a, b| mse_loss(t, a, b).unwrap(), a, b);
        assert_eq!(mse(vec![0.3, 0.4], vec![0.3, 0.4]), 0.0);
        assert_eq!(mse(vec![1.0, 1.0], vec![0.0, 0.0]), 1.0);
        assert!((mse(vec![0.2, 0.8], vec![0.5, 0.5]) - 0.09).abs() < 1e-12);
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::row(vec![1.0])).unwrap();
        let b = tape.constant(Tensor::row(vec![1.0, 2.0])).unwrap();
        assert!(mse_loss(&mut tape, a, b).is_err());
    }
}
