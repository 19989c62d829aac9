use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Module, Parameter, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply<'t>(self, v: Var<'t>) -> Var<'t> {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.relu(),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::UnknownName {
                kind: "activation",
                name: other.into(),
                valid: "tanh, relu".into(),
            }),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        })
    }
}

/// Affine map `x W + b` with `W` of shape `(in, out)` and `b` of shape `(1, out)`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Linear {
    /// Glorot-uniform weights, zero bias.
    pub fn new<R: Rng + ?Sized>(name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..=bound)).collect();
        Self {
            weight: Parameter::new(
                format!("{name}.weight"),
                Tensor::new(vec![fan_in, fan_out], w).expect("weight shape matches data"),
            ),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[1, fan_out])),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>, frozen: bool) -> Result<Var<'t>> {
        let (w, b) = if frozen {
            (tape.constant(self.weight.value.clone()), tape.constant(self.bias.value.clone()))
        } else {
            (tape.param(&self.weight), tape.param(&self.bias))
        };
        x.matmul(w)?.add_row(b)
    }
}

/// Fully connected network; the final layer is linear.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Linear>,
    activations: Vec<Activation>,
}

impl Mlp {
    /// `widths = [in, hidden.., out]`, one activation shared by every hidden layer.
    pub fn new<R: Rng + ?Sized>(name: &str, widths: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        let hidden = widths.len().saturating_sub(2);
        Self::with_activations(name, widths, &vec![activation; hidden], rng)
    }

    pub fn with_activations<R: Rng + ?Sized>(
        name: &str,
        widths: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::invalid(format!("mlp widths {widths:?} need at least two positive entries")));
        }
        if activations.len() != widths.len() - 2 {
            return Err(Error::invalid(format!(
                "{} activations for {} hidden layers",
                activations.len(),
                widths.len() - 2
            )));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Ok(Self {
            layers,
            activations: activations.to_vec(),
        })
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.in_dim()];
        w.extend(self.layers.iter().map(|l| l.fan_out()));
        w
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    /// Zeroes the weights and bias of the output layer.
    pub fn zero_last_layer(&mut self) {
        let last = self.layers.len() - 1;
        let l = &mut self.layers[last];
        l.weight.value = Tensor::zeros(l.weight.value.shape());
        l.bias.value = Tensor::zeros(l.bias.value.shape());
    }

    /// Forward pass on a tape. With `frozen` the parameters enter as
    /// constants, so no gradient reaches them.
    pub fn forward_on<'t>(&self, tape: &'t Tape, x: Var<'t>, frozen: bool) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.in_dim() {
            return Err(Error::shape("mlp input", &shape, &[0, self.in_dim()]));
        }
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h, frozen)?;
            if let Some(act) = self.activations.get(i) {
                h = act.apply(h);
            }
        }
        Ok(h)
    }

    pub fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        self.forward_on(tape, x, false)
    }

    /// Value-only forward pass.
    pub fn eval(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        Ok(self.forward_on(&tape, tape.constant(x.clone()), true)?.value())
    }
}

impl Module for Mlp {
    fn parameters(&self) -> Vec<&Parameter> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }
}

/// `decode(g, z)`: the decoder is a plain [`Mlp`].
pub fn decode<'t>(g: &Mlp, tape: &'t Tape, z: Var<'t>) -> Result<Var<'t>> {
    g.forward(tape, z)
}
