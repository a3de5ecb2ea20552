//! Fully connected networks with a hidden-layer activation and a linear output.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use subdiff::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Self::Tanh => z.mapv_inplace(f64::tanh),
            Self::Relu => z.mapv_inplace(|v| v.max(0.0)),
        }
    }

    /// Multiply `grad` by the derivative, written in terms of the activation output.
    fn backprop(self, out: &Array2<f64>, grad: &mut Array2<f64>) {
        match self {
            Self::Tanh => grad.zip_mut_with(out, |g, &h| *g *= 1.0 - h * h),
            Self::Relu => grad.zip_mut_with(out, |g, &h| {
                if h <= 0.0 {
                    *g = 0.0
                }
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `in × out`, so a batch maps as `x · w + b`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: Array2::zeros((fan_in, fan_out)),
            b: Array1::zeros(fan_out),
        }
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-bound..bound));
        Self {
            w,
            b: Array1::zeros(fan_out),
        }
    }

    fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.w);
        z += &self.b;
        z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

/// Layer outputs kept for the backward pass: `outputs[0]` is the input.
#[derive(Debug, Clone)]
pub struct MlpTape {
    pub outputs: Vec<Array2<f64>>,
}

impl MlpTape {
    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().expect("tape holds the input")
    }
}

impl Mlp {
    pub fn new(widths: &[usize], activation: Activation, rng: &mut impl Rng) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Shape(format!("invalid layer widths {widths:?}")));
        }
        let layers = widths
            .windows(2)
            .map(|w| Dense::glorot(w[0], w[1], rng))
            .collect();
        Ok(Self { layers, activation })
    }

    pub fn zeros(widths: &[usize], activation: Activation) -> Self {
        Self {
            layers: widths
                .windows(2)
                .map(|w| Dense::zeros(w[0], w[1]))
                .collect(),
            activation,
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(|l| l.b.len()));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().b.len()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let last = self.layers.len() - 1;
        let mut h = self.layers[0].forward(&x);
        if last > 0 {
            self.activation.apply(&mut h);
        }
        for (k, layer) in self.layers.iter().enumerate().skip(1) {
            h = layer.forward(&h.view());
            if k < last {
                self.activation.apply(&mut h);
            }
        }
        Ok(h)
    }

    pub fn forward_tape(&self, x: ArrayView2<f64>) -> Result<MlpTape> {
        self.check_input(&x)?;
        let last = self.layers.len() - 1;
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        outputs.push(x.to_owned());
        for (k, layer) in self.layers.iter().enumerate() {
            let mut h = layer.forward(&outputs[k].view());
            if k < last {
                self.activation.apply(&mut h);
            }
            outputs.push(h);
        }
        Ok(MlpTape { outputs })
    }

    /// Accumulate parameter gradients into `grad` given `dL/d(output)`.
    pub fn backward(&self, tape: &MlpTape, grad_out: Array2<f64>, grad: &mut Mlp) {
        let mut g = grad_out;
        for k in (0..self.layers.len()).rev() {
            let input = &tape.outputs[k];
            grad.layers[k].w += &input.t().dot(&g);
            grad.layers[k].b += &g.sum_axis(Axis(0));
            if k > 0 {
                let mut prev = g.dot(&self.layers[k].w.t());
                self.activation.backprop(input, &mut prev);
                g = prev;
            }
        }
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Row-major weights then bias, layer by layer.
    pub fn write_params(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
    }

    /// Inverse of `write_params`; returns the number of values consumed.
    pub fn read_params(&mut self, src: &[f64]) -> usize {
        let mut k = 0;
        for l in &mut self.layers {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = src[k];
                k += 1;
            }
        }
        k
    }
}
