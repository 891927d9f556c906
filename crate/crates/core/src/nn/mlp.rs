use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputTransform {
    Identity,
    Softmax,
    Sigmoid,
}

/// Layer sizes (input first, output last) plus nonlinearities.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub output_transform: OutputTransform,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation, output: OutputTransform) -> Self {
        Self {
            layer_sizes,
            activation,
            output_transform: output,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 || self.layer_sizes.contains(&0) {
            return Err(Error::Config(format!(
                "mlp needs at least two positive layer sizes, got {:?}",
                self.layer_sizes
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated spec")
    }
}

/// Affine layer `y = W x + b`, `W` stored as (out, in).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "DenseRepr", into = "DenseRepr")]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Serialize, Deserialize)]
struct DenseRepr {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl From<Dense> for DenseRepr {
    fn from(d: Dense) -> Self {
        DenseRepr {
            weights: d.weights.rows().into_iter().map(|r| r.to_vec()).collect(),
            bias: d.bias.to_vec(),
        }
    }
}

impl From<DenseRepr> for Dense {
    fn from(r: DenseRepr) -> Self {
        let rows = r.weights.len();
        let cols = r.weights.first().map_or(0, Vec::len);
        let flat: Vec<f64> = r.weights.into_iter().flatten().collect();
        let weights = Array2::from_shape_vec((rows, cols), flat)
            .unwrap_or_else(|_| Array2::from_elem((rows, cols), f64::NAN));
        Dense {
            weights,
            bias: Array1::from(r.bias),
        }
    }
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    /// Uniform in `[-1/√fan_in, 1/√fan_in]` for weights and bias.
    pub fn init(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let mut d = Self::zeros(inputs, outputs);
        d.weights.mapv_inplace(|_| rng.random_range(-bound..=bound));
        d.bias.mapv_inplace(|_| rng.random_range(-bound..=bound));
        d
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }
}

/// Weights and biases of every layer. Also used as the gradient container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub layers: Vec<Dense>,
}

impl Parameters {
    pub fn init(spec: &MlpSpec, rng: &mut Rng) -> Self {
        Self {
            layers: spec
                .layer_sizes
                .windows(2)
                .map(|w| Dense::init(w[0], w[1], rng))
                .collect(),
        }
    }

    pub fn zeros(spec: &MlpSpec) -> Self {
        Self {
            layers: spec
                .layer_sizes
                .windows(2)
                .map(|w| Dense::zeros(w[0], w[1]))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs(), l.outputs()))
                .collect(),
        }
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| l.weights.dim()).collect()
    }

    pub fn matches(&self, spec: &MlpSpec) -> bool {
        self.layers.len() + 1 == spec.layer_sizes.len()
            && self
                .layers
                .iter()
                .zip(spec.layer_sizes.windows(2))
                .all(|(l, w)| l.inputs() == w[0] && l.outputs() == w[1] && l.bias.len() == w[1])
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &Parameters, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.scaled_add(scale, &b.weights);
            a.bias.scaled_add(scale, &b.bias);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights *= factor;
            l.bias *= factor;
        }
    }

    /// All scalars, layer-major, weights before bias.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        let mut it = values.iter();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = *it.next().expect("flat vector too short");
            }
        }
    }

    /// Name of the first parameter block holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.iter().any(|v| !v.is_finite()) {
                return Some(format!("layer {i} weights"));
            }
            if l.bias.iter().any(|v| !v.is_finite()) {
                return Some(format!("layer {i} bias"));
            }
        }
        None
    }
}

/// Activation record of one batched forward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    shapes: Vec<(usize, usize)>,
    /// Input of each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

/// A feed-forward network: spec plus parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: Parameters,
}

impl Mlp {
    pub fn new(spec: MlpSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let params = Parameters::init(&spec, rng);
        Ok(Self { spec, params })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let params = Parameters::zeros(&spec);
        Ok(Self { spec, params })
    }

    pub fn from_parts(spec: MlpSpec, params: Parameters) -> Result<Self> {
        spec.validate()?;
        if !params.matches(&spec) {
            return Err(Error::Checkpoint(format!(
                "parameter shapes {:?} do not match layer sizes {:?}",
                params.shapes(),
                spec.layer_sizes
            )));
        }
        Ok(Self { spec, params })
    }

    pub fn input_dim(&self) -> usize {
        self.params.layers.first().map_or(0, Dense::inputs)
    }

    pub fn output_dim(&self) -> usize {
        self.params.layers.last().map_or(0, Dense::outputs)
    }

    /// Batched forward pass; rows of `input` are samples.
    pub fn forward(&self, input: &Array2<f64>) -> Result<(Array2<f64>, Tape)> {
        if input.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: input.ncols(),
            });
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        let last = self.params.layers.len() - 1;
        let mut inputs = Vec::with_capacity(last + 1);
        let mut pre = Vec::with_capacity(last + 1);
        let mut x = input.clone();
        for (i, layer) in self.params.layers.iter().enumerate() {
            let mut a = x.dot(&layer.weights.t());
            a += &layer.bias;
            inputs.push(x);
            x = if i < last {
                match self.spec.activation {
                    Activation::Relu => a.mapv(|v| v.max(0.0)),
                    Activation::Tanh => a.mapv(f64::tanh),
                }
            } else {
                apply_output(self.spec.output_transform, &a)
            };
            pre.push(a);
        }
        let tape = Tape {
            shapes: self.params.shapes(),
            inputs,
            pre,
            output: x.clone(),
        };
        Ok((x, tape))
    }

    /// Forward pass on a single input vector.
    pub fn forward_one(&self, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec())
            .expect("row vector shape");
        let (y, tape) = self.forward(&x)?;
        Ok((y.row(0).to_vec(), tape))
    }

    /// Output only.
    pub fn predict(&self, input: &Array2<f64>) -> Result<Array2<f64>> {
        self.forward(input).map(|(y, _)| y)
    }

    /// Reverse-mode gradients given `d_output = ∂L/∂output` (same shape as
    /// the output). Returns summed parameter gradients and `∂L/∂input`.
    pub fn backward(&self, tape: &Tape, d_output: &Array2<f64>) -> Result<(Parameters, Array2<f64>)> {
        if tape.shapes != self.params.shapes() {
            return Err(Error::StaleTape(format!(
                "tape recorded shapes {:?}, network has {:?}",
                tape.shapes,
                self.params.shapes()
            )));
        }
        if d_output.dim() != tape.output.dim() {
            return Err(Error::StaleTape(format!(
                "output gradient shape {:?} vs output {:?}",
                d_output.dim(),
                tape.output.dim()
            )));
        }
        let last = self.params.layers.len() - 1;
        let mut grads = self.params.zeros_like();
        let mut d_a = output_backward(self.spec.output_transform, &tape.output, d_output);
        for i in (0..=last).rev() {
            let layer = &self.params.layers[i];
            grads.layers[i].weights = d_a.t().dot(&tape.inputs[i]);
            grads.layers[i].bias = d_a.sum_axis(Axis(0));
            let d_x = d_a.dot(&layer.weights);
            if i == 0 {
                return Ok((grads, d_x));
            }
            let pre = &tape.pre[i - 1];
            d_a = match self.spec.activation {
                Activation::Relu => {
                    let mut g = d_x;
                    g.zip_mut_with(pre, |g, &p| {
                        if p <= 0.0 {
                            *g = 0.0
                        }
                    });
                    g
                }
                Activation::Tanh => {
                    let mut g = d_x;
                    g.zip_mut_with(pre, |g, &p| {
                        let t = p.tanh();
                        *g *= 1.0 - t * t
                    });
                    g
                }
            };
        }
        unreachable!("network has at least one layer")
    }
}

fn apply_output(transform: OutputTransform, a: &Array2<f64>) -> Array2<f64> {
    match transform {
        OutputTransform::Identity => a.clone(),
        OutputTransform::Sigmoid => a.mapv(|v| 1.0 / (1.0 + (-v).exp())),
        OutputTransform::Softmax => {
            let mut out = a.clone();
            for mut row in out.rows_mut() {
                let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                row.mapv_inplace(|v| (v - max).exp());
                let sum = row.sum();
                row /= sum;
            }
            out
        }
    }
}

fn output_backward(transform: OutputTransform, y: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    match transform {
        OutputTransform::Identity => dy.clone(),
        OutputTransform::Sigmoid => {
            let mut g = dy.clone();
            g.zip_mut_with(y, |g, &y| *g *= y * (1.0 - y));
            g
        }
        OutputTransform::Softmax => {
            let mut g = dy.clone();
            for (mut grow, yrow) in g.rows_mut().into_iter().zip(y.rows()) {
                let dot = grow.dot(&yrow);
                grow.zip_mut_with(&yrow, |g, &y| *g = y * (*g - dot));
            }
            g
        }
    }
}
