use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Elementwise nonlinearity applied after a layer's affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "identity" | "linear" => Some(Activation::Identity),
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative given the pre-activation `z` and the activation value `a`.
    /// The ReLU kink at exactly zero takes derivative 0.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// One affine layer `y = act(x · W + b)` with `W` stored as `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Layer widths and hidden nonlinearity of a projection MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub hidden_activation: Activation,
}

impl NetSpec {
    /// Default head: one ReLU hidden layer of 256 units into a 128-d linear output.
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: vec![256],
            output_dim: 128,
            hidden_activation: Activation::Relu,
        }
    }

    fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(self.output_dim);
        dims
    }
}

/// A projection MLP mapping frozen encoder features into the joint space.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionNet {
    layers: Vec<Layer>,
}

impl ProjectionNet {
    /// Assembles a net from explicit layers, checking that widths chain and
    /// that the head is linear.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("projection net needs at least one layer".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.output_dim() {
                return Err(Error::shape(
                    "ProjectionNet::from_layers",
                    format!("bias of length {} in layer {i}", layer.output_dim()),
                    format!("length {}", layer.bias.len()),
                ));
            }
            if let Some(next) = layers.get(i + 1) {
                if next.input_dim() != layer.output_dim() {
                    return Err(Error::shape(
                        "ProjectionNet::from_layers",
                        format!("layer {} input {}", i + 1, layer.output_dim()),
                        format!("{}", next.input_dim()),
                    ));
                }
            }
        }
        if layers.last().map(|l| l.activation) != Some(Activation::Identity) {
            return Err(Error::Config("the output layer of a projection net must be linear".into()));
        }
        Ok(Self { layers })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(spec: &NetSpec, rng: &mut impl Rng) -> Result<Self> {
        let dims = spec.dims();
        if dims.contains(&0) {
            return Err(Error::Config(format!("zero-width layer in {dims:?}")));
        }
        let n_layers = dims.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for (l, pair) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            layers.push(Layer {
                weight: Matrix::from_vec(fan_in, fan_out, data)?,
                bias: vec![0.0; fan_out],
                activation: if l + 1 == n_layers {
                    Activation::Identity
                } else {
                    spec.hidden_activation
                },
            });
        }
        Self::from_layers(layers)
    }

    pub fn init_seeded(spec: &NetSpec, seed: u64, stream: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self::init(spec, &mut rng)
    }

    /// Square linear layer with identity weights.
    pub fn identity(dim: usize) -> Self {
        Self {
            layers: vec![Layer {
                weight: Matrix::identity(dim),
                bias: vec![0.0; dim],
                activation: Activation::Identity,
            }],
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.len())
            .sum()
    }

    /// FNV-1a over the bit patterns of every parameter; ties a tape to the
    /// exact parameter values it was recorded with.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for layer in &self.layers {
            eat(layer.input_dim() as u64);
            eat(layer.output_dim() as u64);
            eat(layer.activation.code() as u64);
            for &w in layer.weight.data() {
                eat(w.to_bits());
            }
            for &b in &layer.bias {
                eat(b.to_bits());
            }
        }
        h
    }

    /// Forward pass over a batch (one example per row).
    pub fn forward(&self, batch: &Matrix) -> Result<(Matrix, Tape)> {
        if batch.cols() != self.input_dim() {
            return Err(Error::shape(
                "forward",
                format!("batch with {} columns", self.input_dim()),
                format!("{}x{} batch", batch.rows(), batch.cols()),
            ));
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        let mut current = batch.clone();
        for layer in &self.layers {
            let mut z = current.matmul(&layer.weight)?;
            z.add_row_broadcast(&layer.bias)?;
            let mut a = z.clone();
            if layer.activation != Activation::Identity {
                for x in a.data_mut() {
                    *x = layer.activation.apply(*x);
                }
            }
            current = a.clone();
            pre.push(z);
            post.push(a);
        }
        let tape = Tape {
            fingerprint: self.fingerprint(),
            input: batch.clone(),
            pre,
            post,
        };
        Ok((current, tape))
    }

    /// Forward pass without keeping a tape.
    pub fn apply(&self, batch: &Matrix) -> Result<Matrix> {
        self.forward(batch).map(|(out, _)| out)
    }

    /// Backpropagates `output_grad` (dL/d output) through the recorded pass.
    pub fn backward(&self, tape: &Tape, output_grad: &Matrix) -> Result<NetGrads> {
        if tape.fingerprint != self.fingerprint() || tape.pre.len() != self.layers.len() {
            return Err(Error::StaleTape(
                "tape was recorded with different parameters".into(),
            ));
        }
        let out_shape = (tape.input.rows(), self.output_dim());
        if output_grad.shape() != out_shape {
            return Err(Error::shape(
                "backward",
                format!("output gradient {}x{}", out_shape.0, out_shape.1),
                format!("{}x{}", output_grad.rows(), output_grad.cols()),
            ));
        }

        let mut layer_grads = Vec::with_capacity(self.layers.len());
        let mut upstream = output_grad.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let mut dz = upstream;
            if layer.activation != Activation::Identity {
                let z = &tape.pre[l];
                let a = &tape.post[l];
                for ((g, &zv), &av) in dz.data_mut().iter_mut().zip(z.data()).zip(a.data()) {
                    *g *= layer.activation.derivative(zv, av);
                }
            }
            let input = if l == 0 { &tape.input } else { &tape.post[l - 1] };
            let d_weight = input.matmul_tn(&dz)?;
            let d_bias = dz.column_sums();
            upstream = dz.matmul_nt(&layer.weight)?;
            layer_grads.push(LayerGrads {
                weight: d_weight,
                bias: d_bias,
            });
        }
        layer_grads.reverse();
        Ok(NetGrads {
            layers: layer_grads,
            input: upstream,
        })
    }

    /// Flat list of `(name, values)` for every parameter block, in checkpoint order.
    pub fn params(&self, prefix: &str) -> Vec<(String, &[f64])> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.layer{l}.weight"), layer.weight.data()));
            out.push((format!("{prefix}.layer{l}.bias"), layer.bias.as_slice()));
        }
        out
    }

    pub fn params_mut(&mut self, prefix: &str) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for (l, layer) in self.layers.iter_mut().enumerate() {
            out.push((format!("{prefix}.layer{l}.weight"), layer.weight.data_mut()));
            out.push((format!("{prefix}.layer{l}.bias"), layer.bias.as_mut_slice()));
        }
        out
    }
}

/// Activations recorded by one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    fingerprint: u64,
    input: Matrix,
    pre: Vec<Matrix>,
    post: Vec<Matrix>,
}

impl Tape {
    pub fn input(&self) -> &Matrix {
        &self.input
    }

    /// Pre-activation values per layer.
    pub fn pre_activations(&self) -> &[Matrix] {
        &self.pre
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Gradients of a scalar loss with respect to every parameter and to the input batch.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub layers: Vec<LayerGrads>,
    pub input: Matrix,
}

impl NetGrads {
    pub fn blocks(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.data(), l.bias.as_slice()])
            .collect()
    }

    /// Accumulates another set of gradients for the same net.
    pub fn accumulate(&mut self, other: &NetGrads) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::shape(
                "NetGrads::accumulate",
                format!("{} layers", self.layers.len()),
                format!("{} layers", other.layers.len()),
            ));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.add_assign(&b.weight)?;
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
        Ok(())
    }
}
