//! Small dense networks with an explicit backward pass.
//!
//! Rows are samples: a batch is a `B × in` matrix and each layer computes
//! `act(X·W + b)` with `W` stored as `in × out`. The backward pass returns
//! parameter gradients and the gradient with respect to the input, which is
//! what the deterministic policy gradient needs from the critic.

use std::io::{self, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use thiserror::Error;

const MLP_MAGIC: &[u8; 8] = b"UAVMLP01";
const ADAM_MAGIC: &[u8; 8] = b"UAVADM01";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("bad checkpoint: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative evaluated at the pre-activation `x`.
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `in × out`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            weights: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.ncols()
    }
}

/// Same shapes as the network's parameters; used for gradients and moments.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

/// Activations kept by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// Fan-in uniform initialization for hidden layers and a small uniform
    /// `±final_scale` for the output layer.
    pub fn new<R: Rng + ?Sized>(
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        final_scale: f64,
        rng: &mut R,
    ) -> Self {
        assert!(widths.len() >= 2, "need at least input and output widths");
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let (scale, act) = if i == last {
                    (final_scale, output)
                } else {
                    (1.0 / (fan_in as f64).sqrt(), hidden)
                };
                let mut draw = || (rng.random::<f64>() * 2.0 - 1.0) * scale;
                Dense {
                    weights: Array2::from_shape_simple_fn((fan_in, fan_out), &mut draw),
                    bias: Array1::from_shape_simple_fn(fan_out, &mut draw),
                    activation: act,
                }
            })
            .collect();
        Self { layers }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].inputs()];
        w.extend(self.layers.iter().map(Dense::outputs));
        w
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, Dense::outputs)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, ForwardCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.to_owned();
        for layer in &self.layers {
            let z = a.dot(&layer.weights) + &layer.bias;
            let act = layer.activation;
            let out = z.mapv(|v| act.apply(v));
            inputs.push(a);
            pre.push(z);
            a = out;
        }
        (a, ForwardCache { inputs, pre })
    }

    /// Forward pass without keeping a cache.
    pub fn predict(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut a = x.to_owned();
        for layer in &self.layers {
            let act = layer.activation;
            a = (a.dot(&layer.weights) + &layer.bias).mapv_into(|v| act.apply(v));
        }
        a
    }

    pub fn predict_one(&self, x: &[f64]) -> Vec<f64> {
        let x = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        self.predict(x).into_raw_vec_and_offset().0
    }

    /// Reverse-mode gradients of `Σ grad_y ⊙ y` with respect to the
    /// parameters and the input.
    pub fn backward(&self, cache: &ForwardCache, grad_y: ArrayView2<f64>) -> (Gradients, Array2<f64>) {
        self.backward_impl(cache, grad_y, true)
    }

    /// Only the input gradient; parameter gradients are skipped.
    pub fn input_gradient(&self, cache: &ForwardCache, grad_y: ArrayView2<f64>) -> Array2<f64> {
        self.backward_impl(cache, grad_y, false).1
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache,
        grad_y: ArrayView2<f64>,
        with_params: bool,
    ) -> (Gradients, Array2<f64>) {
        let mut grads = Vec::with_capacity(if with_params { self.layers.len() } else { 0 });
        let mut g = grad_y.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let act = layer.activation;
            if act != Activation::Identity {
                Zip::from(&mut g)
                    .and(&cache.pre[i])
                    .for_each(|gv, &z| *gv *= act.derivative(z));
            }
            if with_params {
                grads.push(LayerGrad {
                    weights: cache.inputs[i].t().dot(&g),
                    bias: g.sum_axis(Axis(0)),
                });
            }
            g = g.dot(&layer.weights.t());
        }
        grads.reverse();
        (Gradients { layers: grads }, g)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn params_flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn set_params_flat(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.num_params());
        let mut it = values.iter();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = *it.next().unwrap();
            }
        }
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), CheckpointError> {
        out.write_all(MLP_MAGIC)?;
        write_u32(&mut out, self.layers.len() as u32)?;
        for l in &self.layers {
            write_u32(&mut out, l.inputs() as u32)?;
            write_u32(&mut out, l.outputs() as u32)?;
            out.write_all(&[l.activation.tag()])?;
            write_f64s(&mut out, l.weights.iter().chain(l.bias.iter()))?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self, CheckpointError> {
        expect_magic(&mut input, MLP_MAGIC)?;
        let count = read_u32(&mut input)? as usize;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let inputs = read_u32(&mut input)? as usize;
            let outputs = read_u32(&mut input)? as usize;
            let mut tag = [0u8];
            input.read_exact(&mut tag)?;
            let activation = Activation::from_tag(tag[0])
                .ok_or_else(|| CheckpointError::Format(format!("unknown activation {}", tag[0])))?;
            let weights = Array2::from_shape_vec((inputs, outputs), read_f64s(&mut input, inputs * outputs)?)
                .map_err(|e| CheckpointError::Format(e.to_string()))?;
            let bias = Array1::from(read_f64s(&mut input, outputs)?);
            layers.push(Dense {
                weights,
                bias,
                activation,
            });
        }
        Ok(Self { layers })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let file = io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(file)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::read_from(io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// `target ← τ·online + (1 − τ)·target`, parameter by parameter.
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) {
    for (t, o) in target.layers.iter_mut().zip(&online.layers) {
        Zip::from(&mut t.weights)
            .and(&o.weights)
            .for_each(|t, &o| *t = tau * o + (1.0 - tau) * *t);
        Zip::from(&mut t.bias)
            .and(&o.bias)
            .for_each(|t, &o| *t = tau * o + (1.0 - tau) * *t);
    }
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub steps: u64,
    first: Gradients,
    second: Gradients,
}

impl Adam {
    pub fn new(net: &Mlp, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            steps: 0,
            first: Gradients::zeros_like(net),
            second: Gradients::zeros_like(net),
        }
    }

    /// One descent step along `grads`.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) {
        self.steps += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let c1 = 1.0 - b1.powi(self.steps as i32);
        let c2 = 1.0 - b2.powi(self.steps as i32);
        let lr = self.learning_rate;
        for (((layer, g), m), v) in net
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.first.layers)
            .zip(&mut self.second.layers)
        {
            let update = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            };
            Zip::from(&mut layer.weights)
                .and(&g.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .for_each(update);
            Zip::from(&mut layer.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(update);
        }
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), CheckpointError> {
        out.write_all(ADAM_MAGIC)?;
        write_f64s(&mut out, [self.learning_rate, self.beta1, self.beta2, self.epsilon].iter())?;
        out.write_all(&self.steps.to_le_bytes())?;
        write_u32(&mut out, self.first.layers.len() as u32)?;
        for (m, v) in self.first.layers.iter().zip(&self.second.layers) {
            write_u32(&mut out, m.weights.nrows() as u32)?;
            write_u32(&mut out, m.weights.ncols() as u32)?;
            write_f64s(&mut out, m.weights.iter().chain(m.bias.iter()))?;
            write_f64s(&mut out, v.weights.iter().chain(v.bias.iter()))?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self, CheckpointError> {
        expect_magic(&mut input, ADAM_MAGIC)?;
        let h = read_f64s(&mut input, 4)?;
        let mut steps = [0u8; 8];
        input.read_exact(&mut steps)?;
        let count = read_u32(&mut input)? as usize;
        let mut first = Vec::with_capacity(count);
        let mut second = Vec::with_capacity(count);
        for _ in 0..count {
            let rows = read_u32(&mut input)? as usize;
            let cols = read_u32(&mut input)? as usize;
            for dest in [&mut first, &mut second] {
                let w = read_f64s(&mut input, rows * cols)?;
                let b = read_f64s(&mut input, cols)?;
                dest.push(LayerGrad {
                    weights: Array2::from_shape_vec((rows, cols), w)
                        .map_err(|e| CheckpointError::Format(e.to_string()))?,
                    bias: Array1::from(b),
                });
            }
        }
        Ok(Self {
            learning_rate: h[0],
            beta1: h[1],
            beta2: h[2],
            epsilon: h[3],
            steps: u64::from_le_bytes(steps),
            first: Gradients { layers: first },
            second: Gradients { layers: second },
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        self.write_to(io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::read_from(io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn write_u32<W: Write>(out: &mut W, v: u32) -> io::Result<()> {
    out.write_all(&v.to_le_bytes())
}

fn read_u32<R: Read>(input: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn write_f64s<'a, W: Write>(out: &mut W, values: impl Iterator<Item = &'a f64>) -> io::Result<()> {
    for v in values {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s<R: Read>(input: &mut R, n: usize) -> io::Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    input.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn expect_magic<R: Read>(input: &mut R, magic: &[u8; 8]) -> Result<(), CheckpointError> {
    let mut m = [0u8; 8];
    input.read_exact(&mut m)?;
    if &m != magic {
        return Err(CheckpointError::Format("wrong magic".into()));
    }
    Ok(())
}
