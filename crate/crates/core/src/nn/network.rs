use rand::Rng;

use crate::error::{bail, Result};
use crate::nn::activation::{relu, sigmoid, Relu, Sigmoid};
use crate::nn::batchnorm::BatchNorm;
use crate::nn::conv::Conv2d;
use crate::nn::dense::Dense;
use crate::nn::init::xavier_uniform;
use crate::nn::pool::{Pool2d, PoolKind};
use crate::nn::{Real, Tensor};

/// A trainable tensor and its gradient buffer.
#[derive(Clone, Debug)]
pub struct Param<T: Real> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(Tensor::zeros(shape))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Debug)]
pub enum Layer<T: Real> {
    Conv2d(Conv2d<T>),
    Pool(Pool2d),
    BatchNorm(BatchNorm<T>),
    Dense(Dense<T>),
    Relu(Relu),
    Sigmoid(Sigmoid<T>),
}

impl<T: Real> Layer<T> {
    pub fn conv(kernel: usize, in_channels: usize, out_channels: usize) -> Self {
        Layer::Conv2d(Conv2d::new(kernel, in_channels, out_channels, 1))
    }

    pub fn avg_pool(size: usize, stride: usize) -> Self {
        Layer::Pool(Pool2d::new(PoolKind::Avg, size, stride))
    }

    pub fn max_pool(size: usize, stride: usize) -> Self {
        Layer::Pool(Pool2d::new(PoolKind::Max, size, stride))
    }

    pub fn batch_norm(channels: usize) -> Self {
        Layer::BatchNorm(BatchNorm::new(channels))
    }

    pub fn dense(inputs: usize, outputs: usize) -> Self {
        Layer::Dense(Dense::new(inputs, outputs))
    }

    pub fn relu() -> Self {
        Layer::Relu(Relu::default())
    }

    pub fn sigmoid() -> Self {
        Layer::Sigmoid(Sigmoid::default())
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::Pool(p) if p.kind == PoolKind::Avg => "avgpool",
            Layer::Pool(_) => "maxpool",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Dense(_) => "dense",
            Layer::Relu(_) => "relu",
            Layer::Sigmoid(_) => "sigmoid",
        }
    }

    /// Per-item output shape for a per-item input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv2d(l) => l.output_shape(input),
            Layer::Pool(l) => l.output_shape(input),
            Layer::BatchNorm(l) => l.output_shape(input),
            Layer::Dense(l) => l.output_shape(input),
            Layer::Relu(_) | Layer::Sigmoid(_) => Ok(input.to_vec()),
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv2d(l) => l.infer(x),
            Layer::Pool(l) => l.infer(x),
            Layer::BatchNorm(l) => l.infer(x),
            Layer::Dense(l) => l.infer(x),
            Layer::Relu(_) => Ok(relu(x)),
            Layer::Sigmoid(_) => Ok(sigmoid(x)),
        }
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv2d(l) => l.forward_train(x),
            Layer::Pool(l) => l.forward_train(x),
            Layer::BatchNorm(l) => l.forward_train(x),
            Layer::Dense(l) => l.forward_train(x),
            Layer::Relu(l) => Ok(l.forward_train(x)),
            Layer::Sigmoid(l) => Ok(l.forward_train(x)),
        }
    }

    /// Fills the parameter gradients and returns the input gradient.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv2d(l) => l.backward(grad_out),
            Layer::Pool(l) => l.backward(grad_out),
            Layer::BatchNorm(l) => l.backward(grad_out),
            Layer::Dense(l) => l.backward(grad_out),
            Layer::Relu(l) => l.backward(grad_out),
            Layer::Sigmoid(l) => l.backward(grad_out),
        }
    }

    pub fn params(&self) -> Vec<(&'static str, &Param<T>)> {
        match self {
            Layer::Conv2d(l) => vec![("weight", &l.weight), ("bias", &l.bias)],
            Layer::Dense(l) => vec![("weight", &l.weight), ("bias", &l.bias)],
            Layer::BatchNorm(l) => vec![("gamma", &l.gamma), ("beta", &l.beta)],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            Layer::Conv2d(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            Layer::BatchNorm(l) => vec![&mut l.gamma, &mut l.beta],
            _ => Vec::new(),
        }
    }
}

/// Ordered stack of layers applied to `[N, ..input_shape]` batches.
#[derive(Clone, Debug)]
pub struct Network<T: Real> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
}

impl<T: Real> Network<T> {
    /// Builds the network and verifies the layer shapes compose.
    pub fn new(input_shape: &[usize], layers: Vec<Layer<T>>) -> Result<Self> {
        let net = Self {
            input_shape: input_shape.to_vec(),
            layers,
        };
        net.shape_trace()?;
        Ok(net)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    /// Per-item output shape after every layer.
    pub fn shape_trace(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input_shape.clone();
        let mut trace = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            shape = layer.output_shape(&shape)?;
            trace.push(shape.clone());
        }
        Ok(trace)
    }

    pub fn output_len(&self) -> usize {
        self.shape_trace()
            .ok()
            .and_then(|t| t.last().map(|s| s.iter().product()))
            .unwrap_or(0)
    }

    /// Xavier-uniform weights, zero biases, unit batch-norm scales.
    pub fn initialize(&mut self, rng: &mut impl Rng) -> Result<()> {
        for layer in &mut self.layers {
            match layer {
                Layer::Conv2d(l) => {
                    l.weight = Param::new(xavier_uniform(l.weight.value.shape(), rng)?);
                    l.bias = Param::zeros(l.bias.value.shape());
                }
                Layer::Dense(l) => {
                    l.weight = Param::new(xavier_uniform(l.weight.value.shape(), rng)?);
                    l.bias = Param::zeros(l.bias.value.shape());
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn check_batch(&self, x: &Tensor<T>) -> Result<()> {
        if x.rank() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            bail!(
                Shape,
                "network expects [N, {:?}] input, got {:?}",
                self.input_shape,
                x.shape()
            );
        }
        Ok(())
    }

    /// Inference-mode forward pass over a batch. Does not mutate the network.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_batch(x)?;
        let mut h = self.layers[0].infer(x)?;
        for layer in &self.layers[1..] {
            h = layer.infer(&h)?;
        }
        Ok(h)
    }

    /// Inference through `layers[range]` only, without checking `x` against
    /// the network's input shape. Convolution and pooling layers accept any
    /// spatial size, so a prefix of the network can run fully convolutionally
    /// over an input larger than a single item.
    pub fn infer_layers(&self, x: &Tensor<T>, range: std::ops::Range<usize>) -> Result<Tensor<T>> {
        let Some(layers) = self.layers.get(range.clone()) else {
            bail!(InvalidArgument, "layer range {range:?} out of bounds");
        };
        let mut h = x.clone();
        for layer in layers {
            h = layer.infer(&h)?;
        }
        Ok(h)
    }

    /// Training-mode forward pass; caches what `backward` needs and updates
    /// batch-norm running statistics.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_batch(x)?;
        let mut h = self.layers[0].forward_train(x)?;
        for layer in &mut self.layers[1..] {
            h = layer.forward_train(&h)?;
        }
        Ok(h)
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match mode {
            Mode::Train => self.forward_train(x),
            Mode::Infer => self.infer(x),
        }
    }

    /// Backpropagates `grad_out` through the cached forward pass, filling
    /// every parameter gradient. Returns the gradient w.r.t. the input.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad_out.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.params())
            .map(|(_, p)| p.value.len())
            .sum()
    }
}
