use std::fmt;

use crate::error::Result;
use crate::nn::{Layer, Network, PoolKind, Real};

/// Layers of the kernel/non-kernel classifier for a 32×32×3 input.
///
/// Every convolution and the two hidden fully connected layers are followed
/// by batch normalization and ReLU; the single output unit uses a sigmoid.
pub fn classifier_layers<T: Real>() -> Vec<Layer<T>> {
    let mut layers = Vec::new();
    let conv_bn_relu = |cin, cout, layers: &mut Vec<Layer<T>>| {
        layers.push(Layer::conv(3, cin, cout));
        layers.push(Layer::batch_norm(cout));
        layers.push(Layer::relu());
    };
    conv_bn_relu(3, 32, &mut layers);
    conv_bn_relu(32, 32, &mut layers);
    layers.push(Layer::avg_pool(2, 2));
    conv_bn_relu(32, 64, &mut layers);
    conv_bn_relu(64, 64, &mut layers);
    conv_bn_relu(64, 64, &mut layers);
    layers.push(Layer::avg_pool(7, 1));
    layers.extend([
        Layer::dense(2 * 2 * 64, 256),
        Layer::batch_norm(256),
        Layer::relu(),
        Layer::dense(256, 128),
        Layer::batch_norm(128),
        Layer::relu(),
        Layer::dense(128, 1),
        Layer::sigmoid(),
    ]);
    layers
}

/// Layers of the kernel-center regressor for a 32×32×3 input: ReLU after
/// every layer except the linear 2-unit output.
pub fn regressor_layers<T: Real>() -> Vec<Layer<T>> {
    vec![
        Layer::conv(3, 3, 32),
        Layer::relu(),
        Layer::conv(3, 32, 32),
        Layer::relu(),
        Layer::max_pool(2, 2),
        Layer::conv(3, 32, 64),
        Layer::relu(),
        Layer::conv(3, 64, 64),
        Layer::relu(),
        Layer::conv(3, 64, 64),
        Layer::relu(),
        Layer::max_pool(2, 2),
        Layer::dense(4 * 4 * 64, 100),
        Layer::relu(),
        Layer::dense(100, 50),
        Layer::relu(),
        Layer::dense(50, 10),
        Layer::relu(),
        Layer::dense(10, 2),
    ]
}

pub fn classifier_network<T: Real>() -> Result<Network<T>> {
    Network::new(&crate::PATCH_SHAPE, classifier_layers())
}

pub fn regressor_network<T: Real>() -> Result<Network<T>> {
    Network::new(&crate::PATCH_SHAPE, regressor_layers())
}

/// One structural row of an architecture summary: a convolution, pooling or
/// fully connected stage with the shape it produces.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchRow {
    pub kind: &'static str,
    pub stride: Option<usize>,
    pub filter: Option<usize>,
    pub filters: Option<usize>,
    pub output: Vec<usize>,
}

impl fmt::Display for ArchRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<usize>| v.map_or("-".to_string(), |v| v.to_string());
        write!(
            f,
            "{:<8} s{:<2} {:>2}x{:<2} {:>4}  {:?}",
            self.kind,
            opt(self.stride),
            opt(self.filter),
            opt(self.filter),
            opt(self.filters),
            self.output
        )
    }
}

/// Summarizes the structural layers of `net` (normalization and activation
/// layers are folded into the row they follow).
pub fn summarize<T: Real>(net: &Network<T>) -> Result<Vec<ArchRow>> {
    let trace = net.shape_trace()?;
    let mut rows = Vec::new();
    for (layer, out) in net.layers().iter().zip(trace) {
        let row = match layer {
            Layer::Conv2d(c) => ArchRow {
                kind: "conv",
                stride: Some(c.stride),
                filter: Some(c.kernel),
                filters: Some(c.out_channels),
                output: out,
            },
            Layer::Pool(p) => ArchRow {
                kind: if p.kind == PoolKind::Avg { "avgpool" } else { "maxpool" },
                stride: Some(p.stride),
                filter: Some(p.size),
                filters: None,
                output: out,
            },
            Layer::Dense(d) => ArchRow {
                kind: "fc",
                stride: None,
                filter: None,
                filters: Some(d.outputs),
                output: out,
            },
            _ => continue,
        };
        rows.push(row);
    }
    Ok(rows)
}
