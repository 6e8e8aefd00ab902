//! Central finite-difference oracle for layer and loss gradients.
//!
//! Everything here recomputes the scalar objective from scratch through the
//! forward path only, so it stays independent of the backward code it checks.

use kernelcount::nn::{bce_loss, smooth_l1_loss, Layer, Network, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const MAX_REL_ERR: f64 = 1e-4;
/// Below this magnitude both gradients count as zero. Central-difference
/// roundoff at step 1e-5 is ~1e-11, e.g. for a bias feeding batch norm whose
/// true gradient is exactly zero.
const ABS_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(ABS_FLOOR);
    (analytic - numeric).abs() / denom
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng, avoid_zero: bool) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| loop {
        let v: f64 = rng.gen_range(-1.0..1.0);
        if !avoid_zero || v.abs() > 0.02 {
            break v;
        }
    })
}

/// Objective `Σ r_i · y_i` for a fixed random projection `r`.
fn objective(net: &mut Network<f64>, x: &Tensor<f64>, r: &[f64]) -> f64 {
    let y = net.forward_train(x).expect("forward");
    y.data().iter().zip(r).map(|(a, b)| a * b).sum()
}

/// Max relative error between backprop and central differences over the
/// input and every parameter of `net`, for a random batch and projection.
pub fn check_network(mut net: Network<f64>, batch: usize, seed: u64, avoid_zero: bool) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    net.initialize(&mut rng).expect("init");
    // Nudge batch-norm affine parameters off their identity defaults.
    for layer in net.layers_mut() {
        if let Layer::BatchNorm(bn) = layer {
            for v in bn.gamma.value.data_mut() {
                *v = rng.gen_range(0.5..1.5);
            }
            for v in bn.beta.value.data_mut() {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
    }
    let mut shape = vec![batch];
    shape.extend_from_slice(net.input_shape());
    let mut x = random_tensor(&shape, &mut rng, avoid_zero);
    let out_len = batch * net.output_len();
    let r: Vec<f64> = (0..out_len).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let y = net.forward_train(&x).expect("forward");
    let grad_out = Tensor::new(y.shape().to_vec(), r.clone()).unwrap();
    let dx = net.backward(&grad_out).expect("backward");
    let analytic_params: Vec<Vec<f64>> = net
        .params_mut()
        .into_iter()
        .map(|p| p.grad.data().to_vec())
        .collect();

    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + FD_STEP;
        let up = objective(&mut net, &x, &r);
        x.data_mut()[i] = orig - FD_STEP;
        let down = objective(&mut net, &x, &r);
        x.data_mut()[i] = orig;
        worst = worst.max(rel_err(dx.data()[i], (up - down) / (2.0 * FD_STEP)));
    }
    for (pi, analytic) in analytic_params.iter().enumerate() {
        for j in 0..analytic.len() {
            let orig = net.params_mut()[pi].value.data()[j];
            net.params_mut()[pi].value.data_mut()[j] = orig + FD_STEP;
            let up = objective(&mut net, &x, &r);
            net.params_mut()[pi].value.data_mut()[j] = orig - FD_STEP;
            let down = objective(&mut net, &x, &r);
            net.params_mut()[pi].value.data_mut()[j] = orig;
            worst = worst.max(rel_err(analytic[j], (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}

pub fn check_bce(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..9);
    let p: Vec<f64> = (0..n).map(|_| rng.gen_range(0.02..0.98)).collect();
    let y: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
    let loss = bce_loss(&Tensor::scalar_vec(&p), &y).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let mut up = p.clone();
        up[i] += FD_STEP;
        let mut down = p.clone();
        down[i] -= FD_STEP;
        let fu = bce_loss(&Tensor::scalar_vec(&up), &y).unwrap().value;
        let fd = bce_loss(&Tensor::scalar_vec(&down), &y).unwrap().value;
        worst = worst.max(rel_err(loss.gradient.data()[i], (fu - fd) / (2.0 * FD_STEP)));
    }
    worst
}

pub fn check_smooth_l1(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..9);
    let t: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    // Keep residuals off the |d| = 1 branch point.
    let p: Vec<f64> = t
        .iter()
        .map(|&ti| loop {
            let d: f64 = rng.gen_range(-3.0..3.0);
            if (d.abs() - 1.0).abs() > 0.01 {
                break ti + d;
            }
        })
        .collect();
    let tt = Tensor::scalar_vec(&t);
    let loss = smooth_l1_loss(&Tensor::scalar_vec(&p), &tt).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let mut up = p.clone();
        up[i] += FD_STEP;
        let mut down = p.clone();
        down[i] -= FD_STEP;
        let fu = smooth_l1_loss(&Tensor::scalar_vec(&up), &tt).unwrap().value;
        let fd = smooth_l1_loss(&Tensor::scalar_vec(&down), &tt).unwrap().value;
        worst = worst.max(rel_err(loss.gradient.data()[i], (fu - fd) / (2.0 * FD_STEP)));
    }
    worst
}

/// One small network per layer kind, each exercising that kind's backward.
pub fn layer_cases() -> Vec<(&'static str, Network<f64>, usize, bool)> {
    vec![
        (
            "conv2d",
            Network::new(&[5, 6, 2], vec![Layer::conv(3, 2, 3)]).unwrap(),
            2,
            false,
        ),
        (
            "avgpool",
            Network::new(&[6, 6, 2], vec![Layer::avg_pool(2, 2)]).unwrap(),
            2,
            false,
        ),
        (
            "avgpool-overlapping",
            Network::new(&[8, 8, 1], vec![Layer::avg_pool(7, 1)]).unwrap(),
            1,
            false,
        ),
        (
            "maxpool",
            Network::new(&[6, 6, 2], vec![Layer::max_pool(2, 2)]).unwrap(),
            2,
            false,
        ),
        (
            "batchnorm",
            Network::new(&[3, 3, 2], vec![Layer::batch_norm(2)]).unwrap(),
            4,
            false,
        ),
        (
            "dense",
            Network::new(&[4], vec![Layer::dense(4, 3)]).unwrap(),
            3,
            false,
        ),
        (
            "relu",
            Network::new(&[7], vec![Layer::relu()]).unwrap(),
            3,
            true,
        ),
        (
            "sigmoid",
            Network::new(&[7], vec![Layer::sigmoid()]).unwrap(),
            3,
            false,
        ),
        (
            "conv-bn-relu-pool-dense-sigmoid",
            Network::new(
                &[6, 6, 2],
                vec![
                    Layer::conv(3, 2, 3),
                    Layer::batch_norm(3),
                    Layer::relu(),
                    Layer::avg_pool(2, 2),
                    Layer::dense(12, 4),
                    Layer::batch_norm(4),
                    Layer::relu(),
                    Layer::dense(4, 1),
                    Layer::sigmoid(),
                ],
            )
            .unwrap(),
            3,
            false,
        ),
    ]
}
