//! Measurement routines shared by the integration tests and the acceptance
//! report. Each returns the observed error instead of asserting.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use specnet3d::network::{build_model, Model, ModelConfig, LAYER_NAMES};
use specnet3d::tensor::{
    avgpool3d_backward, avgpool3d_forward, conv3d_backward, conv3d_forward, linear_backward, linear_forward, relu,
    relu_backward, softmax_cross_entropy, softmax_cross_entropy_batch, Conv3dSpec, Linear, Matrix, Pool3dSpec,
    Tensor5,
};

use super::*;

/// Random conv geometry with every axis at most 8 and at most 4 channels.
pub fn random_geometry(r: &mut ChaCha8Rng) -> ([usize; 5], Conv3dSpec<f64>) {
    let mut kernel = [0; 3];
    let mut stride = [0; 3];
    let mut padding = [0; 3];
    let mut vol = [0; 3];
    for a in 0..3 {
        vol[a] = r.gen_range(1..=8);
        kernel[a] = r.gen_range(1..=3);
        stride[a] = r.gen_range(1..=2);
        padding[a] = r.gen_range(0..kernel[a]);
        if vol[a] + 2 * padding[a] < kernel[a] {
            vol[a] = kernel[a];
        }
    }
    let cin = r.gen_range(1..=4);
    let cout = r.gen_range(1..=4);
    let n = r.gen_range(1..=2);
    let spec = random_conv(r, cin, cout, kernel, stride, padding);
    ([n, cin, vol[0], vol[1], vol[2]], spec)
}

/// Largest relative deviation of `conv3d_forward` from the direct-summation
/// oracle on one random configuration.
pub fn conv_oracle_error(r: &mut ChaCha8Rng) -> f64 {
    let (dims, spec) = random_geometry(r);
    let x = random_tensor(r, dims);
    let y = conv3d_forward(&x, &spec).unwrap();
    let (odims, expected) = conv_oracle(&x, &spec);
    if y.dims().to_vec() != odims {
        return f64::INFINITY;
    }
    y.data()
        .iter()
        .zip(&expected)
        .map(|(&a, &b)| (a - b).abs() / b.abs().max(1.0))
        .fold(0.0, f64::max)
}

fn max_fd_error(analytic: &[f64], params: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    (0..params.len())
        .map(|idx| rel_err(analytic[idx], central_difference(params, idx, &mut f)))
        .fold(0.0, f64::max)
}

/// Input, weight and bias gradients of `L = sum(u * conv(x))`.
pub fn conv_grad_error(dims: [usize; 5], spec: &Conv3dSpec<f64>, seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = random_tensor(&mut r, dims);
    let u = random_tensor(&mut r, spec.output_dims(dims).unwrap());
    let g = conv3d_backward(&x, spec, &u).unwrap();
    let loss = |x: &Tensor5<f64>, s: &Conv3dSpec<f64>| dot(conv3d_forward(x, s).unwrap().data(), u.data());

    let e_x = max_fd_error(g.input.data(), &mut x.data().to_vec(), |v| {
        loss(&Tensor5::from_vec(dims, v.to_vec()).unwrap(), spec)
    });
    let e_w = max_fd_error(&g.weights, &mut spec.weights.clone(), |v| {
        let mut s = spec.clone();
        s.weights = v.to_vec();
        loss(&x, &s)
    });
    let e_b = max_fd_error(&g.bias, &mut spec.bias.clone(), |v| {
        let mut s = spec.clone();
        s.bias = v.to_vec();
        loss(&x, &s)
    });
    e_x.max(e_w).max(e_b)
}

pub fn pool_grad_error(dims: [usize; 5], spec: &Pool3dSpec, seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = random_tensor(&mut r, dims);
    let u = random_tensor(&mut r, spec.output_dims(dims).unwrap());
    let g = avgpool3d_backward(dims, spec, &u).unwrap();
    max_fd_error(g.data(), &mut x.data().to_vec(), |v| {
        dot(avgpool3d_forward(&Tensor5::from_vec(dims, v.to_vec()).unwrap(), spec).unwrap().data(), u.data())
    })
}

pub fn random_pool(r: &mut ChaCha8Rng) -> ([usize; 5], Pool3dSpec) {
    let mut kernel = [0; 3];
    let mut stride = [0; 3];
    let mut padding = [0; 3];
    let mut dims = [r.gen_range(1..=2), r.gen_range(1..=3), 0, 0, 0];
    for a in 0..3 {
        kernel[a] = r.gen_range(1..=3);
        stride[a] = r.gen_range(1..=3);
        padding[a] = r.gen_range(0..kernel[a]);
        dims[a + 2] = r.gen_range(kernel[a]..=6);
    }
    (dims, Pool3dSpec { kernel, stride, padding })
}

/// ReLU check with inputs kept at least 1e-3 away from the kink.
pub fn relu_grad_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let dims = [1, 2, 3, 2, 4];
    let mut x = random_tensor(&mut r, dims);
    x.data_mut().iter_mut().for_each(|v| {
        if v.abs() < 1e-3 {
            *v = 0.5
        }
    });
    let u = random_tensor(&mut r, dims);
    let g = relu_backward(&x, &u).unwrap();
    max_fd_error(g.data(), &mut x.data().to_vec(), |v| {
        dot(relu(&Tensor5::from_vec(dims, v.to_vec()).unwrap()).data(), u.data())
    })
}

pub fn linear_grad_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (n, f, c) = (r.gen_range(1..=3), r.gen_range(1..=12), r.gen_range(1..=9));
    let mut layer = Linear::<f64>::new(f, c);
    layer.weights = random_vec(&mut r, f * c);
    layer.bias = random_vec(&mut r, c);
    let x = Matrix::from_vec(n, f, random_vec(&mut r, n * f)).unwrap();
    let u = Matrix::from_vec(n, c, random_vec(&mut r, n * c)).unwrap();
    let g = linear_backward(&x, &layer, &u).unwrap();
    let loss = |x: &Matrix<f64>, l: &Linear<f64>| dot(linear_forward(x, l).unwrap().data(), u.data());

    let e_x = max_fd_error(g.input.data(), &mut x.data().to_vec(), |v| {
        loss(&Matrix::from_vec(n, f, v.to_vec()).unwrap(), &layer)
    });
    let e_w = max_fd_error(&g.weights, &mut layer.weights.clone(), |v| {
        let mut l = layer.clone();
        l.weights = v.to_vec();
        loss(&x, &l)
    });
    let e_b = max_fd_error(&g.bias, &mut layer.bias.clone(), |v| {
        let mut l = layer.clone();
        l.bias = v.to_vec();
        loss(&x, &l)
    });
    e_x.max(e_w).max(e_b)
}

pub fn softmax_grad_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let c = r.gen_range(2..=9);
    let target = r.gen_range(0..c);
    let mut logits: Vec<f64> = (0..c).map(|_| r.gen_range(-4.0..4.0)).collect();
    let (_, g) = softmax_cross_entropy(&logits, target).unwrap();
    max_fd_error(&g, &mut logits, |v| softmax_cross_entropy(v, target).unwrap().0)
}

/// Every ReLU input in the network, recomputed block by block.
fn relu_inputs(model: &Model<f64>, x: &Tensor5<f64>) -> Vec<f64> {
    let mut inputs = Vec::new();
    let mut act = x.clone();
    for block in &model.blocks {
        let pre = conv3d_forward(&act, &block.main).unwrap();
        inputs.extend_from_slice(pre.data());
        act = block.forward(&act, model.skip_connections).unwrap();
    }
    inputs
}

fn relu_pattern(model: &Model<f64>, x: &Tensor5<f64>) -> Vec<bool> {
    relu_inputs(model, x).iter().map(|&v| v > 0.0).collect()
}

/// Smallest distance of a ReLU input from the kink that a drawn input must keep.
pub const KINK_MARGIN: f64 = 1e-5;

pub struct ModelGradCheck {
    pub max_err: f64,
    pub checked: usize,
    pub skipped: usize,
    /// Inputs discarded for putting a ReLU input within `KINK_MARGIN` of zero.
    pub redraws: usize,
    /// Layers that ran out of attempts before reaching their probe quota.
    pub starved: Vec<&'static str>,
}

pub const PROBES_PER_LAYER: usize = 8;

/// Whole-model check at 64-bit on a `(2, 1, 7, 7, depth)` input. The input
/// is redrawn until no ReLU input sits within `KINK_MARGIN` of zero. Per
/// layer, six weight and two bias entries are probed; probes whose +-h step
/// still flips a ReLU input sign are skipped, because the loss is not
/// differentiable across the kink.
pub fn model_grad_check(depth: usize, seed: u64) -> ModelGradCheck {
    let mut model = build_model(ModelConfig::new(depth, 9), seed).unwrap().cast::<f64>();
    let mut r = rng(seed ^ 0xB1A5);
    for p in model.params_mut() {
        p.bias.iter_mut().for_each(|b| *b = r.gen_range(-0.05..0.05));
    }
    let mut redraws = 0;
    let x = loop {
        let x = random_tensor(&mut r, model.config.input_dims(2));
        if relu_inputs(&model, &x).iter().all(|v| v.abs() >= KINK_MARGIN) {
            break x;
        }
        redraws += 1;
    };
    let targets = [2, 7];
    let loss = |m: &Model<f64>| {
        let (logits, _) = m.forward(&x, false).unwrap();
        softmax_cross_entropy_batch(&logits, &targets).unwrap().0
    };
    let (logits, cache) = model.forward(&x, true).unwrap();
    let (_, grad) = softmax_cross_entropy_batch(&logits, &targets).unwrap();
    let grads = model.backward(cache.as_ref(), &grad).unwrap();
    let base_pattern = relu_pattern(&model, &x);

    let mut out = ModelGradCheck {
        max_err: 0.0,
        checked: 0,
        skipped: 0,
        redraws,
        starved: Vec::new(),
    };
    for (layer, name) in LAYER_NAMES.iter().enumerate() {
        let analytic = &grads.layers[layer];
        let mut done = 0;
        for _ in 0..64 {
            if done == PROBES_PER_LAYER {
                break;
            }
            let is_bias = done >= 6;
            let idx = r.gen_range(0..if is_bias { analytic.bias.len() } else { analytic.weights.len() });
            let orig = {
                let p = &model.params()[layer];
                if is_bias { p.bias[idx] } else { p.weights[idx] }
            };
            let h = fd_step(orig);
            let at = |v: f64| {
                let mut probe = model.clone();
                let mut params = probe.params_mut();
                let slot = if is_bias { &mut params[layer].bias[idx] } else { &mut params[layer].weights[idx] };
                *slot = v;
                drop(params);
                probe
            };
            let (plus, minus) = (at(orig + h), at(orig - h));
            if relu_pattern(&plus, &x) != base_pattern || relu_pattern(&minus, &x) != base_pattern {
                out.skipped += 1;
                continue;
            }
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let a = if is_bias { analytic.bias[idx] } else { analytic.weights[idx] };
            out.max_err = out.max_err.max(rel_err(a, numeric));
            out.checked += 1;
            done += 1;
        }
        if done < PROBES_PER_LAYER {
            out.starved.push(name);
        }
    }
    out
}

pub struct ResidualCheck {
    /// Blocks whose output with zeroed ConvN_1 differs from pool(relu(ConvN(x))).
    pub mismatched_blocks: Vec<usize>,
    /// Main-conv layers whose weight gradient is unchanged by removing the skip.
    pub skip_insensitive: Vec<&'static str>,
}

pub fn residual_check(depth: usize, seed: u64) -> ResidualCheck {
    let model = build_model(ModelConfig::new(depth, 9), seed).unwrap();
    let mut zeroed = model.clone();
    for block in &mut zeroed.blocks {
        block.proj.weights.iter_mut().for_each(|w| *w = 0.0);
        block.proj.bias.iter_mut().for_each(|b| *b = 0.0);
    }
    let mut r = rng(seed + 1);
    let input: Tensor5<f32> = random_tensor(&mut r, model.config.input_dims(3)).cast();
    let mut mismatched_blocks = Vec::new();
    let mut act = input.clone();
    for (i, block) in zeroed.blocks.iter().enumerate() {
        let out = block.forward(&act, true).unwrap();
        let mut expected = relu(&conv3d_forward(&act, &block.main).unwrap());
        if let Some(pool) = &block.pool {
            expected = avgpool3d_forward(&expected, pool).unwrap();
        }
        if out != expected {
            mismatched_blocks.push(i + 1);
        }
        act = out;
    }

    let targets = [0, 4, 8];
    let grads = |m: &Model<f32>| {
        let (logits, cache) = m.forward(&input, true).unwrap();
        let (_, g) = softmax_cross_entropy_batch(&logits, &targets).unwrap();
        m.backward(cache.as_ref(), &g).unwrap()
    };
    let mut ablated = model.clone();
    ablated.skip_connections = false;
    let (with_skip, without_skip) = (grads(&model), grads(&ablated));
    let skip_insensitive = ["Conv1", "Conv2", "Conv3", "Conv4"]
        .into_iter()
        .filter(|name| with_skip.get(name).unwrap().weights == without_skip.get(name).unwrap().weights)
        .collect();
    ResidualCheck {
        mismatched_blocks,
        skip_insensitive,
    }
}
