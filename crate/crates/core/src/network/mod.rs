//! The four-block residual 3D CNN.
//!
//! Each block runs `y = ReLU(ConvN(x))`, `out = ConvN_1(y) + y`, then an
//! optional depth-wise average pool. The spectral axis is the convolution
//! depth axis and the network input has a single channel. After block 4 the
//! features are flattened into a linear classifier.

mod checkpoint;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    avgpool3d_backward, avgpool3d_forward, conv3d_backward, conv3d_forward, linear_backward, linear_forward, relu,
    relu_backward, Conv3dSpec, Linear, Matrix, Pool3dSpec, Scalar, Tensor5,
};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointManifest, LayerShape, CHECKPOINT_VERSION};

/// Layer names in parameter order: conv layers block by block, then the classifier.
pub const LAYER_NAMES: [&str; 9] = [
    "Conv1", "Conv1_1", "Conv2", "Conv2_1", "Conv3", "Conv3_1", "Conv4", "Conv4_1", "FC",
];

pub const DEFAULT_WINDOW: usize = 7;

const DEPTH_POOL: Pool3dSpec = Pool3dSpec {
    kernel: [1, 1, 3],
    stride: [1, 1, 2],
    padding: [0, 0, 1],
};

struct BlockLayout {
    main: &'static str,
    pool: Option<&'static str>,
    out_channels: usize,
    kernel: [usize; 3],
    stride: [usize; 3],
    padding: [usize; 3],
}

const LAYOUT: [BlockLayout; 4] = [
    BlockLayout {
        main: "Conv1",
        pool: Some("Pool1"),
        out_channels: 20,
        kernel: [3, 3, 3],
        stride: [1, 1, 1],
        padding: [0, 0, 0],
    },
    BlockLayout {
        main: "Conv2",
        pool: Some("Pool2"),
        out_channels: 35,
        kernel: [3, 3, 3],
        stride: [1, 1, 1],
        padding: [0, 0, 0],
    },
    BlockLayout {
        main: "Conv3",
        pool: None,
        out_channels: 35,
        kernel: [1, 1, 3],
        stride: [1, 1, 1],
        padding: [0, 0, 1],
    },
    BlockLayout {
        main: "Conv4",
        pool: None,
        out_channels: 35,
        kernel: [1, 1, 2],
        stride: [1, 1, 2],
        padding: [0, 0, 1],
    },
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub spectral_depth: usize,
    pub num_classes: usize,
    pub spatial_window: usize,
}

impl ModelConfig {
    pub fn new(spectral_depth: usize, num_classes: usize) -> Self {
        ModelConfig {
            spectral_depth,
            num_classes,
            spatial_window: DEFAULT_WINDOW,
        }
    }

    pub fn with_window(mut self, window: usize) -> Self {
        self.spatial_window = window;
        self
    }

    pub fn input_dims(&self, batch: usize) -> [usize; 5] {
        [batch, 1, self.spatial_window, self.spatial_window, self.spectral_depth]
    }

    pub fn validate(&self) -> Result<()> {
        shape_trace(self).map(|_| ())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TraceStage {
    pub name: String,
    /// (channels, height, width, depth)
    pub dims: [usize; 4],
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ShapeTrace {
    pub stages: Vec<TraceStage>,
    pub flattened: usize,
}

fn stage_error(stage: &str, err: Error) -> Error {
    Error::InvalidConfig {
        stage: stage.to_string(),
        reason: err.to_string(),
    }
}

/// Per-stage activation shapes for `config`, ending with the flattened
/// classifier width.
pub fn shape_trace(config: &ModelConfig) -> Result<ShapeTrace> {
    let invalid = |reason: &str| Error::InvalidConfig {
        stage: "Input".into(),
        reason: reason.into(),
    };
    if config.spatial_window == 0 || config.spatial_window % 2 == 0 {
        return Err(invalid("spatial window must be odd"));
    }
    if config.spectral_depth == 0 {
        return Err(invalid("spectral depth must be at least 1"));
    }
    if config.num_classes == 0 {
        return Err(invalid("at least one class is required"));
    }
    let w = config.spatial_window;
    let mut dims = [1, w, w, config.spectral_depth];
    let mut stages = vec![TraceStage {
        name: "Input".into(),
        dims,
    }];
    for layout in &LAYOUT {
        let conv = Conv3dSpec::<f32>::new(dims[0], layout.out_channels, layout.kernel, layout.stride, layout.padding);
        let vol = conv
            .output_volume([dims[1], dims[2], dims[3]])
            .map_err(|e| stage_error(layout.main, e))?;
        dims = [layout.out_channels, vol[0], vol[1], vol[2]];
        stages.push(TraceStage {
            name: layout.main.into(),
            dims,
        });
        if let Some(name) = layout.pool {
            let vol = DEPTH_POOL
                .output_volume([dims[1], dims[2], dims[3]])
                .map_err(|e| stage_error(name, e))?;
            dims = [dims[0], vol[0], vol[1], vol[2]];
            stages.push(TraceStage { name: name.into(), dims });
        }
    }
    Ok(ShapeTrace {
        stages,
        flattened: dims.iter().product(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock<T = f32> {
    pub main: Conv3dSpec<T>,
    pub proj: Conv3dSpec<T>,
    pub pool: Option<Pool3dSpec>,
}

struct BlockCache<T> {
    input: Tensor5<T>,
    pre_activation: Tensor5<T>,
    activation: Tensor5<T>,
    sum_dims: [usize; 5],
}

impl<T: Scalar> ResidualBlock<T> {
    /// Block output; `skip` controls the identity path around the 1x1x1 conv.
    pub fn forward(&self, x: &Tensor5<T>, skip: bool) -> Result<Tensor5<T>> {
        Ok(self.forward_cached(x.clone(), skip)?.0)
    }

    fn forward_cached(&self, input: Tensor5<T>, skip: bool) -> Result<(Tensor5<T>, BlockCache<T>)> {
        let pre_activation = conv3d_forward(&input, &self.main)?;
        let activation = relu(&pre_activation);
        let mut sum = conv3d_forward(&activation, &self.proj)?;
        if skip {
            for (s, &a) in sum.data_mut().iter_mut().zip(activation.data()) {
                *s += a;
            }
        }
        let sum_dims = sum.dims();
        let out = match &self.pool {
            Some(pool) => avgpool3d_forward(&sum, pool)?,
            None => sum,
        };
        Ok((
            out,
            BlockCache {
                input,
                pre_activation,
                activation,
                sum_dims,
            },
        ))
    }

    fn backward(
        &self,
        cache: &BlockCache<T>,
        upstream: &Tensor5<T>,
        skip: bool,
    ) -> Result<(Tensor5<T>, [LayerGrad<T>; 2])> {
        let grad_sum = match &self.pool {
            Some(pool) => avgpool3d_backward(cache.sum_dims, pool, upstream)?,
            None => upstream.clone(),
        };
        let proj = conv3d_backward(&cache.activation, &self.proj, &grad_sum)?;
        let mut grad_act = proj.input;
        if skip {
            for (g, &s) in grad_act.data_mut().iter_mut().zip(grad_sum.data()) {
                *g += s;
            }
        }
        let grad_pre = relu_backward(&cache.pre_activation, &grad_act)?;
        let main = conv3d_backward(&cache.input, &self.main, &grad_pre)?;
        Ok((
            main.input,
            [
                LayerGrad {
                    weights: main.weights,
                    bias: main.bias,
                },
                LayerGrad {
                    weights: proj.weights,
                    bias: proj.bias,
                },
            ],
        ))
    }

    fn cast<U: Scalar>(&self) -> ResidualBlock<U> {
        ResidualBlock {
            main: self.main.cast(),
            proj: self.proj.cast(),
            pool: self.pool,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad<T = f32> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

/// Parameter gradients in [`LAYER_NAMES`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T = f32> {
    pub layers: Vec<LayerGrad<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&LayerGrad<T>> {
        LAYER_NAMES.iter().position(|&n| n == name).and_then(|i| self.layers.get(i))
    }

    pub fn is_all_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|&v| v == T::zero()))
    }
}

/// Read-only view of one layer's parameters.
pub struct ParamView<'a, T> {
    pub name: &'static str,
    pub weights: &'a [T],
    pub bias: &'a [T],
}

pub struct ParamViewMut<'a, T> {
    pub name: &'static str,
    pub weights: &'a mut [T],
    pub bias: &'a mut [T],
}

/// Activations retained by [`Model::forward`] for the backward pass.
pub struct ForwardCache<T> {
    blocks: Vec<BlockCache<T>>,
    features: Matrix<T>,
    feature_dims: [usize; 5],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T = f32> {
    pub config: ModelConfig,
    pub rng_seed: u64,
    pub blocks: Vec<ResidualBlock<T>>,
    pub classifier: Linear<T>,
    /// Identity skip inside each block. Always on for trained models; the
    /// switch exists for ablation checks.
    pub skip_connections: bool,
}

/// Build the network for `config` with fan-in uniform weights in
/// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` and zero biases drawn from `rng_seed`.
pub fn build_model(config: ModelConfig, rng_seed: u64) -> Result<Model<f32>> {
    let mut model = Model::zeroed(config, rng_seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let fan_ins: Vec<usize> = model
        .blocks
        .iter()
        .flat_map(|b| [b.main.fan_in(), b.proj.fan_in()])
        .chain([model.classifier.in_features])
        .collect();
    for (param, fan_in) in model.params_mut().into_iter().zip(fan_ins) {
        let bound = (1.0 / fan_in as f64).sqrt() as f32;
        let dist = Uniform::new_inclusive(-bound, bound);
        param.weights.iter_mut().for_each(|w| *w = dist.sample(&mut rng));
    }
    Ok(model)
}

impl<T: Scalar> Model<T> {
    /// Architecture with every parameter zero.
    pub fn zeroed(config: ModelConfig, rng_seed: u64) -> Result<Self> {
        let trace = shape_trace(&config)?;
        let mut in_channels = 1;
        let blocks = LAYOUT
            .iter()
            .map(|l| {
                let main = Conv3dSpec::new(in_channels, l.out_channels, l.kernel, l.stride, l.padding);
                let proj = Conv3dSpec::new(l.out_channels, l.out_channels, [1, 1, 1], [1, 1, 1], [0, 0, 0]);
                in_channels = l.out_channels;
                ResidualBlock {
                    main,
                    proj,
                    pool: l.pool.map(|_| DEPTH_POOL),
                }
            })
            .collect();
        Ok(Model {
            config,
            rng_seed,
            blocks,
            classifier: Linear::new(trace.flattened, config.num_classes),
            skip_connections: true,
        })
    }

    pub fn params(&self) -> Vec<ParamView<'_, T>> {
        let mut out = Vec::with_capacity(LAYER_NAMES.len());
        let mut names = LAYER_NAMES.iter();
        for b in &self.blocks {
            for conv in [&b.main, &b.proj] {
                out.push(ParamView {
                    name: names.next().expect("nine layers"),
                    weights: &conv.weights,
                    bias: &conv.bias,
                });
            }
        }
        out.push(ParamView {
            name: "FC",
            weights: &self.classifier.weights,
            bias: &self.classifier.bias,
        });
        out
    }

    pub fn params_mut(&mut self) -> Vec<ParamViewMut<'_, T>> {
        let mut out = Vec::with_capacity(LAYER_NAMES.len());
        let mut names = LAYER_NAMES.iter();
        for b in &mut self.blocks {
            for conv in [&mut b.main, &mut b.proj] {
                out.push(ParamViewMut {
                    name: names.next().expect("nine layers"),
                    weights: &mut conv.weights,
                    bias: &mut conv.bias,
                });
            }
        }
        out.push(ParamViewMut {
            name: "FC",
            weights: &mut self.classifier.weights,
            bias: &mut self.classifier.bias,
        });
        out
    }

    /// Weight shape per layer; convs are (out, in, kh, kw, kd), FC is (C, F).
    pub fn weight_shapes(&self) -> Vec<Vec<usize>> {
        self.blocks
            .iter()
            .flat_map(|b| [b.main.weight_shape().to_vec(), b.proj.weight_shape().to_vec()])
            .chain([vec![self.classifier.out_features, self.classifier.in_features]])
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config,
            rng_seed: self.rng_seed,
            blocks: self.blocks.iter().map(ResidualBlock::cast).collect(),
            classifier: self.classifier.cast(),
            skip_connections: self.skip_connections,
        }
    }

    /// Logits of shape (n, C); with `keep_intermediates` also the cache
    /// needed by [`Model::backward`].
    pub fn forward(&self, x: &Tensor5<T>, keep_intermediates: bool) -> Result<(Matrix<T>, Option<ForwardCache<T>>)> {
        let n = x.batch();
        x.expect_dims(self.config.input_dims(n), "model input")?;
        let mut act = x.clone();
        let mut caches = Vec::new();
        for block in &self.blocks {
            let (out, cache) = block.forward_cached(act, self.skip_connections)?;
            if keep_intermediates {
                caches.push(cache);
            }
            act = out;
        }
        let feature_dims = act.dims();
        let features = Matrix::from_vec(n, act.sample_len(), act.into_vec())?;
        let logits = linear_forward(&features, &self.classifier)?;
        let cache = keep_intermediates.then_some(ForwardCache {
            blocks: caches,
            features,
            feature_dims,
        });
        Ok((logits, cache))
    }

    pub fn backward(&self, cache: Option<&ForwardCache<T>>, grad_logits: &Matrix<T>) -> Result<Gradients<T>> {
        let cache = cache.ok_or(Error::MissingCache)?;
        if cache.blocks.len() != self.blocks.len() {
            return Err(Error::MissingCache);
        }
        let fc = linear_backward(&cache.features, &self.classifier, grad_logits)?;
        let mut upstream = Tensor5::from_vec(cache.feature_dims, fc.input.into_vec())?;
        let mut layers: Vec<LayerGrad<T>> = Vec::with_capacity(LAYER_NAMES.len());
        for (block, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            let (grad_in, [main, proj]) = block.backward(bc, &upstream, self.skip_connections)?;
            layers.push(proj);
            layers.push(main);
            upstream = grad_in;
        }
        layers.reverse();
        layers.push(LayerGrad {
            weights: fc.weights,
            bias: fc.bias,
        });
        Ok(Gradients { layers })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParamLedger {
    pub layers: Vec<(String, usize)>,
    pub conv_total: usize,
    pub classifier: usize,
    pub total: usize,
}

pub fn param_count<T: Scalar>(model: &Model<T>) -> ParamLedger {
    let layers: Vec<(String, usize)> = model
        .params()
        .iter()
        .map(|p| (p.name.to_string(), p.weights.len() + p.bias.len()))
        .collect();
    let conv_total = layers.iter().filter(|(n, _)| n != "FC").map(|(_, c)| c).sum();
    let classifier = model.classifier.parameter_count();
    ParamLedger {
        layers,
        conv_total,
        classifier,
        total: conv_total + classifier,
    }
}
