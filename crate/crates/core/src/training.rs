//! SGD with momentum, the epoch loop, evaluation and full-scene prediction.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_io::{extract_batch, BandNormalizer, HsiCube, LabelGrid, LabeledPixel, SplitManifest};
use crate::error::{Error, Result};
use crate::metrics::{overall_accuracy, ClassMap, ConfusionMatrix};
use crate::network::{Gradients, LayerGrad, Model};
use crate::tensor::{softmax_cross_entropy_batch, Scalar};

pub const DEFAULT_LEARNING_RATE: f64 = 0.02;
pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_WEIGHT_DECAY: f64 = 0.0005;
pub const DEFAULT_EPOCHS: usize = 100;
pub const DEFAULT_BATCH_SIZE: usize = 64;

/// Patches per forward pass during evaluation and map prediction.
const EVAL_BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// One buffer per layer, allocated on the first step.
    pub velocity: Vec<LayerGrad<f32>>,
}

impl Default for OptimizerState {
    fn default() -> Self {
        OptimizerState {
            learning_rate: DEFAULT_LEARNING_RATE,
            momentum: DEFAULT_MOMENTUM,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            velocity: Vec::new(),
        }
    }
}

impl OptimizerState {
    pub fn new(learning_rate: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        let bad = |reason: String| Error::InvalidConfig {
            stage: "optimizer".into(),
            reason,
        };
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(bad(format!("learning rate {learning_rate} must be finite and non-negative")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(bad(format!("momentum {momentum} outside [0, 1)")));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(bad(format!("weight decay {weight_decay} must be non-negative")));
        }
        Ok(OptimizerState {
            learning_rate,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        })
    }
}

/// `v <- momentum*v + (g + decay*w); w <- w - lr*v`, element-wise.
pub fn sgd_update<T: Scalar>(w: &mut [T], g: &[T], v: &mut [T], lr: T, momentum: T, decay: T) {
    for ((w, &g), v) in w.iter_mut().zip(g).zip(v.iter_mut()) {
        *v = momentum * *v + (g + decay * *w);
        *w = *w - lr * *v;
    }
}

/// One optimizer step over every layer; biases are exempt from weight decay.
pub fn sgd_step(model: &mut Model<f32>, grads: &Gradients<f32>, state: &mut OptimizerState) -> Result<()> {
    let mut params = model.params_mut();
    if state.velocity.is_empty() {
        state.velocity = params
            .iter()
            .map(|p| LayerGrad {
                weights: vec![0.0; p.weights.len()],
                bias: vec![0.0; p.bias.len()],
            })
            .collect();
    }
    let shape_ok = |a: &[f32], b: &[f32]| a.len() == b.len();
    if grads.layers.len() != params.len()
        || state.velocity.len() != params.len()
        || params.iter().zip(&grads.layers).zip(&state.velocity).any(|((p, g), v)| {
            !shape_ok(p.weights, &g.weights)
                || !shape_ok(p.bias, &g.bias)
                || !shape_ok(p.weights, &v.weights)
                || !shape_ok(p.bias, &v.bias)
        })
    {
        return Err(Error::DimMismatch {
            context: "optimizer step",
            expected: params.iter().map(|p| p.weights.len()).collect(),
            actual: grads.layers.iter().map(|g| g.weights.len()).collect(),
        });
    }
    let lr = state.learning_rate as f32;
    let mu = state.momentum as f32;
    let decay = state.weight_decay as f32;
    for ((p, g), v) in params.iter_mut().zip(&grads.layers).zip(&mut state.velocity) {
        sgd_update(p.weights, &g.weights, &mut v.weights, lr, mu, decay);
        sgd_update(p.bias, &g.bias, &mut v.bias, lr, mu, 0.0);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub shuffle_seed: u64,
    /// Report every `log_every` epochs to the progress callback (0 = never).
    pub log_every: usize,
    /// Evaluate the split's test set after every epoch.
    pub eval_test: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            shuffle_seed: 0,
            log_every: 1,
            eval_test: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig {
                stage: "training".into(),
                reason: format!(
                    "epochs ({}) and batch size ({}) must be at least 1",
                    self.epochs, self.batch_size
                ),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_overall_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub normalizer: BandNormalizer,
}

fn check_compat(model: &Model<f32>, cube: &HsiCube) -> Result<()> {
    if model.config.spectral_depth != cube.bands() {
        return Err(Error::DimMismatch {
            context: "model spectral depth vs cube bands",
            expected: vec![model.config.spectral_depth],
            actual: cube.dims().to_vec(),
        });
    }
    Ok(())
}

fn check_labels(model: &Model<f32>, cube: &HsiCube, labels: &LabelGrid) -> Result<()> {
    check_compat(model, cube)?;
    if labels.height() != cube.height() || labels.width() != cube.width() {
        return Err(Error::DimMismatch {
            context: "labels vs cube",
            expected: vec![cube.height(), cube.width()],
            actual: vec![labels.height(), labels.width()],
        });
    }
    if labels.classes() != model.config.num_classes {
        return Err(Error::DimMismatch {
            context: "label classes vs model classes",
            expected: vec![model.config.num_classes],
            actual: vec![labels.classes()],
        });
    }
    Ok(())
}

/// Mean loss and gradients of one mini-batch.
pub fn batch_gradients(
    model: &Model<f32>,
    cube: &HsiCube,
    batch: &[LabeledPixel],
) -> Result<(f32, Gradients<f32>)> {
    let centers: Vec<(usize, usize)> = batch.iter().map(|p| (p.row, p.col)).collect();
    let targets: Vec<usize> = batch.iter().map(|p| p.class - 1).collect();
    let x = extract_batch(cube, &centers, model.config.spatial_window)?;
    let (logits, cache) = model.forward(&x, true)?;
    let (loss, grad) = softmax_cross_entropy_batch(&logits, &targets)?;
    Ok((loss, model.backward(cache.as_ref(), &grad)?))
}

/// Train `model` in place on the split's training pixels. `cube` is the raw
/// scene; normalization statistics are fit on the training pixels and
/// returned with the history. `on_epoch` sees every logged record.
pub fn train(
    model: &mut Model<f32>,
    cube: &HsiCube,
    labels: &LabelGrid,
    split: &SplitManifest,
    config: &TrainConfig,
    opt: &mut OptimizerState,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    check_labels(model, cube, labels)?;
    split.validate(labels)?;
    let normalizer = BandNormalizer::fit(cube, split)?;
    let prepared = normalizer.apply(cube)?;
    let mut order = split.train.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.shuffle_seed);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        for batch in order.chunks(config.batch_size) {
            let (loss, grads) = batch_gradients(model, &prepared, batch)?;
            total += loss as f64 * batch.len() as f64;
            sgd_step(model, &grads, opt)?;
        }
        let test_overall_accuracy = if config.eval_test && !split.test.is_empty() {
            Some(overall_accuracy(&evaluate(model, &prepared, labels, &split.test)?)?)
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            mean_loss: total / order.len() as f64,
            test_overall_accuracy,
        };
        if config.log_every > 0 && (epoch % config.log_every == 0 || epoch == config.epochs) {
            on_epoch(&record);
        }
        history.push(record);
    }
    Ok(TrainOutcome { history, normalizer })
}

/// Predicted 1-based classes for `centers`; argmax ties go to the lowest class.
pub fn predict(model: &Model<f32>, cube: &HsiCube, centers: &[(usize, usize)]) -> Result<Vec<u8>> {
    check_compat(model, cube)?;
    let mut out = Vec::with_capacity(centers.len());
    for chunk in centers.chunks(EVAL_BATCH) {
        let x = extract_batch(cube, chunk, model.config.spatial_window)?;
        let (logits, _) = model.forward(&x, false)?;
        out.extend((0..logits.rows()).map(|r| (logits.argmax_row(r) + 1) as u8));
    }
    Ok(out)
}

/// Confusion matrix of `model` over `pixels`; `cube` must already be
/// normalized the way the model was trained.
pub fn evaluate(
    model: &Model<f32>,
    cube: &HsiCube,
    labels: &LabelGrid,
    pixels: &[LabeledPixel],
) -> Result<ConfusionMatrix> {
    check_labels(model, cube, labels)?;
    let mut centers = Vec::with_capacity(pixels.len());
    for p in pixels {
        if p.row >= labels.height() || p.col >= labels.width() {
            return Err(Error::OutOfImage {
                row: p.row,
                col: p.col,
                height: labels.height(),
                width: labels.width(),
            });
        }
        if labels.get(p.row, p.col) == 0 {
            return Err(Error::UnlabeledPixel { row: p.row, col: p.col });
        }
        centers.push((p.row, p.col));
    }
    let predicted = predict(model, cube, &centers)?;
    let mut m = ConfusionMatrix::new(labels.classes())
        .with_class_names(labels.class_names().map(<[String]>::to_vec));
    for (&(r, c), &pred) in centers.iter().zip(&predicted) {
        m.record(labels.get(r, c) as usize, pred as usize)?;
    }
    Ok(m)
}

/// Classify every pixel of the scene.
pub fn predict_map(model: &Model<f32>, cube: &HsiCube) -> Result<ClassMap> {
    let centers: Vec<(usize, usize)> = (0..cube.height())
        .flat_map(|r| (0..cube.width()).map(move |c| (r, c)))
        .collect();
    Ok(ClassMap {
        height: cube.height(),
        width: cube.width(),
        classes: predict(model, cube, &centers)?,
    })
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for record in history {
        let line = serde_json::to_string(record).map_err(|e| Error::json(path, e))?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
