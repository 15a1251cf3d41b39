//! Minibatch SGD for dense MLPs with mean-squared-error loss.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datapipe::timeseries_splits;
use crate::error::{Error, Result};
use crate::linalg::Mat2;
use crate::nn::{Activation, Layer, LayerKind, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSize {
    pub units: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Hidden and output layers; the last entry's units must equal the label width.
    pub layers: Vec<LayerSize>,
    pub folds: usize,
    /// Also fit and score every earlier fold (slower; report only).
    pub cv_all_folds: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.01,
            seed: 0,
            layers: vec![
                LayerSize { units: 8, activation: Activation::Relu },
                LayerSize { units: 8, activation: Activation::Relu },
                LayerSize { units: 1, activation: Activation::Linear },
            ],
            folds: 10,
            cv_all_folds: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.learning_rate > 0.0) || self.folds == 0 {
            return Err(Error::Argument(
                "batch_size, learning_rate and folds must be positive".into(),
            ));
        }
        if self.layers.is_empty() || self.layers.iter().any(|l| l.units == 0) {
            return Err(Error::Argument("architecture needs at least one non-empty layer".into()));
        }
        Ok(())
    }
}

/// Xavier-uniform weights, zero biases.
pub fn xavier_model(input_dim: usize, layers: &[LayerSize], seed: u64) -> Result<ModelSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fan_in = input_dim;
    let mut out = Vec::with_capacity(layers.len());
    for l in layers {
        let limit = (6.0 / (fan_in + l.units) as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * l.units).map(|_| rng.gen_range(-limit..limit)).collect();
        out.push(Layer::dense(Mat2::new(fan_in, l.units, w)?, vec![0.0; l.units], l.activation)?);
        fan_in = l.units;
    }
    ModelSpec::new(out, None)
}

/// Per-layer gradients of the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Mat2>,
    pub biases: Vec<Vec<f64>>,
}

fn require_dense(model: &ModelSpec) -> Result<()> {
    if model.layers.iter().any(|l| l.kind != LayerKind::Dense) {
        return Err(Error::Argument("only dense layers can be differentiated analytically".into()));
    }
    Ok(())
}

struct Trace {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

fn forward_trace(model: &ModelSpec, x: &[f64]) -> Trace {
    let mut pre = Vec::with_capacity(model.layers.len());
    let mut post = Vec::with_capacity(model.layers.len() + 1);
    post.push(x.to_vec());
    for l in &model.layers {
        let a = post.last().unwrap();
        let mut z = l.bias.clone();
        for (i, ai) in a.iter().enumerate() {
            for (zj, wij) in z.iter_mut().zip(l.weights.row(i)) {
                *zj += ai * wij;
            }
        }
        let out = z.iter().map(|v| l.activation.apply(*v)).collect();
        pre.push(z);
        post.push(out);
    }
    Trace { pre, post }
}

/// Propagates `delta` (dL/d output) back through the layers, accumulating
/// parameter gradients if `grads` is given. Returns dL/d input.
fn backward(model: &ModelSpec, tr: &Trace, mut delta: Vec<f64>, mut grads: Option<&mut Gradients>) -> Vec<f64> {
    for (li, l) in model.layers.iter().enumerate().rev() {
        for (j, d) in delta.iter_mut().enumerate() {
            *d *= l.activation.derivative(tr.pre[li][j], tr.post[li + 1][j]);
        }
        let a = &tr.post[li];
        if let Some(g) = grads.as_deref_mut() {
            for (i, ai) in a.iter().enumerate() {
                for (gw, d) in g.weights[li].row_mut(i).iter_mut().zip(&delta) {
                    *gw += ai * d;
                }
            }
            for (gb, d) in g.biases[li].iter_mut().zip(&delta) {
                *gb += d;
            }
        }
        delta = (0..a.len())
            .map(|i| l.weights.row(i).iter().zip(&delta).map(|(w, d)| w * d).sum())
            .collect();
    }
    delta
}

fn zero_grads(model: &ModelSpec) -> Gradients {
    Gradients {
        weights: model.layers.iter().map(|l| Mat2::zeros(l.weights.rows(), l.weights.cols())).collect(),
        biases: model.layers.iter().map(|l| vec![0.0; l.units]).collect(),
    }
}

fn check_data(model: &ModelSpec, x: &Mat2, y: &Mat2) -> Result<()> {
    if x.rows() != y.rows() || x.cols() != model.input_dim || y.cols() != model.output_dim {
        return Err(Error::dim(format!(
            "data {:?} -> {:?} does not fit a {} -> {} model",
            x.shape(),
            y.shape(),
            model.input_dim,
            model.output_dim
        )));
    }
    Ok(())
}

/// Mean over rows and outputs of the squared error.
pub fn mse(model: &ModelSpec, x: &Mat2, y: &Mat2) -> Result<f64> {
    check_data(model, x, y)?;
    let mut sum = 0.0;
    for r in 0..x.rows() {
        let out = model.forward(x.row(r))?;
        sum += out.iter().zip(y.row(r)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(sum / (x.rows() * y.cols()) as f64)
}

/// Loss and reverse-mode parameter gradients of the MSE on a batch.
pub fn grad_backprop(model: &ModelSpec, x: &Mat2, y: &Mat2) -> Result<(f64, Gradients)> {
    require_dense(model)?;
    check_data(model, x, y)?;
    let rows: Vec<usize> = (0..x.rows()).collect();
    Ok(batch_grad(model, x, y, &rows))
}

fn batch_grad(model: &ModelSpec, x: &Mat2, y: &Mat2, rows: &[usize]) -> (f64, Gradients) {
    let mut g = zero_grads(model);
    let scale = 1.0 / (rows.len() * model.output_dim) as f64;
    let mut loss = 0.0;
    for &r in rows {
        let tr = forward_trace(model, x.row(r));
        let out = tr.post.last().unwrap();
        let delta: Vec<f64> = out
            .iter()
            .zip(y.row(r))
            .map(|(a, b)| {
                loss += (a - b) * (a - b);
                2.0 * (a - b) * scale
            })
            .collect();
        backward(model, &tr, delta, Some(&mut g));
    }
    (loss * scale, g)
}

/// Exact `p x n` Jacobian of the outputs with respect to the inputs:
/// `J[i][k] = d g_k / d x_i`.
pub fn input_jacobian(model: &ModelSpec, x: &[f64]) -> Result<Mat2> {
    require_dense(model)?;
    if x.len() != model.input_dim {
        return Err(Error::dim(format!("expected {} inputs, got {}", model.input_dim, x.len())));
    }
    let tr = forward_trace(model, x);
    let n = model.output_dim;
    let mut jac = Mat2::zeros(model.input_dim, n);
    for k in 0..n {
        let mut seed = vec![0.0; n];
        seed[k] = 1.0;
        for (i, v) in backward(model, &tr, seed, None).into_iter().enumerate() {
            jac[(i, k)] = v;
        }
    }
    Ok(jac)
}

fn apply_step(model: &mut ModelSpec, g: &Gradients, lr: f64) {
    for (li, l) in model.layers.iter_mut().enumerate() {
        for (w, d) in l.weights.as_mut_slice().iter_mut().zip(g.weights[li].as_slice()) {
            *w -= lr * d;
        }
        for (b, d) in l.bias.iter_mut().zip(&g.biases[li]) {
            *b -= lr * d;
        }
    }
}

/// Plain minibatch SGD over `rows` of the data; returns the mean batch loss
/// per epoch.
pub fn sgd(model: &mut ModelSpec, x: &Mat2, y: &Mat2, rows: std::ops::Range<usize>, cfg: &TrainConfig) -> Result<Vec<f64>> {
    require_dense(model)?;
    check_data(model, x, y)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = rows.collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let (loss, g) = batch_grad(model, x, y, chunk);
            if !loss.is_finite() {
                return Err(Error::Training(format!("non-finite loss in epoch {epoch}")));
            }
            apply_step(model, &g, cfg.learning_rate);
            total += loss;
            batches += 1;
        }
        let mean = total / batches.max(1) as f64;
        log::debug!("epoch {epoch}: mean batch loss {mean:.3e}");
        history.push(mean);
    }
    if model.layers.iter().any(|l| !l.weights.all_finite() || l.bias.iter().any(|b| !b.is_finite())) {
        return Err(Error::Training("non-finite parameters".into()));
    }
    Ok(history)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_rows: usize,
    pub test_rows: usize,
    pub train_mse: f64,
    pub test_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub folds: Vec<FoldReport>,
    /// Per-epoch mean batch loss of the returned model.
    pub loss_history: Vec<f64>,
    pub param_count: usize,
}

impl TrainReport {
    /// The last split's scores, which belong to the returned model.
    pub fn last(&self) -> &FoldReport {
        self.folds.last().expect("at least one fold")
    }
}

/// Trains on the last time-series split and scores it on the held-out tail.
pub fn train_mlp(x: &Mat2, y: &Mat2, cfg: &TrainConfig) -> Result<(ModelSpec, TrainReport)> {
    cfg.validate()?;
    if cfg.layers.last().unwrap().units != y.cols() {
        return Err(Error::Argument(format!(
            "output layer has {} units, labels have {} columns",
            cfg.layers.last().unwrap().units,
            y.cols()
        )));
    }
    let splits = timeseries_splits(x.rows(), cfg.folds)?;
    let fit = |i: usize| -> Result<(ModelSpec, Vec<f64>, FoldReport)> {
        let s = &splits[i];
        let mut model = xavier_model(x.cols(), &cfg.layers, cfg.seed)?;
        let history = sgd(&mut model, x, y, s.train.clone(), cfg)?;
        let score = |r: &std::ops::Range<usize>| -> Result<f64> {
            let idx: Vec<usize> = r.clone().collect();
            Ok(batch_grad(&model, x, y, &idx).0)
        };
        let report = FoldReport {
            fold: i,
            train_rows: s.train.len(),
            test_rows: s.test.len(),
            train_mse: score(&s.train)?,
            test_mse: score(&s.test)?,
        };
        log::info!(
            "fold {i}: train mse {:.3e}, test mse {:.3e}",
            report.train_mse,
            report.test_mse
        );
        Ok((model, history, report))
    };
    let mut folds = Vec::new();
    if cfg.cv_all_folds {
        for i in 0..splits.len() - 1 {
            folds.push(fit(i)?.2);
        }
    }
    let (model, loss_history, last) = fit(splits.len() - 1)?;
    folds.push(last);
    let param_count = model.param_count();
    Ok((
        model,
        TrainReport {
            folds,
            loss_history,
            param_count,
        },
    ))
}
