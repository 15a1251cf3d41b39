//! Small dense/GRU networks: JSON loading, forward evaluation and
//! central finite-difference derivatives with respect to the input vector.

use serde::{Deserialize, Serialize};

use crate::datapipe::Normalizer;
use crate::error::{Error, Result};
use crate::linalg::Mat2;

/// Slack allowed around the normalized range before a warning is logged.
pub const INPUT_SLACK: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Linear => v,
            Activation::Sigmoid => sigmoid(v),
        }
    }

    /// Derivative expressed through the pre-activation `v` and output `a`.
    pub fn derivative(self, v: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Linear => 1.0,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Dense,
    Gru,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub kind: LayerKind,
    pub units: usize,
    /// Output activation for dense layers, candidate activation for GRU.
    pub activation: Activation,
    /// `(in, units)` for dense, `(in, 3*units)` for GRU with gates `z, r, h`.
    pub weights: Mat2,
    pub bias: Vec<f64>,
    /// GRU only: `(units, 3*units)`.
    pub recurrent_weights: Option<Mat2>,
}

impl Layer {
    pub fn dense(weights: Mat2, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        let layer = Layer {
            kind: LayerKind::Dense,
            units: weights.cols(),
            activation,
            weights,
            bias,
            recurrent_weights: None,
        };
        layer.validate(layer.weights.rows())?;
        Ok(layer)
    }

    pub fn gru(weights: Mat2, recurrent: Mat2, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        let layer = Layer {
            kind: LayerKind::Gru,
            units: recurrent.rows(),
            activation,
            weights,
            bias,
            recurrent_weights: Some(recurrent),
        };
        layer.validate(layer.weights.rows())?;
        Ok(layer)
    }

    pub fn input_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weights.rows() * self.weights.cols()
            + self.bias.len()
            + self.recurrent_weights.as_ref().map_or(0, |r| r.rows() * r.cols())
    }

    fn validate(&self, input_dim: usize) -> Result<()> {
        let u = self.units;
        if u == 0 {
            return Err(Error::ModelShape("layer with zero units".into()));
        }
        let gates = match self.kind {
            LayerKind::Dense => 1,
            LayerKind::Gru => 3,
        };
        if self.weights.shape() != (input_dim, gates * u) {
            return Err(Error::ModelShape(format!(
                "{:?} layer weights are {:?}, expected ({input_dim}, {})",
                self.kind,
                self.weights.shape(),
                gates * u
            )));
        }
        if self.bias.len() != gates * u {
            return Err(Error::ModelShape(format!(
                "{:?} layer bias has length {}, expected {}",
                self.kind,
                self.bias.len(),
                gates * u
            )));
        }
        match (self.kind, &self.recurrent_weights) {
            (LayerKind::Dense, None) => Ok(()),
            (LayerKind::Dense, Some(_)) => {
                Err(Error::ModelShape("dense layer has recurrent weights".into()))
            }
            (LayerKind::Gru, None) => Err(Error::ModelShape("GRU layer without recurrent weights".into())),
            (LayerKind::Gru, Some(r)) if r.shape() != (u, 3 * u) => Err(Error::ModelShape(format!(
                "GRU recurrent weights are {:?}, expected ({u}, {})",
                r.shape(),
                3 * u
            ))),
            (LayerKind::Gru, Some(_)) => Ok(()),
        }
    }

    /// `out = x W + b` over all gate columns.
    fn affine_into(&self, x: &[f64], out: &mut [f64]) {
        let cols = self.weights.cols();
        out.copy_from_slice(&self.bias);
        let w = self.weights.as_slice();
        for (i, xi) in x.iter().enumerate() {
            if *xi == 0.0 {
                continue;
            }
            let row = &w[i * cols..(i + 1) * cols];
            for (o, wij) in out.iter_mut().zip(row) {
                *o += xi * wij;
            }
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        match self.kind {
            LayerKind::Dense => {
                let mut out = vec![0.0; self.units];
                self.affine_into(x, &mut out);
                out.iter_mut().for_each(|v| *v = self.activation.apply(*v));
                out
            }
            LayerKind::Gru => self.gru_cell(x, &vec![0.0; self.units]),
        }
    }

    /// One GRU step from hidden state `h`:
    /// `h' = z*h + (1-z)*act(x Wh + (r*h) Uh + bh)`.
    pub fn gru_cell(&self, x: &[f64], h: &[f64]) -> Vec<f64> {
        let u = self.units;
        let rec = self.recurrent_weights.as_ref().expect("validated GRU layer");
        let mut xw = vec![0.0; 3 * u];
        self.affine_into(x, &mut xw);
        let mut hu = vec![0.0; 3 * u];
        for (i, hi) in h.iter().enumerate() {
            for (o, uij) in hu[..2 * u].iter_mut().zip(rec.row(i)) {
                *o += hi * uij;
            }
        }
        let z: Vec<f64> = (0..u).map(|k| sigmoid(xw[k] + hu[k])).collect();
        let r: Vec<f64> = (0..u).map(|k| sigmoid(xw[u + k] + hu[u + k])).collect();
        let mut cand = xw[2 * u..].to_vec();
        for (i, hi) in h.iter().enumerate() {
            let rh = r[i] * hi;
            for (o, uij) in cand.iter_mut().zip(&rec.row(i)[2 * u..]) {
                *o += rh * uij;
            }
        }
        (0..u)
            .map(|k| z[k] * h[k] + (1.0 - z[k]) * self.activation.apply(cand[k]))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub layers: Vec<Layer>,
    pub input_dim: usize,
    pub output_dim: usize,
    pub normalization: Option<Normalizer>,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    kind: LayerKind,
    units: usize,
    activation: Activation,
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    recurrent_weights: Option<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    input_dim: usize,
    layers: Vec<LayerFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    normalization: Option<Normalizer>,
}

fn shaped(rows: &[Vec<f64>], what: &str) -> Result<Mat2> {
    Mat2::from_rows(rows).map_err(|e| Error::ModelShape(format!("{what}: {e}")))
}

/// Parses and validates a JSON model document.
pub fn load_model(bytes: &[u8]) -> Result<ModelSpec> {
    let file: ModelFile = serde_json::from_slice(bytes).map_err(|e| Error::ModelFormat(e.to_string()))?;
    let mut layers = Vec::with_capacity(file.layers.len());
    for (i, lf) in file.layers.into_iter().enumerate() {
        let layer = Layer {
            kind: lf.kind,
            units: lf.units,
            activation: lf.activation,
            weights: shaped(&lf.weights, &format!("layer {i} weights"))?,
            bias: lf.bias,
            recurrent_weights: lf
                .recurrent_weights
                .map(|r| shaped(&r, &format!("layer {i} recurrent weights")))
                .transpose()?,
        };
        layers.push(layer);
    }
    let model = ModelSpec::new(layers, file.normalization)?;
    if model.input_dim != file.input_dim {
        return Err(Error::ModelShape(format!(
            "input_dim is {}, first layer takes {}",
            file.input_dim, model.input_dim
        )));
    }
    Ok(model)
}

impl ModelSpec {
    pub fn new(layers: Vec<Layer>, normalization: Option<Normalizer>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::ModelShape("model has no layers".into()))?;
        let input_dim = first.input_dim();
        let mut dim = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            layer
                .validate(dim)
                .map_err(|e| Error::ModelShape(format!("layer {i}: {e}")))?;
            dim = layer.units;
        }
        if let Some(norm) = &normalization {
            norm.validate(input_dim, dim)?;
        }
        Ok(ModelSpec {
            layers,
            input_dim,
            output_dim: dim,
            normalization,
        })
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            input_dim: self.input_dim,
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    kind: l.kind,
                    units: l.units,
                    activation: l.activation,
                    weights: l.weights.to_rows(),
                    bias: l.bias.clone(),
                    recurrent_weights: l.recurrent_weights.as_ref().map(Mat2::to_rows),
                })
                .collect(),
            normalization: self.normalization.clone(),
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::dim(format!(
                "network expects {} inputs, got {}",
                self.input_dim,
                x.len()
            )));
        }
        let mut a = x.to_vec();
        for layer in &self.layers {
            a = layer.forward(&a);
        }
        Ok(a)
    }

    /// Number of input entries outside the normalized range plus slack.
    pub fn out_of_range_inputs(x: &[f64]) -> usize {
        let lim = 0.5 + INPUT_SLACK;
        x.iter().filter(|v| v.abs() > lim).count()
    }
}

/// Perturbed copies of the input: row `i` of `plus` is `x + eps*e_i`, of
/// `minus` is `x - eps*e_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stencil {
    pub plus: Mat2,
    pub minus: Mat2,
}

pub fn build_stencil(x: &[f64], eps: f64) -> Result<Stencil> {
    build_stencil_rows(x, eps, x.len())
}

fn build_stencil_rows(x: &[f64], eps: f64, rows: usize) -> Result<Stencil> {
    if !(eps > 0.0) {
        return Err(Error::Argument(format!("stencil step must be positive, got {eps}")));
    }
    let p = x.len();
    if rows == 0 || rows > p {
        return Err(Error::Argument(format!("requested {rows} stencil rows for {p} inputs")));
    }
    let mut plus = Vec::with_capacity(rows * p);
    let mut minus = Vec::with_capacity(rows * p);
    for i in 0..rows {
        plus.extend_from_slice(x);
        plus[i * p + i] += eps;
        minus.extend_from_slice(x);
        minus[i * p + i] -= eps;
    }
    Ok(Stencil {
        plus: Mat2::new(rows, p, plus)?,
        minus: Mat2::new(rows, p, minus)?,
    })
}

/// First and diagonal second derivatives of the network output with respect
/// to the first `rows` inputs, from one shared set of stencil evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct FdDerivatives {
    /// `rows x n`: `(g(x+eps e_i) - g(x-eps e_i)) / 2eps`.
    pub theta: Mat2,
    /// `rows x n`: `(g(x+eps e_i) - 2g(x) + g(x-eps e_i)) / eps^2`.
    pub chi: Mat2,
}

pub fn fd_derivatives(model: &ModelSpec, x: &[f64], eps: f64, rows: usize) -> Result<FdDerivatives> {
    fd_derivatives_of(|v| model.forward(v), x, eps, rows)
}

/// Same stencil for any vector function.
pub fn fd_derivatives_of<F>(g: F, x: &[f64], eps: f64, rows: usize) -> Result<FdDerivatives>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let st = build_stencil_rows(x, eps, rows)?;
    let center = g(x)?;
    let n = center.len();
    let mut theta = Mat2::zeros(rows, n);
    let mut chi = Mat2::zeros(rows, n);
    for i in 0..rows {
        let gp = g(st.plus.row(i))?;
        let gm = g(st.minus.row(i))?;
        for k in 0..n {
            theta[(i, k)] = (gp[k] - gm[k]) / (2.0 * eps);
            chi[(i, k)] = (gp[k] - 2.0 * center[k] + gm[k]) / (eps * eps);
        }
    }
    Ok(FdDerivatives { theta, chi })
}

pub fn grad_fd(model: &ModelSpec, x: &[f64], eps: f64, rows: usize) -> Result<Mat2> {
    Ok(fd_derivatives(model, x, eps, rows)?.theta)
}

pub fn hess_diag_fd(model: &ModelSpec, x: &[f64], eps: f64, rows: usize) -> Result<Mat2> {
    Ok(fd_derivatives(model, x, eps, rows)?.chi)
}

/// Sums the `n_d` history blocks of a `(n_d*m) x n` sensitivity into `n x m`:
/// `out[k][a] = sum_i theta[i*m + a][k]`.
pub fn reduce_to_du(theta: &Mat2, n_d: usize, m: usize) -> Result<Mat2> {
    if n_d == 0 || m == 0 || theta.rows() != n_d * m {
        return Err(Error::dim(format!(
            "expected {} sensitivity rows (n_d={n_d}, m={m}), got {}",
            n_d * m,
            theta.rows()
        )));
    }
    let n = theta.cols();
    let mut out = Mat2::zeros(n, m);
    for i in 0..n_d {
        for a in 0..m {
            let row = theta.row(i * m + a);
            for k in 0..n {
                out[(k, a)] += row[k];
            }
        }
    }
    Ok(out)
}
