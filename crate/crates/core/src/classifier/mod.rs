//! Small softmax classifier `g(x)` with hand-written backpropagation, the
//! corrected risks and the two-phase training loop.

mod optim;
mod risk;
mod train;

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataio::{read_json, write_json, Dataset};
use crate::rng::{self, streams};
use crate::simplexopt::SimplexVector;
use crate::transition::InstanceTransition;
use crate::{Error, Result};

pub use optim::{Optimizer, OptimizerKind};
pub use risk::{risk, Batch, RiskKind, RiskOptions, RiskOutput, DEFAULT_WEIGHT_CAP, DENOMINATOR_FLOOR};
pub use train::{train, TrainConfig, TrainLog, TrainLogRow, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    None,
    #[default]
    Relu,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        if self == Activation::Relu {
            z.mapv_inplace(|v| v.max(0.0));
        }
    }

    fn derivative_mask(self, pre: &Array2<f64>, upstream: &mut Array2<f64>) {
        if self == Activation::Relu {
            upstream.zip_mut_with(pre, |g, &z| {
                if z <= 0.0 {
                    *g = 0.0;
                }
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Architecture {
    /// Hidden layer widths; empty means softmax regression.
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            activation: Activation::Relu,
        }
    }
}

/// Affine layer `z = x·W + b` with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    fn zeros_like(&self) -> Self {
        Self {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    layers: Vec<Layer>,
    activation: Activation,
}

/// Same shapes as the parameters.
pub type Gradients = ClassifierParams;

pub(crate) struct Forward {
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array2<f64>>,
    probs: Array2<f64>,
}

impl ClassifierParams {
    pub fn new(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("classifier needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weight.ncols() {
                return Err(Error::Dimension(format!(
                    "layer {i}: bias length {} vs {} outputs",
                    l.bias.len(),
                    l.weight.ncols()
                )));
            }
            if i > 0 && layers[i - 1].weight.ncols() != l.weight.nrows() {
                return Err(Error::Dimension(format!(
                    "layer {i} does not compose with layer {}",
                    i - 1
                )));
            }
            if l.weight.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("layer {i} has non-finite parameters")));
            }
        }
        if layers.last().map(|l| l.weight.ncols()).unwrap_or(0) < 2 {
            return Err(Error::InvalidInput("need at least two output classes".into()));
        }
        Ok(Self { layers, activation })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(d: usize, c: usize, arch: &Architecture, seed: u64) -> Result<Self> {
        if d == 0 || c < 2 || arch.hidden.contains(&0) {
            return Err(Error::Config(format!(
                "bad classifier shape: d={d}, c={c}, hidden={:?}",
                arch.hidden
            )));
        }
        let mut rng = rng::stream(seed, streams::CLASSIFIER_INIT);
        let mut widths = vec![d];
        widths.extend(&arch.hidden);
        widths.push(c);
        let layers = widths
            .windows(2)
            .map(|w| {
                let a = (6.0 / (w[0] + w[1]) as f64).sqrt();
                Layer {
                    weight: Array2::from_shape_fn((w[0], w[1]), |_| rng.random_range(-a..a)),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Self::new(layers, arch.activation)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn class_count(&self) -> usize {
        self.layers.last().map(|l| l.weight.ncols()).unwrap_or(0)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Layer::zeros_like).collect(),
            activation: self.activation,
        }
    }

    pub(crate) fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    /// All parameters in one vector, layer by layer, weights before biases.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn assign_flat(&mut self, values: &[f64]) -> Result<()> {
        let total: usize = self.tensors().iter().map(|t| t.len()).sum();
        if values.len() != total {
            return Err(Error::Dimension(format!(
                "expected {total} values, got {}",
                values.len()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&values[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    fn check_input(&self, x: ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "features have {} columns, model expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub(crate) fn forward(&self, x: ArrayView2<f64>) -> Result<Forward> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = h.dot(&layer.weight) + &layer.bias;
            inputs.push(h);
            if i == last {
                h = z;
            } else {
                let mut a = z.clone();
                self.activation.apply(&mut a);
                pre.push(z);
                h = a;
            }
        }
        let probs = softmax_rows(h)?;
        Ok(Forward { inputs, pre, probs })
    }

    /// Backpropagates `dL/dlogits` (rows = batch) to parameter gradients.
    pub(crate) fn backward(&self, fwd: &Forward, dlogits: Array2<f64>) -> Gradients {
        let mut grads = self.zeros_like();
        let mut upstream = dlogits;
        for i in (0..self.layers.len()).rev() {
            grads.layers[i].weight = fwd.inputs[i].t().dot(&upstream);
            grads.layers[i].bias = upstream.sum_axis(Axis(0));
            if i > 0 {
                let mut down = upstream.dot(&self.layers[i].weight.t());
                self.activation.derivative_mask(&fwd.pre[i - 1], &mut down);
                upstream = down;
            }
        }
        grads
    }

    /// Posterior rows for a batch of instances.
    pub fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(x)?.probs)
    }

    /// Activations of the last hidden layer, or the inputs when there is none.
    pub fn hidden_representation(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let fwd = self.forward(x)?;
        Ok(fwd.inputs.into_iter().last().expect("at least one layer"))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(&ModelFile::from(self), path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: ModelFile = read_json(path)?;
        file.try_into()
    }
}

fn softmax_rows(mut z: Array2<f64>) -> Result<Array2<f64>> {
    for mut row in z.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        if !max.is_finite() {
            return Err(Error::Numerical("non-finite logits in forward pass".into()));
        }
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    Ok(z)
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    rows: usize,
    cols: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

/// `model.json`: shapes plus row-major weights.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    activation: Activation,
    layers: Vec<LayerFile>,
}

impl From<&ClassifierParams> for ModelFile {
    fn from(p: &ClassifierParams) -> Self {
        Self {
            activation: p.activation,
            layers: p
                .layers
                .iter()
                .map(|l| LayerFile {
                    rows: l.weight.nrows(),
                    cols: l.weight.ncols(),
                    weight: l.weight.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<ModelFile> for ClassifierParams {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        let layers = f
            .layers
            .into_iter()
            .map(|l| {
                Ok(Layer {
                    weight: Array2::from_shape_vec((l.rows, l.cols), l.weight)
                        .map_err(|e| Error::Format(format!("model.json: {e}")))?,
                    bias: Array1::from(l.bias),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ClassifierParams::new(layers, f.activation).map_err(|e| Error::Format(format!("model.json: {e}")))
    }
}

/// `g(x)` for one instance.
pub fn predict_posterior(params: &ClassifierParams, x: ArrayView1<f64>) -> Result<SimplexVector> {
    let probs = params.predict_batch(x.insert_axis(Axis(0)))?;
    SimplexVector::renormalized(probs.row(0))
}

/// `Tᵀ(x)·g(x)`.
pub fn noisy_posterior(params: &ClassifierParams, t: &InstanceTransition, x: ArrayView1<f64>) -> Result<SimplexVector> {
    if t.class_count() != params.class_count() {
        return Err(Error::Dimension(format!(
            "transition has {} classes, model has {}",
            t.class_count(),
            params.class_count()
        )));
    }
    let g = predict_posterior(params, x)?;
    SimplexVector::renormalized(t.matrix().t().dot(&g.view()).view())
}

/// Argmax per row; ties go to the lowest class index.
pub fn argmax_rows(probs: ArrayView2<f64>) -> Vec<usize> {
    probs
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn predict_labels(params: &ClassifierParams, x: ArrayView2<f64>) -> Result<Vec<usize>> {
    Ok(argmax_rows(params.predict_batch(x)?.view()))
}

fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    let hits = predicted.iter().zip(labels).filter(|(a, b)| a == b).count();
    hits as f64 / labels.len().max(1) as f64
}

/// Fraction of argmax predictions equal to the clean labels.
pub fn evaluate(params: &ClassifierParams, test_set: &Dataset) -> Result<f64> {
    let labels = test_set.require_clean_labels()?;
    Ok(accuracy(&predict_labels(params, test_set.features())?, labels))
}

/// Agreement of argmax `g(x)` with the noisy labels.
pub fn noisy_accuracy(params: &ClassifierParams, set: &Dataset) -> Result<f64> {
    let labels = set.require_noisy_labels()?;
    Ok(accuracy(&predict_labels(params, set.features())?, labels))
}
