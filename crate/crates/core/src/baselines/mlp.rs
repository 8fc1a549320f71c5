//! Fully connected classifier on feature vectors.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::nn::{
    argmax_rows, dense_backward_slice, dense_forward_slice, leaky, leaky_grad_from_output,
    softmax_rows, AdamHyper, AdamState, DenseParams,
};
use crate::tensor::{Scalar, SeededRng, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub leaky_slope: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 256, 256, 128, 64],
            leaky_slope: 0.2,
            epochs: 60,
            batch_size: 64,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Mlp<T> {
    pub layers: Vec<DenseParams<T>>,
    pub slope: f64,
}

/// Per-layer outputs of a forward pass; hidden entries are post-activation.
pub struct MlpTrace<T> {
    pub outputs: Vec<Vec<T>>,
    pub probs: Vec<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new(inputs: usize, hidden: &[usize], classes: usize, slope: f64, rng: &mut SeededRng) -> Result<Self> {
        if inputs == 0 || classes < 2 || hidden.contains(&0) {
            return config_err("MLP needs inputs, at least two classes, and non-zero widths");
        }
        let gain = (2.0 / (1.0 + slope * slope)).sqrt();
        let mut layers = Vec::new();
        let mut fan_in = inputs;
        for &w in hidden {
            layers.push(DenseParams::init(fan_in, w, gain, rng)?);
            fan_in = w;
        }
        layers.push(DenseParams::init(fan_in, classes, 1.0, rng)?);
        Ok(Self { layers, slope })
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].weight.shape()[0]
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.bias.len())
    }

    pub fn forward(&self, x: &[T], b: usize) -> MlpTrace<T> {
        let slope = T::of(self.slope);
        let last = self.layers.len() - 1;
        let mut outputs: Vec<Vec<T>> = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let input = if i == 0 { x } else { &outputs[i - 1] };
            let [f, u] = [l.weight.shape()[0], l.weight.shape()[1]];
            let mut out = vec![T::zero(); b * u];
            dense_forward_slice(input, b, f, l.weight.data(), l.bias.data(), u, &mut out);
            if i < last {
                out.iter_mut().for_each(|v| *v = leaky(*v, slope));
            }
            outputs.push(out);
        }
        let probs = softmax_rows(&outputs[last], self.classes());
        MlpTrace { outputs, probs }
    }

    /// Mean cross-entropy and gradients ordered `[W0, b0, W1, b1, ...]`.
    pub fn loss_and_grads(&self, x: &[T], b: usize, labels: &[usize]) -> Result<(T, Vec<Tensor<T>>)> {
        let k = self.classes();
        if labels.len() != b || x.len() != b * self.inputs() {
            return Err(Error::Shape(format!("MLP batch: {} values, {} labels, batch {b}", x.len(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Label(format!("label {bad} outside {k} classes")));
        }
        let trace = self.forward(x, b);
        let bt = T::of(b as f64);
        let mut loss = T::zero();
        let mut grad = trace.probs.clone();
        for (r, &l) in labels.iter().enumerate() {
            loss = loss - trace.probs[r * k + l].max(T::of(1e-30)).ln();
            grad[r * k + l] = grad[r * k + l] - T::one();
        }
        grad.iter_mut().for_each(|g| *g = *g / bt);
        let slope = T::of(self.slope);
        let mut grads = vec![Tensor::zeros(&[1])?; 2 * self.layers.len()];
        for i in (0..self.layers.len()).rev() {
            let l = &self.layers[i];
            let [f, u] = [l.weight.shape()[0], l.weight.shape()[1]];
            let input = if i == 0 { x } else { &trace.outputs[i - 1] };
            let mut gw = Tensor::zeros_like(&l.weight);
            let mut gb = Tensor::zeros_like(&l.bias);
            let dx = dense_backward_slice(input, b, f, l.weight.data(), u, &grad, gw.data_mut(), gb.data_mut(), i > 0);
            grads[2 * i] = gw;
            grads[2 * i + 1] = gb;
            if let Some(mut dx) = dx {
                for (d, &y) in dx.iter_mut().zip(&trace.outputs[i - 1]) {
                    *d = *d * leaky_grad_from_output(y, slope);
                }
                grad = dx;
            }
        }
        Ok((loss / bt, grads))
    }

    pub fn predict(&self, x: &[T], b: usize) -> Vec<usize> {
        argmax_rows(&self.forward(x, b).probs, self.classes())
    }

    fn tensors(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }
}

/// Minibatch Adam training on row features; returns the model and the
/// per-epoch mean loss.
pub fn train_mlp(x: &[Vec<f64>], y: &[usize], classes: usize, cfg: &MlpConfig) -> Result<(Mlp<f32>, Vec<f64>)> {
    if x.is_empty() || x.len() != y.len() {
        return config_err("MLP training needs matching, non-empty features and labels");
    }
    if cfg.batch_size == 0 {
        return config_err("MLP batch size must be positive");
    }
    let d = x[0].len();
    let mut rng = SeededRng::derive(cfg.seed, 1);
    let mut model = Mlp::<f32>::new(d, &cfg.hidden, classes, cfg.leaky_slope, &mut rng)?;
    let hyper = AdamHyper {
        base_lr: cfg.lr,
        decay: 1.0,
        ..Default::default()
    };
    let mut adam = AdamState::for_tensors(&model.tensors(), hyper);
    let mut order: Vec<usize> = (0..x.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut erng = SeededRng::derive(cfg.seed, 1000 + epoch as u64);
        erng.shuffle(&mut order);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let xb: Vec<f32> = batch.iter().flat_map(|&i| x[i].iter().map(|&v| v as f32)).collect();
            let yb: Vec<usize> = batch.iter().map(|&i| y[i]).collect();
            let (loss, grads) = model.loss_and_grads(&xb, batch.len(), &yb)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("MLP loss is {loss} at epoch {epoch}")));
            }
            total += loss as f64 * batch.len() as f64;
            adam.update(model.tensors_mut(), &grads, cfg.lr)?;
        }
        history.push(total / x.len() as f64);
    }
    Ok((model, history))
}

pub fn mlp_predict(model: &Mlp<f32>, x: &[Vec<f64>]) -> Vec<usize> {
    let flat: Vec<f32> = x.iter().flat_map(|r| r.iter().map(|&v| v as f32)).collect();
    if x.is_empty() {
        return Vec::new();
    }
    model.predict(&flat, x.len())
}
