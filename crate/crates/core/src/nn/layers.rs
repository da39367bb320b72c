//! Dense, rectifier and batch-norm layers with cached backward passes.
//!
//! Batches are `(batch, features)` row-major matrices. `forward_train`
//! caches what `backward` needs; `forward_eval` is pure.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Param;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// `y = x W^T + b` with `W` stored `[out, in]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
    input: Option<Array2<f64>>,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Dense {
            weight: Param::uniform(format!("{name}.weight"), &[outputs, inputs], inputs, rng),
            bias: Param::uniform(format!("{name}.bias"), &[outputs], inputs, rng),
            input: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn forward_eval(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.view2().t()) + self.bias.view1()
    }

    pub fn forward_train(&mut self, x: Array2<f64>) -> Array2<f64> {
        let y = self.forward_eval(&x);
        self.input = Some(x);
        y
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        let x = self.input.take().expect("Dense::backward without forward_train");
        self.weight.grad2().scaled_add(1.0, &dy.t().dot(&x));
        self.bias.grad1().scaled_add(1.0, &dy.sum_axis(Axis(0)));
        dy.dot(&self.weight.view2())
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Array2<f64>>,
}

impl Relu {
    pub fn forward_eval(&self, x: &Array2<f64>) -> Array2<f64> {
        x.mapv(|v| v.max(0.0))
    }

    pub fn forward_train(&mut self, x: Array2<f64>) -> Array2<f64> {
        self.mask = Some(x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }));
        x.mapv(|v| v.max(0.0))
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        let mask = self.mask.take().expect("Relu::backward without forward_train");
        dy * &mask
    }
}

/// Per-feature batch normalization.
///
/// Training normalizes with the batch mean and biased variance and moves
/// the running statistics by `momentum` (the running variance uses the
/// unbiased batch estimate). Evaluation is the fixed affine map
/// `gamma (x - running_mean) / sqrt(running_var + eps) + beta`.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<(Array2<f64>, Array1<f64>)>,
}

impl BatchNorm {
    pub const DEFAULT_MOMENTUM: f64 = 0.1;
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(name: &str, features: usize, momentum: f64, eps: f64) -> Self {
        BatchNorm {
            gamma: Param::filled(format!("{name}.gamma"), &[features], 1.0),
            beta: Param::zeros(format!("{name}.beta"), &[features]),
            running_mean: Param::zeros(format!("{name}.running_mean"), &[features]).frozen(),
            running_var: Param::filled(format!("{name}.running_var"), &[features], 1.0).frozen(),
            momentum,
            eps,
            cache: None,
        }
    }

    pub fn forward_eval(&self, x: &Array2<f64>) -> Array2<f64> {
        let inv_std = self.running_var.view1().mapv(|v| 1.0 / (v + self.eps).sqrt());
        let scale = &self.gamma.view1() * &inv_std;
        (x - &self.running_mean.view1()) * &scale + self.beta.view1()
    }

    pub fn forward_train(&mut self, x: Array2<f64>) -> Array2<f64> {
        let n = x.nrows() as f64;
        let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
        let centered = &x - &mean;
        let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let x_hat = &centered * &inv_std;
        let y = &x_hat * &self.gamma.view1() + self.beta.view1();

        let m = self.momentum;
        let unbiased = if x.nrows() > 1 { &var * (n / (n - 1.0)) } else { var.clone() };
        let mut rm = self.running_mean.value1_mut();
        rm.zip_mut_with(&mean, |r, &b| *r = (1.0 - m) * *r + m * b);
        let mut rv = self.running_var.value1_mut();
        rv.zip_mut_with(&unbiased, |r, &b| *r = (1.0 - m) * *r + m * b);

        self.cache = Some((x_hat, inv_std));
        y
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        let (x_hat, inv_std) = self.cache.take().expect("BatchNorm::backward without forward_train");
        let n = dy.nrows() as f64;
        self.gamma.grad1().scaled_add(1.0, &(dy * &x_hat).sum_axis(Axis(0)));
        self.beta.grad1().scaled_add(1.0, &dy.sum_axis(Axis(0)));
        let dx_hat = dy * &self.gamma.view1();
        let sum_dx_hat = dx_hat.sum_axis(Axis(0));
        let sum_dx_hat_x_hat = (&dx_hat * &x_hat).sum_axis(Axis(0));
        let inner = &dx_hat * n - &sum_dx_hat - &(&x_hat * &sum_dx_hat_x_hat);
        inner * &(inv_std / n)
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Dense(Dense),
    Relu(Relu),
    BatchNorm(BatchNorm),
}

impl Layer {
    fn forward_eval(&self, x: &Array2<f64>) -> Array2<f64> {
        match self {
            Layer::Dense(l) => l.forward_eval(x),
            Layer::Relu(l) => l.forward_eval(x),
            Layer::BatchNorm(l) => l.forward_eval(x),
        }
    }

    fn forward_train(&mut self, x: Array2<f64>) -> Array2<f64> {
        match self {
            Layer::Dense(l) => l.forward_train(x),
            Layer::Relu(l) => l.forward_train(x),
            Layer::BatchNorm(l) => l.forward_train(x),
        }
    }

    fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        match self {
            Layer::Dense(l) => l.backward(dy),
            Layer::Relu(l) => l.backward(dy),
            Layer::BatchNorm(l) => l.backward(dy),
        }
    }

    fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Dense(l) => vec![&l.weight, &l.bias],
            Layer::Relu(_) => vec![],
            Layer::BatchNorm(l) => vec![&l.gamma, &l.beta, &l.running_mean, &l.running_var],
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Relu(_) => vec![],
            Layer::BatchNorm(l) => vec![&mut l.gamma, &mut l.beta, &mut l.running_mean, &mut l.running_var],
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    /// Dense layers through `widths`; every hidden layer is followed by a
    /// rectifier and, if `batch_norm` is set, a batch-norm layer. The last
    /// dense layer is linear.
    pub fn mlp<R: Rng + ?Sized>(prefix: &str, widths: &[usize], batch_norm: Option<(f64, f64)>, rng: &mut R) -> Self {
        let mut layers = Vec::new();
        for (i, w) in widths.windows(2).enumerate() {
            layers.push(Layer::Dense(Dense::new(&format!("{prefix}.fc{i}"), w[0], w[1], rng)));
            if i + 2 < widths.len() {
                layers.push(Layer::Relu(Relu::default()));
                if let Some((momentum, eps)) = batch_norm {
                    layers.push(Layer::BatchNorm(BatchNorm::new(&format!("{prefix}.bn{i}"), w[1], momentum, eps)));
                }
            }
        }
        Sequential { layers }
    }

    pub fn push(&mut self, layer: Layer) {
        self.layers.push(layer);
    }

    pub fn forward(&mut self, x: Array2<f64>, mode: Mode) -> Array2<f64> {
        match mode {
            Mode::Train => self.forward_train(x),
            Mode::Eval => self.forward_eval(&x),
        }
    }

    pub fn forward_eval(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut h = x.clone();
        for l in &self.layers {
            h = l.forward_eval(&h);
        }
        h
    }

    pub fn forward_train(&mut self, x: Array2<f64>) -> Array2<f64> {
        self.layers.iter_mut().fold(x, |h, l| l.forward_train(h))
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        let mut d = dy.clone();
        for l in self.layers.iter_mut().rev() {
            d = l.backward(&d);
        }
        d
    }

    /// Replaces every batch-norm layer's running statistics with the exact
    /// mean and unbiased variance of its input over `x` (all rows at once),
    /// propagating through the layers in eval mode.
    pub fn recalibrate_batch_norm(&mut self, x: &Array2<f64>) {
        let mut h = x.clone();
        for l in self.layers.iter_mut() {
            if let Layer::BatchNorm(bn) = l {
                let n = h.nrows() as f64;
                let mean = h.mean_axis(Axis(0)).expect("non-empty batch");
                let mut var = (&h - &mean).mapv(|v| v * v).sum_axis(Axis(0));
                var /= if h.nrows() > 1 { n - 1.0 } else { n };
                bn.running_mean.value1_mut().assign(&mean);
                bn.running_var.value1_mut().assign(&var);
            }
            h = l.forward_eval(&h);
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}
