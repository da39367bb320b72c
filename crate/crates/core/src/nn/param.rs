use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// A named, flat parameter block with its gradient accumulator.
///
/// Non-trainable blocks (batch-norm running statistics) are serialized with
/// the model but skipped by the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub trainable: bool,
}

impl Param {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Param {
            name: name.into(),
            shape: shape.to_vec(),
            value: vec![0.0; len],
            grad: vec![0.0; len],
            trainable: true,
        }
    }

    pub fn filled(name: impl Into<String>, shape: &[usize], fill: f64) -> Self {
        let mut p = Param::zeros(name, shape);
        p.value.iter_mut().for_each(|v| *v = fill);
        p
    }

    /// Uniform in `(-sqrt(1/fan_in), sqrt(1/fan_in))`.
    pub fn uniform<R: Rng + ?Sized>(name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut R) -> Self {
        let mut p = Param::zeros(name, shape);
        let bound = (1.0 / fan_in as f64).sqrt();
        p.value.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
        p
    }

    pub fn frozen(mut self) -> Self {
        self.trainable = false;
        self
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn view1(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.value[..])
    }

    pub fn view2(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.shape[0], self.shape[1]), &self.value).expect("param shape")
    }

    pub fn grad1(&mut self) -> ArrayViewMut1<'_, f64> {
        ArrayViewMut1::from(&mut self.grad[..])
    }

    pub fn grad2(&mut self) -> ArrayViewMut2<'_, f64> {
        ArrayViewMut2::from_shape((self.shape[0], self.shape[1]), &mut self.grad).expect("param shape")
    }

    pub fn value1_mut(&mut self) -> ArrayViewMut1<'_, f64> {
        ArrayViewMut1::from(&mut self.value[..])
    }
}

/// Name and shape of one block, as listed in a model manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

impl From<&Param> for ParamSpec {
    fn from(p: &Param) -> Self {
        ParamSpec {
            name: p.name.clone(),
            shape: p.shape.clone(),
            trainable: p.trainable,
        }
    }
}
