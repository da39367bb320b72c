//! Template-based gradient-field features and graph convolutions over the
//! template connectivity.
//!
//! The raw feature of an input shape `g` is the gradient of
//! `|mu(T) - mu(g)|^2` with respect to the vertices of a fixed template
//! `T`: one 3-vector per template vertex, whatever the sampling of `g`.
//! A stack of graph convolutions `H' = act(A_hat H W + b)` with
//! `A_hat = D^-1/2 (A + I) D^-1/2` then maps the field to `C_out` channels
//! per template vertex, flattened vertex-major.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ShapeGraph;
use crate::nn::Param;
use crate::varifold::{self, DiscreteVarifold, KernelConfig};
use crate::vec3::Vec3;

/// A fixed reference shape with its precomputed propagation matrices.
#[derive(Debug, Clone)]
pub struct Template {
    shape: ShapeGraph,
    varifold: DiscreteVarifold,
    adjacency_norm: Array2<f64>,
    neighborhood_mean: Array2<f64>,
}

impl Template {
    pub fn new(shape: ShapeGraph) -> Result<Self> {
        let shape = shape.validated()?;
        let varifold = varifold::lift(&shape)?;
        let n = shape.vertex_count();
        let mut adj = Array2::<f64>::eye(n);
        for &[i, j] in &shape.edges {
            adj[[i, j]] = 1.0;
            adj[[j, i]] = 1.0;
        }
        let deg: Vec<f64> = adj.rows().into_iter().map(|r| r.sum()).collect();
        let adjacency_norm = Array2::from_shape_fn((n, n), |(i, j)| adj[[i, j]] / (deg[i] * deg[j]).sqrt());
        let neighborhood_mean = Array2::from_shape_fn((n, n), |(i, j)| adj[[i, j]] / deg[i]);
        Ok(Template {
            shape,
            varifold,
            adjacency_norm,
            neighborhood_mean,
        })
    }

    pub fn shape(&self) -> &ShapeGraph {
        &self.shape
    }

    pub fn varifold(&self) -> &DiscreteVarifold {
        &self.varifold
    }

    pub fn vertex_count(&self) -> usize {
        self.shape.vertex_count()
    }

    /// `D^-1/2 (A + I) D^-1/2`, symmetric.
    pub fn adjacency_norm(&self) -> &Array2<f64> {
        &self.adjacency_norm
    }

    /// Row-normalized `(A + I)`: mean over each closed neighborhood.
    pub fn neighborhood_mean(&self) -> &Array2<f64> {
        &self.neighborhood_mean
    }
}

/// One 3-vector per template vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub vectors: Vec<Vec3>,
}

impl GradientField {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn to_array(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.vectors.len(), 3), |(v, c)| self.vectors[v][c])
    }

    pub fn norm(&self) -> f64 {
        self.vectors.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Gradient of the squared varifold distance to `g`, taken at the template vertices.
pub fn raw_feature(t: &Template, g: &ShapeGraph, k: &KernelConfig) -> Result<GradientField> {
    let nu = varifold::lift(g)?;
    Ok(raw_feature_of(t, &nu, k))
}

pub fn raw_feature_of(t: &Template, nu: &DiscreteVarifold, k: &KernelConfig) -> GradientField {
    let vectors = varifold::grad_dist_sq_raw(&t.shape.vertices, &t.shape.edges, &t.varifold, nu, k);
    GradientField { vectors }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    /// Linear layers, used to test linearity of the stack.
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvConfig {
    /// Output channels of each layer; the input has 3.
    pub channels: Vec<usize>,
    pub activation: Activation,
    /// Average over closed neighborhoods after the last layer, then average
    /// adjacent channel pairs (halves the width).
    pub pool: bool,
}

impl Default for ConvConfig {
    fn default() -> Self {
        ConvConfig {
            channels: vec![16, 32],
            activation: Activation::Relu,
            pool: false,
        }
    }
}

impl ConvConfig {
    pub fn check(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::InvalidConfig("conv channels must be non-empty and positive".into()));
        }
        if self.pool && !self.out_channels_before_pool().is_multiple_of(2) {
            return Err(Error::InvalidConfig("pooling needs an even final channel count".into()));
        }
        Ok(())
    }

    fn out_channels_before_pool(&self) -> usize {
        *self.channels.last().unwrap_or(&3)
    }

    pub fn out_channels(&self) -> usize {
        let c = self.out_channels_before_pool();
        if self.pool {
            c / 2
        } else {
            c
        }
    }

    /// Flat feature length for a template with `vertex_count` vertices.
    pub fn feature_dim(&self, vertex_count: usize) -> usize {
        self.out_channels() * vertex_count
    }
}

#[derive(Debug, Clone)]
struct ConvCache {
    propagated: Vec<Array2<f64>>,
    pre_activation: Vec<Array2<f64>>,
}

/// Graph convolution stack. Weights are `[in, out]`, biases `[out]`.
#[derive(Debug, Clone)]
pub struct ConvStack {
    pub config: ConvConfig,
    pub weights: Vec<Param>,
    pub biases: Vec<Param>,
    cache: Vec<ConvCache>,
}

impl ConvStack {
    pub fn new<R: Rng + ?Sized>(config: ConvConfig, rng: &mut R) -> Result<Self> {
        config.check()?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut c_in = 3;
        for (l, &c_out) in config.channels.iter().enumerate() {
            weights.push(Param::uniform(format!("conv{l}.weight"), &[c_in, c_out], c_in, rng));
            biases.push(Param::uniform(format!("conv{l}.bias"), &[c_out], c_in, rng));
            c_in = c_out;
        }
        Ok(ConvStack {
            config,
            weights,
            biases,
            cache: Vec::new(),
        })
    }

    pub fn params(&self) -> Vec<&Param> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.weights.iter_mut().zip(self.biases.iter_mut()).flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn feature_dim(&self, vertex_count: usize) -> usize {
        self.config.feature_dim(vertex_count)
    }

    fn run(&self, t: &Template, field: ArrayView2<f64>, mut cache: Option<&mut ConvCache>) -> Array1<f64> {
        let act = self.config.activation;
        let mut h = field.to_owned();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            let ah = t.adjacency_norm.dot(&h);
            let z = ah.dot(&w.view2()) + b.view1();
            h = z.mapv(|x| act.apply(x));
            if let Some(c) = cache.as_deref_mut() {
                c.propagated.push(ah);
                c.pre_activation.push(z);
            }
        }
        if self.config.pool {
            h = pool_channels(&t.neighborhood_mean.dot(&h));
        }
        Array1::from_iter(h.iter().copied())
    }

    /// Pure forward pass for one field.
    pub fn forward(&self, t: &Template, field: ArrayView2<f64>) -> Array1<f64> {
        self.run(t, field, None)
    }

    /// Forward pass over a batch, caching what [`ConvStack::backward`] needs.
    pub fn forward_train(&mut self, t: &Template, fields: &[Array2<f64>]) -> Array2<f64> {
        let dim = self.feature_dim(t.vertex_count());
        let mut out = Array2::zeros((fields.len(), dim));
        let mut caches = Vec::with_capacity(fields.len());
        for (b, f) in fields.iter().enumerate() {
            let mut c = ConvCache {
                propagated: Vec::new(),
                pre_activation: Vec::new(),
            };
            let y = self.run(t, f.view(), Some(&mut c));
            out.row_mut(b).assign(&y);
            caches.push(c);
        }
        self.cache = caches;
        out
    }

    /// Accumulates parameter gradients from `d_out` (batch x feature_dim).
    pub fn backward(&mut self, t: &Template, d_out: &Array2<f64>) {
        let act = self.config.activation;
        let v = t.vertex_count();
        let caches = std::mem::take(&mut self.cache);
        let last = self.config.channels.len() - 1;
        for (b, c) in caches.iter().enumerate() {
            let mut dy = if self.config.pool {
                let d_pooled = d_out.row(b).to_owned().into_shape_with_order((v, self.config.out_channels())).unwrap();
                let d_mean = unpool_channels(&d_pooled);
                t.neighborhood_mean.t().dot(&d_mean)
            } else {
                d_out.row(b).to_owned().into_shape_with_order((v, self.config.channels[last])).unwrap()
            };
            for l in (0..=last).rev() {
                let z = &c.pre_activation[l];
                let dz = &dy * &z.mapv(|x| act.derivative(x));
                let dw = c.propagated[l].t().dot(&dz);
                self.weights[l].grad2().scaled_add(1.0, &dw);
                self.biases[l].grad1().scaled_add(1.0, &dz.sum_axis(Axis(0)));
                if l > 0 {
                    let d_ah = dz.dot(&self.weights[l].view2().t());
                    // A_hat is symmetric
                    dy = t.adjacency_norm.dot(&d_ah);
                }
            }
        }
    }
}

fn pool_channels(h: &Array2<f64>) -> Array2<f64> {
    let even = h.slice(s![.., 0..;2]);
    let odd = h.slice(s![.., 1..;2]);
    (&even + &odd) * 0.5
}

fn unpool_channels(d: &Array2<f64>) -> Array2<f64> {
    let (v, c) = d.dim();
    Array2::from_shape_fn((v, 2 * c), |(i, j)| 0.5 * d[[i, j / 2]])
}

/// Runs the stack on one gradient field.
pub fn conv_forward(t: &Template, field: &GradientField, params: &ConvStack) -> Result<FeatureVector> {
    if field.len() != t.vertex_count() {
        return Err(Error::DimensionMismatch {
            what: "gradient field",
            expected: t.vertex_count(),
            got: field.len(),
        });
    }
    Ok(FeatureVector(params.forward(t, field.to_array().view()).to_vec()))
}

/// Raw gradient feature followed by the convolution stack.
pub fn featurize(t: &Template, g: &ShapeGraph, k: &KernelConfig, params: &ConvStack) -> Result<FeatureVector> {
    let field = raw_feature(t, g, k)?;
    conv_forward(t, &field, params)
}
