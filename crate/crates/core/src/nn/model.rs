//! Encoders (VariGrad graph convolutions or the point-set baseline) wired to
//! a classifier or autoencoder head.

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{vertices_array, AdamState, BatchNorm, Param, PointNetEncoder, Sequential};
use crate::error::{Error, Result};
use crate::geometry::ShapeGraph;
use crate::varifold::{self, KernelConfig};
use crate::varigrad::{raw_feature, ConvConfig, ConvStack, FeatureVector, Template};
use crate::vec3::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    VariGrad,
    PointNet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classifier,
    Autoencoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub task: Task,
    pub encoder: EncoderKind,
    pub conv: ConvConfig,
    pub pointnet_widths: Vec<usize>,
    /// Only used by the classifier.
    pub class_count: usize,
    pub classifier_hidden: Vec<usize>,
    pub encoder_hidden: usize,
    pub latent_dim: usize,
    pub decoder_hidden: usize,
    pub sigma_ratio: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(task: Task, encoder: EncoderKind) -> Self {
        ModelConfig {
            task,
            encoder,
            conv: ConvConfig::default(),
            pointnet_widths: PointNetEncoder::DEFAULT_WIDTHS.to_vec(),
            class_count: 2,
            classifier_hidden: vec![256, 128],
            encoder_hidden: 128,
            latent_dim: 64,
            decoder_hidden: 256,
            sigma_ratio: 0.2,
            bn_momentum: BatchNorm::DEFAULT_MOMENTUM,
            bn_eps: BatchNorm::DEFAULT_EPS,
            seed: 0,
        }
    }

    pub fn classifier(encoder: EncoderKind, class_count: usize) -> Self {
        ModelConfig {
            class_count,
            ..ModelConfig::new(Task::Classifier, encoder)
        }
    }

    pub fn autoencoder(encoder: EncoderKind) -> Self {
        ModelConfig::new(Task::Autoencoder, encoder)
    }

    pub fn check(&self) -> Result<()> {
        self.conv.check()?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.pointnet_widths.is_empty() || self.pointnet_widths.contains(&0) {
            return bad("pointnet widths must be non-empty and positive");
        }
        if self.task == Task::Classifier && self.class_count < 2 {
            return Err(Error::SingleClass);
        }
        if self.classifier_hidden.contains(&0) || self.encoder_hidden == 0 || self.latent_dim == 0 || self.decoder_hidden == 0 {
            return bad("layer widths must be positive");
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) || !(self.bn_eps > 0.0) {
            return bad("batch-norm momentum must be in (0, 1) and eps positive");
        }
        if !(self.sigma_ratio > 0.0 && self.sigma_ratio.is_finite()) {
            return bad("sigma ratio must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum Encoder {
    VariGrad(ConvStack),
    PointNet(PointNetEncoder),
}

/// What an encoder consumes for one shape: the template gradient field
/// (`|V_T| x 3`) or the raw vertex coordinates (`|V| x 3`).
#[derive(Debug, Clone, PartialEq)]
pub enum EncoderInput {
    Field(Array2<f64>),
    Points(Array2<f64>),
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub template: Template,
    pub kernel: KernelConfig,
    pub encoder: Encoder,
    pub head: Sequential,
    pub optimizer: AdamState,
}

impl Model {
    /// Fresh model with weights drawn from `config.seed`.
    pub fn new(config: ModelConfig, template: Template, kernel: KernelConfig) -> Result<Self> {
        config.check()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let encoder = match config.encoder {
            EncoderKind::VariGrad => Encoder::VariGrad(ConvStack::new(config.conv.clone(), &mut rng)?),
            EncoderKind::PointNet => Encoder::PointNet(PointNetEncoder::new(&config.pointnet_widths, &mut rng)),
        };
        let n = match &encoder {
            Encoder::VariGrad(c) => c.feature_dim(template.vertex_count()),
            Encoder::PointNet(p) => p.feature_dim(),
        };
        let bn = Some((config.bn_momentum, config.bn_eps));
        let head = match config.task {
            Task::Classifier => {
                let mut widths = vec![n];
                widths.extend(&config.classifier_hidden);
                widths.push(config.class_count);
                Sequential::mlp("classifier", &widths, bn, &mut rng)
            }
            Task::Autoencoder => {
                let enc = Sequential::mlp("encoder", &[n, config.encoder_hidden, config.latent_dim], bn, &mut rng);
                let dec = Sequential::mlp(
                    "decoder",
                    &[config.latent_dim, config.decoder_hidden, 3 * template.vertex_count()],
                    bn,
                    &mut rng,
                );
                Sequential {
                    layers: enc.layers.into_iter().chain(dec.layers).collect(),
                }
            }
        };
        Ok(Model {
            config,
            template,
            kernel,
            encoder,
            head,
            optimizer: AdamState::default(),
        })
    }

    /// Builds the template from `template_shape` and the kernel from `config.sigma_ratio`.
    pub fn from_template_shape(config: ModelConfig, template_shape: ShapeGraph) -> Result<Self> {
        let kernel = varifold::default_kernel(&template_shape, config.sigma_ratio)?;
        Model::new(config, Template::new(template_shape)?, kernel)
    }

    pub fn feature_dim(&self) -> usize {
        match &self.encoder {
            Encoder::VariGrad(c) => c.feature_dim(self.template.vertex_count()),
            Encoder::PointNet(p) => p.feature_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self.config.task {
            Task::Classifier => self.config.class_count,
            Task::Autoencoder => 3 * self.template.vertex_count(),
        }
    }

    /// The parameter-independent part of the encoder. For VariGrad this is
    /// the (expensive) raw gradient field, computed once per shape.
    pub fn prepare(&self, g: &ShapeGraph) -> Result<EncoderInput> {
        Ok(match self.config.encoder {
            EncoderKind::VariGrad => EncoderInput::Field(raw_feature(&self.template, g, &self.kernel)?.to_array()),
            EncoderKind::PointNet => EncoderInput::Points(vertices_array(g)),
        })
    }

    /// [`Model::prepare`] over many shapes on the rayon pool; order is preserved.
    pub fn prepare_all(&self, shapes: &[ShapeGraph]) -> Result<Vec<EncoderInput>> {
        shapes.par_iter().map(|g| self.prepare(g)).collect()
    }

    fn encode_one(&self, input: &EncoderInput) -> Result<Array1<f64>> {
        match (&self.encoder, input) {
            (Encoder::VariGrad(c), EncoderInput::Field(f)) => {
                if f.dim() != (self.template.vertex_count(), 3) {
                    return Err(Error::DimensionMismatch {
                        what: "gradient field rows",
                        expected: self.template.vertex_count(),
                        got: f.nrows(),
                    });
                }
                Ok(c.forward(&self.template, f.view()))
            }
            (Encoder::PointNet(p), EncoderInput::Points(x)) => Ok(p.forward(x.view())),
            _ => Err(Error::InvalidConfig("encoder input does not match encoder kind".into())),
        }
    }

    /// Eval-mode features, one row per input.
    pub fn encode(&self, inputs: &[EncoderInput]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((inputs.len(), self.feature_dim()));
        for (row, input) in out.rows_mut().into_iter().zip(inputs) {
            let mut row = row;
            row.assign(&self.encode_one(input)?);
        }
        Ok(out)
    }

    pub fn head_forward_eval(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.feature_dim() {
            return Err(Error::DimensionMismatch {
                what: "feature dimension",
                expected: self.feature_dim(),
                got: features.ncols(),
            });
        }
        Ok(self.head.forward_eval(features))
    }

    /// Eval-mode outputs (logits or flattened vertices), one row per input.
    pub fn forward_eval(&self, inputs: &[EncoderInput]) -> Result<Array2<f64>> {
        self.head_forward_eval(&self.encode(inputs)?)
    }

    /// Train-mode forward pass caching activations for [`Model::backward`].
    pub fn forward_train(&mut self, inputs: &[EncoderInput]) -> Result<Array2<f64>> {
        let features = match &mut self.encoder {
            Encoder::VariGrad(c) => {
                let fields = inputs
                    .iter()
                    .map(|i| match i {
                        EncoderInput::Field(f) => Ok(f.clone()),
                        EncoderInput::Points(_) => Err(Error::InvalidConfig("expected gradient fields".into())),
                    })
                    .collect::<Result<Vec<_>>>()?;
                c.forward_train(&self.template, &fields)
            }
            Encoder::PointNet(p) => {
                let points = inputs
                    .iter()
                    .map(|i| match i {
                        EncoderInput::Points(x) => Ok(x.clone()),
                        EncoderInput::Field(_) => Err(Error::InvalidConfig("expected vertex arrays".into())),
                    })
                    .collect::<Result<Vec<_>>>()?;
                p.forward_train(&points)
            }
        };
        Ok(self.head.forward_train(features))
    }

    /// Accumulates gradients for every trainable block from `d_out`.
    pub fn backward(&mut self, d_out: &Array2<f64>) {
        let d_features = self.head.backward(d_out);
        match &mut self.encoder {
            Encoder::VariGrad(c) => c.backward(&self.template, &d_features),
            Encoder::PointNet(p) => p.backward(&d_features),
        }
    }

    /// Encoder blocks first, then head blocks; this is the serialization order.
    pub fn params(&self) -> Vec<&Param> {
        let mut out = match &self.encoder {
            Encoder::VariGrad(c) => c.params(),
            Encoder::PointNet(p) => p.params(),
        };
        out.extend(self.head.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = match &mut self.encoder {
            Encoder::VariGrad(c) => c.params_mut(),
            Encoder::PointNet(p) => p.params_mut(),
        };
        out.extend(self.head.params_mut());
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    /// Decoder output row as a shape on the template connectivity (not validated).
    pub fn output_shape(&self, row: &[f64]) -> ShapeGraph {
        ShapeGraph::new(row_to_vertices(row), self.template.shape().edges.clone())
    }

    /// Eval-mode reconstruction of one shape (autoencoder only).
    pub fn reconstruct(&self, g: &ShapeGraph) -> Result<ShapeGraph> {
        if self.config.task != Task::Autoencoder {
            return Err(Error::InvalidConfig("reconstruct needs an autoencoder".into()));
        }
        let out = self.forward_eval(&[self.prepare(g)?])?;
        Ok(self.output_shape(out.row(0).as_slice().expect("contiguous row")))
    }
}

pub fn row_to_vertices(row: &[f64]) -> Vec<Vec3> {
    row.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

fn features_matrix(features: &[FeatureVector]) -> Result<Array2<f64>> {
    let dim = features.first().map_or(0, |f| f.len());
    let mut m = Array2::zeros((features.len(), dim));
    for (mut row, f) in m.axis_iter_mut(Axis(0)).zip(features) {
        if f.len() != dim {
            return Err(Error::DimensionMismatch {
                what: "feature dimension",
                expected: dim,
                got: f.len(),
            });
        }
        row.assign(&ndarray::ArrayView1::from(&f.0[..]));
    }
    Ok(m)
}

/// Classifier logits for a batch of features (eval mode).
pub fn mlp_classifier_forward(features: &[FeatureVector], model: &Model) -> Result<Array2<f64>> {
    if model.config.task != Task::Classifier {
        return Err(Error::InvalidConfig("model is not a classifier".into()));
    }
    model.head_forward_eval(&features_matrix(features)?)
}

/// Decoded shape for one feature vector, carrying the template connectivity.
pub fn autoencoder_forward(features: &FeatureVector, model: &Model) -> Result<ShapeGraph> {
    if model.config.task != Task::Autoencoder {
        return Err(Error::InvalidConfig("model is not an autoencoder".into()));
    }
    let out = model.head_forward_eval(&features_matrix(std::slice::from_ref(features))?)?;
    Ok(model.output_shape(out.row(0).as_slice().expect("contiguous row")))
}

/// `dist_sq(output, target)` and its gradient with respect to the output
/// vertices. The output is not validated; near-zero edges are mass-clamped.
pub fn varifold_recon_loss(output: &ShapeGraph, target: &ShapeGraph, k: &KernelConfig) -> Result<(f64, Vec<Vec3>)> {
    let nu = varifold::lift(target)?;
    Ok(varifold::recon_loss_and_grad(&output.vertices, &output.edges, &nu, k))
}
