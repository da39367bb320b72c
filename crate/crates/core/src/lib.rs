//! Varifold-gradient (VariGrad) features for curves and shape graphs.
//!
//! A shape graph is lifted to a discrete varifold, compared with a fixed
//! template under a Gaussian-Binet kernel, and the gradient of that squared
//! distance with respect to the template vertices becomes a feature of
//! fixed size regardless of how the input was sampled. Graph convolutions
//! over the template connectivity turn the field into a flat feature vector
//! for downstream heads.
//!
//! - [`geometry`]: shape graphs, validation, IO, reparameterization
//! - [`varifold`]: lifting, kernel inner product, distance and its gradient
//! - [`varigrad`]: template, gradient-field features, graph convolutions
//! - [`nn`]: dense/batch-norm layers, Adam, classifier and autoencoder heads, PointNet baseline
//! - [`datasets`]: synthetic labeled curve and stick-figure families

pub mod datasets;
pub mod error;
pub mod geometry;
pub mod nn;
pub mod varifold;
pub mod varigrad;
pub mod vec3;

pub use error::{Error, Result};
pub use geometry::{ReparamSpec, ShapeGraph};
pub use varifold::{DiscreteVarifold, KernelConfig};
pub use varigrad::{ConvConfig, ConvStack, FeatureVector, GradientField, Template};
