//! A small neural-network toolkit with hand-written backpropagation, plus
//! the classifier/autoencoder models built on it.

mod adam;
pub mod io;
mod layers;
mod loss;
pub mod model;
mod param;
mod pointnet;
pub mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use layers::{BatchNorm, Dense, Layer, Mode, Relu, Sequential};
pub use loss::{argmax_rows, cross_entropy_loss, row_sums, softmax};
pub use model::{
    autoencoder_forward, mlp_classifier_forward, varifold_recon_loss, Encoder, EncoderInput, EncoderKind, Model,
    ModelConfig, Task,
};
pub use param::{Param, ParamSpec};
pub use pointnet::{pointnet_baseline_forward, vertices_array, PointNetEncoder};
pub use train::{
    evaluate, train_autoencoder, train_classifier, evaluate_dataset, train_prepared, EpochMetrics, Evaluation, PreparedSet, Targets, TrainConfig, TrainReport,
};
