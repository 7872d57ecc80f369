//! Convolutional network engine: layers with hand-written backward passes,
//! model assembly, loss, optimizer, checkpoints and gradient checking.
//!
//! The engine is generic over [`Scalar`]; training uses `f32` and the
//! gradient checks run the same code in `f64`.

mod checkpoint;
mod gradcheck;
mod layers;
mod loss;
mod model;
mod optim;
mod scalar;
mod spec;
mod tensor;

pub use checkpoint::{EpochRecord, ModelCheckpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{
    finite_difference_check, gradcheck_suite, layer_gradient_check, relative_error, Coverage, GradCheckConfig,
    GradCheckReport, SuiteResult,
};
pub use layers::*;
pub use loss::{one_hot, softmax, softmax_cross_entropy, LossOutput};
pub use model::{build_dual_cnn, sgd_update, Model};
pub use optim::{LrScheduler, TrainConfig};
pub use scalar::Scalar;
pub use spec::{build_single_cnn, build_single_cnn_with, dual_cnn_spec, CnnConfig, LayerSpec, ModelSpec};
pub use tensor::Tensor;
