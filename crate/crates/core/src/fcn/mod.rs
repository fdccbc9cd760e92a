//! Per-pixel layer classifier: a small fully convolutional network with
//! dense connectivity, its loss, training loop, gradient verification and
//! checkpoint format.

pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
pub mod network;
pub mod ops;
pub mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use gradcheck::{compare_gradient, gradient_check, GradCheckReport, Probe};
pub use loss::{predict_labels, weighted_cross_entropy, weighted_nll_terms, LossOutput};
pub use network::{BlockSpec, Network, NetworkConfig, ParamGroup, Parameters};
pub use ops::{Activation, Tensor};
pub use train::{
    class_weights, pixel_accuracy, train, train_from, Optimizer, Schedule, TrainOutcome, TrainingConfig, TrainingSample,
};
