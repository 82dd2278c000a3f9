//! Compact residual CNN with hand-written backpropagation, Adam and
//! cross-entropy, plus grid-search training and checkpoints.

mod adam;
mod checkpoint;
pub mod gradcheck;
pub mod layers;
mod loss;
mod model;
mod tensor;
mod train;

pub use adam::AdamState;
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use loss::{argmax, cross_entropy, logits_grad, one_hot, sample_cross_entropy, softmax, LOG_EPS};
pub use model::{ArchSpec, CompactResNet, ForwardOutput, ParamTensor, Tap, Trace};
pub use tensor::Tensor;
pub use train::{
    fit, stratified_folds, train, EpochStats, GridResult, HyperGrid, Hyperparams, TrainConfig,
    TrainHistory, TrainedModel,
};
