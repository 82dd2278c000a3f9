//! Voice pathology pipeline: waveform preprocessing, class-balancing
//! augmentation, rate-adaptive mel spectrograms, a compact residual CNN with
//! hand-written backpropagation, a two-stage gender-conditioned classifier,
//! and the evaluation and analysis suite around it.

pub mod analysis;
pub mod audio;
pub mod augment;
pub mod error;
pub mod features;
pub mod hierarchy;
pub mod ingest;
pub mod labels;
pub mod metrics;
pub mod nnet;

pub use error::{Error, Result};
