//! The Siamese similarity metric: a small f64 tensor library, the shared
//! convolutional core, contrastive training with Adam and model files.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::gray::ImageError;

pub mod adam;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod metric;
pub mod model;
pub mod pairs;
pub mod persist;
pub mod tensor;
pub mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{contrastive_loss, Label};
pub use metric::{metric_evaluate, BoundMetric, Metric, MseMetric, SiameseMetric};
pub use model::{l2_distance, Architecture, LayerSpec, Network, SiameseModel, DEFAULT_MARGIN};
pub use pairs::{Pair, PairSet};
pub use persist::{load_model, save_model};
pub use tensor::Tensor;
pub use train::{train_metric, train_pairs, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{layer}: {message}")]
    Dimension { layer: String, message: String },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("malformed model file: {0}")]
    Format(String),
    #[error("unsupported model file version {0}")]
    Version(u32),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Image(#[from] ImageError),
}

impl NnError {
    pub fn dimension(layer: &str, message: impl Into<String>) -> Self {
        NnError::Dimension {
            layer: layer.to_string(),
            message: message.into(),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        NnError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
