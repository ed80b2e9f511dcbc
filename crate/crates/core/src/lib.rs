//! Recurrent multimodal video classification.
//!
//! Frame-level visual and audio features are fused, encoded by stacked
//! (bi)directional LSTM or GRU layers, pooled by attention or last state,
//! and scored by a sigmoid head. Training uses Adam on a binary
//! cross-entropy loss; evaluation is GAP@k, and several models can be
//! combined with GAP-weighted ensembling.

#![allow(
    clippy::needless_range_loop,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::large_enum_variant
)]

pub mod attention;
pub mod cells;
pub mod checkpoint;
pub mod classifier;
pub mod data;
pub mod dataset_io;
pub mod encoder;
pub mod ensemble;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod optim;
pub mod params;
pub mod predictions;
pub mod train;

pub use classifier::LabelSet;
pub use data::{generate_synthetic, Dataset, DatasetHeader, DatasetSpec, FrameExample};
pub use ensemble::{ensemble_combine, ensemble_weights};
pub use error::{Error, Result};
pub use metrics::{gap_at_k, GapReport, GroundTruth, PredictionSet, DEFAULT_TOP_K};
pub use model::{compute_gradients, Model, ModelConfig, ModelParams};
pub use numeric::Matrix;
pub use params::ParamSet;
pub use train::{evaluate, predict_set, train, TrainConfig, Trainer};
