pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod explain;
pub mod gradcheck;
pub mod heads;
pub mod label_attention;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod params;
pub mod synthetic;
pub mod tensor;
pub mod tokenizer;
pub mod training;

pub use config::{AttentionScale, Mode, ModelConfig, TaskMode};
pub use error::{LameError, Result};
pub use model::{LameModel, PredictionValues};
pub use tensor::{Tape, Tensor, Var};
