//! Dynamic structural specialization for salient object detection.

pub mod ablation;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod selfcheck;
pub mod supervision;
pub mod tensor;
pub mod train;

pub use config::RunConfig;
pub use autodiff::{Graph, Var};
pub use error::{Error, Result};
pub use model::{BranchMode, CoordinationMode, DecoderMode, DssNet, Features, ModelConfig};
pub use nn::{ParamStore, Session};
pub use tensor::{Precision, Scalar, Tensor};
