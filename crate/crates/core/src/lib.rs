//! Speech-language role-play model at desk scale.

pub mod audio;
pub mod autograd;
pub mod corpus;
pub mod dsp;
pub mod error;
pub mod nn;
pub mod params;
pub mod prompt;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod tokenizer;
pub mod types;
pub mod decode;
pub mod frontend;
pub mod language;
pub mod matrix_io;
pub mod speech_decoder;
pub mod synthesis;
pub mod model;
pub mod config;
pub mod training;
pub mod checkpoint;
pub mod data;
pub mod respond;
pub mod toy;

pub use error::{CoreError, Result};
pub use scalar::Scalar;
pub use tensor::Matrix;

pub type MatrixF32 = tensor::Matrix<f32>;
pub type MatrixF64 = tensor::Matrix<f64>;
pub type ParamSetF32 = params::ParamSet<f32>;
pub type ParamSetF64 = params::ParamSet<f64>;
pub type ModelParamsF32 = model::ModelParams<f32>;
pub type ModelParamsF64 = model::ModelParams<f64>;
pub type CheckpointF32 = training::Checkpoint<f32>;
pub type CheckpointF64 = training::Checkpoint<f64>;
