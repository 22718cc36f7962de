pub mod error;
pub mod scalar;
pub mod sobol;
pub mod spectra;
pub mod synthesis;
pub mod preprocess;
pub mod nn;
pub mod models;
pub mod bayesopt;
pub mod evaluation;
pub mod io;
pub mod cli;

pub use error::{Error, Result};
pub use scalar::Real;

/// Single-precision network stack (the training default).
pub type Tensor32 = nn::Tensor<f32>;
pub type Sequential32 = nn::Sequential<f32>;
pub type Yae32 = models::Yae<f32>;
pub type TrainedModel32 = models::TrainedModel<f32>;

/// Double-precision network stack (used for gradient checks).
pub type Tensor64 = nn::Tensor<f64>;
pub type Sequential64 = nn::Sequential<f64>;
pub type Yae64 = models::Yae<f64>;
pub type TrainedModel64 = models::TrainedModel<f64>;
