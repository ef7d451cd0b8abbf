//! Urban vibrancy analysis: per-cell app-usage signatures over a city grid,
//! time-series k-means on those signatures, third-place POI covariates and a
//! regularized multinomial logit linking the two.
//!
//! Numeric stages are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the `f64` flavour used by the command-line pipeline.

pub mod clustering;
pub mod features;
pub mod grid;
pub mod ingest;
pub mod model;
mod scalar;
pub mod signatures;
pub mod synth;

pub use scalar::Scalar;

pub type Tensor = signatures::SignatureTensor<f64>;
pub type RiskTensor = signatures::NormalizedTensor<f64>;
pub type Clusters = clustering::ClusterModel<f64>;
pub type Features = features::FeatureTable<f64>;
pub type Logit = model::MultinomialLogit<f64>;
