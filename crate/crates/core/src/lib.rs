//! Dense point–pixel–text alignment for open-vocabulary 3D segmentation.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`, which is what the CLI and the
//! gradient checks use.

pub mod association;
pub mod embedding;
pub mod error;
pub mod evaluation;
mod format;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod scene;
pub mod synth;
pub mod text;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Point3D = scene::Point3D<f64>;
pub type PointCloud = scene::PointCloud<f64>;
pub type CameraView = scene::CameraView<f64>;
pub type Scene = scene::Scene<f64>;
pub type EmbeddingVector = embedding::EmbeddingVector<f64>;
pub type EmbeddingBank = embedding::EmbeddingBank<f64>;
pub type FeatureMap2D = embedding::FeatureMap2D<f64>;
pub type ScoreMap2D = association::ScoreMap2D<f64>;
pub type PointScores3D = association::PointScores3D<f64>;
pub type FusedPointFeatures = association::FusedPointFeatures<f64>;
pub type AssociationConfig = association::AssociationConfig<f64>;
pub type PointFeatureModel = trainer::PointFeatureModel<f64>;
pub type Supervision = trainer::Supervision<f64>;
pub type TrainConfig = trainer::TrainConfig<f64>;
pub type LossBreakdown = trainer::LossBreakdown<f64>;
pub type SynthScene = synth::SynthScene<f64>;
pub type LabelSet = pipeline::LabelSet<f64>;
pub type LabelConfig = pipeline::LabelConfig<f64>;
pub type RunConfig = pipeline::RunConfig<f64>;
