//! Conditional attribute control for 3D morphable face models.
//!
//! The crate covers a synthetic paired-data pipeline (a latent world with
//! known attribute hyperplanes, a generator to model parameters, and
//! analysis-by-synthesis fitting), the global rank-1 direction baseline, the
//! residual conditional controller, and the two evaluation protocols
//! (cross-validated L2 and Mahalanobis distance to a reference population).
//!
//! All numeric code is generic over [`Real`]; the `*64` aliases below fix
//! the scalar to `f64`, which is what the command line tool uses.

pub mod baseline;
pub mod config;
pub mod controller;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod fitting;
pub mod latent;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod scalar;
pub mod seeding;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Matrix64 = linalg::Matrix<f64>;
pub type MorphableBasis64 = model::MorphableBasis<f64>;
pub type FaceParams64 = model::FaceParams<f64>;
pub type LatentWorld64 = latent::LatentWorld<f64>;
pub type AttributeHyperplane64 = latent::AttributeHyperplane<f64>;
pub type PairedSample64 = latent::PairedSample<f64>;
pub type Controller64 = controller::Controller<f64>;
pub type GlobalDirection64 = baseline::GlobalDirection<f64>;
pub type PopulationStats64 = eval::PopulationStats<f64>;
pub type DatasetContainer64 = dataio::DatasetContainer<f64>;
