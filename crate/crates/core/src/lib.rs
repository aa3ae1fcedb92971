//! Ensemble Kalman–Bucy filtering for linear-Gaussian and Lorenz models, with
//! normalizing-constant estimation and SPSA parameter learning.

// `!(x > 0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod enkbf;
pub mod error;
pub mod experiments;
pub mod kalman_reference;
pub mod linalg;
pub mod models;
pub mod num;
pub mod seeding;
pub mod spsa;
pub mod sum;

pub use enkbf::Variant;
pub use error::{Error, ErrorKind, Result};
pub use models::{Family, NoiseSpec};
pub use num::Real;

pub type LinearGaussianModel = models::LinearGaussianModel<f64>;
pub type NonlinearModel = models::NonlinearModel<f64>;
pub type Model = models::Model<f64>;
pub type ThetaMap = models::ThetaMap<f64>;
pub type PathPair = models::PathPair<f64>;
pub type InitialLaw = models::InitialLaw<f64>;
pub type KbState = kalman_reference::KbState<f64>;
pub type FilterVariant = enkbf::FilterVariant<f64>;
pub type Ensemble = enkbf::Ensemble<f64>;
pub type EnkbfRun = enkbf::EnkbfRun<f64>;
pub type MseStudyConfig = experiments::MseStudyConfig<f64>;
pub type SpsaConfig = spsa::SpsaConfig<f64>;
pub type RmlTrace = spsa::RmlTrace<f64>;
