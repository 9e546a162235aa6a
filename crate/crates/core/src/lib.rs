//! Selective weak-to-strong generalization laboratory.
//!
//! A weak supervisor labels data for a stronger student; the student learns
//! to predict whether it already knows an answer (P(IK)), trains on its own
//! hardened predictions where it does, and on graph-smoothed weak labels
//! where it does not. The [`pipeline`] module runs the full protocol with
//! baselines, ablations and reports.
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix the
//! precision for the common cases.

pub mod dataset;
pub mod error;
pub mod learner;
pub mod losses;
pub mod pik;
pub mod pipeline;
pub mod scalar;
pub mod selective;
pub mod smooth;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Corpus64 = dataset::Corpus<f64>;
pub type Corpus32 = dataset::Corpus<f32>;
pub type Sample64 = dataset::Sample<f64>;
pub type Sample32 = dataset::Sample<f32>;
pub type SoftLabel64 = dataset::SoftLabel<f64>;
pub type SoftLabel32 = dataset::SoftLabel<f32>;
pub type Learner64 = learner::LearnerState<f64>;
pub type Learner32 = learner::LearnerState<f32>;
pub type GraphBatch64 = smooth::GraphBatch<f64>;
pub type GraphBatch32 = smooth::GraphBatch<f32>;
