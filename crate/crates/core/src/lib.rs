//! Treatment ranking for multi-arm randomized trials.
//!
//! Therapy-level gradient-boosted models are trained on arm-adjusted
//! improvement targets, with missing patient/arm outcomes filled by
//! similarity-weighted nearest neighbours. Arms are scored by restricted
//! confidence-weighted voting of their component models.

pub mod adjust;
pub mod counterfactual;
pub mod ensemble;
pub mod error;
pub mod gbtree;
pub mod model;
pub mod presets;
pub mod seeding;
pub mod synth;
pub mod validate;

pub use ensemble::{EnsembleModel, EnsembleSettings, Ranker, TreatmentRanking};
pub use error::{Error, Result};
pub use model::{Arm, Dataset, Feature, FeatureKind, FeatureSpace, PatientRecord, StudyConfig, Therapy};
