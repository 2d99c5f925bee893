//! Budget-constrained test prioritization.
//!
//! Candidates for testing are ranked by a risk score; each period's capacity
//! is split between the top-ranked candidates (exploitation) and a sample
//! drawn for information value (exploration: uniform or Thompson sampling
//! over expert-defined arms). Revealed results feed the next retraining.
//!
//! - [`records`]: input schema, featurization, week assignment
//! - [`synthgen`]: synthetic cohorts from a planted logistic model
//! - [`scoring`]: rule-based, linear and degree-2 rankers
//! - [`policy`]: budget split and selection
//! - [`simulate`]: period-by-period replay and offline experiments
//! - [`evaluate`]: recall/precision/F1 at K, correlations, bootstrap CI

pub mod evaluate;
pub mod kv;
pub mod par;
pub mod policy;
pub mod records;
pub mod scoring;
pub mod seed;
pub mod simulate;
pub mod synthgen;

pub use par::Execution;
pub use records::{Candidate, Cohort, FeatureVector, Period, RecordId, TestRecord};
pub use scoring::{ModelKind, RiskModel, Scorer};
