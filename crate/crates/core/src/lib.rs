//! Fair off-policy learning from observational data.
//!
//! The crate implements a two-step pipeline. Step one learns a representation
//! of the non-sensitive covariates that predicts the outcome while an
//! adversary fails to recover the sensitive attribute; any policy built on
//! top of it is action fair by construction. Step two trains a policy head by
//! maximizing an empirical policy value (direct method, inverse propensity
//! weighting or doubly robust scores), optionally penalized for envy between
//! groups or replaced by the worst group's value.
//!
//! Alongside the learners the crate ships the pieces needed to check results
//! at desk scale: a synthetic credit-lending simulator with ground truth,
//! closed-form toy problems with brute-force search, and a calculator for the
//! finite-sample generalization bounds of the three objectives.

pub mod data;
pub mod error;
pub mod experiment;
pub mod fairrep;
pub mod metrics;
pub mod nn;
pub mod nuisance;
pub mod policy;
pub mod rng;
pub mod scores;
pub mod theory;

pub use data::{Dataset, SimConfig, SimOracle, Standardizer};
pub use error::{Error, Result};
pub use fairrep::{FairRepHyper, FairRepModel, RepTrainReport};
pub use nn::{AdamConfig, AdamState, Head, Matrix, Mlp, Mode, NetHyper};
pub use nuisance::{NuisanceEstimates, NuisanceSource, OutcomeModel, PropensityModel};
pub use policy::{FrontEnd, Objective, PolicyFn, PolicyHyper, PolicyTrainReport, TrainedPolicy};
pub use scores::{ScoreMethod, ScoreVector, ValueReport};
