//! Numerical core for similarity-based dynamic prediction with joint
//! longitudinal and time-to-event models.
//!
//! The crate is `no_std` (it needs `alloc`). Everything that touches files,
//! threads, or the command line lives in the companion `jdp` crate.
//!
//! Module map:
//!
//! - [`dataset`]: cohorts of biomarker measurements plus survival records,
//!   fold splits, history truncation, stratified sampling.
//! - [`simgen`]: synthetic cohorts from the Weibull/linear-trajectory design,
//!   with a closed-form and a quadrature-based event-time generator.
//! - [`lme`]: random intercept + slope linear mixed-effects model (ML).
//! - [`jointfit`]: Bayesian joint model with a B-spline log-baseline hazard,
//!   fitted by adaptive Metropolis-within-Gibbs.
//! - [`dynpred`]: dynamic survival probabilities `pi(u | t)`.
//! - [`fpca`]: PACE-style functional principal components.
//! - [`similarity`]: feature vectors, cosine similarity, subpopulations.
//! - [`scoring`]: censoring-corrected Brier score and CV summaries.
//! - [`tuner`]: personalized prediction, fold evaluation, `M_p` tuning.

#![no_std]
// `!(x > 0.0)` style guards deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod dataset;
pub mod dynpred;
pub mod fpca;
pub mod jointfit;
pub mod lme;
pub mod math;
pub mod quadrature;
pub mod scoring;
pub mod seed;
pub mod similarity;
pub mod simgen;
pub mod tuner;

pub use dataset::{Cohort, FoldAssignment, LongitudinalRecord, Subject, SurvivalRecord};
pub use dynpred::{PredictionRequest, PredictionResult};
pub use fpca::FpcaModel;
pub use jointfit::{BaselineHazardSpline, JointModelFit, JointModelSpec, McmcConfig};
pub use lme::LmeFit;
pub use scoring::{BrierEstimate, SubjectLoss};
pub use simgen::{EventParams, GeneratorMode, LongitudinalParams, ScenarioConfig};
pub use tuner::{TuningConfig, TuningReport};
