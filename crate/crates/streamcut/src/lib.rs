//! Changepoint detection and description scoring for visual streams.
//!
//! A visual stream is an ordered image sequence with at most one relevant
//! change; frames appear here only as indices. The crate takes *pairwise
//! change statistics* (and optional hidden representations of the perceived
//! change) as input, scores every candidate changepoint with step-wise,
//! graph-cut, and consistency-regularized scores, and evaluates detections
//! with windowed precision-recall. A seeded simulator stands in for the
//! neural statistic providers, and a toy differentiable generator /
//! discriminator pair exercises the full semi-supervised caption loss stack
//! at desk scale.
//!
//! Everything is deterministic given explicit seeds; file outputs are
//! byte-identical across runs.

pub mod detect;
pub mod eval;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod mine;
pub mod model;
pub mod sim;
pub mod toy;
pub mod scalar;
pub mod seeding;

pub use scalar::Scalar;

/// Double-precision stat table, the type the file formats exchange.
pub type StatTable64 = model::StatTable<f64>;
/// Double-precision detection result.
pub type DetectionResult64 = model::DetectionResult<f64>;
/// Double-precision score parameters.
pub type RcParams64 = detect::RcParams<f64>;
/// Double-precision simulator configuration.
pub type SimConfig64 = sim::SimConfig<f64>;
/// Double-precision evaluation report.
pub type EvalReport64 = eval::EvalReport<f64>;
