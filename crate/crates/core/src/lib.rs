//! Human-in-the-loop OOD detection with a controlled false positive rate.
//!
//! A [`Controller`](controller::Controller) consumes a stream of OOD scores,
//! asks an expert for labels on the points it flags as OOD (and on a random
//! fraction `p` of the rest), and keeps its threshold at the smallest grid
//! point whose importance-weighted FPR estimate plus an anytime confidence
//! width stays below the target `α`.
//!
//! The [`harness`] module drives controllers over synthetic or file-backed
//! score streams and reports true FPR/TPR trajectories, feasibility and
//! optimality times, and change-detection times.

pub mod confidence;
pub mod controller;
pub mod error;
pub mod grid;
pub mod harness;
pub mod ledger;
pub mod normal;
pub mod par;
pub mod score_sources;
pub mod solver;

pub use confidence::{ConfidenceKind, ConfidencePolicy};
pub use controller::{Controller, ControllerConfig, GroundTruthOracle, LabelOracle, StepOutcome};
pub use error::{Error, Result};
pub use grid::ThresholdGrid;
pub use ledger::{EstimatorMode, FeedbackLedger, LedgerStats, WindowPolicy};
pub use score_sources::{GaussianSpec, Label, LabeledScore, ScorePool, ScoreSource, ScoreStream, StreamConfig, StreamPhase};
pub use solver::{solve, solve_linear, SolveResult};
