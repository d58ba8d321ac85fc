//! Sketched orthogonal gradient descent for continual learning.
//!
//! [`sketch`] maintains fixed-size randomized summaries of a gradient stream,
//! [`metric_bounds`] measures how well their extracted bases capture the
//! stream and evaluates the matching error bounds, and [`continual`] runs the
//! memory-budgeted learners on top of the small MLP in [`model`]. Dense
//! numerics live in [`linalg`].

pub mod continual;
pub mod linalg;
pub mod metric_bounds;
pub mod model;
pub mod rng;
pub mod sketch;

pub use continual::{train_continual, LearnerConfig, LearnerKind, PcaMode, RunResult, TaskSequence};
pub use linalg::DenseMatrix;
pub use model::{LabeledExample, MlpModel};
pub use sketch::{SketchMethod, SketchState};
