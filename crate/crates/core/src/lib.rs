//! Asynchronous randomized block-coordinate fixed-point iteration.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blockvec;
pub mod delays;
pub mod error;
pub mod linalg;
pub mod operators;
pub mod parallel;
pub mod rng;
pub mod stepsize;
pub mod lyapunov;
pub mod engine;
pub mod harness;

pub use blockvec::{BlockLayout, BlockVector, DelayVector, IterateHistory};
pub use delays::{DelayKind, DelayModel, TailDistribution};
pub use engine::{run, RunConfig, RunFailure, RunMode, RunResult, Trace, TraceRow};
pub use error::{Error, Result};
pub use operators::{FixedPointProblem, OperatorKind, OperatorSpec};
pub use parallel::Execution;
pub use stepsize::{EpsilonSequence, StepSizePolicy};
