//! Structured sparse coding and modeling.
//!
//! The crate covers three layers:
//!
//! * exact solvers for Lasso, group Lasso and two-level hierarchical Lasso
//!   (HiLasso) problems: forward-backward splitting (ISTA), block-coordinate
//!   forward-backward (BCoFB) and coordinate descent (CoD);
//! * learnable encoders obtained by unrolling a fixed number of BCoFB
//!   iterations, with exact backpropagation and Armijo-safeguarded training
//!   against regression, objective-value and discriminative losses;
//! * online sparse modeling, where the encoder and the dictionary are adapted
//!   on streaming data without ever running an iterative solver.
//!
//! The [`harness`] module holds synthetic data generators, classification
//! protocols, benchmarks, experiment drivers and the on-disk formats used by
//! the `structsparse` command line tool.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod modeling;
pub mod network;
pub mod objective;
pub mod problem;
pub mod prox;
pub mod solvers;
pub mod training;

pub use error::{Error, Result};
pub use network::{EncoderParams, ForwardTrace, LayerParams, Tying};
pub use objective::{eval_objective, step_scale, StepMode, StepScale};
pub use problem::{Dictionary, GroupStructure, ProblemInstance, SparseCode};
pub use prox::{prox_group, prox_hilasso, soft_threshold, ThresholdPair};
pub use solvers::{bcofb_solve, cod_solve, ista_solve, optimality_residual, SolveResult, SolverConfig};
pub use training::{DescentConfig, Gradients, LossKind, LossSpec};
