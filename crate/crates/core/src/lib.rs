//! Kernelized single-index ε-greedy contextual bandit with parametric
//! directional inference and nonparametric pointwise intervals.

mod error;

pub mod cli;
pub mod config;
pub mod environment;
pub mod harness;
pub mod index;
pub mod index_inference;
pub mod infer;
pub mod kernel_ridge;
pub mod log;
pub mod np_inference;
pub mod numerics;
pub mod policy;
pub mod score;

pub use error::{Error, Result};
