//! Tree-partitioned recursive feature machines for tabular data.
//!
//! A balanced binary tree splits the data at the median projection onto the
//! top eigenvector of a split model's average gradient outer product (AGOP).
//! Each leaf carries its own recursive feature machine: kernel ridge
//! regression alternated with AGOP re-weighting of the inputs.

pub mod data;
pub mod error;
pub mod kernels;
pub mod leaf_rfm;
pub mod linalg;
pub mod metrics;
pub mod tree;
pub mod tuning;

pub use error::{Result, XrfmError};
pub use linalg::Matrix;
