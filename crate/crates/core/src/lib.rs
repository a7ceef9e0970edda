#![allow(clippy::excessive_precision, clippy::neg_cmp_op_on_partial_ord)]

pub mod density1d;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod linalg;
pub mod margin;
pub mod oracle;
pub mod quadrature;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};
