// Negated comparisons are used on purpose so that NaN fails range checks;
// tabulated constants keep their published digits.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod blockquant;
pub mod codebook;
pub mod distributions;
pub mod error;
pub mod montecarlo;
pub mod quadrature;

pub use error::{Error, ErrorClass, Result};
