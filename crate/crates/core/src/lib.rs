//! Numerical estimates of invariant metrics in several complex variables.
//!
//! The crate bounds the infinitesimal Kobayashi and Carathéodory metrics,
//! the Kobayashi/Carathéodory volume elements and their quotient, and
//! disc-chain Kobayashi distances on a small family of model domains
//! (ball, polydisc, egg, the two-branch domain `{|z|<2, |w|<2, |zw|<ε}` and
//! the stretched ball). Every quantity is reported as an upper bound, a lower
//! bound, or an exact closed-form value, together with the witness that
//! certifies it.

// `!(x < y)` comparisons deliberately reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chains;
pub mod dbar;
pub mod discs;
pub mod domains;
pub mod error;
pub mod harness;
pub mod invariants;
pub mod maps;
pub mod metrics;
pub mod optimize;
pub mod sampling;
pub mod series;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// Euclidean norm of a complex vector.
pub fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// Hermitian product `Σ a_j conj(b_j)`.
pub fn hdot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x * y.conj()).sum()
}
