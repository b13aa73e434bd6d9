//! Cross-covariance of divergence integrals `∫₀ᵗ F(B_τ) dB_τ` driven by a
//! fractional Brownian motion with Hurst index `H > 1/2`.
//!
//! The covariance of two such integrals is the double integral over
//! `[0,t]×[0,s]` of
//!
//! ```text
//! α_H · ( |τ−σ|^{2H−2} M(τ,σ) + γ(τ,σ) P(τ,σ) )
//! ```
//!
//! where `M = E F(B_τ)G(B_σ)`, `P` pairs the derivative measures `F'⊗G'`
//! against the joint density of `(B_τ, B_σ)`, and `γ` is an explicit weight.
//! The crate evaluates that formula ([`quadrature`]) for coefficients with
//! jumps ([`gclass`]), and checks it against exact-simulation Monte Carlo
//! ([`simulate`]), discretized Hilbert–Schmidt operator traces
//! ([`hs_operators`]) and closed forms ([`gauss_kernels`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod fbm_model;
pub mod funcspec;
pub mod gauss_kernels;
pub mod gclass;
pub mod hs_operators;
pub mod quadrature;
pub mod rules;
pub mod simulate;

pub use error::{Error, Result};
pub use fbm_model::{GridFunction, HurstParameter, TimeGrid};
pub use funcspec::parse_function_spec;
pub use gauss_kernels::BivariateGaussianSpec;
pub use gclass::{GFunction, MollifierFamily};
pub use hs_operators::KernelOperator;
pub use quadrature::{CovarianceResult, QuadratureConfig};
pub use simulate::{Generator, PathEnsemble, Seed};
