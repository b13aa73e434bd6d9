//! Fixtures shared by the benchmarks.

use fbmxcov::{GFunction, HurstParameter, QuadratureConfig};

pub fn hurst(h: f64) -> HurstParameter {
    HurstParameter::new(h).expect("valid Hurst parameter")
}

/// Coefficient pairs covering the smooth, polynomial and jump code paths.
pub fn coefficient_pairs() -> Vec<(&'static str, GFunction, GFunction)> {
    vec![
        ("const", GFunction::constant(1.0), GFunction::constant(1.0)),
        ("id", GFunction::identity(), GFunction::identity()),
        ("sin_tanh", GFunction::sin(), GFunction::tanh()),
        ("sgn", GFunction::sgn(), GFunction::sgn()),
    ]
}

pub fn quadrature() -> QuadratureConfig {
    QuadratureConfig::default()
}
