//! Pathwise Young sums and divergence integrals along sampled paths.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbm_model::{HurstParameter, TimeGrid};
use crate::gclass::GFunction;
use crate::rules::KahanSum;

/// Riemann–Stieltjes point rule for the Young sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum YoungRule {
    /// `Σ F(B_{t_k}) ΔB_k`.
    LeftPoint,
    /// `Σ ½(F(B_{t_k}) + F(B_{t_{k+1}})) ΔB_k`.
    #[default]
    Trapezoid,
}

impl std::str::FromStr for YoungRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "leftpoint" => Ok(YoungRule::LeftPoint),
            "trapezoid" => Ok(YoungRule::Trapezoid),
            other => Err(Error::InvalidArgument(format!(
                "unknown Young rule `{other}` (expected leftpoint or trapezoid)"
            ))),
        }
    }
}

/// `young_part − correction_part`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceSample {
    pub young_part: f64,
    pub correction_part: f64,
    pub value: f64,
}

impl DivergenceSample {
    pub fn new(young_part: f64, correction_part: f64) -> Self {
        Self {
            young_part,
            correction_part,
            value: young_part - correction_part,
        }
    }
}

fn end_index(grid: &TimeGrid, path: &[f64], t: f64) -> Result<usize> {
    if path.len() != grid.nodes().len() {
        return Err(Error::GridMismatch(format!(
            "{} path values for {} nodes",
            path.len(),
            grid.nodes().len()
        )));
    }
    grid.node_index(t)
        .ok_or_else(|| Error::InvalidArgument(format!("t = {t} is not a grid node")))
}

/// Left-point sum `Σ_{t_k < t} F(B_{t_k})(B_{t_{k+1}} − B_{t_k})`.
pub fn young_integral(f: &GFunction, grid: &TimeGrid, path: &[f64], t: f64) -> Result<f64> {
    young_integral_with(f, grid, path, t, YoungRule::LeftPoint)
}

pub fn young_integral_with(
    f: &GFunction,
    grid: &TimeGrid,
    path: &[f64],
    t: f64,
    rule: YoungRule,
) -> Result<f64> {
    let end = end_index(grid, path, t)?;
    Ok(young_sum(|x| f.evaluate(x), &path[..=end], rule))
}

pub(crate) fn young_sum(f: impl Fn(f64) -> f64, path: &[f64], rule: YoungRule) -> f64 {
    let mut acc = KahanSum::default();
    let mut prev = f(path[0]);
    for w in path.windows(2) {
        let next = f(w[1]);
        let weight = match rule {
            YoungRule::LeftPoint => prev,
            YoungRule::Trapezoid => 0.5 * (prev + next),
        };
        acc.add(weight * (w[1] - w[0]));
        prev = next;
    }
    acc.value()
}

/// `H ∫₀ᵗ F'(B_r) r^{2H−1} dr` by the trapezoid rule on the grid nodes.
pub(crate) fn correction_sum(
    df: impl Fn(f64) -> f64,
    nodes: &[f64],
    path: &[f64],
    h: HurstParameter,
) -> f64 {
    let q = h.two_h_minus_one();
    let mut acc = KahanSum::default();
    let g = |k: usize| df(path[k]) * nodes[k].powf(q);
    let mut prev = g(0);
    for k in 1..path.len() {
        let next = g(k);
        acc.add(0.5 * (prev + next) * (nodes[k] - nodes[k - 1]));
        prev = next;
    }
    h.value() * acc.value()
}

/// `δ(F(B)1_{[0,t]})` along one path: the Young sum minus
/// `H ∫₀ᵗ F'(B_r) r^{2H−1} dr`. Uses the trapezoid Young sum.
pub fn divergence_integral(
    f: &GFunction,
    grid: &TimeGrid,
    path: &[f64],
    t: f64,
    h: HurstParameter,
) -> Result<DivergenceSample> {
    divergence_integral_with(f, grid, path, t, h, YoungRule::Trapezoid)
}

pub fn divergence_integral_with(
    f: &GFunction,
    grid: &TimeGrid,
    path: &[f64],
    t: f64,
    h: HurstParameter,
    rule: YoungRule,
) -> Result<DivergenceSample> {
    check_divergence_args(f, h)?;
    let end = end_index(grid, path, t)?;
    let path = &path[..=end];
    let young = young_sum(|x| f.evaluate(x), path, rule);
    let corr = correction_sum(|x| f.ac_derivative(x), &grid.nodes()[..=end], path, h);
    Ok(DivergenceSample::new(young, corr))
}

pub(crate) fn check_divergence_args(f: &GFunction, h: HurstParameter) -> Result<()> {
    if f.has_atoms() {
        return Err(Error::AtomsNotSupported(
            "the divergence correction needs F′ as a function; mollify F (see the mollified ladder)"
                .into(),
        ));
    }
    if h.is_brownian() {
        return Err(Error::InvalidHurst(h.value()));
    }
    Ok(())
}
