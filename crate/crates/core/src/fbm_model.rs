//! Deterministic fBm quantities: `α_H`, the covariance `R_H`, correlation,
//! the `γ` weight and the weighted inner product on step functions.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rules::{expm1_over, pow1p_m1};

/// Validated Hurst index with its derived exponents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct HurstParameter {
    h: f64,
    two_h: f64,
    two_h_m1: f64,
    two_h_m2: f64,
    alpha: f64,
}

impl HurstParameter {
    /// Hurst index strictly inside `(1/2, 1)`.
    pub fn new(h: f64) -> Result<Self> {
        if !(h > 0.5 && h < 1.0) {
            return Err(Error::InvalidHurst(h));
        }
        Ok(Self::build(h))
    }

    /// Admits `h = 1/2` as well; only limit studies and path generation use it.
    pub fn limit_study(h: f64) -> Result<Self> {
        if !(0.5..1.0).contains(&h) {
            return Err(Error::InvalidHurst(h));
        }
        Ok(Self::build(h))
    }

    fn build(h: f64) -> Self {
        let two_h_m1 = 2.0 * h - 1.0;
        Self {
            h,
            two_h: 2.0 * h,
            two_h_m1,
            two_h_m2: 2.0 * h - 2.0,
            alpha: h * two_h_m1,
        }
    }

    pub fn value(&self) -> f64 {
        self.h
    }

    pub fn two_h(&self) -> f64 {
        self.two_h
    }

    pub fn two_h_minus_one(&self) -> f64 {
        self.two_h_m1
    }

    pub fn two_h_minus_two(&self) -> f64 {
        self.two_h_m2
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn is_brownian(&self) -> bool {
        self.h == 0.5
    }
}

impl TryFrom<f64> for HurstParameter {
    type Error = Error;

    fn try_from(h: f64) -> Result<Self> {
        HurstParameter::limit_study(h)
    }
}

impl From<HurstParameter> for f64 {
    fn from(h: HurstParameter) -> f64 {
        h.h
    }
}

/// `α_H = H(2H−1)`.
pub fn alpha_h(h: HurstParameter) -> f64 {
    h.alpha()
}

/// `R_H(t,s) = ½(t^{2H} + s^{2H} − |t−s|^{2H})`.
pub fn covariance_rh(t: f64, s: f64, h: HurstParameter) -> f64 {
    let p = h.two_h();
    let (hi, lo) = if t >= s { (t, s) } else { (s, t) };
    if lo <= 0.0 {
        return 0.0;
    }
    // hi^{2H} − (hi − lo)^{2H} = −hi^{2H}·((1 − lo/hi)^{2H} − 1)
    0.5 * (lo.powf(p) - hi.powf(p) * pow1p_m1(-lo / hi, p))
}

/// `ρ(τ,σ) = R_H(τ,σ) / (τ^H σ^H)`.
pub fn correlation_rho(tau: f64, sigma: f64, h: HurstParameter) -> Result<f64> {
    if tau <= 0.0 || sigma <= 0.0 {
        return Err(Error::Domain(format!(
            "correlation needs tau, sigma > 0 (got {tau}, {sigma})"
        )));
    }
    if tau == sigma {
        return Ok(1.0);
    }
    let rho = covariance_rh(tau, sigma, h) / (tau * sigma).powf(h.value());
    Ok(rho.min(1.0))
}

/// `τ^H − σ^H` given the signed gap `d = τ − σ`, accurate for small `d`.
pub(crate) fn power_gap(tau: f64, sigma: f64, d: f64, hh: f64) -> f64 {
    if d >= 0.0 {
        sigma.powf(hh) * pow1p_m1(d / sigma, hh)
    } else {
        -tau.powf(hh) * pow1p_m1(-d / tau, hh)
    }
}

/// `1 − ρ²(τ,σ)` from the signed gap `d = τ − σ`, accurate near the diagonal.
pub fn one_minus_rho_sq_gap(tau: f64, sigma: f64, d: f64, h: HurstParameter) -> f64 {
    let hh = h.value();
    if tau.min(sigma) < 0.5 * tau.max(sigma) {
        let rho = covariance_rh(tau, sigma, h) / (tau * sigma).powf(hh);
        return ((1.0 - rho) * (1.0 + rho)).clamp(0.0, 1.0);
    }
    let prod = (tau * sigma).powf(hh);
    let gap = power_gap(tau, sigma, d, hh);
    // τ^Hσ^H − R = ½(|d|^{2H} − (τ^H − σ^H)²)
    let lower = 0.5 * (d.abs().powf(h.two_h()) - gap * gap);
    let r = prod - lower;
    (lower * (prod + r) / (prod * prod)).clamp(0.0, 1.0)
}

/// `1 − ρ²(τ,σ)`.
pub fn one_minus_rho_sq(tau: f64, sigma: f64, h: HurstParameter) -> f64 {
    one_minus_rho_sq_gap(tau, sigma, tau - sigma, h)
}

/// `γ(τ,σ)` for the signed gap `d = τ − σ` (kept separate so callers near
/// the diagonal can pass an exact gap).
pub fn gamma_with_gap(tau: f64, sigma: f64, d: f64, h: HurstParameter) -> f64 {
    let (hi, lo) = if tau >= sigma {
        (tau, sigma)
    } else {
        (sigma, tau)
    };
    let ad = d.abs();
    let c = h.two_h_minus_one();
    if hi <= 0.0 || lo <= 0.0 {
        return 0.0;
    }
    // [hi^c − |d|^c] / c  with |d| = hi − lo, written as −hi^c·expm1(c·ln(1 − lo/hi))/c
    let first_over_c = -hi.powf(c) * expm1_over(c, (-lo / hi).ln_1p());
    let second = lo.powf(c) + ad.powf(c);
    h.value() * first_over_c * second
}

/// `γ(τ,σ) = H/(2H−1)·[(τ∨σ)^{2H−1} − |τ−σ|^{2H−1}]·[(τ∧σ)^{2H−1} + |τ−σ|^{2H−1}]`.
pub fn gamma_kernel(tau: f64, sigma: f64, h: HurstParameter) -> f64 {
    gamma_with_gap(tau, sigma, tau - sigma, h)
}

/// The two one-dimensional integrals whose product gives `γ`:
/// `I₁ = ∫₀^τ |u−σ|^{2H−2} du` and `I₂ = ∫₀^σ |v−τ|^{2H−2} dv`.
pub fn gamma_factorization_terms(tau: f64, sigma: f64, h: HurstParameter) -> (f64, f64) {
    let c = h.two_h_minus_one();
    let i1 = (sigma.powf(c) - (sigma - tau).signum() * (sigma - tau).abs().powf(c)) / c;
    let i2 = (tau.powf(c) - (tau - sigma).signum() * (tau - sigma).abs().powf(c)) / c;
    (i1, i2)
}

/// `α_H ∬_{[a,b]×[c,d]} |x−y|^{2H−2} dx dy`, exact up to rounding.
///
/// Closed form `½(|b−c|^{2H} + |a−d|^{2H} − |a−c|^{2H} − |b−d|^{2H})`; for
/// disjoint intervals the second difference is formed from `expm1`-based
/// first differences so that small, distant cells keep their digits.
pub fn cell_pair_weight(a: f64, b: f64, c: f64, d: f64, h: HurstParameter) -> f64 {
    let p = h.two_h();
    if a >= d || c >= b {
        // (x, w1) is the right interval, (w2) the left one, x0 the gap.
        let (x0, w_right, w_left) = if a >= d {
            (a - d, b - a, d - c)
        } else {
            (c - b, d - c, b - a)
        };
        let delta = |x: f64, w: f64| -> f64 {
            if x == 0.0 {
                w.powf(p)
            } else {
                x.powf(p) * pow1p_m1(w / x, p)
            }
        };
        return 0.5 * (delta(x0 + w_left, w_right) - delta(x0, w_right));
    }
    let f = |x: f64| x.abs().powf(p);
    0.5 * (f(b - c) + f(a - d) - f(a - c) - f(b - d))
}

/// Strictly increasing partition `0 = t₀ < … < t_n = T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidGrid("need at least two nodes".into()));
        }
        if nodes[0] != 0.0 {
            return Err(Error::InvalidGrid("first node must be 0".into()));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) || nodes.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidGrid(
                "nodes must be finite and strictly increasing".into(),
            ));
        }
        Ok(Self { nodes })
    }

    /// `n` equal cells on `[0, horizon]`.
    pub fn uniform(horizon: f64, n: usize) -> Result<Self> {
        if !(horizon > 0.0) || n == 0 {
            return Err(Error::InvalidGrid(format!(
                "uniform grid needs T > 0 and n ≥ 1 (got T = {horizon}, n = {n})"
            )));
        }
        let nodes = (0..=n).map(|k| horizon * k as f64 / n as f64).collect();
        Self::new(nodes)
    }

    pub fn horizon(&self) -> f64 {
        *self.nodes.last().expect("grid has nodes")
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn n_cells(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn cell(&self, i: usize) -> (f64, f64) {
        (self.nodes[i], self.nodes[i + 1])
    }

    pub fn midpoint(&self, i: usize) -> f64 {
        0.5 * (self.nodes[i] + self.nodes[i + 1])
    }

    /// Index of the node equal to `t` up to a relative `1e-9` slack.
    pub fn node_index(&self, t: f64) -> Option<usize> {
        let tol = 1e-9 * self.horizon();
        let k = self.nodes.partition_point(|&x| x < t - tol);
        (k < self.nodes.len() && (self.nodes[k] - t).abs() <= tol).then_some(k)
    }

    pub fn is_uniform(&self) -> bool {
        let h = self.horizon() / self.n_cells() as f64;
        self.nodes
            .windows(2)
            .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h)
    }
}

/// Piecewise-constant function, one value per grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} cells",
                values.len(),
                grid.n_cells()
            )));
        }
        Ok(Self { grid, values })
    }

    /// `1_{[a,b]}` where `a`, `b` are grid nodes.
    pub fn indicator(grid: &TimeGrid, a: f64, b: f64) -> Result<Self> {
        let (ia, ib) = match (grid.node_index(a), grid.node_index(b)) {
            (Some(ia), Some(ib)) if ia <= ib => (ia, ib),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "indicator bounds [{a}, {b}] must be ordered grid nodes"
                )))
            }
        };
        let values = (0..grid.n_cells())
            .map(|i| if i >= ia && i < ib { 1.0 } else { 0.0 })
            .collect();
        Self::new(grid.clone(), values)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn abs(&self) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v.abs()).collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }
}

/// Matrix of `⟨1_{cell i}, 1_{cell j}⟩`.
pub fn gram_matrix(grid: &TimeGrid, h: HurstParameter) -> DMatrix<f64> {
    let n = grid.n_cells();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        let (a, b) = grid.cell(i);
        for j in 0..=i {
            let (c, d) = grid.cell(j);
            let v = cell_pair_weight(a, b, c, d, h);
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    w
}

/// `⟨f,g⟩ = α_H ∬ f(τ)g(σ)|τ−σ|^{2H−2} dτdσ` for step functions, using exact
/// cell-pair integrals of the weight.
pub fn weighted_inner_product(
    f: &GridFunction,
    g: &GridFunction,
    h: HurstParameter,
) -> Result<f64> {
    if f.grid != g.grid {
        return Err(Error::GridMismatch(
            "inner product of functions on different grids".into(),
        ));
    }
    let grid = &f.grid;
    let mut acc = crate::rules::KahanSum::default();
    for (i, &fi) in f.values.iter().enumerate() {
        if fi == 0.0 {
            continue;
        }
        let (a, b) = grid.cell(i);
        for (j, &gj) in g.values.iter().enumerate() {
            if gj == 0.0 {
                continue;
            }
            let (c, d) = grid.cell(j);
            acc.add(fi * gj * cell_pair_weight(a, b, c, d, h));
        }
    }
    Ok(acc.value())
}

/// `‖f‖_{|𝓗|} = ⟨|f|, |f|⟩^{1/2}`.
pub fn abs_h_norm(f: &GridFunction, h: HurstParameter) -> f64 {
    let a = f.abs();
    weighted_inner_product(&a, &a, h)
        .expect("same grid")
        .max(0.0)
        .sqrt()
}
