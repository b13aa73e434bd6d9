//! The double integral of `α_H(|τ−σ|^{2H−2} M + γ P)` over `[0,t]×[0,s]`.
//!
//! The rectangle is cut along the diagonal. With `m = t ∧ s` the square
//! `[0,m]²` becomes two triangles mapped from the unit square by
//! `τ = m x, σ = m x (1−y)` (and its mirror), so `x → 0` is the origin and
//! `y → 0` the diagonal. The leftover strip is split at its corner `(m,m)`
//! into two triangles collapsed onto that corner. Each unit-square axis
//! carries a geometrically graded Gauss–Legendre mesh toward its singular
//! ends, finished by a power substitution `v = c·w^q` in the last cell.
//! The error estimate is one doubling of the mesh parameter.

use dashmap::DashMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbm_model::{gamma_with_gap, one_minus_rho_sq_gap, HurstParameter};
use crate::gauss_kernels::{
    m_kernel_estimate, m_value, p_kernel_estimate, p_value, BivariateGaussianSpec, Decomposed,
    KernelAccuracy, KernelValue,
};
use crate::gclass::GFunction;
use crate::rules::{legendre, pairwise_sum};

/// Mesh and tolerance settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureConfig {
    /// Mesh parameter `N`; doubled once for the error estimate.
    pub base_cells_per_axis: usize,
    /// Overrides the grading exponent toward `τ = σ`.
    pub diagonal_grading_exponent: Option<f64>,
    pub gauss_nodes_per_cell: usize,
    pub target_rel_error: f64,
    /// Gauss–Hermite order used inside the kernels.
    pub hermite_order: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            base_cells_per_axis: 16,
            diagonal_grading_exponent: None,
            gauss_nodes_per_cell: 8,
            target_rel_error: 1e-6,
            hermite_order: 64,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_cells_per_axis < 8 {
            return Err(Error::InvalidArgument(format!(
                "base_cells_per_axis must be at least 8 (got {})",
                self.base_cells_per_axis
            )));
        }
        if self.base_cells_per_axis > 1024 {
            return Err(Error::TooLarge(format!(
                "base_cells_per_axis {} exceeds 1024",
                self.base_cells_per_axis
            )));
        }
        if !(4..=16).contains(&self.gauss_nodes_per_cell) {
            return Err(Error::InvalidArgument(format!(
                "gauss_nodes_per_cell must lie in 4..=16 (got {})",
                self.gauss_nodes_per_cell
            )));
        }
        if let Some(q) = self.diagonal_grading_exponent {
            if !(1.0..=64.0).contains(&q) {
                return Err(Error::InvalidArgument(format!(
                    "diagonal_grading_exponent must lie in [1, 64] (got {q})"
                )));
            }
        }
        if !(self.target_rel_error > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "target_rel_error must be positive (got {})",
                self.target_rel_error
            )));
        }
        if !(8..=512).contains(&self.hermite_order) {
            return Err(Error::InvalidArgument(format!(
                "hermite_order must lie in 8..=512 (got {})",
                self.hermite_order
            )));
        }
        Ok(())
    }

    pub fn with_cells(self, n: usize) -> Self {
        Self {
            base_cells_per_axis: n,
            ..self
        }
    }

    fn accuracy(&self) -> KernelAccuracy {
        KernelAccuracy::with_hermite(self.hermite_order)
    }
}

/// `value = isometry_term + trace_term`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceResult {
    pub value: f64,
    pub isometry_term: f64,
    pub trace_term: f64,
    pub est_rel_error: f64,
}

impl CovarianceResult {
    fn new(isometry_term: f64, trace_term: f64, est_rel_error: f64) -> Self {
        Self {
            value: isometry_term + trace_term,
            isometry_term,
            trace_term,
            est_rel_error,
        }
    }
}

/// Grading exponents of the mesh.
#[derive(Debug, Clone, Copy)]
struct Grading {
    diagonal: f64,
    origin: f64,
    corner: f64,
    axis: f64,
}

impl Grading {
    fn new(h: HurstParameter, steps: bool, diagonal: Option<f64>) -> Self {
        let hv = h.value();
        let mut q_diag = 2.0 / h.two_h_minus_one();
        let mut q_axis: f64 = 2.0;
        if steps {
            q_diag = q_diag.max(3.0 / (1.0 - hv));
            q_axis = q_axis.max(2.0 / (1.0 - hv));
        }
        Self {
            diagonal: diagonal.unwrap_or(q_diag.min(64.0)),
            origin: 2.0 / hv,
            corner: 2.0 / hv,
            axis: q_axis.min(64.0),
        }
    }
}

/// Quadrature node on `(0,1)`: position, its complement, weight.
#[derive(Debug, Clone, Copy)]
struct Node {
    v: f64,
    cv: f64,
    w: f64,
}

/// Nodes `(u, weight)` on `(0, len)` graded toward `u = 0`.
fn graded_side(n: usize, p: usize, q: f64, len: f64) -> Vec<(f64, f64)> {
    let rule = legendre(p);
    let levels = (n / 2).max(1);
    let depth = 8.0 + n as f64 / 8.0;
    let ratio = (depth / levels as f64).exp2();
    let mut out = Vec::with_capacity(p * (levels + n / 16 + 1));
    let mut hi = len;
    for _ in 0..levels {
        let lo = hi / ratio;
        push_panel(&mut out, rule, lo, hi);
        hi = lo;
    }
    let core = hi;
    let pieces = (n / 16).max(1);
    for k in 0..pieces {
        let a = k as f64 / pieces as f64;
        let b = (k + 1) as f64 / pieces as f64;
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (x, w) in rule.nodes.iter().zip(&rule.weights) {
            let z = mid + half * x;
            out.push((core * z.powf(q), core * q * z.powf(q - 1.0) * w * half));
        }
    }
    out
}

fn push_panel(out: &mut Vec<(f64, f64)>, rule: &crate::rules::Rule, a: f64, b: f64) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    for (x, w) in rule.nodes.iter().zip(&rule.weights) {
        out.push((mid + half * x, w * half));
    }
}

fn mesh_1d(n: usize, p: usize, lo: Option<f64>, hi: Option<f64>) -> Vec<Node> {
    let from_lo = |(u, w): (f64, f64)| Node {
        v: u,
        cv: 1.0 - u,
        w,
    };
    let from_hi = |(u, w): (f64, f64)| Node {
        v: 1.0 - u,
        cv: u,
        w,
    };
    match (lo, hi) {
        (Some(a), Some(b)) => {
            let mut out: Vec<Node> = graded_side(n, p, a, 0.5).into_iter().map(from_lo).collect();
            out.extend(graded_side(n, p, b, 0.5).into_iter().map(from_hi));
            out
        }
        (Some(a), None) => graded_side(n, p, a, 1.0).into_iter().map(from_lo).collect(),
        (None, Some(b)) => graded_side(n, p, b, 1.0).into_iter().map(from_hi).collect(),
        (None, None) => {
            let rule = legendre(p);
            let panels = (n / 4).max(2);
            let mut raw = Vec::new();
            for k in 0..panels {
                push_panel(
                    &mut raw,
                    rule,
                    k as f64 / panels as f64,
                    (k + 1) as f64 / panels as f64,
                );
            }
            raw.into_iter().map(from_lo).collect()
        }
    }
}

/// A piece of `[0,t]×[0,s]` (with `t ≥ s`) parametrized by the unit square.
#[derive(Debug, Clone, Copy)]
enum Piece {
    /// `τ = m x`, `σ = m x (1−y)`.
    Lower { m: f64 },
    /// `σ = m x`, `τ = m x (1−y)`.
    Upper { m: f64 },
    /// `τ = s + x L`, `σ = s − x y s`.
    StripNear { s: f64, l: f64 },
    /// `σ = s − x s`, `τ = s + x y L`.
    StripFar { s: f64, l: f64 },
}

impl Piece {
    fn meshes(&self, n: usize, p: usize, g: &Grading) -> (Vec<Node>, Vec<Node>) {
        match self {
            Piece::Lower { .. } | Piece::Upper { .. } => (
                mesh_1d(n, p, Some(g.origin), None),
                mesh_1d(n, p, Some(g.diagonal), Some(g.axis)),
            ),
            Piece::StripNear { .. } => (
                mesh_1d(n, p, Some(g.corner), Some(g.axis)),
                mesh_1d(n, p, Some(g.diagonal), Some(g.axis)),
            ),
            Piece::StripFar { .. } => (
                mesh_1d(n, p, Some(g.corner), Some(g.axis)),
                mesh_1d(n, p, None, None),
            ),
        }
    }

    /// `(τ, σ, τ−σ, Jacobian)`.
    fn map(&self, x: &Node, y: &Node) -> (f64, f64, f64, f64) {
        match *self {
            Piece::Lower { m } => {
                let r = m * x.v;
                (r, r * y.cv, r * y.v, m * r)
            }
            Piece::Upper { m } => {
                let r = m * x.v;
                (r * y.cv, r, -r * y.v, m * r)
            }
            Piece::StripNear { s, l } => (
                s + x.v * l,
                s * (x.cv + x.v * y.cv),
                x.v * (l + y.v * s),
                l * s * x.v,
            ),
            Piece::StripFar { s, l } => (
                s + x.v * y.v * l,
                s * x.cv,
                x.v * (y.v * l + s),
                l * s * x.v,
            ),
        }
    }
}

fn pieces(t: f64, s: f64) -> Vec<Piece> {
    let m = t.min(s);
    let mut out = vec![Piece::Lower { m }, Piece::Upper { m }];
    if t > s {
        out.push(Piece::StripNear { s, l: t - s });
        out.push(Piece::StripFar { s, l: t - s });
    }
    out
}

/// Integrals of the two parts and of their absolute values.
#[derive(Debug, Clone, Copy, Default)]
struct Parts {
    first: f64,
    second: f64,
    abs: f64,
}

/// `∬_{[0,t]×[0,s]}` of `density(τ, σ, τ−σ) = (first, second)` for `t ≥ s`.
fn integrate<K>(t: f64, s: f64, n: usize, p: usize, grading: &Grading, density: &K) -> Result<Parts>
where
    K: Fn(f64, f64, f64) -> Result<(f64, f64)> + Sync,
{
    let mut rows: Vec<Parts> = Vec::new();
    for piece in pieces(t, s) {
        let (xs, ys) = piece.meshes(n, p, grading);
        let piece_rows: Result<Vec<Parts>> = xs
            .par_iter()
            .map(|x| {
                let mut first = Vec::with_capacity(ys.len());
                let mut second = Vec::with_capacity(ys.len());
                let mut abs = Vec::with_capacity(ys.len());
                for y in &ys {
                    let (tau, sigma, d, jac) = piece.map(x, y);
                    let w = x.w * y.w * jac;
                    let (a, b) = density(tau, sigma, d)?;
                    first.push(w * a);
                    second.push(w * b);
                    abs.push(w * (a.abs() + b.abs()));
                }
                Ok(Parts {
                    first: pairwise_sum(&first),
                    second: pairwise_sum(&second),
                    abs: pairwise_sum(&abs),
                })
            })
            .collect();
        rows.extend(piece_rows?);
    }
    let col = |f: fn(&Parts) -> f64| pairwise_sum(&rows.iter().map(f).collect::<Vec<_>>());
    Ok(Parts {
        first: col(|r| r.first),
        second: col(|r| r.second),
        abs: col(|r| r.abs),
    })
}

type MemoKey = (u64, u64, u64);

/// `(M, P)` at quadrature nodes, optionally memoized.
struct KernelTable<'a> {
    f: Decomposed,
    g: Decomposed,
    h: HurstParameter,
    acc: KernelAccuracy,
    memo: Option<&'a DashMap<MemoKey, (f64, f64)>>,
}

impl KernelTable<'_> {
    fn eval(&self, tau: f64, sigma: f64, d: f64) -> Result<(f64, f64)> {
        let key = (tau.to_bits(), sigma.to_bits(), d.to_bits());
        if let Some(memo) = self.memo {
            if let Some(v) = memo.get(&key) {
                return Ok(*v);
            }
        }
        let spec = BivariateGaussianSpec::from_times_with_gap(tau, sigma, d, self.h)?;
        let m = m_value(&self.f, &self.g, &spec, self.acc);
        let p = p_value(&self.f, &self.g, &spec, self.acc)?;
        if let Some(memo) = self.memo {
            memo.insert(key, (m, p));
        }
        Ok((m, p))
    }
}

fn check_horizon(t: f64, s: f64) -> Result<()> {
    if !(t > 0.0 && s > 0.0 && t.is_finite() && s.is_finite()) {
        return Err(Error::Domain(format!("need 0 < t, s < ∞ (got {t}, {s})")));
    }
    Ok(())
}

/// Value at mesh `n` and at `2n`, the latter returned with the relative gap.
fn doubled<I>(cfg: &QuadratureConfig, run: I) -> Result<(Parts, f64)>
where
    I: Fn(usize) -> Result<Parts>,
{
    cfg.validate()?;
    let coarse = run(cfg.base_cells_per_axis)?;
    let fine = run(2 * cfg.base_cells_per_axis)?;
    let v = fine.first + fine.second;
    let prev = coarse.first + coarse.second;
    let delta = (v - prev).abs();
    let rel = if delta == 0.0 { 0.0 } else { delta / v.abs() };
    let floor = 1e-13 * fine.abs;
    if rel > cfg.target_rel_error && delta > floor {
        return Err(Error::NonConvergence {
            estimate: v,
            previous: prev,
            achieved: rel,
            tolerance: cfg.target_rel_error,
        });
    }
    Ok((fine, rel))
}

#[allow(clippy::too_many_arguments)]
fn covariance_parts(
    f: &GFunction,
    g: &GFunction,
    t: f64,
    s: f64,
    h: HurstParameter,
    cfg: &QuadratureConfig,
    n: usize,
    memo: Option<&DashMap<MemoKey, (f64, f64)>>,
) -> Result<Parts> {
    if t < s {
        return covariance_parts(g, f, s, t, h, cfg, n, memo);
    }
    let table = KernelTable {
        f: Decomposed::new(f),
        g: Decomposed::new(g),
        h,
        acc: cfg.accuracy(),
        memo,
    };
    let steps = table.f.has_steps() || table.g.has_steps();
    let grading = Grading::new(h, steps, cfg.diagonal_grading_exponent);
    let alpha = h.alpha();
    let pw = h.two_h_minus_two();
    let density = |tau: f64, sigma: f64, d: f64| -> Result<(f64, f64)> {
        let (m, p) = table.eval(tau, sigma, d)?;
        let iso = alpha * d.abs().powf(pw) * m;
        let tr = if p == 0.0 {
            0.0
        } else {
            alpha * gamma_with_gap(tau, sigma, d, h) * p
        };
        Ok((iso, tr))
    };
    integrate(t, s, n, cfg.gauss_nodes_per_cell, &grading, &density)
}

/// `E[∫₀ᵗ F(B) δB · ∫₀ˢ G(B) δB]` split into isometry and trace terms.
pub fn cross_covariance(
    f: &GFunction,
    g: &GFunction,
    t: f64,
    s: f64,
    h: HurstParameter,
    cfg: &QuadratureConfig,
) -> Result<CovarianceResult> {
    check_horizon(t, s)?;
    let (parts, rel) = doubled(cfg, |n| covariance_parts(f, g, t, s, h, cfg, n, None))?;
    Ok(CovarianceResult::new(parts.first, parts.second, rel))
}

/// Result of [`covariance_surface`]: `entries[i][j]` belongs to `(t_i, s_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSurface {
    pub t_nodes: Vec<f64>,
    pub s_nodes: Vec<f64>,
    pub entries: Vec<Vec<CovarianceResult>>,
}

/// [`cross_covariance`] on a grid of `(t, s)`, sharing kernel evaluations
/// between entries.
pub fn covariance_surface(
    f: &GFunction,
    g: &GFunction,
    t_nodes: &[f64],
    s_nodes: &[f64],
    h: HurstParameter,
    cfg: &QuadratureConfig,
) -> Result<CovarianceSurface> {
    // one table per orientation, since t < s swaps the roles of F and G
    let memo_fg = DashMap::new();
    let memo_gf = DashMap::new();
    let mut entries = Vec::with_capacity(t_nodes.len());
    for &t in t_nodes {
        let mut row = Vec::with_capacity(s_nodes.len());
        for &s in s_nodes {
            check_horizon(t, s)?;
            let memo = if t >= s { &memo_fg } else { &memo_gf };
            let (parts, rel) =
                doubled(cfg, |n| covariance_parts(f, g, t, s, h, cfg, n, Some(memo)))?;
            row.push(CovarianceResult::new(parts.first, parts.second, rel));
        }
        entries.push(row);
    }
    Ok(CovarianceSurface {
        t_nodes: t_nodes.to_vec(),
        s_nodes: s_nodes.to_vec(),
        entries,
    })
}

fn check_off_diagonal(tau: f64, sigma: f64) -> Result<()> {
    if !(tau > 0.0 && sigma > 0.0) {
        return Err(Error::Domain(format!(
            "integrand needs tau, sigma > 0 (got {tau}, {sigma})"
        )));
    }
    if tau == sigma {
        return Err(Error::Domain(format!(
            "integrand is singular on the diagonal (tau = sigma = {tau})"
        )));
    }
    Ok(())
}

/// `α_H[|τ−σ|^{2H−2} M + γ P]` with the kernel error estimates propagated.
pub fn integrand_at_estimate(
    f: &GFunction,
    g: &GFunction,
    tau: f64,
    sigma: f64,
    h: HurstParameter,
) -> Result<KernelValue> {
    check_off_diagonal(tau, sigma)?;
    let m = m_kernel_estimate(f, g, tau, sigma, h)?;
    let p = p_kernel_estimate(f, g, tau, sigma, h)?;
    let alpha = h.alpha();
    let w = (tau - sigma).abs().powf(h.two_h_minus_two());
    let gam = gamma_with_gap(tau, sigma, tau - sigma, h);
    Ok(KernelValue {
        value: alpha * (w * m.value + gam * p.value),
        error: alpha * (w * m.error + gam * p.error),
    })
}

/// The mixed derivative `∂²/∂t∂s` of the covariance surface at `(τ, σ)`.
pub fn integrand_at(
    f: &GFunction,
    g: &GFunction,
    tau: f64,
    sigma: f64,
    h: HurstParameter,
) -> Result<f64> {
    Ok(integrand_at_estimate(f, g, tau, sigma, h)?.value)
}

/// `L^{t,s}(x,y) = ∬_{[0,t]×[0,s]} γ(τ,σ) f(x,y;τ,σ) dτ dσ`.
///
/// Convergence is judged relative to `L^{t,s}(0,0)`, its maximum, so values
/// far out in the Gaussian tails do not need full relative accuracy.
pub fn weighted_density_kernel(
    t: f64,
    s: f64,
    h: HurstParameter,
    x: f64,
    y: f64,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    check_horizon(t, s)?;
    cfg.validate()?;
    let (t, s, x, y) = if t >= s { (t, s, x, y) } else { (s, t, y, x) };
    let grading = Grading::new(h, true, cfg.diagonal_grading_exponent);
    let run = |n: usize, x: f64, y: f64| -> Result<f64> {
        let density = |tau: f64, sigma: f64, d: f64| -> Result<(f64, f64)> {
            let spec = BivariateGaussianSpec::from_times_with_gap(tau, sigma, d, h)?;
            Ok((0.0, gamma_with_gap(tau, sigma, d, h) * spec.density_at(x, y)?))
        };
        Ok(integrate(t, s, n, cfg.gauss_nodes_per_cell, &grading, &density)?.second)
    };
    let n = cfg.base_cells_per_axis;
    let previous = run(n, x, y)?;
    let value = run(2 * n, x, y)?;
    let delta = (value - previous).abs();
    if delta > cfg.target_rel_error * value.abs() {
        let peak = if x == 0.0 && y == 0.0 { value } else { run(n, 0.0, 0.0)? };
        if delta > cfg.target_rel_error * peak {
            return Err(Error::NonConvergence {
                estimate: value,
                previous,
                achieved: delta / peak,
                tolerance: cfg.target_rel_error,
            });
        }
    }
    Ok(value)
}

/// `∬_{[0,T]²} γ / (τ^H σ^H √(1−ρ²))` with its relative change under one
/// mesh doubling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FinitenessReport {
    pub value: f64,
    pub previous: f64,
    pub rel_change: f64,
}

/// As [`finiteness_check`] with an explicit mesh.
pub fn finiteness_report(
    h: HurstParameter,
    horizon: f64,
    cfg: &QuadratureConfig,
) -> Result<FinitenessReport> {
    check_horizon(horizon, horizon)?;
    cfg.validate()?;
    let grading = Grading::new(h, true, cfg.diagonal_grading_exponent);
    let hv = h.value();
    let density = |tau: f64, sigma: f64, d: f64| -> Result<(f64, f64)> {
        let omr = one_minus_rho_sq_gap(tau, sigma, d, h);
        let g = gamma_with_gap(tau, sigma, d, h);
        Ok((0.0, g / ((tau * sigma).powf(hv) * omr.sqrt())))
    };
    let run = |n| {
        integrate(
            horizon,
            horizon,
            n,
            cfg.gauss_nodes_per_cell,
            &grading,
            &density,
        )
    };
    let previous = run(cfg.base_cells_per_axis)?.second;
    let value = run(2 * cfg.base_cells_per_axis)?.second;
    Ok(FinitenessReport {
        value,
        previous,
        rel_change: (value - previous).abs() / value.abs(),
    })
}

/// `∬_{[0,T]²} γ / (τ^H σ^H √(1−ρ²)) dτ dσ`; an error if one mesh doubling
/// moves it by 1% or more.
pub fn finiteness_check(h: HurstParameter, horizon: f64) -> Result<f64> {
    let r = finiteness_report(h, horizon, &QuadratureConfig::default())?;
    if !(r.rel_change < 0.01) || !r.value.is_finite() {
        return Err(Error::NonConvergence {
            estimate: r.value,
            previous: r.previous,
            achieved: r.rel_change,
            tolerance: 0.01,
        });
    }
    Ok(r.value)
}
