//! The kernels `M(τ,σ) = E F(B_τ)G(B_σ)` and `P(τ,σ) = ∬ f_{B_τ,B_σ} dF' dG'`.
//!
//! Every coefficient is split into a smooth part (including its constant),
//! atoms of the derivative, and smeared atoms left behind by mollification.
//! Pairs of parts are reduced to one-dimensional integrals by conditioning
//! on one coordinate; conditional expectations are closed forms where they
//! exist and Gauss–Hermite sums otherwise.

mod bvn;

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fbm_model::{correlation_rho, covariance_rh, one_minus_rho_sq_gap, HurstParameter};
use crate::gclass::{bump, bump_cdf, bump_expectation, bump_taylor_coefficients, AcTerm, GFunction};
use crate::rules::{hermite, integrate_gl, legendre, norm_cdf, norm_pdf};

pub(crate) use bvn::bvn_upper;
pub use bvn::bvn_upper_quadrant;

/// Largest `width / s` at which smeared jumps use the moment series.
const SERIES_RATIO: f64 = 0.25;

/// Standardized Gaussian window: `|z| > Z_MAX` carries less than `1e-18` mass.
const Z_MAX: f64 = 9.0;
const MAX_PANEL: f64 = 3.0;

/// Law of `(B_τ, B_σ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BivariateGaussianSpec {
    sd_x: f64,
    sd_y: f64,
    rho: f64,
    /// `1 − ρ²`, kept separately for accuracy near the diagonal.
    omr: f64,
}

impl BivariateGaussianSpec {
    pub fn new(sd_x: f64, sd_y: f64, rho: f64) -> Result<Self> {
        if !(sd_x > 0.0 && sd_y > 0.0) || !sd_x.is_finite() || !sd_y.is_finite() {
            return Err(Error::Domain(format!(
                "standard deviations must be positive (got {sd_x}, {sd_y})"
            )));
        }
        if !(rho.abs() <= 1.0) {
            return Err(Error::Domain(format!("correlation {rho} outside [-1, 1]")));
        }
        Ok(Self {
            sd_x,
            sd_y,
            rho,
            omr: (1.0 - rho) * (1.0 + rho),
        })
    }

    /// Law of `(B_τ, B_σ)` for an fBm with index `h`.
    pub fn from_times(tau: f64, sigma: f64, h: HurstParameter) -> Result<Self> {
        Self::from_times_with_gap(tau, sigma, tau - sigma, h)
    }

    /// As [`Self::from_times`] with the gap `d = τ − σ` supplied exactly.
    pub fn from_times_with_gap(tau: f64, sigma: f64, d: f64, h: HurstParameter) -> Result<Self> {
        let rho = correlation_rho(tau, sigma, h)?;
        let hv = h.value();
        Ok(Self {
            sd_x: tau.powf(hv),
            sd_y: sigma.powf(hv),
            rho,
            omr: if d == 0.0 {
                0.0
            } else {
                one_minus_rho_sq_gap(tau, sigma, d, h)
            },
        })
    }

    pub fn sd_x(&self) -> f64 {
        self.sd_x
    }

    pub fn sd_y(&self) -> f64 {
        self.sd_y
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn one_minus_rho_sq(&self) -> f64 {
        self.omr
    }

    pub fn is_degenerate(&self) -> bool {
        self.omr <= 0.0
    }

    /// The law of `(Y, X)`.
    pub fn swapped(&self) -> Self {
        Self {
            sd_x: self.sd_y,
            sd_y: self.sd_x,
            ..*self
        }
    }

    /// Mean slope and standard deviation of `Y` given `X = x`: `Y | X=x ~ N(k x, s²)`.
    fn y_given_x(&self) -> (f64, f64) {
        (
            self.rho * self.sd_y / self.sd_x,
            self.sd_y * self.omr.sqrt(),
        )
    }

    fn x_given_y(&self) -> (f64, f64) {
        (
            self.rho * self.sd_x / self.sd_y,
            self.sd_x * self.omr.sqrt(),
        )
    }

    /// Joint density at `(x, y)`.
    pub fn density_at(&self, x: f64, y: f64) -> Result<f64> {
        if self.is_degenerate() {
            return Err(Error::DegenerateDensity);
        }
        let u = x / self.sd_x;
        let v = y / self.sd_y;
        // u² − 2ρuv + v² = (u − v)² + 2(1 − ρ)uv
        let q = (u - v) * (u - v) / self.omr + 2.0 * u * v / (1.0 + self.rho);
        Ok((-0.5 * q).exp() / (2.0 * PI * self.sd_x * self.sd_y * self.omr.sqrt()))
    }
}

/// Quadrature orders used inside the kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct KernelAccuracy {
    pub hermite: usize,
    pub legendre: usize,
}

impl KernelAccuracy {
    pub const STANDARD: KernelAccuracy = KernelAccuracy {
        hermite: 64,
        legendre: 20,
    };

    pub fn with_hermite(hermite: usize) -> Self {
        Self {
            hermite,
            legendre: 20,
        }
    }

    /// Both orders doubled; the gap to `self` is the error estimate.
    pub fn refined(&self) -> Self {
        Self {
            hermite: 2 * self.hermite,
            legendre: (2 * self.legendre).min(64),
        }
    }
}

impl Default for KernelAccuracy {
    fn default() -> Self {
        Self::STANDARD
    }
}

/// A kernel value with an estimate of its quadrature error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelValue {
    pub value: f64,
    pub error: f64,
}

/// `∫ f` over `[lo, hi]` by Gauss–Legendre panels. Inside each `fine`
/// interval panels are at most a quarter of its length; each segment gets at
/// least its share of `min_panels`.
fn panel_integral<F: Fn(f64) -> f64>(
    lo: f64,
    hi: f64,
    fine: &[(f64, f64)],
    min_panels: usize,
    order: usize,
    f: &F,
) -> f64 {
    if !(hi > lo) {
        return 0.0;
    }
    let mut pts = Vec::with_capacity(2 + 2 * fine.len());
    pts.push(lo);
    pts.push(hi);
    for &(a, b) in fine {
        for p in [a, b] {
            if p > lo && p < hi {
                pts.push(p);
            }
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let rule = legendre(order);
    let total = hi - lo;
    let mut acc = 0.0;
    for seg in pts.windows(2) {
        let (p, q) = (seg[0], seg[1]);
        let mid = 0.5 * (p + q);
        let mut width = MAX_PANEL;
        for &(a, b) in fine {
            if b > a && mid > a && mid < b {
                width = width.min(0.25 * (b - a));
            }
        }
        let by_share = ((q - p) / total * min_panels as f64).ceil();
        let n = ((q - p) / width).ceil().max(by_share).max(1.0) as usize;
        let step = (q - p) / n as f64;
        for i in 0..n {
            let a = p + step * i as f64;
            let b = if i + 1 == n { q } else { a + step };
            acc += integrate_gl(f, a, b, rule);
        }
    }
    acc
}

/// A jump of the coefficient, possibly smeared: `size·1[x ≥ at]` when
/// `width = 0`, otherwise `size·Ψ((x − at)/width)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Step {
    pub at: f64,
    pub size: f64,
    pub width: f64,
}

impl Step {
    fn is_atom(&self) -> bool {
        self.width == 0.0
    }

    fn value(&self, x: f64) -> f64 {
        if self.is_atom() {
            if x >= self.at {
                self.size
            } else {
                0.0
            }
        } else {
            self.size * bump_cdf((x - self.at) / self.width)
        }
    }

    /// Density of the smeared jump (`width > 0`).
    fn density(&self, x: f64) -> f64 {
        self.size / self.width * bump((x - self.at) / self.width)
    }

    /// `E[step(μ + s W)]`, `W` standard normal.
    fn cond(&self, mu: f64, s: f64, acc: KernelAccuracy) -> f64 {
        if s == 0.0 {
            return self.value(mu);
        }
        if self.is_atom() {
            return self.size * norm_cdf((mu - self.at) / s);
        }
        if self.width <= SERIES_RATIO * s {
            return self.size * smeared_normal((mu - self.at) / s, self.width / s, false);
        }
        if s >= self.width {
            let (at, w) = (self.at, self.width);
            return self.size * bump_expectation(|u| norm_cdf((mu - at - w * u) / s));
        }
        let w_lo = (self.at - self.width - mu) / s;
        let w_hi = (self.at + self.width - mu) / s;
        let f = |w: f64| norm_pdf(w) * bump_cdf((mu + s * w - self.at) / self.width);
        let zone = panel_integral(w_lo.max(-Z_MAX), w_hi.min(Z_MAX), &[], 4, acc.legendre, &f);
        self.size * (norm_cdf(-w_hi) + zone)
    }

    /// `E[step'(μ + s W)]`: the derivative measure integrated against the
    /// `N(μ, s²)` density.
    fn cond_deriv(&self, mu: f64, s: f64, acc: KernelAccuracy) -> f64 {
        if self.is_atom() {
            if s == 0.0 {
                return if mu == self.at { f64::INFINITY } else { 0.0 };
            }
            return self.size * norm_pdf((self.at - mu) / s) / s;
        }
        if s == 0.0 {
            return self.density(mu);
        }
        if self.width <= SERIES_RATIO * s {
            return self.size * smeared_normal((mu - self.at) / s, self.width / s, true) / s;
        }
        if s >= self.width {
            let (at, w) = (self.at, self.width);
            return self.size * bump_expectation(|u| norm_pdf((mu - at - w * u) / s)) / s;
        }
        let w_lo = (self.at - self.width - mu) / s;
        let w_hi = (self.at + self.width - mu) / s;
        let f = |w: f64| norm_pdf(w) * self.density(mu + s * w);
        panel_integral(w_lo.max(-Z_MAX), w_hi.min(Z_MAX), &[], 8, acc.legendre, &f)
    }

    /// Intervals in the conditional-mean variable where `cond` varies fast.
    fn features(&self, s: f64) -> [(f64, f64); 2] {
        [
            (
                self.at - self.width - 8.0 * s,
                self.at + self.width + 8.0 * s,
            ),
            (self.at - self.width - s, self.at + self.width + s),
        ]
    }
}

/// `E[Φ(x − rU)]`, or `E[φ(x − rU)]` when `density`, for `U ~ φ₁` and small
/// `r`, by the even-moment Taylor series in `r`.
fn smeared_normal(x: f64, r: f64, density: bool) -> f64 {
    let pdf = norm_pdf(x);
    let mut total = if density { pdf } else { norm_cdf(x) };
    // He_{n−1}, He_n
    let (mut prev, mut cur) = (1.0, x);
    let mut n = 1;
    let r2 = r * r;
    let mut rk = 1.0;
    for c in bump_taylor_coefficients() {
        rk *= r2;
        let next = x * cur - n as f64 * prev;
        (prev, cur) = (cur, next);
        n += 1;
        // Φ^{(2k)} = −He_{2k−1}φ and φ^{(2k)} = He_{2k}φ
        let term = if density { cur } else { -prev };
        total += c * rk * term * pdf;
        let next = x * cur - n as f64 * prev;
        (prev, cur) = (cur, next);
        n += 1;
    }
    total
}

/// Coefficient split into smooth part, constant and jumps.
#[derive(Debug, Clone)]
pub(crate) struct Decomposed {
    smooth: Vec<AcTerm>,
    constant: f64,
    steps: Vec<Step>,
    /// Slope when the smooth part is linear.
    slope: Option<f64>,
    /// Whether every smooth term has a closed-form Gaussian expectation.
    closed: bool,
}

impl Decomposed {
    pub fn new(f: &GFunction) -> Self {
        let mut smooth = Vec::new();
        let mut steps: Vec<Step> = f
            .jumps()
            .iter()
            .map(|&(at, size)| Step {
                at,
                size,
                width: 0.0,
            })
            .collect();
        for t in f.ac_terms() {
            match t {
                AcTerm::SmoothedStep { at, size, width } => steps.push(Step {
                    at: *at,
                    size: *size,
                    width: *width,
                }),
                other => smooth.push(other.clone()),
            }
        }
        let slope = smooth.iter().try_fold(0.0, |s, t| match t {
            AcTerm::Linear(a) => Some(s + a),
            _ => None,
        });
        let closed = smooth
            .iter()
            .all(|t| matches!(t, AcTerm::Linear(_) | AcTerm::Sin(_)));
        Self {
            smooth,
            constant: f.base(),
            steps,
            slope,
            closed,
        }
    }

    pub fn has_steps(&self) -> bool {
        !self.steps.is_empty()
    }

    fn is_constant(&self) -> bool {
        self.smooth.is_empty()
    }

    fn smooth_value(&self, x: f64) -> f64 {
        self.constant + self.smooth.iter().map(|t| t.value(x)).sum::<f64>()
    }

    fn smooth_deriv(&self, x: f64) -> f64 {
        self.smooth.iter().map(|t| t.derivative(x)).sum()
    }

    /// `E[S(μ + sW)]` including the constant.
    fn smooth_cond(&self, mu: f64, s: f64, acc: KernelAccuracy) -> f64 {
        self.constant
            + self
                .smooth
                .iter()
                .map(|t| term_cond(t, mu, s, acc))
                .sum::<f64>()
    }

    fn smooth_cond_deriv(&self, mu: f64, s: f64, acc: KernelAccuracy) -> f64 {
        self.smooth
            .iter()
            .map(|t| term_cond_deriv(t, mu, s, acc))
            .sum()
    }
}

/// `E[f(μ + sW)]` for smooth `f` whose fast variation sits near `x = 0`.
/// Gauss–Hermite converges slowly once `s` reaches the distance of the
/// nearest complex singularity (`π/2` for `tanh`), so wide laws use panels.
fn gauss_mean<F: Fn(f64) -> f64>(f: F, mu: f64, s: f64, acc: KernelAccuracy) -> f64 {
    if s == 0.0 {
        return f(mu);
    }
    if s <= 0.75 {
        let r = hermite(acc.hermite);
        let mut total = 0.0;
        for (z, w) in r.nodes.iter().zip(&r.weights) {
            total += w * f(mu + s * z);
        }
        return total;
    }
    let z0 = -mu / s;
    let fine = [(z0 - 6.0 / s, z0 + 6.0 / s)];
    let g = |z: f64| norm_pdf(z) * f(mu + s * z);
    panel_integral(-Z_MAX, Z_MAX, &fine, 1, acc.legendre, &g)
}

/// `E[t(μ + sW)]`.
fn term_cond(t: &AcTerm, mu: f64, s: f64, acc: KernelAccuracy) -> f64 {
    match t {
        AcTerm::Linear(a) => a * mu,
        AcTerm::Sin(a) => a * mu.sin() * (-0.5 * s * s).exp(),
        AcTerm::Tanh(_) | AcTerm::Custom(_) => gauss_mean(|x| t.value(x), mu, s, acc),
        AcTerm::SmoothedStep { at, size, width } => Step {
            at: *at,
            size: *size,
            width: *width,
        }
        .cond(mu, s, acc),
        AcTerm::Convolved { inner, width } => {
            bump_expectation(|u| term_cond(inner, mu - width * u, s, acc))
        }
    }
}

/// `E[t'(μ + sW)]`.
fn term_cond_deriv(t: &AcTerm, mu: f64, s: f64, acc: KernelAccuracy) -> f64 {
    match t {
        AcTerm::Linear(a) => *a,
        AcTerm::Sin(a) => a * mu.cos() * (-0.5 * s * s).exp(),
        AcTerm::Tanh(_) | AcTerm::Custom(_) => gauss_mean(|x| t.derivative(x), mu, s, acc),
        AcTerm::SmoothedStep { at, size, width } => Step {
            at: *at,
            size: *size,
            width: *width,
        }
        .cond_deriv(mu, s, acc),
        AcTerm::Convolved { inner, width } => {
            bump_expectation(|u| term_cond_deriv(inner, mu - width * u, s, acc))
        }
    }
}

/// Feature intervals of `x ↦ step.cond(k x, s)` in the standardized
/// variable `z = x / sd`.
fn features_in_z(step: &Step, k: f64, s: f64, sd: f64) -> Vec<(f64, f64)> {
    if k.abs() < 1e-300 {
        return Vec::new();
    }
    step.features(s)
        .iter()
        .map(|&(a, b)| {
            let (p, q) = (a / (k * sd), b / (k * sd));
            (p.min(q), p.max(q))
        })
        .collect()
}

/// `E[step(X) C(X)]`, `X ~ N(0, sd²)`.
fn outer_step<C: Fn(f64) -> f64>(
    step: &Step,
    sd: f64,
    c: &C,
    fine: &[(f64, f64)],
    acc: KernelAccuracy,
) -> f64 {
    let tail = |z: f64| norm_pdf(z) * c(sd * z);
    if step.is_atom() {
        let lo = (step.at / sd).max(-Z_MAX);
        return step.size * panel_integral(lo, Z_MAX, fine, 1, acc.legendre, &tail);
    }
    let z_lo = (step.at - step.width) / sd;
    let z_hi = (step.at + step.width) / sd;
    let zone_f = |z: f64| norm_pdf(z) * step.value(sd * z) * c(sd * z);
    let zone = panel_integral(
        z_lo.max(-Z_MAX),
        z_hi.min(Z_MAX),
        fine,
        4,
        acc.legendre,
        &zone_f,
    );
    let upper = panel_integral(z_hi.max(-Z_MAX), Z_MAX, fine, 1, acc.legendre, &tail);
    zone + step.size * upper
}

/// `∫ C(x) f_X(x) step'(dx)`, `X ~ N(0, sd²)`.
fn outer_step_density<C: Fn(f64) -> f64>(
    step: &Step,
    sd: f64,
    c: &C,
    fine: &[(f64, f64)],
    acc: KernelAccuracy,
) -> f64 {
    if step.is_atom() {
        return step.size * norm_pdf(step.at / sd) / sd * c(step.at);
    }
    let z_lo = (step.at - step.width) / sd;
    let z_hi = (step.at + step.width) / sd;
    let f = |z: f64| norm_pdf(z) * step.density(sd * z) * c(sd * z);
    panel_integral(z_lo.max(-Z_MAX), z_hi.min(Z_MAX), fine, 8, acc.legendre, &f)
}

/// `E[S_F(X) S_G(Y)]` for the smooth parts (constants included).
fn smooth_smooth(
    f: &Decomposed,
    g: &Decomposed,
    spec: &BivariateGaussianSpec,
    acc: KernelAccuracy,
) -> f64 {
    let (sx, sy, rho) = (spec.sd_x, spec.sd_y, spec.rho);
    if let (Some(a), Some(b)) = (f.slope, g.slope) {
        return a * b * rho * sx * sy + f.constant * g.constant;
    }
    if f.is_constant() {
        return f.constant * g.smooth_cond(0.0, sy, acc);
    }
    if g.is_constant() {
        return g.constant * f.smooth_cond(0.0, sx, acc);
    }
    if !g.closed && f.closed {
        return smooth_smooth(g, f, &spec.swapped(), acc);
    }
    let (k, s) = spec.y_given_x();
    gauss_mean(
        |x| f.smooth_value(x) * g.smooth_cond(k * x, s, acc),
        0.0,
        sx,
        acc,
    )
}

/// `E[S_F'(X) S_G'(Y)]`.
fn smooth_smooth_deriv(
    f: &Decomposed,
    g: &Decomposed,
    spec: &BivariateGaussianSpec,
    acc: KernelAccuracy,
) -> f64 {
    if f.is_constant() || g.is_constant() {
        return 0.0;
    }
    let sy = spec.sd_y;
    let sx = spec.sd_x;
    match (f.slope, g.slope) {
        (Some(a), Some(b)) => return a * b,
        (Some(a), None) => return a * g.smooth_cond_deriv(0.0, sy, acc),
        (None, Some(b)) => return b * f.smooth_cond_deriv(0.0, sx, acc),
        _ => {}
    }
    if !g.closed && f.closed {
        return smooth_smooth_deriv(g, f, &spec.swapped(), acc);
    }
    let (k, s) = spec.y_given_x();
    gauss_mean(
        |x| f.smooth_deriv(x) * g.smooth_cond_deriv(k * x, s, acc),
        0.0,
        sx,
        acc,
    )
}

/// `E[S_F(X) step(Y)]`.
fn smooth_step(
    f: &Decomposed,
    step: &Step,
    spec: &BivariateGaussianSpec,
    acc: KernelAccuracy,
) -> f64 {
    let (sx, sy, rho) = (spec.sd_x, spec.sd_y, spec.rho);
    if let Some(a) = f.slope {
        // E[X step(Y)] = ρ sx sy E[step'(Y)] by Gaussian integration by parts
        let mut v = f.constant * step.cond(0.0, sy, acc);
        if a != 0.0 {
            v += a * rho * sx * sy * step.cond_deriv(0.0, sy, acc);
        }
        return v;
    }
    if f.closed {
        let (k, s) = spec.x_given_y();
        let c = |y: f64| f.smooth_cond(k * y, s, acc);
        return outer_step(step, sy, &c, &[], acc);
    }
    // the smooth part has no closed conditional mean, so condition on X instead
    let (k, s) = spec.y_given_x();
    let g = |z: f64| norm_pdf(z) * f.smooth_value(sx * z) * step.cond(k * sx * z, s, acc);
    panel_integral(-Z_MAX, Z_MAX, &x_features(step, k, s, sx), 1, acc.legendre, &g)
}

/// Fine intervals in `z = x/sx` for an outer integral over `X` whose
/// integrand contains a smooth term varying near `x = 0` and the
/// conditional law of `step` given `X`.
fn x_features(step: &Step, k: f64, s: f64, sx: f64) -> Vec<(f64, f64)> {
    let mut fine = features_in_z(step, k, s, sx);
    fine.push((-6.0 / sx, 6.0 / sx));
    fine
}

/// `∬ f_{X,Y} S_F'(x)dx step'(dy)`.
fn smooth_step_deriv(
    f: &Decomposed,
    step: &Step,
    spec: &BivariateGaussianSpec,
    acc: KernelAccuracy,
) -> f64 {
    if f.is_constant() {
        return 0.0;
    }
    let sy = spec.sd_y;
    if let Some(a) = f.slope {
        return a * step.cond_deriv(0.0, sy, acc);
    }
    if f.closed || step.is_atom() {
        let (k, s) = spec.x_given_y();
        let c = |y: f64| f.smooth_cond_deriv(k * y, s, acc);
        return outer_step_density(step, sy, &c, &[], acc);
    }
    let sx = spec.sd_x;
    let (k, s) = spec.y_given_x();
    let g = |z: f64| norm_pdf(z) * f.smooth_deriv(sx * z) * step.cond_deriv(k * sx * z, s, acc);
    panel_integral(-Z_MAX, Z_MAX, &x_features(step, k, s, sx), 1, acc.legendre, &g)
}

/// `E[step_F(X) step_G(Y)]`.
fn step_step(a: &Step, b: &Step, spec: &BivariateGaussianSpec, acc: KernelAccuracy) -> f64 {
    let (sx, sy) = (spec.sd_x, spec.sd_y);
    if a.is_atom() && b.is_atom() {
        return a.size * b.size * bvn_upper(a.at / sx, b.at / sy, spec.rho, spec.omr);
    }
    if b.is_atom() {
        return step_step(b, a, &spec.swapped(), acc);
    }
    let (k, s) = spec.y_given_x();
    let c = |x: f64| b.cond(k * x, s, acc);
    let fine = features_in_z(b, k, s, sx);
    outer_step(a, sx, &c, &fine, acc)
}

/// `∬ f_{X,Y} step_F'(dx) step_G'(dy)`.
fn step_step_deriv(
    a: &Step,
    b: &Step,
    spec: &BivariateGaussianSpec,
    acc: KernelAccuracy,
) -> Result<f64> {
    let (sx, sy) = (spec.sd_x, spec.sd_y);
    if a.is_atom() && b.is_atom() {
        if spec.is_degenerate() {
            // the law sits on y = (sy/sx) x
            return if (a.at / sx - b.at / sy).abs() <= 1e-15 * (1.0 + (a.at / sx).abs()) {
                Err(Error::SingularPairing(format!(
                    "atoms at {} and {} meet on the diagonal",
                    a.at, b.at
                )))
            } else {
                Ok(0.0)
            };
        }
        return Ok(a.size * b.size * spec.density_at(a.at, b.at)?);
    }
    if b.is_atom() {
        return step_step_deriv(b, a, &spec.swapped(), acc);
    }
    let (k, s) = spec.y_given_x();
    if a.is_atom() {
        return Ok(a.size * norm_pdf(a.at / sx) / sx * b.cond_deriv(k * a.at, s, acc));
    }
    let c = |x: f64| b.cond_deriv(k * x, s, acc);
    let fine = features_in_z(b, k, s, sx);
    Ok(outer_step_density(a, sx, &c, &fine, acc))
}

/// `M` for a given law.
pub(crate) fn m_value(
    f: &Decomposed,
    g: &Decomposed,
    spec: &BivariateGaussianSpec,
    acc: KernelAccuracy,
) -> f64 {
    let mut total = smooth_smooth(f, g, spec, acc);
    for b in &g.steps {
        total += smooth_step(f, b, spec, acc);
    }
    let swapped = spec.swapped();
    for a in &f.steps {
        total += smooth_step(g, a, &swapped, acc);
    }
    for a in &f.steps {
        for b in &g.steps {
            total += step_step(a, b, spec, acc);
        }
    }
    total
}

/// `P` for a given law.
pub(crate) fn p_value(
    f: &Decomposed,
    g: &Decomposed,
    spec: &BivariateGaussianSpec,
    acc: KernelAccuracy,
) -> Result<f64> {
    let mut total = smooth_smooth_deriv(f, g, spec, acc);
    for b in &g.steps {
        total += smooth_step_deriv(f, b, spec, acc);
    }
    let swapped = spec.swapped();
    for a in &f.steps {
        total += smooth_step_deriv(g, a, &swapped, acc);
    }
    for a in &f.steps {
        for b in &g.steps {
            total += step_step_deriv(a, b, spec, acc)?;
        }
    }
    Ok(total)
}

fn check_times(tau: f64, sigma: f64) -> Result<()> {
    if !(tau > 0.0 && sigma > 0.0) {
        return Err(Error::Domain(format!(
            "kernels need tau, sigma > 0 (got {tau}, {sigma})"
        )));
    }
    Ok(())
}

const KERNEL_TOL: f64 = 1e-9;

fn estimate<V: Fn(KernelAccuracy) -> Result<f64>>(v: V) -> Result<KernelValue> {
    let coarse = v(KernelAccuracy::STANDARD)?;
    let fine = v(KernelAccuracy::STANDARD.refined())?;
    let error = (fine - coarse).abs() + 4.0 * f64::EPSILON * fine.abs();
    Ok(KernelValue { value: fine, error })
}

fn checked(k: KernelValue) -> Result<f64> {
    let tol = KERNEL_TOL * k.value.abs().max(1.0);
    if k.error > tol {
        return Err(Error::NonConvergence {
            estimate: k.value,
            previous: f64::NAN,
            achieved: k.error,
            tolerance: tol,
        });
    }
    Ok(k.value)
}

/// `M(τ,σ)` with its quadrature error estimate.
pub fn m_kernel_estimate(
    f: &GFunction,
    g: &GFunction,
    tau: f64,
    sigma: f64,
    h: HurstParameter,
) -> Result<KernelValue> {
    check_times(tau, sigma)?;
    let spec = BivariateGaussianSpec::from_times(tau, sigma, h)?;
    let (df, dg) = (Decomposed::new(f), Decomposed::new(g));
    estimate(|acc| Ok(m_value(&df, &dg, &spec, acc)))
}

/// `M(τ,σ) = E F(B_τ) G(B_σ)`.
pub fn m_kernel(
    f: &GFunction,
    g: &GFunction,
    tau: f64,
    sigma: f64,
    h: HurstParameter,
) -> Result<f64> {
    checked(m_kernel_estimate(f, g, tau, sigma, h)?)
}

/// `P(τ,σ)` with its quadrature error estimate.
pub fn p_kernel_estimate(
    f: &GFunction,
    g: &GFunction,
    tau: f64,
    sigma: f64,
    h: HurstParameter,
) -> Result<KernelValue> {
    check_times(tau, sigma)?;
    let spec = BivariateGaussianSpec::from_times(tau, sigma, h)?;
    let (df, dg) = (Decomposed::new(f), Decomposed::new(g));
    estimate(|acc| p_value(&df, &dg, &spec, acc))
}

/// `P(τ,σ) = ∬ f_{B_τ,B_σ}(x,y) F'(dx) G'(dy)`.
pub fn p_kernel(
    f: &GFunction,
    g: &GFunction,
    tau: f64,
    sigma: f64,
    h: HurstParameter,
) -> Result<f64> {
    checked(p_kernel_estimate(f, g, tau, sigma, h)?)
}

/// `M` for `F = G = sgn`: `(2/π) arcsin ρ`.
pub fn m_sgn_closed(tau: f64, sigma: f64, h: HurstParameter) -> f64 {
    if tau <= 0.0 || sigma <= 0.0 {
        return 0.0;
    }
    let r = covariance_rh(tau, sigma, h) / (tau * sigma).powf(h.value());
    let omr = one_minus_rho_sq_gap(tau, sigma, tau - sigma, h);
    // arcsin ρ = atan2(ρ, √(1−ρ²)) keeps digits near ρ = 1
    2.0 / PI * r.min(1.0).atan2(omr.sqrt())
}

/// `P` for `F = G = sgn`: `4 f(0,0) = 2/(π τ^H σ^H √(1−ρ²))`.
pub fn p_sgn_closed(tau: f64, sigma: f64, h: HurstParameter) -> Result<f64> {
    check_times(tau, sigma)?;
    if tau == sigma {
        return Err(Error::SingularPairing(format!(
            "P_sgn is infinite at tau = sigma = {tau}"
        )));
    }
    let omr = one_minus_rho_sq_gap(tau, sigma, tau - sigma, h);
    Ok(2.0 / (PI * (tau * sigma).powf(h.value()) * omr.sqrt()))
}

/// `lim_{H→½} P_H(τ,σ) = 2/(π √((τ∧σ)(τ∨σ − τ∧σ)))` for `F = G = sgn`.
pub fn p_limit_brownian(tau: f64, sigma: f64) -> Result<f64> {
    check_times(tau, sigma)?;
    if tau == sigma {
        return Err(Error::SingularPairing(format!(
            "Brownian P limit is infinite at tau = sigma = {tau}"
        )));
    }
    let (lo, hi) = if tau < sigma {
        (tau, sigma)
    } else {
        (sigma, tau)
    };
    Ok(2.0 / (PI * (lo * (hi - lo)).sqrt()))
}
