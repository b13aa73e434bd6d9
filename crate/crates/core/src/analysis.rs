//! Studies built on the covariance formula: the not-fBm diagnostic, the
//! limit `H → ½⁺`, and the polar-coordinate majorant.

use std::f64::consts::FRAC_PI_4;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbm_model::{gamma_kernel, one_minus_rho_sq_gap, HurstParameter};
use crate::gauss_kernels::p_kernel;
use crate::gclass::GFunction;
use crate::quadrature::{cross_covariance, integrand_at_estimate, QuadratureConfig};
use crate::rules::{hermite, integrate_adaptive, integrate_gl, legendre};

/// A probe `(t, s)` of the covariance surface.
pub type Probe = (f64, f64);

/// Outcome of comparing the mixed partial at two points with equal `|t−s|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// The mixed partial is not a function of `|t−s|`, so no `c·R_{H̃}` fits.
    NotFbm,
    /// The values agree within their error estimates.
    ConsistentWithFbm,
    /// The values differ, but by less than ten times their error estimates.
    Inconclusive,
}

/// Integrand values at one pair of probes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeComparison {
    pub first: Probe,
    pub second: Probe,
    pub value_first: f64,
    pub error_first: f64,
    pub value_second: f64,
    pub error_second: f64,
    /// `|v₁ − v₂| / max(|v₁|, |v₂|)`.
    pub rel_discrepancy: f64,
    pub verdict: Verdict,
}

/// The verdict against `c·R_{H̃}` for one candidate `H̃`.
///
/// The scale fitted on the first probe predicts the second; both sit at the
/// same `|t−s|`, so the prediction is the first value whatever `H̃` is.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateVerdict {
    pub h_tilde: f64,
    pub fitted_scale: f64,
    pub predicted_second: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NotFbmReport {
    pub hurst: f64,
    pub comparisons: Vec<ProbeComparison>,
    pub candidates: Vec<CandidateVerdict>,
    pub verdict: Verdict,
    pub reasoning: String,
}

const REFUTATION_FACTOR: f64 = 10.0;

fn compare(v1: f64, e1: f64, v2: f64, e2: f64) -> Verdict {
    let gap = (v1 - v2).abs();
    if gap > REFUTATION_FACTOR * e1.max(e2) {
        Verdict::NotFbm
    } else if gap > e1 + e2 {
        Verdict::Inconclusive
    } else {
        Verdict::ConsistentWithFbm
    }
}

fn combine(verdicts: impl IntoIterator<Item = Verdict>) -> Verdict {
    let mut out = Verdict::ConsistentWithFbm;
    for v in verdicts {
        match v {
            Verdict::NotFbm => return Verdict::NotFbm,
            Verdict::Inconclusive => out = Verdict::Inconclusive,
            Verdict::ConsistentWithFbm => {}
        }
    }
    out
}

/// Compares the mixed partial `∂²/∂t∂s E[X_t Y_s]` at probe pairs sharing
/// `|t−s|`.
///
/// If the integrals were `c·` an fBm with index `H̃`, the mixed partial would
/// be `c·α_{H̃}|t−s|^{2H̃−2}`, a function of `|t−s|` alone. Values that
/// differ at equal `|t−s|` by more than ten times both error estimates rule
/// out every `(c, H̃)` at once.
pub fn not_fbm_test(
    f: &GFunction,
    g: &GFunction,
    h: HurstParameter,
    probes: &[(Probe, Probe)],
    htilde_grid: &[f64],
) -> Result<NotFbmReport> {
    if probes.is_empty() {
        return Err(Error::InvalidArgument("no probe pairs given".into()));
    }
    for &((t1, s1), (t2, s2)) in probes {
        let (d1, d2) = ((t1 - s1).abs(), (t2 - s2).abs());
        if d1 == 0.0 || d2 == 0.0 {
            return Err(Error::Domain(format!(
                "probes must lie off the diagonal (got ({t1},{s1}), ({t2},{s2}))"
            )));
        }
        if (d1 - d2).abs() > 1e-12 * d1.max(d2) {
            return Err(Error::InvalidArgument(format!(
                "probe pairs need equal |t−s| (got {d1} and {d2})"
            )));
        }
    }
    for &ht in htilde_grid {
        HurstParameter::new(ht)?;
    }
    let comparisons = probes
        .par_iter()
        .map(|&(a, b)| {
            let x = integrand_at_estimate(f, g, a.0, a.1, h)?;
            let y = integrand_at_estimate(f, g, b.0, b.1, h)?;
            let scale = x.value.abs().max(y.value.abs());
            Ok(ProbeComparison {
                first: a,
                second: b,
                value_first: x.value,
                error_first: x.error,
                value_second: y.value,
                error_second: y.error,
                rel_discrepancy: if scale > 0.0 {
                    (x.value - y.value).abs() / scale
                } else {
                    0.0
                },
                verdict: compare(x.value, x.error, y.value, y.error),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let candidates = htilde_grid
        .iter()
        .map(|&ht| {
            let htp = HurstParameter::new(ht).expect("validated above");
            let c0 = comparisons[0];
            let d = (c0.first.0 - c0.first.1).abs();
            let shape = htp.alpha() * d.powf(htp.two_h_minus_two());
            CandidateVerdict {
                h_tilde: ht,
                fitted_scale: c0.value_first / shape,
                predicted_second: c0.value_first,
                verdict: combine(comparisons.iter().map(|c| {
                    let predicted = c.value_first;
                    compare(predicted, c.error_first, c.value_second, c.error_second)
                })),
            }
        })
        .collect::<Vec<_>>();
    let verdict = combine(comparisons.iter().map(|c| c.verdict));
    let reasoning = match verdict {
        Verdict::NotFbm => format!(
            "the mixed partial takes different values at equal |t-s| (largest relative gap {:.3e}, \
             more than {REFUTATION_FACTOR}x both error estimates); c*alpha*|t-s|^(2H'-2) cannot fit \
             for any scale c or index H', so the integrals are not a scaled fBm for any H'",
            comparisons.iter().map(|c| c.rel_discrepancy).fold(0.0, f64::max)
        ),
        Verdict::ConsistentWithFbm => {
            "the mixed partial agrees at equal |t-s| within its error estimates".to_string()
        }
        Verdict::Inconclusive => format!(
            "the mixed partial differs at equal |t-s| but not by {REFUTATION_FACTOR}x the error estimates"
        ),
    };
    Ok(NotFbmReport {
        hurst: h.value(),
        comparisons,
        candidates,
        verdict,
        reasoning,
    })
}

/// One rung of the `H = ½ + ε` ladder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitRung {
    pub epsilon: f64,
    pub hurst: f64,
    pub value: f64,
    pub isometry_term: f64,
    pub trace_term: f64,
    pub est_rel_error: f64,
    /// `|value − target|`.
    pub deviation: f64,
    /// `max α_H γ_H` over the probe grid.
    pub max_alpha_gamma: f64,
    /// `|P_H − P_½| / |P_½|` at the P probe, when `P_½ ≠ 0`.
    pub p_limit_rel_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitStudyReport {
    pub t: f64,
    pub s: f64,
    /// `∫₀^{t∧s} E F(W_τ) G(W_τ) dτ`.
    pub target: f64,
    pub rungs: Vec<LimitRung>,
    /// Linear extrapolation to `ε = 0` from the last two rungs.
    pub extrapolated: f64,
    pub extrapolated_rel_error: f64,
    /// `log(gap₁/gap₂)/log(ε₁/ε₂)` from the last three rungs.
    pub observed_rate: Option<f64>,
    pub deviations_decreasing: bool,
    /// Successive ratios of `max α_H γ_H`.
    pub alpha_gamma_ratios: Vec<f64>,
    pub p_probe: Probe,
    pub p_limit: f64,
}

/// Settings for [`brownian_limit_study_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimitStudyConfig {
    pub quadrature: QuadratureConfig,
    /// Points per axis of the `α_H γ_H` probe grid over `(0,t]×(0,s]`.
    pub probe_points: usize,
    pub p_probe: Probe,
}

impl Default for LimitStudyConfig {
    fn default() -> Self {
        Self {
            quadrature: QuadratureConfig::default(),
            probe_points: 8,
            p_probe: (2.0, 1.0),
        }
    }
}

const TARGET_TOL: f64 = 1e-11;
const Z_MAX: f64 = 9.0;

/// `E F(W_τ) G(W_τ)` for `W_τ ~ N(0, τ)`.
fn same_time_expectation(f: &GFunction, g: &GFunction, tau: f64) -> f64 {
    let sd = tau.sqrt();
    let fg = |z: f64| f.evaluate(sd * z) * g.evaluate(sd * z);
    if f.jumps().is_empty() && g.jumps().is_empty() {
        let rule = hermite(64);
        return rule.nodes.iter().zip(&rule.weights).map(|(z, w)| w * fg(*z)).sum();
    }
    // Gauss–Legendre panels broken at the jumps, which GH would straddle.
    let mut cuts: Vec<f64> = f
        .jumps()
        .iter()
        .chain(g.jumps())
        .map(|&(a, _)| a / sd)
        .filter(|z| z.abs() < Z_MAX)
        .collect();
    cuts.extend([-Z_MAX, Z_MAX]);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let rule = legendre(20);
    let density = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cuts.windows(2)
        .flat_map(|w| {
            let k = ((w[1] - w[0]).ceil() as usize).max(1);
            let step = (w[1] - w[0]) / k as f64;
            (0..k).map(move |i| (w[0] + i as f64 * step, w[0] + (i + 1) as f64 * step))
        })
        .map(|(a, b)| integrate_gl(|z| density(z) * fg(z), a, b, rule))
        .sum()
}

/// `∫₀^{t∧s} E F(W_τ) G(W_τ) dτ`, the Brownian cross-covariance.
pub fn brownian_target(f: &GFunction, g: &GFunction, t: f64, s: f64) -> Result<f64> {
    if !(t > 0.0 && s > 0.0 && t.is_finite() && s.is_finite()) {
        return Err(Error::Domain(format!("need t, s > 0 (got {t}, {s})")));
    }
    let m = t.min(s);
    let e = |tau: f64| if tau > 0.0 { same_time_expectation(f, g, tau) } else { f.evaluate(0.0) * g.evaluate(0.0) };
    let scale = e(m).abs().max(e(0.5 * m).abs()).max(1.0) * m;
    let r = integrate_adaptive(&e, 0.0, m, TARGET_TOL * scale);
    if !r.converged {
        return Err(Error::NonConvergence {
            estimate: r.value,
            previous: f64::NAN,
            achieved: r.error,
            tolerance: TARGET_TOL * scale,
        });
    }
    Ok(r.value)
}

fn max_alpha_gamma(t: f64, s: f64, h: HurstParameter, n: usize) -> f64 {
    let alpha = h.alpha();
    let mut best = 0.0f64;
    for i in 1..=n {
        for j in 1..=n {
            let (tau, sigma) = (t * i as f64 / n as f64, s * j as f64 / n as f64);
            if tau != sigma {
                best = best.max(alpha * gamma_kernel(tau, sigma, h));
            }
        }
    }
    best
}

/// Cross-covariances at `H = ½ + ε` down a ladder, compared with the Brownian
/// target.
pub fn brownian_limit_study(
    f: &GFunction,
    g: &GFunction,
    t: f64,
    s: f64,
    eps_ladder: &[f64],
) -> Result<LimitStudyReport> {
    brownian_limit_study_with(f, g, t, s, eps_ladder, &LimitStudyConfig::default())
}

pub fn brownian_limit_study_with(
    f: &GFunction,
    g: &GFunction,
    t: f64,
    s: f64,
    eps_ladder: &[f64],
    cfg: &LimitStudyConfig,
) -> Result<LimitStudyReport> {
    if eps_ladder.len() < 2 {
        return Err(Error::InvalidArgument("the epsilon ladder needs at least two rungs".into()));
    }
    if eps_ladder.iter().any(|&e| !(e > 0.0 && e <= 0.25))
        || eps_ladder.windows(2).any(|w| w[1] >= w[0])
    {
        return Err(Error::InvalidArgument(format!(
            "epsilon ladder must decrease inside (0, 1/4] (got {eps_ladder:?})"
        )));
    }
    if cfg.probe_points < 2 {
        return Err(Error::InvalidArgument("probe_points must be at least 2".into()));
    }
    let target = brownian_target(f, g, t, s)?;
    let (pt, ps) = cfg.p_probe;
    let p_half = p_kernel(f, g, pt, ps, HurstParameter::limit_study(0.5)?)?;
    let rungs = eps_ladder
        .par_iter()
        .map(|&eps| {
            let h = HurstParameter::new(0.5 + eps)?;
            let r = cross_covariance(f, g, t, s, h, &cfg.quadrature)?;
            let p_gap = if p_half != 0.0 {
                Some((p_kernel(f, g, pt, ps, h)? - p_half).abs() / p_half.abs())
            } else {
                None
            };
            Ok(LimitRung {
                epsilon: eps,
                hurst: h.value(),
                value: r.value,
                isometry_term: r.isometry_term,
                trace_term: r.trace_term,
                est_rel_error: r.est_rel_error,
                deviation: (r.value - target).abs(),
                max_alpha_gamma: max_alpha_gamma(t, s, h, cfg.probe_points),
                p_limit_rel_gap: p_gap,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let k = rungs.len();
    let (a, b) = (&rungs[k - 2], &rungs[k - 1]);
    let extrapolated = (a.epsilon * b.value - b.epsilon * a.value) / (a.epsilon - b.epsilon);
    let observed_rate = (k >= 3).then(|| {
        let c = &rungs[k - 3];
        ((c.value - a.value).abs() / (a.value - b.value).abs()).ln() / (c.epsilon / a.epsilon).ln()
    });
    let slack = |r: &LimitRung| r.est_rel_error * r.value.abs();
    let deviations_decreasing = rungs
        .windows(2)
        .all(|w| w[1].deviation <= w[0].deviation + slack(&w[0]) + slack(&w[1]));
    Ok(LimitStudyReport {
        t,
        s,
        target,
        extrapolated,
        extrapolated_rel_error: (extrapolated - target).abs() / target.abs().max(f64::MIN_POSITIVE),
        observed_rate: observed_rate.filter(|r| r.is_finite()),
        deviations_decreasing,
        alpha_gamma_ratios: rungs
            .windows(2)
            .map(|w| w[0].max_alpha_gamma / w[1].max_alpha_gamma)
            .collect(),
        rungs,
        p_probe: cfg.p_probe,
        p_limit: p_half,
    })
}

/// Angular profile of the majorant
/// `(r^{−1} ∨ r^{−3/2})·θ^{−a}` below `split`, `(π/4 − θ)^{−b}` above it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MajorantShape {
    pub axis_exponent: f64,
    pub diagonal_exponent: f64,
    pub split: f64,
}

impl MajorantShape {
    /// Exponents `3/8` and `3/4`, split at `π/6`.
    pub fn original() -> Self {
        Self {
            axis_exponent: 0.375,
            diagonal_exponent: 0.75,
            split: std::f64::consts::FRAC_PI_6,
        }
    }

    /// The original shape with `θ^{−3/4}` toward the axis.
    pub fn corrected() -> Self {
        Self {
            axis_exponent: 0.75,
            ..Self::original()
        }
    }

    fn value(&self, r: f64, theta: f64) -> f64 {
        let radial = r.recip().max(r.powf(-1.5));
        let angular = if theta < self.split {
            theta.powf(-self.axis_exponent)
        } else {
            (FRAC_PI_4 - theta).powf(-self.diagonal_exponent)
        };
        radial * angular
    }
}

/// Largest observed ratio for one `H`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MajorantRow {
    pub hurst: f64,
    pub max_ratio: f64,
    pub max_ratio_doubled: f64,
    /// `max_ratio_doubled / max_ratio`.
    pub growth: f64,
    pub argmax: (f64, f64),
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MajorantReport {
    pub shape: MajorantShape,
    pub radius: f64,
    pub sample_count: usize,
    pub rows: Vec<MajorantRow>,
    pub pass: bool,
}

/// Allowed growth of the maximum ratio under sample doubling.
pub const MAJORANT_GROWTH_TOL: f64 = 0.02;

/// `1/(τ^H σ^H √(1−ρ²))` at `τ = r cos θ, σ = r sin θ`.
pub fn polar_lhs(r: f64, theta: f64, h: HurstParameter) -> f64 {
    let (tau, sigma) = (r * theta.cos(), r * theta.sin());
    let gap = r * std::f64::consts::SQRT_2 * (FRAC_PI_4 - theta).sin();
    let omr = one_minus_rho_sq_gap(tau, sigma, gap, h);
    1.0 / ((tau * sigma).powf(h.value()) * omr.sqrt())
}

/// Nodes on `(0, len)`: `m` cell midpoints and `levels` dyadic points toward
/// each requested end.
fn sample_nodes(len: f64, m: usize, levels: u32, low: bool, high: bool) -> Vec<f64> {
    let mut v: Vec<f64> = (0..m).map(|i| len * (i as f64 + 0.5) / m as f64).collect();
    for k in 1..=levels {
        let e = len * 0.5f64.powi(k as i32);
        if low {
            v.push(e);
        }
        if high {
            v.push(len - e);
        }
    }
    v
}

fn max_ratio(h: HurstParameter, shape: &MajorantShape, radius: f64, count: usize) -> (f64, (f64, f64)) {
    let m = (count as f64).sqrt().ceil() as usize;
    let levels = (count as f64).log2().ceil() as u32;
    let rs = sample_nodes(radius, m, levels, true, false);
    let thetas = sample_nodes(FRAC_PI_4, m, levels, true, true);
    thetas
        .par_iter()
        .map(|&th| {
            rs.iter()
                .map(|&r| (polar_lhs(r, th, h) / shape.value(r, th), (r, th)))
                .fold((0.0, (0.0, 0.0)), |a, b| if b.0 > a.0 || b.0.is_nan() { b } else { a })
        })
        .reduce(|| (0.0, (0.0, 0.0)), |a, b| if b.0 > a.0 || b.0.is_nan() { b } else { a })
}

/// Checks the original polar majorant for `1/(τ^H σ^H √(1−ρ²))`.
pub fn polar_majorant_check(h_grid: &[f64], sample_count: usize) -> Result<MajorantReport> {
    polar_majorant_check_with(h_grid, sample_count, MajorantShape::original(), 4.0)
}

/// Largest ratio of the left side to `shape` over samples in
/// `(0, radius) × (0, π/4)`, at `sample_count` and twice as many samples.
/// The check passes when every ratio is finite and grows by at most
/// [`MAJORANT_GROWTH_TOL`] under the doubling.
pub fn polar_majorant_check_with(
    h_grid: &[f64],
    sample_count: usize,
    shape: MajorantShape,
    radius: f64,
) -> Result<MajorantReport> {
    if h_grid.is_empty() || h_grid.iter().any(|&h| !(0.5..=0.75).contains(&h)) {
        return Err(Error::InvalidArgument(format!(
            "H grid must be non-empty inside [1/2, 3/4] (got {h_grid:?})"
        )));
    }
    if sample_count < 16 {
        return Err(Error::InvalidArgument("sample_count must be at least 16".into()));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidArgument(format!("radius must be positive (got {radius})")));
    }
    let rows = h_grid
        .iter()
        .map(|&hv| {
            let h = HurstParameter::limit_study(hv)?;
            let (a, _) = max_ratio(h, &shape, radius, sample_count);
            let (b, at) = max_ratio(h, &shape, radius, 2 * sample_count);
            let growth = b / a;
            Ok(MajorantRow {
                hurst: hv,
                max_ratio: a,
                max_ratio_doubled: b,
                growth,
                argmax: at,
                stable: a.is_finite() && b.is_finite() && growth <= 1.0 + MAJORANT_GROWTH_TOL,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MajorantReport {
        shape,
        radius,
        sample_count,
        pass: rows.iter().all(|r| r.stable),
        rows,
    })
}
