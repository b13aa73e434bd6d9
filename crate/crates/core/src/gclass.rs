//! Coefficient functions of the class 𝒢: an absolutely continuous part with
//! bounded derivative plus finitely many jumps, and their mollifications.

use std::fmt;
use std::sync::{Arc, OnceLock};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::rules::{integrate_adaptive, legendre, Rule};

/// `∫_{-1}^{1} exp(−1/(1−x²)) dx`.
const BUMP_MASS: f64 = 0.443_993_816_168_079_4;

/// The standard bump `φ₁(x) = exp(−1/(1−x²))/Z` on `(−1,1)` and its dilations
/// `φ_n(x) = n φ₁(nx)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct MollifierFamily;

struct BumpTables {
    /// Nodes and weights for `E g(U)`, `U ~ φ₁`.
    rule: Rule,
    /// `Ψ = ∫_{-1}^{x} φ₁` at equally spaced nodes.
    cdf: Vec<f64>,
    /// `E[U^{2k}]/(2k)!` for `k = 1..=BUMP_TAYLOR_TERMS`.
    taylor: [f64; BUMP_TAYLOR_TERMS],
}

pub(crate) const BUMP_TAYLOR_TERMS: usize = 8;

const CDF_CELLS: usize = 2048;

fn tables() -> &'static BumpTables {
    static T: OnceLock<BumpTables> = OnceLock::new();
    T.get_or_init(|| {
        // u = tanh(s) turns the bump into exp(−cosh² s)·sech² s, which the
        // trapezoid rule integrates to machine precision.
        let m = 56;
        let s_max = 3.5;
        let h = 2.0 * s_max / m as f64;
        let mut nodes = Vec::with_capacity(m - 1);
        let mut weights = Vec::with_capacity(m - 1);
        for k in 1..m {
            let s = -s_max + h * k as f64;
            let c = s.cosh();
            let w = h * (-c * c).exp() / (c * c) / BUMP_MASS;
            if w > 0.0 {
                nodes.push(s.tanh());
                weights.push(w);
            }
        }
        let mut cdf = vec![0.0; CDF_CELLS + 1];
        let gl = legendre(12);
        let dx = 2.0 / CDF_CELLS as f64;
        let mut acc = 0.0;
        for i in 0..CDF_CELLS {
            let a = -1.0 + dx * i as f64;
            acc += crate::rules::integrate_gl(bump, a, a + dx, gl);
            cdf[i + 1] = acc;
        }
        for v in cdf.iter_mut() {
            *v /= acc;
        }
        for i in 0..=CDF_CELLS / 2 {
            let j = CDF_CELLS - i;
            let lo = 0.5 * (cdf[i] + 1.0 - cdf[j]);
            cdf[i] = lo;
            cdf[j] = 1.0 - lo;
        }
        let mut taylor = [0.0; BUMP_TAYLOR_TERMS];
        let mut fact = 1.0;
        for (k, c) in taylor.iter_mut().enumerate() {
            let n = 2 * (k + 1);
            fact *= (n - 1) as f64 * n as f64;
            let moment: f64 = nodes
                .iter()
                .zip(&weights)
                .map(|(u, w)| w * u.powi(n as i32))
                .sum();
            *c = moment / fact;
        }
        BumpTables {
            rule: Rule { nodes, weights },
            cdf,
            taylor,
        }
    })
}

/// Normalized bump density.
pub fn bump(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - x * x)).exp() / BUMP_MASS
    }
}

fn bump_prime(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        0.0
    } else {
        let q = 1.0 - x * x;
        -2.0 * x / (q * q) * bump(x)
    }
}

/// Distribution function of the bump, `Ψ(x) = ∫_{-1}^{x} φ₁`.
pub fn bump_cdf(x: f64) -> f64 {
    if x <= -1.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let t = tables();
    let dx = 2.0 / CDF_CELLS as f64;
    let pos = (x + 1.0) / dx;
    let i = (pos as usize).min(CDF_CELLS - 1);
    let x0 = -1.0 + dx * i as f64;
    let x1 = x0 + dx;
    // quintic Hermite with Ψ' = φ₁, Ψ'' = φ₁'
    let u = (x - x0) / dx;
    let (p0, p1) = (t.cdf[i], t.cdf[i + 1]);
    let (d0, d1) = (bump(x0) * dx, bump(x1) * dx);
    let (s0, s1) = (bump_prime(x0) * dx * dx, bump_prime(x1) * dx * dx);
    let u2 = u * u;
    let u3 = u2 * u;
    let u4 = u3 * u;
    let u5 = u4 * u;
    let h00 = 1.0 - 10.0 * u3 + 15.0 * u4 - 6.0 * u5;
    let h10 = u - 6.0 * u3 + 8.0 * u4 - 3.0 * u5;
    let h20 = 0.5 * (u2 - 3.0 * u3 + 3.0 * u4 - u5);
    let h01 = 10.0 * u3 - 15.0 * u4 + 6.0 * u5;
    let h11 = -4.0 * u3 + 7.0 * u4 - 3.0 * u5;
    let h21 = 0.5 * (u3 - 2.0 * u4 + u5);
    (h00 * p0 + h10 * d0 + h20 * s0 + h01 * p1 + h11 * d1 + h21 * s1).clamp(0.0, 1.0)
}

/// `E g(U)` for `U` with density `φ₁`.
pub fn bump_expectation<F: Fn(f64) -> f64>(g: F) -> f64 {
    let r = &tables().rule;
    let mut acc = 0.0;
    for (u, w) in r.nodes.iter().zip(&r.weights) {
        acc += w * g(*u);
    }
    acc
}

/// `E[U^{2k}]/(2k)!`, `k = 1, 2, …`, for `U ~ φ₁`.
pub(crate) fn bump_taylor_coefficients() -> &'static [f64; BUMP_TAYLOR_TERMS] {
    &tables().taylor
}

impl MollifierFamily {
    pub fn standard() -> Self {
        MollifierFamily
    }

    /// `φ_n(x) = n φ₁(nx)`.
    pub fn density(&self, n: f64, x: f64) -> f64 {
        n * bump(n * x)
    }

    /// `∫_{-∞}^{x} φ_n`.
    pub fn cdf(&self, n: f64, x: f64) -> f64 {
        bump_cdf(n * x)
    }

    /// `sup φ₁ = φ₁(0)`.
    pub fn sup(&self) -> f64 {
        bump(0.0)
    }

    /// `∫ φ_n` computed by adaptive quadrature (should be 1).
    pub fn mass(&self, n: f64) -> f64 {
        let w = 1.0 / n;
        integrate_adaptive(&|x| self.density(n, x), -w, w, 1e-14).value
    }

    /// `(F_ac ∗ φ_n)(x)` support half-width.
    pub fn support(&self, n: f64) -> f64 {
        1.0 / n
    }
}

/// User-supplied smooth term: value, derivative and a declared `sup|f'|`.
#[derive(Clone)]
pub struct CustomTerm {
    pub label: String,
    pub value: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub derivative: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub derivative_bound: f64,
}

impl fmt::Debug for CustomTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomTerm")
            .field("label", &self.label)
            .field("derivative_bound", &self.derivative_bound)
            .finish()
    }
}

/// One summand of the absolutely continuous part.
#[derive(Debug, Clone)]
pub enum AcTerm {
    /// `a·x`
    Linear(f64),
    /// `a·tanh x`
    Tanh(f64),
    /// `a·sin x`
    Sin(f64),
    Custom(CustomTerm),
    /// `size·Ψ((x − at)/width)`: a jump smeared by `φ_{1/width}`.
    SmoothedStep {
        at: f64,
        size: f64,
        width: f64,
    },
    /// `inner ∗ φ_{1/width}`.
    Convolved {
        inner: Box<AcTerm>,
        width: f64,
    },
}

impl AcTerm {
    pub fn value(&self, x: f64) -> f64 {
        match self {
            AcTerm::Linear(a) => a * x,
            AcTerm::Tanh(a) => a * x.tanh(),
            AcTerm::Sin(a) => a * x.sin(),
            AcTerm::Custom(c) => (c.value)(x),
            AcTerm::SmoothedStep { at, size, width } => size * bump_cdf((x - at) / width),
            AcTerm::Convolved { inner, width } => bump_expectation(|u| inner.value(x - width * u)),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            AcTerm::Linear(a) => *a,
            AcTerm::Tanh(a) => {
                let c = x.cosh();
                a / (c * c)
            }
            AcTerm::Sin(a) => a * x.cos(),
            AcTerm::Custom(c) => (c.derivative)(x),
            AcTerm::SmoothedStep { at, size, width } => size / width * bump((x - at) / width),
            AcTerm::Convolved { inner, width } => {
                bump_expectation(|u| inner.derivative(x - width * u))
            }
        }
    }

    pub fn derivative_bound(&self) -> f64 {
        match self {
            AcTerm::Linear(a) | AcTerm::Tanh(a) | AcTerm::Sin(a) => a.abs(),
            AcTerm::Custom(c) => c.derivative_bound,
            AcTerm::SmoothedStep { size, width, .. } => size.abs() * bump(0.0) / width,
            AcTerm::Convolved { inner, .. } => inner.derivative_bound(),
        }
    }

    /// Points where the term changes character (edges of smoothed jumps).
    fn feature_points(&self, out: &mut Vec<f64>) {
        match self {
            AcTerm::SmoothedStep { at, width, .. } => {
                out.extend([at - width, *at, at + width]);
            }
            AcTerm::Convolved { inner, width } => {
                let mut inner_pts = Vec::new();
                inner.feature_points(&mut inner_pts);
                for p in inner_pts {
                    out.extend([p - width, p + width]);
                }
            }
            _ => {}
        }
    }

    fn mollified(&self, width: f64) -> AcTerm {
        match self {
            AcTerm::Linear(a) => AcTerm::Linear(*a),
            AcTerm::Sin(a) => AcTerm::Sin(a * bump_expectation(|u| (width * u).cos())),
            other => AcTerm::Convolved {
                inner: Box::new(other.clone()),
                width,
            },
        }
    }
}

/// Derivative of a [`GFunction`] as a measure: a density plus atoms.
#[derive(Debug, Clone)]
pub struct DerivativeMeasure {
    ac: Vec<AcTerm>,
    atoms: Vec<(f64, f64)>,
}

impl DerivativeMeasure {
    pub fn density(&self, x: f64) -> f64 {
        self.ac.iter().map(|t| t.derivative(x)).sum()
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }
}

/// `F = F_ac + base + Σ Δᵢ 1[x ≥ aᵢ]`.
#[derive(Debug, Clone)]
pub struct GFunction {
    ac: Vec<AcTerm>,
    base: f64,
    jumps: Vec<(f64, f64)>,
}

impl GFunction {
    /// Validates that jump locations are finite and strictly increasing.
    pub fn new(ac: Vec<AcTerm>, base: f64, jumps: Vec<(f64, f64)>) -> Result<Self> {
        if !base.is_finite() {
            return Err(Error::InvalidArgument("base value must be finite".into()));
        }
        if jumps.iter().any(|(a, d)| !a.is_finite() || !d.is_finite()) {
            return Err(Error::InvalidArgument("jump data must be finite".into()));
        }
        if jumps.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::InvalidArgument(
                "jump locations must be strictly increasing".into(),
            ));
        }
        Ok(Self { ac, base, jumps })
    }

    pub fn constant(c: f64) -> Self {
        Self {
            ac: vec![],
            base: c,
            jumps: vec![],
        }
    }

    pub fn identity() -> Self {
        Self::linear(1.0)
    }

    pub fn linear(a: f64) -> Self {
        Self {
            ac: vec![AcTerm::Linear(a)],
            base: 0.0,
            jumps: vec![],
        }
    }

    pub fn tanh() -> Self {
        Self {
            ac: vec![AcTerm::Tanh(1.0)],
            base: 0.0,
            jumps: vec![],
        }
    }

    pub fn sin() -> Self {
        Self {
            ac: vec![AcTerm::Sin(1.0)],
            base: 0.0,
            jumps: vec![],
        }
    }

    /// `sgn x`: base −1, jump of 2 at the origin.
    pub fn sgn() -> Self {
        Self {
            ac: vec![],
            base: -1.0,
            jumps: vec![(0.0, 2.0)],
        }
    }

    /// Pure step function `Σ Δᵢ 1[x ≥ aᵢ]`.
    pub fn steps(jumps: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(vec![], 0.0, jumps)
    }

    pub fn custom(
        label: impl Into<String>,
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative_bound: f64,
    ) -> Self {
        Self {
            ac: vec![AcTerm::Custom(CustomTerm {
                label: label.into(),
                value: Arc::new(value),
                derivative: Arc::new(derivative),
                derivative_bound,
            })],
            base: 0.0,
            jumps: vec![],
        }
    }

    /// `F + G`; jumps at a shared location are merged.
    pub fn sum(&self, other: &GFunction) -> GFunction {
        let mut ac = self.ac.clone();
        ac.extend(other.ac.iter().cloned());
        let mut jumps = self.jumps.clone();
        for &(a, d) in &other.jumps {
            match jumps.iter_mut().find(|(b, _)| *b == a) {
                Some(j) => j.1 += d,
                None => jumps.push((a, d)),
            }
        }
        jumps.retain(|(_, d)| *d != 0.0);
        jumps.sort_by(|x, y| x.0.total_cmp(&y.0));
        GFunction {
            ac,
            base: self.base + other.base,
            jumps,
        }
    }

    pub fn ac_terms(&self) -> &[AcTerm] {
        &self.ac
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    pub fn jumps(&self) -> &[(f64, f64)] {
        &self.jumps
    }

    pub fn has_atoms(&self) -> bool {
        !self.jumps.is_empty()
    }

    /// `F(x)`, right-continuous at jump locations.
    pub fn evaluate(&self, x: f64) -> f64 {
        let mut v = self.base + self.ac_value(x);
        for &(a, d) in &self.jumps {
            if a <= x {
                v += d;
            }
        }
        v
    }

    pub fn ac_value(&self, x: f64) -> f64 {
        self.ac.iter().map(|t| t.value(x)).sum()
    }

    /// Density of the derivative measure, `F_ac'(x)`.
    pub fn ac_derivative(&self, x: f64) -> f64 {
        self.ac.iter().map(|t| t.derivative(x)).sum()
    }

    /// Declared `sup |F_ac'|`.
    pub fn derivative_bound(&self) -> f64 {
        self.ac.iter().map(AcTerm::derivative_bound).sum()
    }

    pub fn derivative_measure(&self) -> DerivativeMeasure {
        DerivativeMeasure {
            ac: self.ac.clone(),
            atoms: self.jumps.clone(),
        }
    }

    /// Locations where `F` or its derivative changes abruptly.
    pub fn feature_points(&self) -> Vec<f64> {
        let mut pts: Vec<f64> = self.jumps.iter().map(|j| j.0).collect();
        for t in &self.ac {
            t.feature_points(&mut pts);
        }
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }

    /// `∫ h dF' = ∫ h F_ac' dx + Σ Δᵢ h(aᵢ)` for `h` supported in `support`.
    pub fn derivative_pairing<H: Fn(f64) -> f64>(&self, h: H, support: (f64, f64)) -> Result<f64> {
        let (lo, hi) = support;
        let atoms: f64 = self.jumps.iter().map(|&(a, d)| d * h(a)).sum();
        if self.ac.is_empty() {
            return Ok(atoms);
        }
        let mut cuts = vec![lo];
        cuts.extend(
            self.feature_points()
                .into_iter()
                .filter(|p| *p > lo && *p < hi),
        );
        cuts.push(hi);
        let f = |x: f64| h(x) * self.ac_derivative(x);
        let tol = 1e-12;
        let mut value = 0.0;
        let mut error = 0.0;
        let mut converged = true;
        for w in cuts.windows(2) {
            let r = integrate_adaptive(&f, w[0], w[1], tol / cuts.len() as f64);
            value += r.value;
            error += r.error;
            converged &= r.converged;
        }
        if !converged {
            return Err(Error::NonConvergence {
                estimate: value + atoms,
                previous: f64::NAN,
                achieved: error,
                tolerance: tol,
            });
        }
        Ok(value + atoms)
    }

    /// `M = |F_ac(0)| + sup|F_ac'| + |base| + Σ|Δᵢ|`, valid for `F` and every
    /// mollification of it: `|F(x)|, |F_n(x)| ≤ M(1 + |x|)`.
    pub fn linear_growth_bound(&self) -> f64 {
        self.ac_value(0.0).abs()
            + self.derivative_bound()
            + self.base.abs()
            + self.jumps.iter().map(|j| j.1.abs()).sum::<f64>()
    }

    /// `F_n = F ∗ φ_n`, returned as a jump-free function.
    pub fn mollify(&self, n: u32, family: &MollifierFamily) -> GFunction {
        let width = family.support(n as f64);
        let mut ac: Vec<AcTerm> = self.ac.iter().map(|t| t.mollified(width)).collect();
        for &(at, size) in &self.jumps {
            ac.push(AcTerm::SmoothedStep { at, size, width });
        }
        GFunction {
            ac,
            base: self.base,
            jumps: vec![],
        }
    }
}

/// Values of `∫ h F_n' dx` along a mollification ladder against `∫ h dF'`.
#[derive(Debug, Clone, Serialize)]
pub struct PairingConvergence {
    pub limit: f64,
    pub levels: Vec<u32>,
    pub values: Vec<f64>,
    pub deviations: Vec<f64>,
    /// Largest deviation over the second half of the ladder.
    pub max_tail_deviation: f64,
}

pub fn derivative_pairing_converges<H: Fn(f64) -> f64>(
    f: &GFunction,
    h: H,
    support: (f64, f64),
    family: &MollifierFamily,
    n_list: &[u32],
) -> Result<PairingConvergence> {
    let limit = f.derivative_pairing(&h, support)?;
    let mut values = Vec::with_capacity(n_list.len());
    for &n in n_list {
        values.push(f.mollify(n, family).derivative_pairing(&h, support)?);
    }
    let deviations: Vec<f64> = values.iter().map(|v| (v - limit).abs()).collect();
    let max_tail_deviation = deviations[deviations.len() / 2..]
        .iter()
        .cloned()
        .fold(0.0, f64::max);
    Ok(PairingConvergence {
        limit,
        levels: n_list.to_vec(),
        values,
        deviations,
        max_tail_deviation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::{norm_pdf, INV_SQRT_2PI};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn bump_tables() {
        let fam = MollifierFamily::standard();
        for n in [1.0, 8.0, 128.0] {
            assert!((fam.mass(n) - 1.0).abs() < 1e-10);
        }
        assert!((bump_expectation(|_| 1.0) - 1.0).abs() < 1e-14);
        assert!((bump_expectation(|u| (3.0 * u).cos()) - 0.445_733_759_431_964_46).abs() < 1e-14);
        assert!(bump_expectation(|u| u).abs() < 1e-15);
        assert_eq!(bump(0.3), bump(-0.3));
        assert_eq!(bump_cdf(0.0), 0.5);
        for &x in &[-0.9, -0.31, 0.05, 0.77] {
            let exact = integrate_adaptive(&bump, -1.0, x, 1e-15).value;
            assert!((bump_cdf(x) - exact).abs() < 1e-12, "{x}");
            assert!((bump_cdf(x) + bump_cdf(-x) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn evaluate_examples() {
        let s = GFunction::sgn();
        assert_eq!(s.evaluate(1.0), 1.0);
        assert_eq!(s.evaluate(-1.0), -1.0);
        assert_eq!(s.evaluate(0.0), 1.0);
        assert_eq!(GFunction::identity().evaluate(3.5), 3.5);
        assert_eq!(GFunction::tanh().evaluate(0.0), 0.0);
    }

    #[test]
    fn rejects_unsorted_jumps() {
        assert!(GFunction::steps(vec![(1.0, 1.0), (1.0, 2.0)]).is_err());
        assert!(GFunction::steps(vec![(1.0, 1.0), (0.0, 2.0)]).is_err());
        assert!(GFunction::steps(vec![(0.0, 1.0), (1.0, 2.0)]).is_ok());
    }

    #[test]
    fn pairing_examples() {
        let sup = (-12.0, 12.0);
        let v = GFunction::sgn().derivative_pairing(norm_pdf, sup).unwrap();
        assert!((v - 2.0 * INV_SQRT_2PI).abs() < 1e-15);
        let v = GFunction::identity()
            .derivative_pairing(norm_pdf, sup)
            .unwrap();
        assert!((v - 1.0).abs() < 1e-11);
        // smoothed indicator of |x| ≤ 5 against tanh', dense midpoint oracle
        let h = |x: f64| bump_cdf(x + 5.0) * (1.0 - bump_cdf(x - 5.0));
        let v = GFunction::tanh()
            .derivative_pairing(h, (-6.0, 6.0))
            .unwrap();
        let m = 400_000;
        let dx = 12.0 / m as f64;
        let oracle: f64 = (0..m)
            .map(|i| {
                let x = -6.0 + (i as f64 + 0.5) * dx;
                h(x) / x.cosh().powi(2) * dx
            })
            .sum();
        assert!((v - oracle).abs() < 1e-6);
    }

    #[test]
    fn pairing_ladder() {
        let fam = MollifierFamily::standard();
        let r = derivative_pairing_converges(
            &GFunction::sgn(),
            norm_pdf,
            (-12.0, 12.0),
            &fam,
            &[4, 16, 64, 256],
        )
        .unwrap();
        assert!((r.limit - 0.797_884_560_802_865_4).abs() < 1e-14);
        assert!(r.deviations.windows(2).all(|w| w[1] < w[0]));
        let r = derivative_pairing_converges(
            &GFunction::sin(),
            norm_pdf,
            (-12.0, 12.0),
            &fam,
            &[8, 64],
        )
        .unwrap();
        // sin' ∗ φ_n differs from sin' by O(1/n²)
        assert!(r.deviations[1] < 1e-3);
        // unit step at 2 against h vanishing on [1.5, 2.5]
        let step = GFunction::steps(vec![(2.0, 1.0)]).unwrap();
        let h = |x: f64| {
            if x < 1.5 {
                norm_pdf(x) * (1.5 - x).min(1.0)
            } else {
                0.0
            }
        };
        let r = derivative_pairing_converges(&step, h, (-12.0, 1.5), &fam, &[4, 16]).unwrap();
        assert_eq!(r.limit, 0.0);
        assert!(r.deviations.iter().all(|d| *d == 0.0));
    }

    #[test]
    fn growth_bound_examples() {
        assert_eq!(GFunction::sgn().linear_growth_bound(), 3.0);
        assert!(GFunction::identity().linear_growth_bound() >= 1.0);
        assert!(GFunction::constant(5.0).linear_growth_bound() >= 5.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for f in [GFunction::sgn(), GFunction::identity(), GFunction::tanh()] {
            let m = f.linear_growth_bound();
            for _ in 0..1_000_000 {
                let x: f64 = rng.random_range(-50.0..50.0);
                assert!(f.evaluate(x).abs() <= m * (1.0 + x.abs()));
            }
        }
    }

    #[test]
    fn mollify_examples() {
        let fam = MollifierFamily::standard();
        let c = GFunction::constant(2.5).mollify(16, &fam);
        assert_eq!(c.evaluate(0.3), 2.5);
        let s = GFunction::sgn().mollify(64, &fam);
        assert!(!s.has_atoms());
        assert_eq!(s.evaluate(2.0 / 64.0), 1.0);
        assert_eq!(s.evaluate(-2.0 / 64.0), -1.0);
        assert_eq!(s.evaluate(0.0), 0.0);
        let bound = GFunction::sgn().derivative_bound() + 64.0 * fam.sup() * 2.0;
        assert!(s.derivative_bound() <= bound + 1e-12);
        // sin ∗ φ_n equals sin scaled by E cos(U/n)
        let m = GFunction::sin().mollify(4, &fam);
        let direct = bump_expectation(|u| (0.7 - u / 4.0).sin());
        assert!((m.evaluate(0.7) - direct).abs() < 1e-14);
    }

    #[test]
    fn pure_jump_l1_mass() {
        let fam = MollifierFamily::standard();
        let f = GFunction::steps(vec![(-1.0, 0.5), (0.5, -2.0)]).unwrap();
        for n in [4, 32] {
            let g = f.mollify(n, &fam);
            let mass = integrate_adaptive(&|x| g.ac_derivative(x).abs(), -2.0, 2.0, 1e-13).value;
            assert!(mass <= 2.5 + 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn pointwise_mollifier_convergence(x in -3.0f64..3.0) {
            let fam = MollifierFamily::standard();
            let fs = [GFunction::sgn(), GFunction::tanh(), GFunction::steps(vec![(0.5, 1.0)]).unwrap()];
            for f in &fs {
                if f.jumps().iter().any(|(a, _)| (x - a).abs() < 1e-9) {
                    continue;
                }
                let d: Vec<f64> = [8, 32, 128]
                    .iter()
                    .map(|&n| (f.mollify(n, &fam).evaluate(x) - f.evaluate(x)).abs())
                    .collect();
                for w in d.windows(2) {
                    prop_assert!(w[1] < w[0] || w[1] < 1e-9, "{:?}", d);
                }
            }
        }

        #[test]
        fn uniform_linear_growth(x in -40.0f64..40.0, n in 1u32..300) {
            let fam = MollifierFamily::standard();
            for f in [GFunction::sgn(), GFunction::tanh().sum(&GFunction::steps(vec![(1.0, -3.0)]).unwrap())] {
                let m = f.linear_growth_bound();
                let v = f.mollify(n, &fam).evaluate(x);
                prop_assert!(v.abs() <= m * (1.0 + x.abs()));
            }
        }

        #[test]
        fn ac_derivative_bound_survives_mollification(x in -5.0f64..5.0, n in 1u32..64) {
            let fam = MollifierFamily::standard();
            for f in [GFunction::tanh(), GFunction::sin(), GFunction::linear(-2.0)] {
                let b = f.derivative_bound();
                prop_assert!(f.ac_derivative(x).abs() <= b);
                prop_assert!(f.mollify(n, &fam).ac_derivative(x).abs() <= b + 1e-12);
            }
        }
    }
}
