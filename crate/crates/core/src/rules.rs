//! Quadrature rules and small numerical helpers shared by the kernels.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};

/// A fixed interpolatory rule on a reference interval.
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Gauss–Legendre rule on `[-1, 1]` by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> Rule {
    assert!(n >= 1, "Gauss-Legendre order must be positive");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 0..n {
                let jf = j as f64;
                let p3 = p2;
                p2 = p1;
                p1 = ((2.0 * jf + 1.0) * z * p2 - jf * p3) / (jf + 1.0);
            }
            dp = nf * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Rule { nodes, weights }
}

/// Gauss–Hermite rule for the standard normal weight (probabilists'
/// convention): `E g(Z) ≈ Σ wᵢ g(zᵢ)`, weights summing to one.
///
/// Golub–Welsch on the Jacobi matrix of `He_n`.
pub fn gauss_hermite_normal(n: usize) -> Rule {
    assert!(n >= 1, "Gauss-Hermite order must be positive");
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Symmetrize: the exact rule is symmetric, eigen-solver noise is not.
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let z = 0.5 * (pairs[j].0 - pairs[i].0);
        let w = 0.5 * (pairs[i].1 + pairs[j].1);
        pairs[i] = (-z, w);
        pairs[j] = (z, w);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    Rule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1 / total).collect(),
    }
}

/// Cached Gauss–Legendre rule of order `n` (orders up to 64).
pub fn legendre(n: usize) -> &'static Rule {
    static CACHE: OnceLock<Vec<Rule>> = OnceLock::new();
    let rules = CACHE.get_or_init(|| (1..=64).map(gauss_legendre).collect());
    assert!((1..=64).contains(&n), "Gauss-Legendre order {n} not cached");
    &rules[n - 1]
}

/// Cached normal-weight Gauss–Hermite rule for the orders used in the crate.
pub fn hermite(n: usize) -> &'static Rule {
    static CACHE: OnceLock<dashmap::DashMap<usize, &'static Rule>> = OnceLock::new();
    let map = CACHE.get_or_init(dashmap::DashMap::new);
    if let Some(r) = map.get(&n) {
        return *r;
    }
    let rule: &'static Rule = Box::leak(Box::new(gauss_hermite_normal(n)));
    *map.entry(n).or_insert(rule)
}

/// Integrate `f` over `[a, b]` with a fixed Gauss–Legendre rule.
pub fn integrate_gl<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rule: &Rule) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    let mut acc = 0.0;
    for (x, w) in rule.nodes.iter().zip(&rule.weights) {
        acc += w * f(mid + half * x);
    }
    acc * half
}

/// Outcome of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Adaptive {
    pub value: f64,
    pub error: f64,
    pub converged: bool,
}

/// Adaptive bisection with a 10/20-point Gauss–Legendre pair per panel.
///
/// Panels whose estimate sits at rounding level are accepted, and at most
/// `MAX_PANELS` panels are used; either way `converged` reports whether
/// `abs_tol` was met.
pub fn integrate_adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, abs_tol: f64) -> Adaptive {
    const MAX_PANELS: usize = 20_000;
    struct State {
        out: Adaptive,
        panels: usize,
    }
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32, st: &mut State) {
        let coarse = integrate_gl(f, a, b, legendre(10));
        let fine = integrate_gl(f, a, b, legendre(20));
        let err = (fine - coarse).abs();
        let noise = 32.0 * f64::EPSILON * fine.abs();
        st.panels += 1;
        if err <= tol.max(noise)
            || depth >= 40
            || st.panels >= MAX_PANELS
            || (b - a) < 1e-14 * (1.0 + a.abs())
        {
            st.out.value += fine;
            st.out.error += err;
            if err > tol {
                st.out.converged = false;
            }
            return;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, 0.5 * tol, depth + 1, st);
        rec(f, m, b, 0.5 * tol, depth + 1, st);
    }
    let mut st = State {
        out: Adaptive {
            value: 0.0,
            error: 0.0,
            converged: true,
        },
        panels: 0,
    };
    if b > a {
        rec(f, a, b, abs_tol, 0, &mut st);
    }
    st.out
}

pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal distribution function.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// `(1 + u)^p - 1` without cancellation for small `u`.
pub fn pow1p_m1(u: f64, p: f64) -> f64 {
    (p * u.ln_1p()).exp_m1()
}

/// `(e^{c·l} - 1) / c`, continuous at `c = 0`.
pub fn expm1_over(c: f64, l: f64) -> f64 {
    if c == 0.0 {
        l
    } else {
        (c * l).exp_m1() / c
    }
}

/// Pairwise summation; the reduction tree depends only on the length.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        let mut s = 0.0;
        for x in xs {
            s += x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials_exactly() {
        let r = gauss_legendre(8);
        let v = integrate_gl(|x| x.powi(14) + 3.0 * x.powi(3), -1.0, 1.0, &r);
        assert!((v - 2.0 / 15.0).abs() < 1e-14);
        let s: f64 = r.weights.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
    }

    #[test]
    fn hermite_moments() {
        for n in [16, 64, 128] {
            let r = hermite(n);
            let m = |k: i32| -> f64 {
                r.nodes
                    .iter()
                    .zip(&r.weights)
                    .map(|(z, w)| w * z.powi(k))
                    .sum()
            };
            assert!((m(0) - 1.0).abs() < 1e-13);
            assert!(m(1).abs() < 1e-13);
            assert!((m(2) - 1.0).abs() < 1e-12);
            assert!((m(4) - 3.0).abs() < 1e-11);
            assert!((m(6) - 15.0).abs() < 1e-10);
        }
        // E cos Z = e^{-1/2}
        let r = hermite(64);
        let c: f64 = r
            .nodes
            .iter()
            .zip(&r.weights)
            .map(|(z, w)| w * z.cos())
            .sum();
        assert!((c - (-0.5f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn adaptive_handles_sqrt_endpoint() {
        let a = integrate_adaptive(&|x: f64| x.sqrt(), 0.0, 1.0, 1e-12);
        assert!((a.value - 2.0 / 3.0).abs() < 1e-11);
    }

    #[test]
    fn normal_cdf_values() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-16);
        let q = norm_cdf(1.959_963_984_540_054);
        assert!((q - 0.975).abs() < 1e-14, "{q:e}");
        assert!((norm_cdf(-8.0) / 6.220_960_574_271_784e-16 - 1.0).abs() < 1e-13);
    }

    #[test]
    fn pairwise_matches_naive_on_small_input() {
        let xs: Vec<f64> = (1..=100).map(|k| 1.0 / k as f64).collect();
        let naive: f64 = xs.iter().sum();
        assert!((pairwise_sum(&xs) - naive).abs() < 1e-13);
    }
}
