//! Kernel-represented Hilbert–Schmidt operators on step functions.
//!
//! A kernel `k` acts by
//!
//! ```text
//! (K h)(u) = α_H ∫dt ∫ds h(t) |t−s|^{2H−2} k(s, u)
//!
//!            row i = first argument s  (cell i)
//!            col j = second argument u (cell j)
//!
//! K h = hᵀ · W · K        W[a][b] = α_H ∬_{cell a × cell b} |x−y|^{2H−2}
//! ```
//!
//! so `compose(k₁, k₂) = K₁ W K₂` and `trace(k) = Σ W ∘ K`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fbm_model::{gamma_kernel, gram_matrix, weighted_inner_product, GridFunction, HurstParameter, TimeGrid};
use crate::gclass::GFunction;
use crate::rules::{legendre, pairwise_sum};

/// Largest grid accepted by [`gram_trace_oracle`].
pub const ORACLE_MAX_CELLS: usize = 512;

/// Piecewise-constant kernel on `grid × grid` with a declared bound on `|k|`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelOperator {
    grid: TimeGrid,
    kernel: DMatrix<f64>,
    bound: f64,
}

impl KernelOperator {
    pub fn new(grid: TimeGrid, kernel: DMatrix<f64>, bound: f64) -> Result<Self> {
        let n = grid.n_cells();
        if kernel.nrows() != n || kernel.ncols() != n {
            return Err(Error::GridMismatch(format!(
                "kernel is {}×{} but the grid has {n} cells",
                kernel.nrows(),
                kernel.ncols()
            )));
        }
        if !(bound >= 0.0) {
            return Err(Error::InvalidArgument(format!("bound must be ≥ 0 (got {bound})")));
        }
        let max = kernel.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(max <= bound * (1.0 + 1e-12)) {
            return Err(Error::InvalidArgument(format!(
                "kernel entry {max} exceeds the declared bound {bound}"
            )));
        }
        Ok(Self {
            grid,
            kernel,
            bound,
        })
    }

    /// Samples `k` at cell midpoints; the bound is the largest sample.
    pub fn from_fn(grid: &TimeGrid, k: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let n = grid.n_cells();
        let kernel = DMatrix::from_fn(n, n, |i, j| k(grid.midpoint(i), grid.midpoint(j)));
        if kernel.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("kernel has non-finite samples".into()));
        }
        let bound = kernel.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Self::new(grid.clone(), kernel, bound)
    }

    pub fn zero(grid: &TimeGrid) -> Self {
        let n = grid.n_cells();
        Self {
            grid: grid.clone(),
            kernel: DMatrix::zeros(n, n),
            bound: 0.0,
        }
    }

    /// `k(s,t) = a(s) b(t)`.
    pub fn rank_one(a: &GridFunction, b: &GridFunction) -> Result<Self> {
        if a.grid() != b.grid() {
            return Err(Error::GridMismatch("rank-one factors on different grids".into()));
        }
        let n = a.grid().n_cells();
        let kernel = DMatrix::from_fn(n, n, |i, j| a.values()[i] * b.values()[j]);
        let bound = kernel.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Self::new(a.grid().clone(), kernel, bound)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// `k*(s,t) = k(t,s)`.
    pub fn transpose(&self) -> Self {
        Self {
            grid: self.grid.clone(),
            kernel: self.kernel.transpose(),
            bound: self.bound,
        }
    }

    /// `a k₁ + b k₂`.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        same_grid(self, other)?;
        Ok(Self {
            grid: self.grid.clone(),
            kernel: &self.kernel * a + &other.kernel * b,
            bound: a.abs() * self.bound + b.abs() * other.bound,
        })
    }

    /// `K h` as a step function.
    pub fn apply(&self, h: &GridFunction, hurst: HurstParameter) -> Result<GridFunction> {
        if h.grid() != &self.grid {
            return Err(Error::GridMismatch("function and kernel on different grids".into()));
        }
        let w = gram_matrix(&self.grid, hurst);
        let hv = nalgebra::DVector::from_column_slice(h.values());
        let out = self.kernel.transpose() * (w * hv);
        GridFunction::new(self.grid.clone(), out.as_slice().to_vec())
    }
}

fn same_grid(a: &KernelOperator, b: &KernelOperator) -> Result<()> {
    if a.grid != b.grid {
        return Err(Error::GridMismatch("kernels on different grids".into()));
    }
    Ok(())
}

/// `Σ_ij a_ij b_ij`, summed pairwise.
fn frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let terms: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x * y).collect();
    pairwise_sum(&terms)
}

/// Kernel of `K₁K₂`: `k(s,t) = α_H ∬ k₁(s,τ) k₂(σ,t) |τ−σ|^{2H−2} dτ dσ`.
pub fn compose(k1: &KernelOperator, k2: &KernelOperator, h: HurstParameter) -> Result<KernelOperator> {
    same_grid(k1, k2)?;
    let w = gram_matrix(&k1.grid, h);
    let kernel = &k1.kernel * (w * &k2.kernel);
    let mass = k1.grid.horizon().powf(h.two_h());
    Ok(KernelOperator {
        grid: k1.grid.clone(),
        kernel,
        bound: k1.bound * k2.bound * mass,
    })
}

/// `α_H ∬ k(s,t) |s−t|^{2H−2} ds dt`.
pub fn trace(k: &KernelOperator, h: HurstParameter) -> f64 {
    frobenius(&gram_matrix(&k.grid, h), &k.kernel)
}

/// `α_H² ∫ k₁(s₁,t₁) k₂(s₂,t₂) |s₁−s₂|^{2H−2} |t₁−t₂|^{2H−2}`.
pub fn hs_inner_product(k1: &KernelOperator, k2: &KernelOperator, h: HurstParameter) -> Result<f64> {
    same_grid(k1, k2)?;
    let w = gram_matrix(&k1.grid, h);
    let wk1w = &w * &k1.kernel * &w;
    Ok(frobenius(&wk1w, &k2.kernel))
}

/// Brute-force trace of `K₁K₂`: the operators as matrices on cell
/// coefficients (`c ↦ Kᵀ W c`), multiplied and traced. `O(n³)`.
pub fn gram_trace_oracle(k1: &KernelOperator, k2: &KernelOperator, h: HurstParameter) -> Result<f64> {
    same_grid(k1, k2)?;
    let grid = &k1.grid;
    let n = grid.n_cells();
    if n > ORACLE_MAX_CELLS {
        return Err(Error::TooLarge(format!(
            "gram oracle needs n ≤ {ORACLE_MAX_CELLS} (got {n})"
        )));
    }
    let cells: Vec<GridFunction> = (0..n)
        .map(|i| {
            let mut v = vec![0.0; n];
            v[i] = 1.0;
            GridFunction::new(grid.clone(), v)
        })
        .collect::<Result<_>>()?;
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = weighted_inner_product(&cells[i], &cells[j], h)?;
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    let a1 = k1.kernel.transpose() * &w;
    let a2 = k2.kernel.transpose() * &w;
    Ok((a2 * a1).trace())
}

/// Kernel of `D(F(B)·1_{[0,t]})`: `k(τ,σ) = F′(B_σ) 1_{[τ,t]}(σ) 1_{[0,t]}(τ)`.
///
/// `path` holds `B` at the grid nodes; `F′` is evaluated at the cell average of
/// the path and the indicator is averaged over each cell pair, which gives
/// `½` on diagonal cells.
pub fn malliavin_kernel(f: &GFunction, grid: &TimeGrid, path: &[f64], t: f64) -> Result<KernelOperator> {
    if f.has_atoms() {
        return Err(Error::AtomsNotSupported(
            "the Malliavin kernel needs F′ as a function; mollify first".into(),
        ));
    }
    if path.len() != grid.nodes().len() {
        return Err(Error::GridMismatch(format!(
            "{} path values for {} nodes",
            path.len(),
            grid.nodes().len()
        )));
    }
    let last = grid
        .node_index(t)
        .ok_or_else(|| Error::InvalidArgument(format!("t = {t} is not a grid node")))?;
    let n = grid.n_cells();
    let mut kernel = DMatrix::zeros(n, n);
    let mut bound = 0.0f64;
    for j in 0..last {
        let d = f.ac_derivative(0.5 * (path[j] + path[j + 1]));
        bound = bound.max(d.abs());
        for i in 0..j {
            kernel[(i, j)] = d;
        }
        kernel[(j, j)] = 0.5 * d;
    }
    KernelOperator::new(grid.clone(), kernel, bound)
}

/// `α_H ∬_{[0,t]×[0,s]} γ(τ,σ) F′(B_τ) G′(B_σ) dτ dσ` with `F′`, `G′` frozen
/// on cells as in [`malliavin_kernel`] and `γ` integrated per cell pair.
pub fn gamma_weighted_pairing(
    f: &GFunction,
    g: &GFunction,
    grid: &TimeGrid,
    path: &[f64],
    t: f64,
    s: f64,
    h: HurstParameter,
) -> Result<f64> {
    let kf = malliavin_kernel(f, grid, path, t)?;
    let kg = malliavin_kernel(g, grid, path, s)?;
    let nt = grid.node_index(t).expect("checked above");
    let ns = grid.node_index(s).expect("checked above");
    let fd: Vec<f64> = (0..nt).map(|j| 2.0 * kf.kernel[(j, j)]).collect();
    let gd: Vec<f64> = (0..ns).map(|j| 2.0 * kg.kernel[(j, j)]).collect();
    let mut terms = Vec::with_capacity(nt * ns);
    for (i, &a) in fd.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        for (j, &b) in gd.iter().enumerate() {
            if b != 0.0 {
                terms.push(a * b * cell_gamma(grid.cell(i), grid.cell(j), h));
            }
        }
    }
    Ok(h.alpha() * pairwise_sum(&terms))
}

/// `∬_{cell × cell} γ`; diagonal cells are split along `τ = σ` so the kink of
/// `γ` lies on an edge.
fn cell_gamma((a, b): (f64, f64), (c, d): (f64, f64), h: HurstParameter) -> f64 {
    let rule = legendre(12);
    let gamma = |x: f64, y: f64| gamma_kernel(x, y, h);
    if a != c {
        let mut acc = 0.0;
        for (u, wu) in rule.nodes.iter().zip(&rule.weights) {
            let x = 0.5 * (a + b) + 0.5 * (b - a) * u;
            for (v, wv) in rule.nodes.iter().zip(&rule.weights) {
                let y = 0.5 * (c + d) + 0.5 * (d - c) * v;
                acc += wu * wv * gamma(x, y);
            }
        }
        return acc * 0.25 * (b - a) * (d - c);
    }
    // triangle x > y, collapsed: x = a + L p, y = a + L p q
    let l = b - a;
    let mut acc = 0.0;
    for (u, wu) in rule.nodes.iter().zip(&rule.weights) {
        let p = 0.5 * (1.0 + u);
        for (v, wv) in rule.nodes.iter().zip(&rule.weights) {
            let q = 0.5 * (1.0 + v);
            let x = a + l * p;
            let y = a + l * p * q;
            acc += wu * wv * p * (gamma(x, y) + gamma(y, x));
        }
    }
    acc * 0.25 * l * l
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm_model::covariance_rh;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hp(h: f64) -> HurstParameter {
        HurstParameter::new(h).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    fn random_kernel(grid: &TimeGrid, rng: &mut ChaCha8Rng) -> KernelOperator {
        let n = grid.n_cells();
        let k = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        KernelOperator::new(grid.clone(), k, 1.0).unwrap()
    }

    fn random_fn(grid: &TimeGrid, rng: &mut ChaCha8Rng) -> GridFunction {
        let v = (0..grid.n_cells()).map(|_| rng.random_range(-1.0..1.0)).collect();
        GridFunction::new(grid.clone(), v).unwrap()
    }

    #[test]
    fn zero_kernels() {
        let grid = TimeGrid::uniform(1.0, 8).unwrap();
        let h = hp(0.7);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = random_kernel(&grid, &mut rng);
        let z = KernelOperator::zero(&grid);
        assert!(compose(&k, &z, h).unwrap().kernel().iter().all(|&v| v == 0.0));
        assert_eq!(trace(&z, h), 0.0);
        assert_eq!(gram_trace_oracle(&z, &k, h).unwrap(), 0.0);
    }

    #[test]
    fn rank_one_algebra() {
        let grid = TimeGrid::uniform(2.0, 16).unwrap();
        let h = hp(0.65);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (h1, g1, h2, g2) = (
            random_fn(&grid, &mut rng),
            random_fn(&grid, &mut rng),
            random_fn(&grid, &mut rng),
            random_fn(&grid, &mut rng),
        );
        let ip = |a: &GridFunction, b: &GridFunction| weighted_inner_product(a, b, h).unwrap();
        let k1 = KernelOperator::rank_one(&h1, &g1).unwrap();
        let k2 = KernelOperator::rank_one(&h2, &g2).unwrap();
        let c = compose(&k1, &k2, h).unwrap();
        let scale = ip(&g1, &h2);
        for i in 0..16 {
            for j in 0..16 {
                let expect = h1.values()[i] * scale * g2.values()[j];
                assert!((c.kernel()[(i, j)] - expect).abs() < 1e-13);
            }
        }
        assert!((trace(&k1, h) - ip(&h1, &g1)).abs() < 1e-13);
        let expect = ip(&g1, &h2) * ip(&h1, &g2);
        assert!(rel(gram_trace_oracle(&k1, &k2, h).unwrap(), expect) < 1e-10);
        assert!(rel(trace(&c, h), expect) < 1e-10);
        // the action matches ⟨h, ·⟩ on the first factor
        let applied = k1.apply(&h2, h).unwrap();
        for (a, b) in applied.values().iter().zip(g1.values()) {
            assert!((a - ip(&h2, &h1) * b).abs() < 1e-13);
        }
    }

    #[test]
    fn separable_hs_product() {
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let h = hp(0.75);
        let one = KernelOperator::from_fn(&grid, |_, _| 1.0).unwrap();
        let v = hs_inner_product(&one, &one, h).unwrap();
        assert!((v - covariance_rh(1.0, 1.0, h).powi(2)).abs() < 1e-13);
        assert!((v - 1.0).abs() < 1e-13);
    }

    #[test]
    fn trace_matches_oracle_and_hs_product() {
        let h = hp(0.8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [32, 64] {
            let grid = TimeGrid::uniform(1.5, n).unwrap();
            let a = random_kernel(&grid, &mut rng);
            let b = random_kernel(&grid, &mut rng);
            let t = trace(&compose(&a, &b, h).unwrap(), h);
            let o = gram_trace_oracle(&a, &b, h).unwrap();
            assert!(rel(t, o) < 1e-10, "{t} {o}");
            let hs = hs_inner_product(&a.transpose(), &b, h).unwrap();
            assert!(rel(t, hs) < 1e-10);
        }
    }

    #[test]
    fn associativity_and_bounds() {
        let grid = TimeGrid::uniform(1.0, 12).unwrap();
        let h = hp(0.7);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (a, b, c) = (
            random_kernel(&grid, &mut rng),
            random_kernel(&grid, &mut rng),
            random_kernel(&grid, &mut rng),
        );
        let l = compose(&compose(&a, &b, h).unwrap(), &c, h).unwrap();
        let r = compose(&a, &compose(&b, &c, h).unwrap(), h).unwrap();
        let scale = l.kernel().amax();
        assert!((l.kernel() - r.kernel()).amax() <= 1e-10 * scale);
        assert!(l.kernel().amax() <= l.bound());
    }

    #[test]
    fn oracle_size_limit_and_mismatch() {
        let h = hp(0.7);
        let big = TimeGrid::uniform(1.0, 513).unwrap();
        let z = KernelOperator::zero(&big);
        assert!(matches!(gram_trace_oracle(&z, &z, h), Err(Error::TooLarge(_))));
        let other = KernelOperator::zero(&TimeGrid::uniform(1.0, 4).unwrap());
        assert!(matches!(compose(&z, &other, h), Err(Error::GridMismatch(_))));
        let bad = KernelOperator::new(TimeGrid::uniform(1.0, 2).unwrap(), DMatrix::from_element(2, 2, 2.0), 1.0);
        assert!(bad.is_err());
    }

    #[test]
    fn malliavin_kernel_examples() {
        let grid = TimeGrid::uniform(1.0, 8).unwrap();
        let path: Vec<f64> = (0..=8).map(|k| (k as f64 * 0.7).sin()).collect();
        let c = malliavin_kernel(&GFunction::constant(2.0), &grid, &path, 1.0).unwrap();
        assert!(c.kernel().iter().all(|&v| v == 0.0));
        let k = malliavin_kernel(&GFunction::identity(), &grid, &path, 0.5).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let expect = if j >= 4 {
                    0.0
                } else if i < j {
                    1.0
                } else if i == j {
                    0.5
                } else {
                    0.0
                };
                assert_eq!(k.kernel()[(i, j)], expect);
            }
        }
        assert!(matches!(
            malliavin_kernel(&GFunction::sgn(), &grid, &path, 0.5),
            Err(Error::AtomsNotSupported(_))
        ));
        assert!(malliavin_kernel(&GFunction::identity(), &grid, &path, 0.3).is_err());
    }

    #[test]
    fn per_path_trace_identity_converges() {
        // a fixed continuous "path" sampled on refining grids
        let h = hp(0.7);
        let b = |x: f64| (3.0 * x).sin() + 0.5 * x;
        let f = GFunction::sin();
        let g = GFunction::tanh();
        let mut gaps = Vec::new();
        for n in [16, 32, 64, 128] {
            let grid = TimeGrid::uniform(1.0, n).unwrap();
            let path: Vec<f64> = grid.nodes().iter().map(|&x| b(x)).collect();
            let kf = malliavin_kernel(&f, &grid, &path, 1.0).unwrap();
            let kg = malliavin_kernel(&g, &grid, &path, 0.5).unwrap();
            let lhs = trace(&compose(&kf, &kg, h).unwrap(), h);
            let rhs = gamma_weighted_pairing(&f, &g, &grid, &path, 1.0, 0.5, h).unwrap();
            gaps.push((lhs - rhs).abs() / rhs.abs());
        }
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
        assert!(gaps[3] < 0.02, "{gaps:?}");
    }

    #[test]
    fn refinements_converge_in_hs_product() {
        let h = hp(0.75);
        let k = |s: f64, t: f64| (s - 2.0 * t).cos() * (1.0 + s * t);
        let vals: Vec<f64> = [8, 16, 32, 64]
            .iter()
            .map(|&n| {
                let grid = TimeGrid::uniform(1.0, n).unwrap();
                let op = KernelOperator::from_fn(&grid, k).unwrap();
                hs_inner_product(&op, &op, h).unwrap()
            })
            .collect();
        let gaps: Vec<f64> = vals.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{vals:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn trace_is_cyclic(seed in 0u64..1000, n in 4usize..48, hv in 0.55f64..0.95) {
            let h = hp(hv);
            let grid = TimeGrid::uniform(1.0 + (seed % 3) as f64, n).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_kernel(&grid, &mut rng);
            let b = random_kernel(&grid, &mut rng);
            let ab = trace(&compose(&a, &b, h).unwrap(), h);
            let ba = trace(&compose(&b, &a, h).unwrap(), h);
            prop_assert!((ab - ba).abs() <= 1e-9 * ab.abs().max(1e-12));
        }

        #[test]
        fn hs_product_is_bilinear_symmetric_and_bounded(seed in 0u64..1000, n in 4usize..32) {
            let h = hp(0.7);
            let grid = TimeGrid::uniform(1.0, n).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_kernel(&grid, &mut rng);
            let b = random_kernel(&grid, &mut rng);
            let c = random_kernel(&grid, &mut rng);
            let (x, y) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let ip = |p: &KernelOperator, q: &KernelOperator| hs_inner_product(p, q, h).unwrap();
            let lhs = ip(&a.combine(x, &b, y).unwrap(), &c);
            let rhs = x * ip(&a, &c) + y * ip(&b, &c);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (x.abs() * ip(&a, &a).sqrt() + y.abs() * ip(&b, &b).sqrt()) * ip(&c, &c).sqrt());
            prop_assert!((ip(&a, &b) - ip(&b, &a)).abs() <= 1e-12 * ip(&a, &a).max(ip(&b, &b)));
            prop_assert!(ip(&a, &a) >= 0.0);
            prop_assert!(ip(&a, &b).powi(2) <= ip(&a, &a) * ip(&b, &b) * (1.0 + 1e-10));
        }
    }
}
