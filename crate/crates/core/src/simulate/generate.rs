//! Exact sampling of fBm on uniform grids.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbm_model::{covariance_rh, HurstParameter, TimeGrid};

use super::{PathEnsemble, Seed};

/// Largest grid for the Cholesky generator.
pub const CHOLESKY_MAX_STEPS: usize = 4096;

/// Tolerance below which negative circulant eigenvalues are clamped.
const EMBEDDING_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    Cholesky,
    Circulant,
}

impl Generator {
    pub fn tag(&self) -> u8 {
        match self {
            Generator::Cholesky => 0,
            Generator::Circulant => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Generator::Cholesky),
            1 => Ok(Generator::Circulant),
            other => Err(Error::InvalidArgument(format!("unknown generator tag {other}"))),
        }
    }
}

impl std::str::FromStr for Generator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cholesky" => Ok(Generator::Cholesky),
            "circulant" => Ok(Generator::Circulant),
            other => Err(Error::InvalidArgument(format!(
                "unknown generator `{other}` (expected cholesky or circulant)"
            ))),
        }
    }
}

/// A prepared sampler: paths `2p` and `2p+1` come from stream `p` of the seed.
pub(crate) enum Sampler {
    Cholesky {
        factor: Arc<DMatrix<f64>>,
    },
    Circulant {
        sqrt_eig: Vec<f64>,
        fft: Arc<dyn Fft<f64>>,
        scale: f64,
    },
}

impl Sampler {
    pub fn new(grid: &TimeGrid, h: HurstParameter, generator: Generator) -> Result<Self> {
        if !grid.is_uniform() {
            return Err(Error::InvalidGrid("path generation needs a uniform grid".into()));
        }
        match generator {
            Generator::Cholesky => Ok(Sampler::Cholesky {
                factor: cholesky_factor(grid, h)?,
            }),
            Generator::Circulant => circulant(grid, h),
        }
    }

    /// Writes paths `2·pair` and `2·pair + 1` (node values, `B₀ = 0`).
    pub fn sample_pair(&self, seed: Seed, pair: u64, a: &mut [f64], b: &mut [f64]) {
        let n = a.len() - 1;
        let mut rng = seed.stream(pair);
        match self {
            Sampler::Cholesky { factor } => {
                for out in [a, b] {
                    let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
                    let x = factor.as_ref() * z;
                    out[0] = 0.0;
                    out[1..].copy_from_slice(x.as_slice());
                }
            }
            Sampler::Circulant {
                sqrt_eig,
                fft,
                scale,
            } => {
                let mut buf: Vec<Complex<f64>> = sqrt_eig
                    .iter()
                    .map(|&l| {
                        let re: f64 = StandardNormal.sample(&mut rng);
                        let im: f64 = StandardNormal.sample(&mut rng);
                        Complex::new(l * re, l * im)
                    })
                    .collect();
                fft.process(&mut buf);
                let (mut sa, mut sb) = (0.0, 0.0);
                a[0] = 0.0;
                b[0] = 0.0;
                for k in 0..n {
                    sa += scale * buf[k].re;
                    sb += scale * buf[k].im;
                    a[k + 1] = sa;
                    b[k + 1] = sb;
                }
            }
        }
    }
}

type FactorKey = (u64, usize, u64);

fn cholesky_factor(grid: &TimeGrid, h: HurstParameter) -> Result<Arc<DMatrix<f64>>> {
    static CACHE: OnceLock<Mutex<HashMap<FactorKey, Arc<DMatrix<f64>>>>> = OnceLock::new();
    let n = grid.n_cells();
    if n > CHOLESKY_MAX_STEPS {
        return Err(Error::TooLarge(format!(
            "Cholesky generation needs n ≤ {CHOLESKY_MAX_STEPS} (got {n}); use the circulant generator"
        )));
    }
    let key = (grid.horizon().to_bits(), n, h.value().to_bits());
    let cache = CACHE.get_or_init(Default::default);
    if let Some(f) = cache.lock().expect("cache lock").get(&key) {
        return Ok(f.clone());
    }
    let t = &grid.nodes()[1..];
    let cov = DMatrix::from_fn(n, n, |i, j| covariance_rh(t[i], t[j], h));
    let factor = match cov.clone().cholesky() {
        Some(c) => c.unpack(),
        None => {
            let min = cov.symmetric_eigenvalues().min();
            return Err(Error::Generation(format!(
                "covariance matrix is not positive definite (smallest eigenvalue {min:e})"
            )));
        }
    };
    let factor = Arc::new(factor);
    cache.lock().expect("cache lock").insert(key, factor.clone());
    Ok(factor)
}

/// Davies–Harte embedding of the increments `B_{t_{k+1}} − B_{t_k}`.
fn circulant(grid: &TimeGrid, h: HurstParameter) -> Result<Sampler> {
    let n = grid.n_cells();
    let m = 2 * n;
    let p = h.two_h();
    // autocovariance of unit-step fractional Gaussian noise
    let c = |k: usize| {
        let k = k as f64;
        0.5 * ((k + 1.0).powf(p) - 2.0 * k.powf(p) + (k - 1.0).abs().powf(p))
    };
    let mut row: Vec<Complex<f64>> = (0..m)
        .map(|j| {
            let k = if j <= n { j } else { m - j };
            Complex::new(c(k), 0.0)
        })
        .collect();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(m);
    fft.process(&mut row);
    let top = row.iter().fold(0.0f64, |a, z| a.max(z.re));
    let mut sqrt_eig = Vec::with_capacity(m);
    let mut clamped = 0usize;
    for z in &row {
        let l = z.re;
        if l < -EMBEDDING_TOL * top {
            return Err(Error::Generation(format!(
                "circulant embedding has eigenvalue {l:e} (largest {top:e})"
            )));
        }
        if l < 0.0 {
            clamped += 1;
        }
        sqrt_eig.push((l.max(0.0) / m as f64).sqrt());
    }
    if clamped > 0 {
        log::warn!("clamped {clamped} slightly negative circulant eigenvalues to 0");
    }
    let dt = grid.horizon() / n as f64;
    Ok(Sampler::Circulant {
        sqrt_eig,
        fft,
        scale: dt.powf(h.value()),
    })
}

fn generate(
    grid: &TimeGrid,
    h: HurstParameter,
    seed: Seed,
    n_paths: usize,
    generator: Generator,
) -> Result<PathEnsemble> {
    let sampler = Sampler::new(grid, h, generator)?;
    let width = grid.nodes().len();
    let mut paths = vec![0.0; n_paths * width];
    paths
        .par_chunks_mut(2 * width)
        .enumerate()
        .for_each(|(pair, chunk)| {
            let mut spare = vec![0.0; width];
            let (a, b) = chunk.split_at_mut(width);
            let b = if b.is_empty() { spare.as_mut_slice() } else { b };
            sampler.sample_pair(seed, pair as u64, a, b);
        });
    PathEnsemble::new(grid.clone(), h, paths, seed, generator)
}

/// Exact sampling by Cholesky factorization of `R_H(t_i, t_j)`; the factor is
/// cached per `(grid, H)`.
pub fn generate_cholesky(
    grid: &TimeGrid,
    h: HurstParameter,
    seed: Seed,
    n_paths: usize,
) -> Result<PathEnsemble> {
    generate(grid, h, seed, n_paths, Generator::Cholesky)
}

/// Exact sampling by circulant embedding of the stationary increments,
/// `O(n log n)` per pair of paths.
pub fn generate_circulant(
    grid: &TimeGrid,
    h: HurstParameter,
    seed: Seed,
    n_paths: usize,
) -> Result<PathEnsemble> {
    generate(grid, h, seed, n_paths, Generator::Circulant)
}
