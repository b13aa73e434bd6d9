//! Exact fBm sampling, pathwise integrals and Monte Carlo estimates of the
//! cross-covariance.

mod generate;
mod integrals;
mod io;
mod mc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbm_model::{HurstParameter, TimeGrid};

pub use generate::{generate_cholesky, generate_circulant, Generator, CHOLESKY_MAX_STEPS};
pub use integrals::{
    divergence_integral, divergence_integral_with, young_integral, young_integral_with, DivergenceSample,
    YoungRule,
};
pub use io::{
    atomic_write, cache_file_name, decode_ensemble, encode_ensemble, load_or_generate, read_ensemble,
    write_ensemble, write_ensemble_csv,
};
pub use mc::{
    default_ladder_rate, map_paths, mc_cross_covariance, mc_grid, mc_mollified_ladder, mc_on_ensemble,
    EnsembleParams, McEstimate, MollifiedLadder,
};

/// Root of a counter-based family of random streams: stream `k` is a pure
/// function of `(root, k)`. Paths `2k` and `2k+1` are drawn from stream `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Seed {
    pub root: u64,
}

impl Seed {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn stream(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.root);
        rng.set_stream(index);
        rng
    }
}

/// Sampled paths on a uniform grid, one row of node values per path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    grid: TimeGrid,
    hurst: HurstParameter,
    paths: Vec<f64>,
    seed: Seed,
    generator: Generator,
}

impl PathEnsemble {
    pub fn new(
        grid: TimeGrid,
        hurst: HurstParameter,
        paths: Vec<f64>,
        seed: Seed,
        generator: Generator,
    ) -> Result<Self> {
        let width = grid.nodes().len();
        if !paths.len().is_multiple_of(width) {
            return Err(Error::GridMismatch(format!(
                "{} values do not form rows of {width}",
                paths.len()
            )));
        }
        if paths.chunks_exact(width).any(|p| p[0] != 0.0) {
            return Err(Error::InvalidArgument("paths must start at 0".into()));
        }
        Ok(Self {
            grid,
            hurst,
            paths,
            seed,
            generator,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn hurst(&self) -> HurstParameter {
        self.hurst
    }

    pub fn seed(&self) -> Seed {
        self.seed
    }

    pub fn generator(&self) -> Generator {
        self.generator
    }

    pub fn n_paths(&self) -> usize {
        self.paths.len() / self.grid.nodes().len()
    }

    pub fn path(&self, k: usize) -> &[f64] {
        let w = self.grid.nodes().len();
        &self.paths[k * w..(k + 1) * w]
    }

    /// Row-major `n_paths × (n+1)` matrix.
    pub fn paths(&self) -> &[f64] {
        &self.paths
    }
}
