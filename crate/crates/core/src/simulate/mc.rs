//! Monte Carlo estimates of `E[δ(F(B)1_{[0,t]}) δ(G(B)1_{[0,s]})]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbm_model::{HurstParameter, TimeGrid};
use crate::gclass::{GFunction, MollifierFamily};
use crate::rules::pairwise_sum;

use super::generate::{Generator, Sampler};
use super::integrals::{check_divergence_args, correction_sum, young_sum, YoungRule};
use super::{PathEnsemble, Seed};

/// Pairs of paths handed to one task.
const PAIRS_PER_TASK: usize = 64;

/// Ensemble settings for a Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleParams {
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub generator: Generator,
    pub young_rule: YoungRule,
}

impl Default for EnsembleParams {
    fn default() -> Self {
        Self {
            n_steps: 512,
            n_paths: 100_000,
            seed: 0,
            generator: Generator::Circulant,
            young_rule: YoungRule::Trapezoid,
        }
    }
}

impl EnsembleParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 || self.n_paths < 2 {
            return Err(Error::InvalidArgument(format!(
                "need n_steps ≥ 1 and n_paths ≥ 2 (got {}, {})",
                self.n_steps, self.n_paths
            )));
        }
        Ok(())
    }
}

/// Sample mean with standard error `sd/√n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub n_paths: usize,
}

impl McEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = pairwise_sum(xs) / n;
        let dev: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
        let var = pairwise_sum(&dev) / (n - 1.0);
        Self {
            estimate: mean,
            stderr: (var / n).sqrt(),
            n_paths: xs.len(),
        }
    }
}

/// Grid `[0, max(t,s)]` with `n_steps` cells on which both `t` and `s` are nodes.
pub fn mc_grid(t: f64, s: f64, n_steps: usize) -> Result<TimeGrid> {
    if !(t > 0.0 && s > 0.0) {
        return Err(Error::Domain(format!("need t, s > 0 (got {t}, {s})")));
    }
    let grid = TimeGrid::uniform(t.max(s), n_steps)?;
    if grid.node_index(t.min(s)).is_none() {
        return Err(Error::InvalidArgument(format!(
            "{} is not a node of the {n_steps}-step grid on [0, {}]; choose n_steps accordingly",
            t.min(s),
            t.max(s)
        )));
    }
    Ok(grid)
}

/// Streams `n_paths` paths through `per_path` without storing the ensemble.
/// Results come back in path order whatever the thread count.
pub fn map_paths<R, P>(
    grid: &TimeGrid,
    h: HurstParameter,
    params: &EnsembleParams,
    per_path: P,
) -> Result<Vec<R>>
where
    R: Send,
    P: Fn(&[f64]) -> R + Sync,
{
    params.validate()?;
    let sampler = Sampler::new(grid, h, params.generator)?;
    let seed = Seed::new(params.seed);
    let width = grid.nodes().len();
    let n_pairs = params.n_paths.div_ceil(2);
    let tasks = n_pairs.div_ceil(PAIRS_PER_TASK);
    let mut out: Vec<R> = (0..tasks)
        .into_par_iter()
        .flat_map_iter(|task| {
            let mut a = vec![0.0; width];
            let mut b = vec![0.0; width];
            let lo = task * PAIRS_PER_TASK;
            let hi = (lo + PAIRS_PER_TASK).min(n_pairs);
            let mut res = Vec::with_capacity(2 * (hi - lo));
            for pair in lo..hi {
                sampler.sample_pair(seed, pair as u64, &mut a, &mut b);
                res.push(per_path(&a));
                res.push(per_path(&b));
            }
            res
        })
        .collect();
    out.truncate(params.n_paths);
    Ok(out)
}

/// Divergence integral along `path` up to node index `end`.
fn divergence(f: &GFunction, nodes: &[f64], path: &[f64], end: usize, h: HurstParameter, rule: YoungRule) -> f64 {
    let p = &path[..=end];
    young_sum(|x| f.evaluate(x), p, rule) - correction_sum(|x| f.ac_derivative(x), &nodes[..=end], p, h)
}

fn product_fn<'a>(
    f: &'a GFunction,
    g: &'a GFunction,
    t: f64,
    s: f64,
    grid: &'a TimeGrid,
    h: HurstParameter,
    rule: YoungRule,
) -> Result<impl Fn(&[f64]) -> f64 + Sync + 'a> {
    check_divergence_args(f, h)?;
    check_divergence_args(g, h)?;
    let (it, is) = match (grid.node_index(t), grid.node_index(s)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "t = {t} and s = {s} must be grid nodes"
            )))
        }
    };
    let nodes = grid.nodes();
    Ok(move |p: &[f64]| divergence(f, nodes, p, it, h, rule) * divergence(g, nodes, p, is, h, rule))
}

/// Sample mean of `δ_F(t)·δ_G(s)` over freshly generated paths.
pub fn mc_cross_covariance(
    f: &GFunction,
    g: &GFunction,
    t: f64,
    s: f64,
    h: HurstParameter,
    params: &EnsembleParams,
) -> Result<McEstimate> {
    let grid = mc_grid(t, s, params.n_steps)?;
    let prod = product_fn(f, g, t, s, &grid, h, params.young_rule)?;
    let xs = map_paths(&grid, h, params, prod)?;
    Ok(McEstimate::from_samples(&xs))
}

/// As [`mc_cross_covariance`] over a stored ensemble.
pub fn mc_on_ensemble(
    ensemble: &PathEnsemble,
    f: &GFunction,
    g: &GFunction,
    t: f64,
    s: f64,
    rule: YoungRule,
) -> Result<McEstimate> {
    let prod = product_fn(f, g, t, s, ensemble.grid(), ensemble.hurst(), rule)?;
    let xs: Vec<f64> = (0..ensemble.n_paths())
        .into_par_iter()
        .map(|k| prod(ensemble.path(k)))
        .collect();
    Ok(McEstimate::from_samples(&xs))
}

/// Monte Carlo values along a mollification ladder and their extrapolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MollifiedLadder {
    pub levels: Vec<u32>,
    pub rungs: Vec<McEstimate>,
    /// Exponent `p` in `v(n) ≈ v + C n^{−p}` used for the extrapolation.
    pub rate: f64,
    /// Exponent read off the last three rungs, when their gaps allow it.
    pub observed_rate: Option<f64>,
    pub extrapolated: McEstimate,
}

/// `F` with each jump replaced by its mollification; smooth parts are kept.
fn mollify_jumps(f: &GFunction, n: u32, family: &MollifierFamily) -> GFunction {
    let jumps = GFunction::steps(f.jumps().to_vec())
        .expect("jumps of a valid function")
        .mollify(n, family);
    let smooth = GFunction::new(f.ac_terms().to_vec(), f.base(), vec![]).expect("valid parts");
    smooth.sum(&jumps)
}

/// Default extrapolation exponent `(1−H)/H`: mollifying two jumps caps the
/// trace kernel `P ∼ |τ−σ|^{−H}` at distance `ε^{1/H}` from the diagonal.
pub fn default_ladder_rate(h: HurstParameter) -> f64 {
    (1.0 - h.value()) / h.value()
}

/// Runs every rung on the same paths. The extrapolation
/// `(v_b − r v_a)/(1 − r)`, `r = (n_a/n_b)^p`, over the last two rungs is
/// formed per path so its standard error accounts for their correlation.
#[allow(clippy::too_many_arguments)]
pub fn mc_mollified_ladder(
    f: &GFunction,
    g: &GFunction,
    t: f64,
    s: f64,
    h: HurstParameter,
    params: &EnsembleParams,
    levels: &[u32],
    rate: Option<f64>,
) -> Result<MollifiedLadder> {
    if levels.len() < 2 || levels.windows(2).any(|w| w[1] <= w[0]) || levels[0] == 0 {
        return Err(Error::InvalidArgument(
            "mollification levels must be positive, increasing, at least two".into(),
        ));
    }
    let p = rate.unwrap_or_else(|| default_ladder_rate(h));
    if !(p > 0.0) {
        return Err(Error::InvalidArgument(format!("rate must be positive (got {p})")));
    }
    let fam = MollifierFamily::standard();
    let fs: Vec<GFunction> = levels.iter().map(|&n| mollify_jumps(f, n, &fam)).collect();
    let gs: Vec<GFunction> = levels.iter().map(|&n| mollify_jumps(g, n, &fam)).collect();
    let grid = mc_grid(t, s, params.n_steps)?;
    let prods = fs
        .iter()
        .zip(&gs)
        .map(|(a, b)| product_fn(a, b, t, s, &grid, h, params.young_rule))
        .collect::<Result<Vec<_>>>()?;
    let rows = map_paths(&grid, h, params, |path| {
        prods.iter().map(|q| q(path)).collect::<Vec<f64>>()
    })?;
    let k = levels.len();
    let rungs: Vec<McEstimate> = (0..k)
        .map(|j| McEstimate::from_samples(&rows.iter().map(|r| r[j]).collect::<Vec<_>>()))
        .collect();
    let r = (levels[k - 2] as f64 / levels[k - 1] as f64).powf(p);
    let extrapolated: Vec<f64> = rows
        .iter()
        .map(|row| (row[k - 1] - r * row[k - 2]) / (1.0 - r))
        .collect();
    let observed_rate = (k >= 3)
        .then(|| {
            let v: Vec<f64> = rungs[k - 3..].iter().map(|e| e.estimate).collect();
            let (g1, g2) = (v[1] - v[0], v[2] - v[1]);
            let q = levels[k - 1] as f64 / levels[k - 2] as f64;
            (g1 * g2 > 0.0 && g2.abs() < g1.abs()).then(|| (g1 / g2).ln() / q.ln())
        })
        .flatten();
    Ok(MollifiedLadder {
        levels: levels.to_vec(),
        rungs,
        rate: p,
        observed_rate,
        extrapolated: McEstimate::from_samples(&extrapolated),
    })
}
