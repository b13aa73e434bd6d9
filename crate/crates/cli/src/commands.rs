use std::path::PathBuf;

use anyhow::{bail, Context};
use fbmxcov::analysis::{brownian_limit_study_with, not_fbm_test, LimitStudyConfig};
use fbmxcov::hs_operators::{compose, gamma_weighted_pairing, gram_trace_oracle, malliavin_kernel, trace};
use fbmxcov::quadrature::{covariance_surface, cross_covariance, finiteness_report};
use fbmxcov::simulate::{
    load_or_generate, mc_cross_covariance, mc_grid, mc_mollified_ladder, mc_on_ensemble, McEstimate,
};
use fbmxcov::{
    parse_function_spec, CovarianceResult, Error, GFunction, HurstParameter, KernelOperator, Seed,
    TimeGrid,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::{Command, RunConfig};

pub const CACHE_ENV: &str = "FBMXCOV_CACHE_DIR";

pub const COVARIANCE_HEADER: [&str; 6] = [
    "tau_or_t",
    "sigma_or_s",
    "value",
    "isometry_term",
    "trace_term",
    "est_rel_error",
];

/// Result of a run: a table for CSV, structured results for JSON.
pub struct Outcome {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub results: Value,
    pub converged: bool,
    pub notes: Vec<String>,
}

impl Outcome {
    fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
            results: Value::Null,
            converged: true,
            notes: Vec::new(),
        }
    }
}

fn num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn hurst(cfg: &RunConfig) -> anyhow::Result<HurstParameter> {
    Ok(HurstParameter::new(cfg.hurst)?)
}

fn coefficients(cfg: &RunConfig) -> anyhow::Result<(GFunction, GFunction)> {
    Ok((
        parse_function_spec(&cfg.f_spec).context("F spec")?,
        parse_function_spec(&cfg.g_spec).context("G spec")?,
    ))
}

pub fn run(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    cfg.validate()?;
    match cfg.command {
        Command::Covar => covar(cfg),
        Command::Surface => surface(cfg),
        Command::Mc => mc(cfg),
        Command::Notfbm => notfbm(cfg),
        Command::Limit => limit(cfg),
        Command::TraceCheck => trace_check(cfg),
        Command::Finiteness => finiteness(cfg),
    }
}

/// A covariance entry, or the last estimate when the mesh doubling did not
/// reach the tolerance.
enum Entry {
    Done(CovarianceResult),
    Unconverged { estimate: f64, achieved: f64 },
}

fn entry(r: fbmxcov::Result<CovarianceResult>) -> anyhow::Result<Entry> {
    match r {
        Ok(r) => Ok(Entry::Done(r)),
        Err(Error::NonConvergence {
            estimate, achieved, ..
        }) => Ok(Entry::Unconverged { estimate, achieved }),
        Err(e) => Err(e.into()),
    }
}

fn push_entry(out: &mut Outcome, results: &mut Vec<Value>, t: f64, s: f64, e: Entry) {
    match e {
        Entry::Done(r) => {
            out.rows.push(vec![
                num(t),
                num(s),
                num(r.value),
                num(r.isometry_term),
                num(r.trace_term),
                num(r.est_rel_error),
            ]);
            results.push(json!({
                "t": t, "s": s, "value": r.value, "isometry_term": r.isometry_term,
                "trace_term": r.trace_term, "est_rel_error": r.est_rel_error, "converged": true,
            }));
        }
        Entry::Unconverged { estimate, achieved } => {
            out.converged = false;
            out.notes.push(format!(
                "({t}, {s}): mesh doubling changed the value by {achieved:e} relative, above target"
            ));
            out.rows.push(vec![num(t), num(s), num(estimate), String::new(), String::new(), num(achieved)]);
            results.push(json!({
                "t": t, "s": s, "value": estimate, "isometry_term": null, "trace_term": null,
                "est_rel_error": achieved, "converged": false,
            }));
        }
    }
}

fn covar(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let (f, g) = coefficients(cfg)?;
    let mut out = Outcome::new(&COVARIANCE_HEADER);
    let mut results = Vec::new();
    let e = entry(cross_covariance(&f, &g, cfg.t, cfg.s, hurst(cfg)?, &cfg.quadrature))?;
    push_entry(&mut out, &mut results, cfg.t, cfg.s, e);
    out.results = Value::Array(results);
    Ok(out)
}

fn surface(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let (f, g) = coefficients(cfg)?;
    let h = hurst(cfg)?;
    let mut out = Outcome::new(&COVARIANCE_HEADER);
    let mut results = Vec::new();
    match covariance_surface(&f, &g, &cfg.t_nodes, &cfg.s_nodes, h, &cfg.quadrature) {
        Ok(surf) => {
            for (i, &t) in surf.t_nodes.iter().enumerate() {
                for (j, &s) in surf.s_nodes.iter().enumerate() {
                    push_entry(&mut out, &mut results, t, s, Entry::Done(surf.entries[i][j]));
                }
            }
        }
        // redo entry by entry to flag the ones that failed
        Err(Error::NonConvergence { .. }) => {
            for &t in &cfg.t_nodes {
                for &s in &cfg.s_nodes {
                    let e = entry(cross_covariance(&f, &g, t, s, h, &cfg.quadrature))?;
                    push_entry(&mut out, &mut results, t, s, e);
                }
            }
        }
        Err(e) => return Err(e.into()),
    }
    out.results = Value::Array(results);
    Ok(out)
}

const MC_HEADER: [&str; 8] = [
    "t",
    "s",
    "level",
    "estimate",
    "stderr",
    "n_paths",
    "formula_value",
    "diff_over_stderr",
];

fn mc(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let (f, g) = coefficients(cfg)?;
    let h = hurst(cfg)?;
    let (t, s) = (cfg.t, cfg.s);
    let mut out = Outcome::new(&MC_HEADER);
    let formula = if cfg.compare {
        match entry(cross_covariance(&f, &g, t, s, h, &cfg.quadrature))? {
            Entry::Done(r) => Some(r.value),
            Entry::Unconverged { estimate, achieved } => {
                out.converged = false;
                out.notes.push(format!("formula value not converged ({achieved:e})"));
                Some(estimate)
            }
        }
    } else {
        None
    };
    let row = |level: String, e: &McEstimate, with_formula: bool| {
        let fv = formula.filter(|_| with_formula);
        vec![
            num(t),
            num(s),
            level,
            num(e.estimate),
            num(e.stderr),
            e.n_paths.to_string(),
            opt(fv),
            opt(fv.map(|v| (e.estimate - v).abs() / e.stderr)),
        ]
    };
    let final_estimate;
    if f.has_atoms() || g.has_atoms() {
        let ladder = mc_mollified_ladder(&f, &g, t, s, h, &cfg.ensemble, &cfg.mollify_levels, None)?;
        for (n, e) in ladder.levels.iter().zip(&ladder.rungs) {
            out.rows.push(row(n.to_string(), e, false));
        }
        out.rows.push(row("extrapolated".into(), &ladder.extrapolated, true));
        out.notes.push(format!(
            "coefficients have jumps: mollified ladder {:?}, extrapolation rate {}",
            ladder.levels, ladder.rate
        ));
        final_estimate = ladder.extrapolated;
        out.results = json!({ "ladder": ladder });
    } else {
        let e = match std::env::var_os(CACHE_ENV) {
            Some(dir) => {
                let grid = mc_grid(t, s, cfg.ensemble.n_steps)?;
                let p = &cfg.ensemble;
                let (ens, file) =
                    load_or_generate(&PathBuf::from(dir), &grid, h, Seed::new(p.seed), p.n_paths, p.generator)?;
                out.notes.push(format!("ensemble cache {}", file.display()));
                mc_on_ensemble(&ens, &f, &g, t, s, p.young_rule)?
            }
            None => mc_cross_covariance(&f, &g, t, s, h, &cfg.ensemble)?,
        };
        out.rows.push(row("none".into(), &e, true));
        final_estimate = e;
        out.results = json!({ "estimate": e });
    }
    if let Some(v) = formula {
        let z = (final_estimate.estimate - v).abs() / final_estimate.stderr;
        out.notes.push(format!(
            "|mc - formula| = {:.3e} = {z:.2} stderr ({})",
            (final_estimate.estimate - v).abs(),
            if z <= 3.0 { "within 3 stderr" } else { "outside 3 stderr" }
        ));
        out.results["formula_value"] = json!(v);
        out.results["diff_over_stderr"] = json!(z);
    }
    Ok(out)
}

fn notfbm(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let (f, g) = coefficients(cfg)?;
    let probes: Vec<_> = cfg.probes.iter().map(|p| ((p[0], p[1]), (p[2], p[3]))).collect();
    let r = not_fbm_test(&f, &g, hurst(cfg)?, &probes, &cfg.htilde_grid)?;
    let mut out = Outcome::new(&[
        "t1",
        "s1",
        "t2",
        "s2",
        "value_first",
        "error_first",
        "value_second",
        "error_second",
        "rel_discrepancy",
        "verdict",
    ]);
    for c in &r.comparisons {
        out.rows.push(vec![
            num(c.first.0),
            num(c.first.1),
            num(c.second.0),
            num(c.second.1),
            num(c.value_first),
            num(c.error_first),
            num(c.value_second),
            num(c.error_second),
            num(c.rel_discrepancy),
            serde_json::to_value(c.verdict)?.as_str().unwrap_or_default().to_string(),
        ]);
    }
    out.notes.push(r.reasoning.clone());
    out.results = serde_json::to_value(&r)?;
    Ok(out)
}

fn limit(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let (f, g) = coefficients(cfg)?;
    let study = LimitStudyConfig {
        quadrature: cfg.quadrature,
        ..LimitStudyConfig::default()
    };
    let r = match brownian_limit_study_with(&f, &g, cfg.t, cfg.s, &cfg.eps_ladder, &study) {
        Ok(r) => r,
        Err(Error::NonConvergence { achieved, .. }) => {
            bail!(NonConverged(format!(
                "a rung of the limit study did not converge ({achieved:e})"
            )))
        }
        Err(e) => return Err(e.into()),
    };
    let mut out = Outcome::new(&[
        "epsilon",
        "hurst",
        "value",
        "isometry_term",
        "trace_term",
        "est_rel_error",
        "deviation",
        "max_alpha_gamma",
        "p_limit_rel_gap",
    ]);
    for x in &r.rungs {
        out.rows.push(vec![
            num(x.epsilon),
            num(x.hurst),
            num(x.value),
            num(x.isometry_term),
            num(x.trace_term),
            num(x.est_rel_error),
            num(x.deviation),
            num(x.max_alpha_gamma),
            opt(x.p_limit_rel_gap),
        ]);
    }
    out.notes.push(format!(
        "target {} extrapolated {} (rel error {:.3e}), deviations decreasing: {}",
        r.target, r.extrapolated, r.extrapolated_rel_error, r.deviations_decreasing
    ));
    out.results = serde_json::to_value(&r)?;
    Ok(out)
}

/// Raised when a computation gives up without a usable estimate.
#[derive(Debug)]
pub struct NonConverged(pub String);

impl std::fmt::Display for NonConverged {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NonConverged {}

fn trace_check(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let (f, g) = coefficients(cfg)?;
    let h = hurst(cfg)?;
    let mut out = Outcome::new(&["check", "n_cells", "max_rel_gap"]);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.ensemble.seed);
    let mut results = Vec::new();
    for &n in &cfg.trace_cells {
        let grid = TimeGrid::uniform(cfg.t.max(cfg.s), n)?;
        let mut worst = 0.0f64;
        for _ in 0..cfg.trace_kernels {
            let mut kernel = || {
                let k = nalgebra::DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
                KernelOperator::new(grid.clone(), k, 1.0)
            };
            let (a, b) = (kernel()?, kernel()?);
            let fast = trace(&compose(&a, &b, h)?, h);
            let oracle = gram_trace_oracle(&a, &b, h)?;
            worst = worst.max((fast - oracle).abs() / oracle.abs().max(f64::MIN_POSITIVE));
        }
        out.rows.push(vec!["oracle".into(), n.to_string(), num(worst)]);
        results.push(json!({ "check": "oracle", "n_cells": n, "max_rel_gap": worst }));
    }
    if f.has_atoms() || g.has_atoms() {
        out.notes.push("per-path identity skipped: it needs F' and G' as functions".into());
    } else {
        let fine_n = *cfg.trace_cells.iter().max().expect("validated non-empty");
        let fine = mc_grid(cfg.t, cfg.s, fine_n)?;
        let e = fbmxcov::simulate::generate_circulant(&fine, h, Seed::new(cfg.ensemble.seed), 2)?;
        for &n in &cfg.trace_cells {
            if !fine_n.is_multiple_of(n) {
                continue;
            }
            let grid = TimeGrid::uniform(fine.horizon(), n)?;
            if grid.node_index(cfg.t.min(cfg.s)).is_none() {
                out.notes.push(format!("per-path identity skipped at n = {n}: t ∧ s is not a node"));
                continue;
            }
            let path: Vec<f64> = e.path(0).iter().step_by(fine_n / n).copied().collect();
            let kf = malliavin_kernel(&f, &grid, &path, cfg.t)?;
            let kg = malliavin_kernel(&g, &grid, &path, cfg.s)?;
            let lhs = trace(&compose(&kf, &kg, h)?, h);
            let rhs = gamma_weighted_pairing(&f, &g, &grid, &path, cfg.t, cfg.s, h)?;
            let gap = (lhs - rhs).abs() / rhs.abs().max(f64::MIN_POSITIVE);
            out.rows.push(vec!["per_path".into(), n.to_string(), num(gap)]);
            results.push(json!({ "check": "per_path", "n_cells": n, "max_rel_gap": gap,
                                 "trace": lhs, "gamma_pairing": rhs }));
        }
    }
    out.results = Value::Array(results);
    Ok(out)
}

fn finiteness(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let h = hurst(cfg)?;
    let r = finiteness_report(h, cfg.t, &cfg.quadrature)?;
    let mut out = Outcome::new(&["hurst", "horizon", "value", "previous", "rel_change"]);
    out.rows.push(vec![num(cfg.hurst), num(cfg.t), num(r.value), num(r.previous), num(r.rel_change)]);
    if !(r.rel_change < 0.01) {
        out.converged = false;
        out.notes.push(format!("one mesh doubling changed the value by {:.3e}", r.rel_change));
    }
    out.results = serde_json::to_value(r)?;
    Ok(out)
}
