//! Command-line front end for the `fbmxcov` library.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use fbmxcov::simulate::{atomic_write, YoungRule};
use fbmxcov::Generator;

use commands::{NonConverged, Outcome};
use config::{Command, Format, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "fbmxcov", version, about = "Cross-covariance of fBm divergence integrals")]
struct Cli {
    /// JSON run config; flags given on the command line override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file, written atomically; stdout when absent.
    #[arg(long, short = 'o', global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Option<Sub>,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Cross-covariance at one (t, s).
    Covar(Flags),
    /// Cross-covariance on a grid of (t, s).
    Surface(Flags),
    /// Monte Carlo estimate from simulated paths.
    Mc(Flags),
    /// Not-fBm diagnostic at probe pairs with equal |t-s|.
    Notfbm(Flags),
    /// Limit H -> 1/2 against the Brownian cross-covariance.
    Limit(Flags),
    /// Operator trace against the Gram oracle and the per-path identity.
    TraceCheck(Flags),
    /// Finiteness integral and its refinement stability.
    Finiteness(Flags),
}

fn probe(s: &str) -> Result<[f64; 4], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| "a probe is t1,s1,t2,s2".to_string())
}

#[derive(Args, Debug, Default)]
struct Flags {
    #[arg(long)]
    hurst: Option<f64>,
    #[arg(long = "t")]
    t: Option<f64>,
    #[arg(long = "s")]
    s: Option<f64>,
    /// Coefficient F, e.g. `sgn`, `const:1`, `sum:(tanh)+(steps:0:2)`.
    #[arg(short = 'F', long = "f-spec")]
    f_spec: Option<String>,
    #[arg(short = 'G', long = "g-spec")]
    g_spec: Option<String>,
    #[arg(long)]
    cells: Option<usize>,
    #[arg(long)]
    gauss_nodes: Option<usize>,
    #[arg(long)]
    target_rel_error: Option<f64>,
    #[arg(long)]
    hermite_order: Option<usize>,
    /// Time steps per path.
    #[arg(long = "n")]
    n_steps: Option<usize>,
    #[arg(long)]
    n_paths: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    generator: Option<Generator>,
    #[arg(long)]
    young_rule: Option<YoungRule>,
    #[arg(long, value_delimiter = ',')]
    t_nodes: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    s_nodes: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<u32>>,
    /// `mc`: evaluate the formula too and report the difference in stderr.
    #[arg(long)]
    compare: bool,
    /// Probe pair `t1,s1,t2,s2`; repeatable.
    #[arg(long = "probe", value_parser = probe)]
    probes: Vec<[f64; 4]>,
    #[arg(long, value_delimiter = ',')]
    htilde: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    trace_cells: Option<Vec<usize>>,
    #[arg(long)]
    trace_kernels: Option<usize>,
}

impl Sub {
    fn split(self) -> (Command, Flags) {
        match self {
            Sub::Covar(f) => (Command::Covar, f),
            Sub::Surface(f) => (Command::Surface, f),
            Sub::Mc(f) => (Command::Mc, f),
            Sub::Notfbm(f) => (Command::Notfbm, f),
            Sub::Limit(f) => (Command::Limit, f),
            Sub::TraceCheck(f) => (Command::TraceCheck, f),
            Sub::Finiteness(f) => (Command::Finiteness, f),
        }
    }
}

fn apply(cfg: &mut RunConfig, f: Flags) {
    macro_rules! set {
        ($src:expr => $dst:expr) => {
            if let Some(v) = $src {
                $dst = v;
            }
        };
    }
    set!(f.hurst => cfg.hurst);
    set!(f.t => cfg.t);
    set!(f.s => cfg.s);
    set!(f.f_spec => cfg.f_spec);
    set!(f.g_spec => cfg.g_spec);
    set!(f.cells => cfg.quadrature.base_cells_per_axis);
    set!(f.gauss_nodes => cfg.quadrature.gauss_nodes_per_cell);
    set!(f.target_rel_error => cfg.quadrature.target_rel_error);
    set!(f.hermite_order => cfg.quadrature.hermite_order);
    set!(f.n_steps => cfg.ensemble.n_steps);
    set!(f.n_paths => cfg.ensemble.n_paths);
    set!(f.seed => cfg.ensemble.seed);
    set!(f.generator => cfg.ensemble.generator);
    set!(f.young_rule => cfg.ensemble.young_rule);
    set!(f.t_nodes => cfg.t_nodes);
    set!(f.s_nodes => cfg.s_nodes);
    set!(f.levels => cfg.mollify_levels);
    set!(f.htilde => cfg.htilde_grid);
    set!(f.eps => cfg.eps_ladder);
    set!(f.trace_cells => cfg.trace_cells);
    set!(f.trace_kernels => cfg.trace_kernels);
    if f.compare {
        cfg.compare = true;
    }
    if !f.probes.is_empty() {
        cfg.probes = f.probes;
    }
}

fn resolve(cli: Cli) -> anyhow::Result<RunConfig> {
    let from_file = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Some(RunConfig::from_json(&text)?)
        }
        None => None,
    };
    let mut cfg = match (from_file, cli.command) {
        (Some(mut c), Some(sub)) => {
            let (cmd, flags) = sub.split();
            c.command = cmd;
            apply(&mut c, flags);
            c
        }
        (Some(c), None) => c,
        (None, Some(sub)) => {
            let (cmd, flags) = sub.split();
            let mut c = RunConfig::new(cmd);
            apply(&mut c, flags);
            c
        }
        (None, None) => anyhow::bail!("give a subcommand or --config (see --help)"),
    };
    if cli.output.is_some() {
        cfg.output = cli.output;
    }
    if let Some(f) = cli.format {
        cfg.format = f;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn render(cfg: &RunConfig, out: &Outcome) -> anyhow::Result<String> {
    let version = env!("CARGO_PKG_VERSION");
    match cfg.format {
        Format::Json => {
            let doc = serde_json::json!({
                "version": version,
                "config": cfg,
                "converged": out.converged,
                "notes": out.notes,
                "results": out.results,
            });
            Ok(serde_json::to_string_pretty(&doc)? + "\n")
        }
        Format::Csv => {
            let mut s = format!("# fbmxcov {version}\n# config {}\n", serde_json::to_string(cfg)?);
            s += &format!("# converged {}\n", out.converged);
            for n in &out.notes {
                s += &format!("# note {}\n", n.replace('\n', " "));
            }
            s += &out.header.join(",");
            s.push('\n');
            for row in &out.rows {
                s += &row.join(",");
                s.push('\n');
            }
            Ok(s)
        }
    }
}

fn emit(cfg: &RunConfig, text: &str) -> anyhow::Result<()> {
    match &cfg.output {
        Some(p) => atomic_write(p, text.as_bytes()).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let cfg = match resolve(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let outcome = match commands::run(&cfg) {
        Ok(o) => o,
        Err(e) if e.is::<NonConverged>() => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let written = render(&cfg, &outcome).and_then(|text| emit(&cfg, &text));
    if let Err(e) = written {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    if outcome.converged {
        ExitCode::SUCCESS
    } else {
        eprintln!("warning: numerical tolerance not reached; results carry error flags");
        ExitCode::from(2)
    }
}
