use std::path::PathBuf;

use anyhow::{bail, Context};
use fbmxcov::simulate::EnsembleParams;
use fbmxcov::{parse_function_spec, HurstParameter, QuadratureConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Covar,
    Surface,
    Mc,
    Notfbm,
    Limit,
    TraceCheck,
    Finiteness,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Everything a run needs. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default = "default_hurst")]
    pub hurst: f64,
    #[serde(default = "one")]
    pub t: f64,
    #[serde(default = "one")]
    pub s: f64,
    #[serde(default = "default_spec")]
    pub f_spec: String,
    #[serde(default = "default_spec")]
    pub g_spec: String,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default)]
    pub ensemble: EnsembleParams,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub format: Format,
    /// `surface`: the `t` and `s` axes.
    #[serde(default)]
    pub t_nodes: Vec<f64>,
    #[serde(default)]
    pub s_nodes: Vec<f64>,
    /// `mc`: mollification levels used when a coefficient has jumps.
    #[serde(default = "default_levels")]
    pub mollify_levels: Vec<u32>,
    /// `mc`: also evaluate the formula and record the comparison.
    #[serde(default)]
    pub compare: bool,
    /// `notfbm`: probe pairs `[t₁, s₁, t₂, s₂]`.
    #[serde(default = "default_probes")]
    pub probes: Vec<[f64; 4]>,
    #[serde(default = "default_htilde")]
    pub htilde_grid: Vec<f64>,
    /// `limit`: decreasing `ε` values, `H = ½ + ε`.
    #[serde(default = "default_ladder")]
    pub eps_ladder: Vec<f64>,
    /// `trace-check`: grid sizes and random kernels per size.
    #[serde(default = "default_trace_cells")]
    pub trace_cells: Vec<usize>,
    #[serde(default = "default_trace_kernels")]
    pub trace_kernels: usize,
}

fn default_hurst() -> f64 {
    0.75
}

fn one() -> f64 {
    1.0
}

fn default_spec() -> String {
    "const:1".into()
}

fn default_levels() -> Vec<u32> {
    vec![8, 32, 128]
}

fn default_probes() -> Vec<[f64; 4]> {
    vec![[1.0, 0.5, 1.5, 1.0]]
}

fn default_htilde() -> Vec<f64> {
    vec![0.55, 0.65, 0.75, 0.85, 0.95]
}

fn default_ladder() -> Vec<f64> {
    vec![0.1, 0.05, 0.025]
}

fn default_trace_cells() -> Vec<usize> {
    vec![32, 64]
}

fn default_trace_kernels() -> usize {
    50
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        serde_json::from_value(serde_json::json!({ "command": command }))
            .expect("defaults deserialize")
    }

    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        serde_json::from_str(text).context("invalid config")
    }

    /// Checks everything that can be checked before computing.
    pub fn validate(&self) -> anyhow::Result<()> {
        parse_function_spec(&self.f_spec).context("F spec")?;
        parse_function_spec(&self.g_spec).context("G spec")?;
        self.quadrature.validate()?;
        for (name, v) in [("t", self.t), ("s", self.s)] {
            if !(v > 0.0 && v.is_finite()) {
                bail!("{name} must be positive and finite (got {v})");
            }
        }
        if self.command != Command::Limit {
            HurstParameter::new(self.hurst)?;
        }
        match self.command {
            Command::Surface => {
                if self.t_nodes.is_empty() || self.s_nodes.is_empty() {
                    bail!("surface needs non-empty t_nodes and s_nodes");
                }
                if self.t_nodes.iter().chain(&self.s_nodes).any(|&v| !(v > 0.0 && v.is_finite())) {
                    bail!("surface nodes must be positive and finite");
                }
            }
            Command::Mc => {
                self.ensemble.validate()?;
                if self.mollify_levels.len() < 2 {
                    bail!("mollify_levels needs at least two levels");
                }
            }
            Command::Notfbm => {
                if self.probes.is_empty() {
                    bail!("notfbm needs at least one probe pair");
                }
                for &h in &self.htilde_grid {
                    HurstParameter::new(h)?;
                }
            }
            Command::Limit => {
                if self.eps_ladder.len() < 2 {
                    bail!("eps_ladder needs at least two values");
                }
            }
            Command::TraceCheck => {
                if self.trace_cells.is_empty() || self.trace_kernels == 0 {
                    bail!("trace-check needs trace_cells and trace_kernels > 0");
                }
            }
            Command::Covar | Command::Finiteness => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_round_trip() {
        let c = RunConfig::new(Command::Covar);
        assert_eq!(c.hurst, 0.75);
        assert_eq!(c.format, Format::Csv);
        c.validate().unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(RunConfig::from_json(r#"{"command":"covar","hurts":0.7}"#).is_err());
        assert!(RunConfig::from_json(r#"{"command":"covar","quadrature":{"cells":4}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"command":"plot"}"#).is_err());
        let c = RunConfig::from_json(r#"{"command":"trace-check","hurst":0.6}"#).unwrap();
        assert_eq!(c.command, Command::TraceCheck);
    }

    #[test]
    fn validation() {
        let mut c = RunConfig::new(Command::Covar);
        c.hurst = 0.5;
        assert!(c.validate().is_err());
        c.hurst = 0.7;
        c.f_spec = "steps:1:1,0:1".into();
        assert!(c.validate().is_err());
        let mut s = RunConfig::new(Command::Surface);
        assert!(s.validate().is_err());
        s.t_nodes = vec![1.0];
        s.s_nodes = vec![0.5, 1.0];
        s.validate().unwrap();
    }
}
