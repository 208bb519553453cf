use std::fs;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use leafspace::flow::FlowConfig;

/// One batch run: preset and problem parameters, flow settings, outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub preset: String,
    /// When set, the quotient is loaded from this domain JSON file and the
    /// preset id is ignored.
    pub domain_file: Option<String>,
    pub resolution: usize,
    pub p: f64,
    /// Constant coefficient b (the linear zeroth-order term).
    pub b: f64,
    /// Constant coefficient c > 0 (the nonlinearity weight).
    pub c: f64,
    /// Requested solution count: one positive plus k-1 sign-changing seeds.
    pub k: usize,
    pub positive_only: bool,
    pub out_dir: String,
    /// Recorded so runs are reproducible byte for byte.
    pub seed: u64,
    pub flow: FlowConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            preset: "torus-factor".into(),
            domain_file: None,
            resolution: 512,
            p: 4.0,
            b: 2.0,
            c: 1.0,
            k: 3,
            positive_only: false,
            out_dir: "out".into(),
            seed: 0,
            flow: FlowConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&str>) -> anyhow::Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {p}"))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {p}"))
            }
        }
    }
}
