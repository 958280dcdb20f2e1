//! TOML description of a simulated network. The seed is deliberately absent:
//! it comes from the command line.

use crate::error::CliError;
use infograph::sim::{NormalSpec, SimConfig, DEFAULT_MAX_SATURATION};
use serde::Deserialize;
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub names: Vec<String>,
    pub n: usize,
    pub window: usize,
    pub baseline_rate: f64,
    pub bin_width: f64,
    pub self_weights: NormalSpec,
    pub cross_weights: NormalSpec,
    #[serde(default)]
    pub max_saturation: Option<f64>,
    /// Parent names per process name; unlisted processes have no parents.
    #[serde(default)]
    pub parents: BTreeMap<String, Vec<String>>,
}

impl NetworkConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn to_sim(&self, seed: u64, n_override: Option<usize>) -> Result<SimConfig, CliError> {
        let index = |name: &str| {
            self.names
                .iter()
                .position(|x| x == name)
                .ok_or_else(|| CliError::Usage(format!("config: unknown process {name:?}")))
        };
        let m = self.names.len();
        let mut parents = vec![BTreeSet::new(); m];
        for (child, ps) in &self.parents {
            let i = index(child)?;
            for p in ps {
                parents[i].insert(index(p)?);
            }
        }
        let cfg = SimConfig {
            m,
            n: n_override.unwrap_or(self.n),
            parents,
            names: Some(self.names.clone()),
            window: self.window,
            baseline_rate: self.baseline_rate,
            self_weights: self.self_weights,
            cross_weights: self.cross_weights,
            bin_width: self.bin_width,
            seed,
            max_saturation: self.max_saturation.unwrap_or(DEFAULT_MAX_SATURATION),
        };
        cfg.validate()
            .map_err(|e| CliError::Usage(format!("config: {e}")))?;
        Ok(cfg)
    }
}
