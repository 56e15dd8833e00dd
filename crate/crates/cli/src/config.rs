//! Experiment configuration files.
//!
//! A config is a TOML document; every table rejects unknown keys. Example:
//!
//! ```toml
//! master_seed = 2026
//! processes = 50
//! replicates = 20
//! lags = [1, 2]
//!
//! [kernel]
//! family = "discrete"
//! matrix = [[0.9, 0.1], [0.2, 0.8]]
//! initial = [1.0, 0.0]
//!
//! [bounds]
//! method = "exact"
//! k = { start = 0, stop = 30 }
//!
//! [[estimators]]
//! kind = "cv_single"
//! k = 0
//!
//! [[h]]
//! kind = "indicator"
//! state = 1
//! ```

use std::path::Path;

use anyhow::{bail, Context};
use lagcv::runner::{EstimatorRequest, ExperimentPlan, HSpec, KGrid, KernelSpec};
use serde::Deserialize;
use sha2::{Digest, Sha256};

fn default_max_sweeps() -> usize {
    1_000_000
}

fn default_processes() -> usize {
    2
}

fn default_replicates() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_processes")]
    pub processes: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub lags: Vec<usize>,
    #[serde(default = "default_max_sweeps")]
    pub max_sweeps: usize,
    pub kernel: Option<KernelSpec>,
    pub bounds: Option<BoundsSection>,
    #[serde(default)]
    pub estimators: Vec<EstimatorRequest>,
    #[serde(default)]
    pub h: Vec<HSpec>,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub validate: ValidateSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMethod {
    /// Closed forms (geometric) or the pair-chain oracle (discrete).
    Exact,
    /// Replicated Monte Carlo estimates.
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    pub method: BoundMethod,
    pub k: KGrid,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "OutputSection::default_bounds")]
    pub bounds_csv: String,
    #[serde(default = "OutputSection::default_exact")]
    pub exact_csv: String,
    #[serde(default = "OutputSection::default_estimates")]
    pub estimates_csv: String,
    #[serde(default = "OutputSection::default_summary")]
    pub summary_json: String,
}

impl OutputSection {
    fn default_bounds() -> String {
        "bounds.csv".into()
    }

    fn default_exact() -> String {
        "bounds_exact.csv".into()
    }

    fn default_estimates() -> String {
        "estimates.csv".into()
    }

    fn default_summary() -> String {
        "summary.json".into()
    }
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            bounds_csv: Self::default_bounds(),
            exact_csv: Self::default_exact(),
            estimates_csv: Self::default_estimates(),
            summary_json: Self::default_summary(),
        }
    }
}

fn default_battery() -> usize {
    2000
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateSection {
    /// Number of random cases per battery.
    #[serde(default = "default_battery")]
    pub cases: usize,
    /// Extra transition matrices to check, kept raw so that invalid ones
    /// show up as failed rows rather than parse errors.
    #[serde(default)]
    pub matrices: Vec<Vec<Vec<f64>>>,
}

impl Default for ValidateSection {
    fn default() -> Self {
        ValidateSection {
            cases: default_battery(),
            matrices: Vec::new(),
        }
    }
}

/// A parsed config with the hash of its source text.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: Config,
    pub hash: String,
}

impl LoadedConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let config: Config = toml::from_str(text).context("invalid config")?;
        let hash = hex::encode(Sha256::digest(text.as_bytes()));
        Ok(LoadedConfig { config, hash })
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Built-in defaults, used by `validate` when no file is given.
    pub fn empty() -> Self {
        Self::parse("").expect("empty config is valid")
    }
}

impl Config {
    pub fn kernel(&self) -> anyhow::Result<&KernelSpec> {
        self.kernel.as_ref().context("config has no [kernel] table")
    }

    pub fn bounds(&self) -> anyhow::Result<&BoundsSection> {
        self.bounds.as_ref().context("config has no [bounds] table")
    }

    fn base_plan(&self) -> anyhow::Result<ExperimentPlan> {
        if self.lags.is_empty() {
            bail!("lags must list at least one lag");
        }
        let mut plan = ExperimentPlan::new(
            self.kernel()?.clone(),
            self.lags.clone(),
            self.processes,
            self.replicates,
            self.master_seed,
        );
        plan.max_sweeps = self.max_sweeps;
        Ok(plan)
    }

    /// Plan for an empirical bound sweep; estimator requests are ignored.
    pub fn bound_plan(&self) -> anyhow::Result<ExperimentPlan> {
        let mut plan = self.base_plan()?;
        plan.k_grid = Some(self.bounds()?.k);
        plan.validate()?;
        Ok(plan)
    }

    /// Plan for estimator runs; bounds are ignored.
    pub fn estimate_plan(&self) -> anyhow::Result<ExperimentPlan> {
        if self.estimators.is_empty() {
            bail!("config has no [[estimators]] entries");
        }
        let mut plan = self.base_plan()?;
        plan.estimators = self.estimators.clone();
        plan.h = self.h.clone();
        plan.validate()?;
        Ok(plan)
    }

    /// Grid of burn-ins for the bound commands, rejected when empty.
    pub fn k_values(&self) -> anyhow::Result<Vec<usize>> {
        let grid = self.bounds()?.k;
        let ks = grid.values();
        if ks.is_empty() {
            bail!("k grid {}..={} step {} is empty", grid.start, grid.stop, grid.step);
        }
        Ok(ks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_documented_example() {
        let text = r#"
            master_seed = 2026
            processes = 50
            replicates = 20
            lags = [1, 2]

            [kernel]
            family = "discrete"
            matrix = [[0.9, 0.1], [0.2, 0.8]]
            initial = [1.0, 0.0]

            [bounds]
            method = "exact"
            k = { start = 0, stop = 30 }

            [[estimators]]
            kind = "cv_single"
            k = 0

            [[h]]
            kind = "indicator"
            state = 1
        "#;
        let loaded = LoadedConfig::parse(text).unwrap();
        let c = &loaded.config;
        assert_eq!(c.bounds().unwrap().method, BoundMethod::Exact);
        assert_eq!(c.k_values().unwrap().len(), 31);
        assert!(c.bound_plan().is_ok());
        assert!(c.estimate_plan().is_ok());
        assert_eq!(loaded.hash.len(), 64);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(LoadedConfig::parse("procesess = 3").is_err());
        assert!(LoadedConfig::parse("[kernel]\nfamily = \"ising\"\nside = 4\nbeta = 0.2\ncolour = 1").is_err());
        assert!(LoadedConfig::parse("[bounds]\nmethod = \"exact\"\nk = { start = 0, stop = 1, by = 2 }").is_err());
        assert!(LoadedConfig::parse("[[h]]\nkind = \"identity\"\nscale = 2").is_err());
    }

    #[test]
    fn invalid_matrix_is_a_parse_error() {
        let text = "[kernel]\nfamily = \"discrete\"\nmatrix = [[0.5, 0.4], [0.5, 0.5]]\ninitial = [1.0, 0.0]";
        let err = LoadedConfig::parse(text).unwrap_err();
        assert!(format!("{err:#}").contains("sums to"));
    }
}
