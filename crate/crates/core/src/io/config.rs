//! Experiment configuration: a versioned JSON document; unknown keys are
//! errors.
//!
//! ```json
//! {
//!   "version": 1,
//!   "seed": 7,
//!   "sparsity": 0.5,
//!   "arch": { "tm": 4, "alpha": 8, "tk1": 16, "tk2": 16, "columns": 16 },
//!   "cost_table": "costs.json",
//!   "ipu_skip": true,
//!   "workload": {
//!     "layers": [ { "id": "fc1", "m": 16, "k": 256, "n": 64 } ],
//!     "weights": { "mode": "threshold-planted", "threshold": 2 },
//!     "inputs": { "mode": "zero-bit-planted", "zero_fraction": 0.25 }
//!   },
//!   "output_dir": "out"
//! }
//! ```
//!
//! `arch` also accepts `cores`, `simd_lanes`, `overheads` (all four of
//! `tile_load`, `row_pass`, `accum`, `writeback`) and
//! `mixed_threshold_macros`. `tn`, if given, must equal `cores * alpha`. A relative `cost_table` path
//! resolves against the configuration file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arch::{ArchConfig, Overheads};
use crate::error::{Error, Result};
use crate::io::synth::{InputMode, LayerShape, WeightMode};
use crate::metrics::CostTable;

pub const CONFIG_VERSION: u32 = 1;

/// Environment variable that overrides every other output directory.
pub const OUT_DIR_ENV: &str = "DBPIM_OUT_DIR";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchOverrides {
    pub cores: Option<usize>,
    pub tm: Option<usize>,
    pub tn: Option<usize>,
    pub alpha: Option<usize>,
    pub tk1: Option<usize>,
    pub tk2: Option<usize>,
    pub columns: Option<usize>,
    pub simd_lanes: Option<usize>,
    pub overheads: Option<Overheads>,
    pub mixed_threshold_macros: Option<bool>,
}

impl ArchOverrides {
    pub fn apply(&self, base: ArchConfig) -> Result<ArchConfig> {
        let mut a = base;
        a.cores = self.cores.unwrap_or(a.cores);
        a.macros_per_core = self.tm.unwrap_or(a.macros_per_core);
        a.alpha = self.alpha.unwrap_or(a.alpha);
        a.compartments = self.tk1.unwrap_or(a.compartments);
        a.rows_per_compartment = self.tk2.unwrap_or(a.rows_per_compartment);
        a.columns_per_macro = self.columns.unwrap_or(a.columns_per_macro);
        a.simd_lanes = self.simd_lanes.unwrap_or(a.simd_lanes);
        a.overheads = self.overheads.unwrap_or(a.overheads);
        a.mixed_threshold_macros = self.mixed_threshold_macros.unwrap_or(a.mixed_threshold_macros);
        if let Some(tn) = self.tn {
            if tn != a.cores * a.alpha {
                return Err(Error::Config(format!("tn = {tn} but cores x alpha = {}", a.cores * a.alpha)));
            }
        }
        a.validate()?;
        Ok(a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub layers: Vec<LayerShape>,
    pub weights: WeightMode,
    pub inputs: InputMode,
}

fn default_skip() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub seed: u64,
    #[serde(default)]
    pub sparsity: f64,
    #[serde(default)]
    pub arch: ArchOverrides,
    #[serde(default)]
    pub cost_table: Option<PathBuf>,
    #[serde(default = "default_skip")]
    pub ipu_skip: bool,
    pub workload: WorkloadSpec,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = Self::from_json(&text)?;
        if let (Some(ct), Some(dir)) = (&c.cost_table, path.parent()) {
            if ct.is_relative() {
                c.cost_table = Some(dir.join(ct));
            }
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if !(0.0..1.0).contains(&self.sparsity) {
            return Err(Error::Config(format!("sparsity {} must be in [0, 1)", self.sparsity)));
        }
        self.arch()?;
        let layers = &self.workload.layers;
        if layers.is_empty() {
            return Err(Error::Config("workload has no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.m == 0 || l.k == 0 || l.n == 0 {
                return Err(Error::Config(format!("layer {} needs positive m, k, n", l.id)));
            }
            if layers[..i].iter().any(|p| p.id == l.id) {
                return Err(Error::Config(format!("duplicate layer id {}", l.id)));
            }
        }
        Ok(())
    }

    pub fn arch(&self) -> Result<ArchConfig> {
        self.arch.apply(ArchConfig::default())
    }

    pub fn costs(&self) -> Result<CostTable> {
        match &self.cost_table {
            None => Ok(CostTable::default()),
            Some(p) => CostTable::from_json(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
        }
    }
}

/// The output directory: `DBPIM_OUT_DIR` if set, else `explicit`, else
/// `configured`, else `out`.
pub fn resolve_output_dir(explicit: Option<&Path>, configured: Option<&Path>) -> PathBuf {
    if let Some(v) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(v);
    }
    explicit.or(configured).map_or_else(|| PathBuf::from("out"), Path::to_path_buf)
}
