//! Config-driven runs: every layer of the workload generated from the seed,
//! then simulated on DB-PIM or on the dense baseline.

use serde::{Deserialize, Serialize};

use crate::compiler::isa::LayerKind;
use crate::compiler::pack::compile_layer;
use crate::error::Result;
use crate::io::config::ExperimentConfig;
use crate::io::synth::{generate_synthetic, layer_seed, LayerShape};
use crate::sim::baseline::run_dense_baseline;
use crate::sim::stats::SimStats;
use crate::sim::{run_layer, SimOptions};
use crate::sparsify::sparsify;
use crate::sparsify::WeightMatrix;
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRun {
    pub shape: LayerShape,
    pub outputs: Matrix<i32>,
    pub stats: SimStats,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentRun {
    pub layers: Vec<LayerRun>,
    /// All layers merged.
    pub stats: SimStats,
}

pub fn run_experiment(cfg: &ExperimentConfig, baseline: bool) -> Result<ExperimentRun> {
    cfg.validate()?;
    let arch = cfg.arch()?;
    let opts = SimOptions { ipu_skip: cfg.ipu_skip, trace: false };
    let mut layers = Vec::with_capacity(cfg.workload.layers.len());
    let mut stats = SimStats { baseline, ..SimStats::default() };
    for (i, shape) in cfg.workload.layers.iter().enumerate() {
        let syn = generate_synthetic(shape, &cfg.workload.weights, &cfg.workload.inputs, layer_seed(cfg.seed, i))?;
        let out = if baseline {
            run_dense_baseline(&shape.id, &syn.weights, &syn.inputs, &arch, &[], opts)?
        } else {
            let fta = sparsify(&WeightMatrix::new(shape.id.clone(), syn.weights)?, arch.alpha, cfg.sparsity)?;
            let layer = compile_layer(shape.id.clone(), LayerKind::Fc, &fta, shape.m, &arch, vec![])?;
            run_layer(&layer, &syn.inputs, opts)?
        };
        stats.merge(&out.stats);
        layers.push(LayerRun { shape: shape.clone(), outputs: out.outputs, stats: out.stats });
    }
    Ok(ExperimentRun { layers, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::speedup;

    #[test]
    fn planted_config_gives_closed_form_speedups() {
        let text = r#"{
            "version": 1, "seed": 11, "sparsity": SPARSITY,
            "arch": { "overheads": { "tile_load": 0, "row_pass": 0, "accum": 0, "writeback": 0 } },
            "workload": {
                "layers": [ { "id": "a", "m": 16, "k": 256, "n": 64 } ],
                "weights": { "mode": "threshold-planted", "threshold": 2 },
                "inputs": { "mode": "zero-bit-planted", "zero_fraction": 0.0 }
            }
        }"#;
        for (s, want) in [("0.0", 4.0), ("0.5", 8.0)] {
            let cfg = ExperimentConfig::from_json(&text.replace("SPARSITY", s)).unwrap();
            let db = run_experiment(&cfg, false).unwrap();
            let base = run_experiment(&cfg, true).unwrap();
            assert_eq!(speedup(&db.stats, &base.stats).unwrap(), want);
        }
    }
}
