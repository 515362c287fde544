//! Browser bindings for the demo page in `www/`. Every export returns a
//! JSON string; failures become a thrown JS string.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use dbpim::csd::to_csd;
use dbpim::experiment::run_experiment;
use dbpim::io::config::{ArchOverrides, WorkloadSpec};
use dbpim::io::synth::{InputMode, LayerShape, WeightMode};
use dbpim::io::ExperimentConfig;
use dbpim::metrics::{CostTable, Report};
use dbpim::sparsify::{compute_thresholds, fta_approximate, PruneMask, WeightMatrix};
use dbpim::tensor::Matrix;

#[derive(Serialize)]
struct Block {
    index: u8,
    comp: bool,
    value: i32,
}

#[derive(Serialize)]
struct Encoding {
    value: i8,
    csd: String,
    nonzero: u8,
    blocks: Vec<Block>,
}

#[derive(Serialize)]
struct Approximation {
    threshold: u8,
    weights: Vec<i8>,
}

#[derive(Serialize)]
struct Point {
    sparsity: f64,
    speedup: f64,
    u_act: Option<f64>,
    normalized_energy: Option<f64>,
    cycles: u64,
    baseline_cycles: u64,
}

fn json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

pub fn encode_json(value: i32) -> Result<String, String> {
    let v = i8::try_from(value).map_err(|_| format!("{value} is not an INT8 value"))?;
    let w = to_csd(v);
    let blocks = w
        .blocks()
        .iter()
        .map(|b| Block { index: b.index, comp: b.is_comp(), value: b.value() })
        .collect();
    json(&Encoding { value: v, csd: w.to_string(), nonzero: w.nonzero_count(), blocks })
}

/// One filter: `weights[k]`, with `keep[k] = 0` pruning row `k`.
pub fn approximate_json(weights: &[i32], keep: &[u8]) -> Result<String, String> {
    if weights.len() != keep.len() || weights.is_empty() {
        return Err(format!("{} weights but {} mask bits", weights.len(), keep.len()));
    }
    let data = weights
        .iter()
        .map(|&v| i8::try_from(v).map_err(|_| format!("{v} is not an INT8 value")))
        .collect::<Result<Vec<_>, _>>()?;
    let k = data.len();
    let e = |e: dbpim::Error| e.to_string();
    let w = WeightMatrix::new("filter", Matrix::from_vec(k, 1, data).map_err(e)?).map_err(e)?;
    let mask = PruneMask { bits: Matrix::from_vec(k, 1, keep.iter().map(|&b| (b != 0) as u8).collect()).map_err(e)?, alpha: 1 };
    let th = compute_thresholds(&w, &mask).map_err(e)?;
    let fta = fta_approximate(&w, &mask, &th).map_err(e)?;
    json(&Approximation { threshold: th.get(0), weights: fta.data.column(0) })
}

/// Speedup, utilization and energy of one uniform-random FC layer at each
/// sparsity in `sparsities`.
pub fn sweep_json(
    m: usize,
    k: usize,
    n: usize,
    sparsities: &[f64],
    zero_fraction: f64,
    mixed_macros: bool,
    seed: u64,
) -> Result<String, String> {
    let inputs = if zero_fraction > 0.0 {
        InputMode::ZeroBitPlanted { zero_fraction }
    } else {
        InputMode::Uniform
    };
    let mut points = Vec::new();
    for &sparsity in sparsities {
        let cfg = ExperimentConfig {
            version: dbpim::io::config::CONFIG_VERSION,
            seed,
            sparsity,
            arch: ArchOverrides { mixed_threshold_macros: Some(mixed_macros), ..ArchOverrides::default() },
            cost_table: None,
            ipu_skip: true,
            workload: WorkloadSpec {
                layers: vec![LayerShape { id: "fc".into(), m, k, n }],
                weights: WeightMode::Uniform,
                inputs: inputs.clone(),
            },
            output_dir: None,
        };
        let e = |e: dbpim::Error| e.to_string();
        let db = run_experiment(&cfg, false).map_err(e)?;
        let base = run_experiment(&cfg, true).map_err(e)?;
        let r = Report::new(&db.stats, &base.stats, &CostTable::default()).map_err(e)?;
        points.push(Point {
            sparsity,
            speedup: r.speedup,
            u_act: r.u_act,
            normalized_energy: r.normalized_energy,
            cycles: r.cycles.total,
            baseline_cycles: r.baseline_cycles.total,
        });
    }
    json(&points)
}

#[wasm_bindgen]
pub fn encode(value: i32) -> Result<String, JsValue> {
    encode_json(value).map_err(JsValue::from)
}

#[wasm_bindgen]
pub fn approximate(weights: &[i32], keep: &[u8]) -> Result<String, JsValue> {
    approximate_json(weights, keep).map_err(JsValue::from)
}

#[wasm_bindgen]
pub fn sweep(
    m: usize,
    k: usize,
    n: usize,
    sparsities: &[f64],
    zero_fraction: f64,
    mixed_macros: bool,
    seed: u32,
) -> Result<String, JsValue> {
    sweep_json(m, k, n, sparsities, zero_fraction, mixed_macros, seed as u64).map_err(JsValue::from)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_table_value() {
        let v: serde_json::Value = serde_json::from_str(&encode_json(-67).unwrap()).unwrap();
        assert_eq!(v["csd"], "0N00_0N01");
        assert_eq!(v["nonzero"], 3);
        assert!(encode_json(200).is_err());
    }

    #[test]
    fn approximate_worked_example() {
        let v: serde_json::Value =
            serde_json::from_str(&approximate_json(&[-63, 0, 64, 0, 0, -8, 13], &[1, 0, 1, 1, 0, 1, 1]).unwrap()).unwrap();
        assert_eq!(v["threshold"], 1);
        assert_eq!(v["weights"], serde_json::json!([-64, 0, 64, 1, 0, -8, 16]));
    }

    #[test]
    fn sweep_reports_each_point() {
        let v: serde_json::Value = serde_json::from_str(&sweep_json(4, 64, 16, &[0.0, 0.5], 0.25, true, 1).unwrap()).unwrap();
        let pts = v.as_array().unwrap();
        assert_eq!(pts.len(), 2);
        assert!(pts.iter().all(|p| p["speedup"].as_f64().unwrap() > 1.0));
    }
}
