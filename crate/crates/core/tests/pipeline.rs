//! Library-level pipeline: prune, approximate, compile, serialize, simulate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dbpim::compiler::container::{decode_layer, encode_layer};
use dbpim::compiler::{compile_layer, LayerKind};
use dbpim::io::synth::{generate_synthetic, InputMode, LayerShape, WeightMode};
use dbpim::io::Tensor;
use dbpim::metrics::{speedup, Report, CostTable};
use dbpim::oracle::mvm_ref;
use dbpim::sim::baseline::run_dense_baseline;
use dbpim::sim::{run_layer, SimOptions};
use dbpim::sparsify::{block_l2_prune, compute_thresholds, fta_approximate, WeightMatrix};
use dbpim::tensor::Matrix;
use dbpim::ArchConfig;

#[test]
fn staged_pipeline_matches_oracle_and_survives_serialization() {
    let arch = ArchConfig::default();
    let shape = LayerShape { id: "l".into(), m: 12, k: 333, n: 70 };
    let syn = generate_synthetic(&shape, &WeightMode::Uniform, &InputMode::Uniform, 8).unwrap();

    let wt = Tensor::decode(&Tensor::from_i8("l", &syn.weights).encode().unwrap()).unwrap();
    let w = WeightMatrix::new("l", wt.to_i8_matrix().unwrap()).unwrap();
    let mask = block_l2_prune(&w, arch.alpha, 0.3).unwrap();
    let th = compute_thresholds(&w, &mask).unwrap();
    let fta = fta_approximate(&w, &mask, &th).unwrap();
    let fta: dbpim::sparsify::FtaWeights = serde_json::from_str(&serde_json::to_string(&fta).unwrap()).unwrap();

    let layer = compile_layer("l", LayerKind::Fc, &fta, shape.m, &arch, vec![]).unwrap();
    let layer = decode_layer(&encode_layer(&layer).unwrap()).unwrap();
    let db = run_layer(&layer, &syn.inputs, SimOptions::default()).unwrap();

    let eff = Matrix::from_fn(shape.k, shape.n, |k, n| if fta.mask.keeps(k, n) { fta.data.get(k, n) as i32 } else { 0 });
    let want = mvm_ref(&syn.inputs.map(|v| v as i32), &eff).unwrap();
    assert_eq!(db.outputs.map(|v| v as i64), want);

    let base = run_dense_baseline("l", &syn.weights, &syn.inputs, &arch, &[], SimOptions::default()).unwrap();
    let raw = mvm_ref(&syn.inputs.map(|v| v as i32), &syn.weights.map(|v| v as i32)).unwrap();
    assert_eq!(base.outputs.map(|v| v as i64), raw);

    assert!(speedup(&db.stats, &base.stats).unwrap() > 1.0);
    let report = Report::new(&db.stats, &base.stats, &CostTable::default()).unwrap();
    assert!(report.normalized_energy.unwrap() < 1.0);
    // Swapped roles are rejected.
    assert!(Report::new(&base.stats, &db.stats, &CostTable::default()).is_err());
}

#[test]
fn mismatched_workloads_cannot_be_compared() {
    let arch = ArchConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let run = |k: usize, rng: &mut ChaCha8Rng| {
        let w = Matrix::from_fn(k, 8, |_, _| rng.gen());
        let x = Matrix::from_fn(2, k, |_, _| rng.gen());
        run_dense_baseline("x", &w, &x, &arch, &[], SimOptions::default()).unwrap().stats
    };
    let a = run(32, &mut rng);
    let b = run(48, &mut rng);
    assert!(speedup(&a, &b).is_err());
}
