//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dbpim::compiler::placement::group_filters;
use dbpim::compiler::{compile_layer, LayerKind};
use dbpim::csd::{count_nonzero, from_csd, to_csd, CsdWord};
use dbpim::experiment::run_experiment;
use dbpim::io::synth::{generate_synthetic, synthetic_cnn, InputMode, LayerShape, WeightMode};
use dbpim::io::ExperimentConfig;
use dbpim::metrics::{closed_form_speedup, energy, normalized_energy, speedup, utilization, CostTable};
use dbpim::model::{run_model, MacroLayer, Model, ModelLayer};
use dbpim::oracle::{csd_enumerate, mvm_ref, net_ref, Requant};
use dbpim::sim::baseline::run_dense_baseline;
use dbpim::sim::simd::SimdOp;
use dbpim::sim::stats::SimStats;
use dbpim::sim::{run_layer, SimOptions, SimOutput};
use dbpim::sparsify::{compute_thresholds, fta_approximate, sparsify, PruneMask, ThresholdVector, WeightMatrix};
use dbpim::tensor::{ConvGeometry, FeatureMap, Matrix};
use dbpim::ArchConfig;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn ac1_csd_exhaustive() -> Check {
    let start = Instant::now();
    let mut max = 0;
    for v in i8::MIN..=i8::MAX {
        let w = to_csd(v);
        ensure!(from_csd(&w) == v as i32, "{v} does not round-trip");
        let d = w.digits();
        ensure!((0..7).all(|i| d[i] == 0 || d[i + 1] == 0), "{v} encodes with adjacent non-zeros");
        let all = csd_enumerate(v);
        let naf = all.non_adjacent();
        ensure!(naf == vec![d], "{v}: {} non-adjacent encodings, or ours differs", naf.len());
        ensure!(count_nonzero(&w) as usize == all.min_nonzero, "{v} is not minimal");
        max = max.max(count_nonzero(&w));
    }
    ensure!(max == 4, "max non-zero count {max}");
    let t = start.elapsed();
    ensure!(t < Duration::from_secs(1), "took {t:?}");
    Ok(format!("256 values in {:.3} s", t.as_secs_f64()))
}

fn ac2_table_one() -> Check {
    for (v, s) in [(67i8, "0100_010N"), (-67, "0N00_0N01")] {
        let w = to_csd(v);
        ensure!(w.to_string() == s, "{v} renders as {w}");
        ensure!(s.parse::<CsdWord>().map_err(err)?.value() == v as i32, "{s} does not parse back to {v}");
        ensure!(count_nonzero(&w) == 3, "{v} has {} non-zeros", count_nonzero(&w));
    }
    Ok("67 and -67".into())
}

fn ac3_fta_example() -> Check {
    let f = [-63i8, 0, 64, 0, 0, -8, 13];
    let w = WeightMatrix::new("ex", Matrix::from_vec(7, 1, f.to_vec()).map_err(err)?).map_err(err)?;
    let mask = PruneMask { bits: Matrix::from_vec(7, 1, vec![1, 0, 1, 1, 0, 1, 1]).map_err(err)?, alpha: 1 };
    let th = compute_thresholds(&w, &mask).map_err(err)?;
    ensure!(th.0 == vec![1], "threshold {:?}", th.0);
    let out = fta_approximate(&w, &mask, &th).map_err(err)?;
    let got = out.data.column(0);
    ensure!(got == vec![-64, 0, 64, 1, 0, -8, 16], "approximated to {got:?}");
    Ok(format!("{f:?} -> {got:?}"))
}

fn random_layer(rng: &mut ChaCha8Rng, i: usize) -> Check {
    let (k, n, m) = (rng.gen_range(1..=512), rng.gen_range(1..=128), rng.gen_range(1..=16));
    let sparsity = [0.0, 0.2, 0.4, 0.6][i % 4];
    let weights = if i % 2 == 1 {
        WeightMode::Uniform
    } else {
        WeightMode::MixedPlanted { fractions: [0.1, 0.3, 0.6] }
    };
    let shape = LayerShape { id: format!("r{i}"), m, k, n };
    let syn = generate_synthetic(&shape, &weights, &InputMode::Uniform, rng.gen()).map_err(err)?;
    let fta = sparsify(&WeightMatrix::new(&shape.id, syn.weights).map_err(err)?, 8, sparsity).map_err(err)?;
    let arch = ArchConfig { mixed_threshold_macros: i % 3 == 2, ..ArchConfig::default() };
    let layer = compile_layer(&shape.id, LayerKind::Fc, &fta, m, &arch, vec![]).map_err(err)?;
    let out = run_layer(&layer, &syn.inputs, SimOptions::default()).map_err(err)?;
    let eff = Matrix::from_fn(k, n, |r, c| if fta.mask.keeps(r, c) { fta.data.get(r, c) as i32 } else { 0 });
    let want = mvm_ref(&syn.inputs.map(|v| v as i32), &eff).map_err(err)?;
    ensure!(out.outputs.map(|v| v as i64) == want, "layer {i} ({m}x{k}x{n}, s={sparsity}) differs from the oracle");
    Ok(String::new())
}

fn toy_cnn(seed: u64, sparsity: f64) -> Result<(Model, FeatureMap), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = Requant { scale_num: 1, scale_den: 1, shift: 12, zero_point: 0 };
    let conv = MacroLayer::new(
        "conv",
        Some(ConvGeometry::new(3, 1, 1)),
        Matrix::from_fn(27, 24, |_, _| rng.gen()),
        8,
        sparsity,
        vec![SimdOp::Requantize(q), SimdOp::Relu],
    )
    .map_err(err)?;
    let fc = MacroLayer::new("fc", None, Matrix::from_fn(4 * 4 * 24, 10, |_, _| rng.gen()), 8, sparsity, vec![])
        .map_err(err)?;
    let model = Model {
        layers: vec![
            ModelLayer::Macro(conv),
            ModelLayer::Simd { id: "pool".into(), op: SimdOp::MaxPool { size: 2, stride: 2 } },
            ModelLayer::Macro(fc),
        ],
    };
    let x = FeatureMap::from_vec(8, 8, 3, (0..192).map(|_| rng.gen_range(-128..128)).collect()).map_err(err)?;
    Ok((model, x))
}

fn ac4_bit_exact() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xD1B);
    let layers = 120;
    for i in 0..layers {
        random_layer(&mut rng, i)?;
    }
    for (seed, s) in [(1, 0.0), (2, 0.4)] {
        let (model, x) = toy_cnn(seed, s)?;
        let run = run_model(&model, &x, &ArchConfig::default(), SimOptions::default(), false).map_err(err)?;
        let want = net_ref(&model.to_reference_net(true).map_err(err)?, &x).map_err(err)?;
        ensure!(run.output == want, "toy CNN (s={s}) differs from the reference");
    }
    let t = start.elapsed();
    ensure!(t < Duration::from_secs(120), "took {t:?}");
    Ok(format!("{layers} layers + toy CNN in {:.1} s", t.as_secs_f64()))
}

struct Planted {
    db: SimOutput,
    base: SimOutput,
    no_skip: SimOutput,
}

fn planted(shape: &LayerShape, threshold: u8, zero_fraction: f64, sparsity: f64, arch: &ArchConfig, seed: u64) -> Result<Planted, String> {
    let syn = generate_synthetic(
        shape,
        &WeightMode::ThresholdPlanted { threshold },
        &InputMode::ZeroBitPlanted { zero_fraction },
        seed,
    )
    .map_err(err)?;
    let fta = sparsify(&WeightMatrix::new(&shape.id, syn.weights.clone()).map_err(err)?, arch.alpha, sparsity).map_err(err)?;
    let layer = compile_layer(&shape.id, LayerKind::Fc, &fta, shape.m, arch, vec![]).map_err(err)?;
    let db = run_layer(&layer, &syn.inputs, SimOptions::default()).map_err(err)?;
    let no_skip = run_layer(&layer, &syn.inputs, SimOptions { ipu_skip: false, trace: false }).map_err(err)?;
    let base = run_dense_baseline(&shape.id, &syn.weights, &syn.inputs, arch, &[], SimOptions::default()).map_err(err)?;
    Ok(Planted { db, base, no_skip })
}

fn ac5_speedup() -> Check {
    let shape = LayerShape { id: "p".into(), m: 16, k: 1024, n: 64 };
    let mut notes = Vec::new();
    for (s, want) in [(0.0, 4.0), (0.5, 8.0)] {
        let p = planted(&shape, 2, 0.0, s, &ArchConfig::analytical(), 5)?;
        let got = speedup(&p.db.stats, &p.base.stats).map_err(err)?;
        ensure!(got == want, "zero overheads, sparsity {s}: speedup {got}, expected {want}");
        ensure!(closed_form_speedup(2.0, 1.0 - s, 8.0) == want, "closed form disagrees");
        let p = planted(&shape, 2, 0.0, s, &ArchConfig::default(), 5)?;
        let got = speedup(&p.db.stats, &p.base.stats).map_err(err)?;
        let rel = got / want - 1.0;
        ensure!(rel.abs() <= 0.10, "default overheads, sparsity {s}: speedup {got:.3} is {:+.1}% off {want}", rel * 100.0);
        notes.push(format!("{want:.2} exact, {got:.3} with overheads"));
    }
    // The config path must agree with the direct one.
    let cfg = ExperimentConfig::from_json(
        r#"{ "version": 1, "seed": 11, "sparsity": 0.5,
             "arch": { "overheads": { "tile_load": 0, "row_pass": 0, "accum": 0, "writeback": 0 } },
             "workload": { "layers": [ { "id": "a", "m": 16, "k": 256, "n": 64 } ],
                           "weights": { "mode": "threshold-planted", "threshold": 2 },
                           "inputs": { "mode": "zero-bit-planted", "zero_fraction": 0.0 } } }"#,
    )
    .map_err(err)?;
    let got = speedup(&run_experiment(&cfg, false).map_err(err)?.stats, &run_experiment(&cfg, true).map_err(err)?.stats)
        .map_err(err)?;
    ensure!(got == 8.0, "config run: speedup {got}");
    Ok(notes.join("; "))
}

fn ac6_ipu() -> Check {
    let shape = LayerShape { id: "z".into(), m: 8, k: 512, n: 64 };
    for z in [0.0, 0.25, 0.5, 0.75] {
        let p = planted(&shape, 2, z, 0.0, &ArchConfig::analytical(), 9)?;
        let s = &p.db.stats;
        let want = (8.0 * (1.0 - z)) as u64;
        ensure!(s.cycles.row_pass == want * s.row_passes, "z={z}: {} cycles over {} row passes", s.cycles.row_pass, s.row_passes);
        ensure!(p.no_skip.stats.cycles.row_pass == 8 * s.row_passes, "z={z}: no-skip run is not 8 cycles per pass");
        ensure!(p.db.outputs == p.no_skip.outputs, "z={z}: skipping changed the outputs");
    }
    Ok("8, 6, 4, 2 cycles per row pass".into())
}

fn total(stats: &SimStats, costs: &CostTable) -> f64 {
    energy(stats, costs).total
}

fn ac7_utilization_energy() -> Check {
    let full = planted(&LayerShape { id: "u".into(), m: 16, k: 512, n: 64 }, 2, 0.0, 0.0, &ArchConfig::default(), 3)?;
    let u = utilization(&full.db.stats);
    ensure!(u == Some(1.0), "full homogeneous tiles: U_act {u:?}");

    let p = group_filters(&ThresholdVector::new(vec![2; 5]).map_err(err)?, &ArchConfig::default()).map_err(err)?;
    ensure!(p.column_utilization() == Some(0.625), "5-of-8 macro: {:?}", p.column_utilization());

    let arch = ArchConfig::default();
    let mixed = ArchConfig { mixed_threshold_macros: true, ..arch };
    let mut homogeneous = 0.0;
    let mut bands = Vec::new();
    let mut energies = Vec::new();
    let costs = CostTable::default();
    for s in [0.0, 0.25, 0.5] {
        let (model, x) = synthetic_cnn(21, s).map_err(err)?;
        // Homogeneous macros hold the band on the unpruned model; pruned
        // models need block-aligned (mixed-threshold) macros to keep it.
        if s == 0.0 {
            let db = run_model(&model, &x, &arch, SimOptions::default(), false).map_err(err)?;
            let u = utilization(&db.stats).unwrap_or(0.0);
            ensure!((0.78..=1.0).contains(&u), "synthetic CNN, homogeneous macros: U_act {u:.4}");
            homogeneous = u;
        }
        let m = run_model(&model, &x, &mixed, SimOptions::default(), false).map_err(err)?;
        let u = utilization(&m.stats).unwrap_or(0.0);
        ensure!((0.78..=1.0).contains(&u), "synthetic CNN at sparsity {s}, mixed macros: U_act {u:.4}");
        bands.push(format!("{u:.3}"));

        let db = run_model(&model, &x, &arch, SimOptions::default(), false).map_err(err)?;
        let base = run_model(&model, &x, &arch, SimOptions::default(), true).map_err(err)?;
        let e = normalized_energy(&db.stats, &base.stats, &costs).map_err(err)?.ok_or("no baseline energy")?;
        ensure!(db.stats.skipped_bit_cycles > 0 && e < 1.0, "sparsity {s}: normalized energy {e}");
        energies.push(e);

        // Linearity: scaling and adding cost tables scales and adds energy.
        let other = CostTable { cell_op: 0.5, tile_load: 9.0, meta_rf_read: 1.0, ..CostTable::default() };
        let sum = CostTable {
            cell_op: costs.cell_op + other.cell_op,
            adder_tree_op: costs.adder_tree_op + other.adder_tree_op,
            meta_rf_read: costs.meta_rf_read + other.meta_rf_read,
            buffer_read: costs.buffer_read + other.buffer_read,
            buffer_write: costs.buffer_write + other.buffer_write,
            network_switch: costs.network_switch + other.network_switch,
            simd_op: costs.simd_op + other.simd_op,
            tile_load: costs.tile_load + other.tile_load,
            writeback: costs.writeback + other.writeback,
            ..costs
        };
        let (a, b, ab) = (total(&db.stats, &costs), total(&db.stats, &other), total(&db.stats, &sum));
        ensure!(((a + b) - ab).abs() <= 1e-9 * ab, "energy is not additive in the cost table");
        let scaled = total(&db.stats, &costs.scaled(3.0));
        ensure!((scaled - 3.0 * a).abs() <= 1e-9 * scaled, "energy does not scale with the cost table");
    }
    ensure!(energies.windows(2).all(|w| w[1] < w[0]), "normalized energy not decreasing with sparsity: {energies:?}");
    Ok(format!(
        "U_act full=1.0, partial=0.625, CNN homogeneous {homogeneous:.3} / mixed {}; normalized energy {}",
        bands.join(" "),
        energies.iter().map(|e| format!("{e:.3}")).collect::<Vec<_>>().join(" > ")
    ))
}

fn ac8_determinism() -> Check {
    let cfg = ExperimentConfig::from_json(
        r#"{ "version": 1, "seed": 99, "sparsity": 0.4,
             "workload": { "layers": [ { "id": "a", "m": 9, "k": 300, "n": 50 }, { "id": "b", "m": 4, "k": 77, "n": 130 } ],
                           "weights": { "mode": "uniform" }, "inputs": { "mode": "uniform" } } }"#,
    )
    .map_err(err)?;
    for baseline in [false, true] {
        let a = run_experiment(&cfg, baseline).map_err(err)?;
        let b = run_experiment(&cfg, baseline).map_err(err)?;
        ensure!(serde_json::to_vec(&a).map_err(err)? == serde_json::to_vec(&b).map_err(err)?, "config runs differ");
    }
    let (m1, x1) = synthetic_cnn(4, 0.3).map_err(err)?;
    let (m2, x2) = synthetic_cnn(4, 0.3).map_err(err)?;
    let arch = ArchConfig::default();
    let r1 = run_model(&m1, &x1, &arch, SimOptions::default(), false).map_err(err)?;
    let r2 = run_model(&m2, &x2, &arch, SimOptions::default(), false).map_err(err)?;
    ensure!(serde_json::to_vec(&r1).map_err(err)? == serde_json::to_vec(&r2).map_err(err)?, "model runs differ");
    Ok("config and model runs byte-identical".into())
}

fn main() {
    let criteria: [(&str, fn() -> Check); 8] = [
        ("csd exhaustive", ac1_csd_exhaustive),
        ("csd table regression", ac2_table_one),
        ("fta worked example", ac3_fta_example),
        ("bit-exact datapath", ac4_bit_exact),
        ("speedup closed form", ac5_speedup),
        ("input bit skipping", ac6_ipu),
        ("utilization and energy", ac7_utilization_energy),
        ("determinism", ac8_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(note) => println!("PASS {} {name}: {note}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
