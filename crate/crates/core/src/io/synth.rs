//! Seeded synthetic workloads standing in for trained models.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::csd::query_table;
use crate::error::{Error, Result};
use crate::model::{MacroLayer, Model, ModelLayer};
use crate::oracle::Requant;
use crate::sim::simd::SimdOp;
use crate::tensor::{ConvGeometry, FeatureMap, Matrix};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerShape {
    pub id: String,
    pub m: usize,
    pub k: usize,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WeightMode {
    /// Uniform over all INT8 values.
    Uniform,
    /// Every filter built from members of one query table.
    ThresholdPlanted { threshold: u8 },
    /// Filters planted with thresholds 0, 1, 2 in the given proportions.
    MixedPlanted { fractions: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InputMode {
    Uniform,
    /// A fixed set of `8 * zero_fraction` bit positions is zero in every
    /// input, and every other position is set somewhere in each aligned
    /// group of 16 consecutive `k`.
    ZeroBitPlanted { zero_fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticLayer {
    /// K x N.
    pub weights: Matrix<i8>,
    /// M x K.
    pub inputs: Matrix<i8>,
}

/// Planted weights are split per pruning group of `alpha` filters: half of
/// the rows (chosen per group) draw small-magnitude members, the rest large
/// ones, so 50% block pruning removes exactly the small half.
pub const PLANT_ALPHA: usize = 8;

fn planted_members(t: u8) -> Result<(Vec<i8>, Vec<i8>)> {
    let members = query_table(t)?.members().to_vec();
    let small: Vec<i8> = members.iter().copied().filter(|v| v.unsigned_abs() <= 6).collect();
    let large: Vec<i8> = members.iter().copied().filter(|v| v.unsigned_abs() >= 64).collect();
    Ok((small, large))
}

fn plant_filters(rng: &mut ChaCha8Rng, k: usize, n: usize, thresholds: &[u8]) -> Result<Matrix<i8>> {
    let mut w = Matrix::zeros(k, n);
    for g0 in (0..n).step_by(PLANT_ALPHA) {
        let mut rows: Vec<usize> = (0..k).collect();
        rows.shuffle(rng);
        let large_rows = &rows[..k / 2];
        let mut is_large = vec![false; k];
        for &r in large_rows {
            is_large[r] = true;
        }
        for f in g0..(g0 + PLANT_ALPHA).min(n) {
            let t = thresholds[f];
            if t == 0 {
                continue;
            }
            let (small, large) = planted_members(t)?;
            for (r, &big) in is_large.iter().enumerate() {
                let pool = if big { &large } else { &small };
                w.set(r, f, *pool.choose(rng).unwrap());
            }
        }
    }
    Ok(w)
}

fn plant_inputs(rng: &mut ChaCha8Rng, m: usize, k: usize, zero_fraction: f64) -> Result<Matrix<i8>> {
    let zeros = zero_fraction * 8.0;
    if !(0.0..=1.0).contains(&zero_fraction) || zeros.fract() != 0.0 {
        return Err(Error::InvalidArgument(format!("zero-bit fraction {zero_fraction} is not a multiple of 1/8 in [0, 1]")));
    }
    let mut positions: Vec<u32> = (0..8).collect();
    positions.shuffle(rng);
    let zero_bits: u8 = positions[..zeros as usize].iter().fold(0, |acc, &b| acc | 1 << b);
    let live: Vec<u32> = positions[zeros as usize..].to_vec();
    let mut x = Matrix::from_fn(m, k, |_, _| (rng.gen::<u8>() & !zero_bits) as i8);
    for r in 0..m {
        for start in (0..k).step_by(16) {
            let len = (k - start).min(16);
            for (i, &b) in live.iter().enumerate() {
                let c = start + i % len;
                x.set(r, c, (x.get(r, c) as u8 | 1 << b) as i8);
            }
        }
    }
    Ok(x)
}

fn mixed_thresholds(rng: &mut ChaCha8Rng, n: usize, fractions: [f64; 3]) -> Result<Vec<u8>> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) || sum <= 0.0 {
        return Err(Error::InvalidArgument(format!("threshold fractions {fractions:?} must be non-negative with a positive sum")));
    }
    let n0 = (fractions[0] / sum * n as f64).round() as usize;
    let n1 = ((fractions[1] / sum * n as f64).round() as usize).min(n - n0.min(n));
    let mut th: Vec<u8> = (0..n).map(|i| if i < n0 { 0 } else if i < n0 + n1 { 1 } else { 2 }).collect();
    th.shuffle(rng);
    Ok(th)
}

/// Weights and inputs for one layer, reproducible from `seed`.
pub fn generate_synthetic(shape: &LayerShape, weights: &WeightMode, inputs: &InputMode, seed: u64) -> Result<SyntheticLayer> {
    let LayerShape { m, k, n, .. } = *shape;
    if m == 0 || k == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!("layer {} needs positive dims, got {m}x{k}x{n}", shape.id)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = match weights {
        WeightMode::Uniform => Matrix::from_fn(k, n, |_, _| rng.gen()),
        WeightMode::ThresholdPlanted { threshold } => {
            if *threshold > 2 {
                return Err(Error::ThresholdOutOfRange(*threshold));
            }
            plant_filters(&mut rng, k, n, &vec![*threshold; n])?
        }
        WeightMode::MixedPlanted { fractions } => {
            let th = mixed_thresholds(&mut rng, n, *fractions)?;
            plant_filters(&mut rng, k, n, &th)?
        }
    };
    let x = match inputs {
        InputMode::Uniform => Matrix::from_fn(m, k, |_, _| rng.gen()),
        InputMode::ZeroBitPlanted { zero_fraction } => plant_inputs(&mut rng, m, k, *zero_fraction)?,
    };
    Ok(SyntheticLayer { weights: w, inputs: x })
}

/// Seed for layer `index` of a run seeded with `seed`.
pub fn layer_seed(seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng.gen()
}

/// Requantization bringing a K-term dot product of INT8 values back to
/// roughly INT8 range.
fn requant_for(k: usize) -> Requant {
    let spread = 128.0 * 128.0 * (k as f64).sqrt() / 3.0;
    Requant { scale_num: 1, scale_den: 1, shift: (spread / 64.0).log2().round().max(0.0) as u32, zero_point: 0 }
}

/// A small CNN over a 16x16x8 input with mixed thresholds, partial
/// macros and channel counts that do not fill the array evenly.
pub fn synthetic_cnn(seed: u64, sparsity: f64) -> Result<(Model, FeatureMap)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // (kernel, stride, pad, in_channels, out_channels)
    let convs = [(3, 1, 1, 8, 36), (3, 1, 1, 36, 64), (1, 1, 0, 64, 92), (3, 2, 1, 92, 120)];
    let mut layers = Vec::new();
    for (i, &(kernel, stride, pad, c, n)) in convs.iter().enumerate() {
        let k = kernel * kernel * c;
        let th = mixed_thresholds(&mut rng, n, [0.02, 0.2, 0.78])?;
        let raw = plant_filters(&mut rng, k, n, &th)?;
        let epilogue = vec![SimdOp::Requantize(requant_for(k)), SimdOp::Relu];
        let layer = MacroLayer::new(format!("conv{}", i + 1), Some(ConvGeometry::new(kernel, stride, pad)), raw, PLANT_ALPHA, sparsity, epilogue)?;
        layers.push(ModelLayer::Macro(layer));
        if i == 1 {
            layers.push(ModelLayer::Simd { id: "pool1".into(), op: SimdOp::MaxPool { size: 2, stride: 2 } });
        }
    }
    let k = 4 * 4 * 120;
    let th = mixed_thresholds(&mut rng, 10, [0.0, 0.2, 0.8])?;
    let raw = plant_filters(&mut rng, k, 10, &th)?;
    layers.push(ModelLayer::Macro(MacroLayer::new("fc", None, raw, PLANT_ALPHA, sparsity, vec![])?));
    let input = FeatureMap::from_vec(16, 16, 8, (0..16 * 16 * 8).map(|_| rng.gen_range(0..128)).collect())?;
    Ok((Model { layers }, input))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::ipu::ipu_scan;
    use crate::sparsify::{compute_thresholds, sparsify, PruneMask, WeightMatrix};

    fn shape(m: usize, k: usize, n: usize) -> LayerShape {
        LayerShape { id: "s".into(), m, k, n }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let s = shape(5, 70, 20);
        let a = generate_synthetic(&s, &WeightMode::Uniform, &InputMode::Uniform, 3).unwrap();
        let b = generate_synthetic(&s, &WeightMode::Uniform, &InputMode::Uniform, 3).unwrap();
        let c = generate_synthetic(&s, &WeightMode::Uniform, &InputMode::Uniform, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn planted_thresholds_survive_sparsify() {
        for t in [1, 2] {
            let l = generate_synthetic(&shape(1, 64, 24), &WeightMode::ThresholdPlanted { threshold: t }, &InputMode::Uniform, 9)
                .unwrap();
            let w = WeightMatrix::new("p", l.weights).unwrap();
            let th = compute_thresholds(&w, &PruneMask::all_ones(64, 24, 8)).unwrap();
            assert!(th.0.iter().all(|&v| v == t));
            let fta = sparsify(&w, 8, 0.5).unwrap();
            // Exactly the small half of every group is pruned; kept weights
            // are already table members and pass through unchanged.
            for k in 0..64 {
                for f in 0..24 {
                    let big = w.data.get(k, f).unsigned_abs() >= 64;
                    assert_eq!(fta.mask.keeps(k, f), big);
                    if big {
                        assert_eq!(fta.data.get(k, f), w.data.get(k, f));
                    }
                }
            }
        }
    }

    #[test]
    fn zero_bit_planting_is_exact() {
        for z in [0.0, 0.25, 0.5, 0.75] {
            let l = generate_synthetic(&shape(4, 100, 1), &WeightMode::Uniform, &InputMode::ZeroBitPlanted { zero_fraction: z }, 5)
                .unwrap();
            for r in 0..4 {
                for chunk in l.inputs.row(r).chunks(16) {
                    assert_eq!(ipu_scan(chunk).cycles, (8.0 * (1.0 - z)) as u32);
                }
            }
        }
        let bad = InputMode::ZeroBitPlanted { zero_fraction: 0.3 };
        assert!(generate_synthetic(&shape(1, 1, 1), &WeightMode::Uniform, &bad, 0).is_err());
    }

    #[test]
    fn mixed_fractions() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let th = mixed_thresholds(&mut rng, 10, [0.1, 0.3, 0.6]).unwrap();
        assert_eq!(th.iter().filter(|&&t| t == 0).count(), 1);
        assert_eq!(th.iter().filter(|&&t| t == 1).count(), 3);
        assert!(mixed_thresholds(&mut rng, 10, [0.0; 3]).is_err());
    }

    #[test]
    fn layer_seeds_differ() {
        assert_ne!(layer_seed(1, 0), layer_seed(1, 1));
        assert_eq!(layer_seed(1, 0), layer_seed(1, 0));
    }
}
