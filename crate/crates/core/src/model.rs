//! Sequential integer networks: macro layers (conv / fc) lowered through
//! im2col and run on the simulator, with pooling, depthwise convolution and
//! other element-wise work on the SIMD core.

use serde::{Deserialize, Serialize};

use crate::arch::ArchConfig;
use crate::compiler::im2col::im2col;
use crate::compiler::isa::LayerKind;
use crate::compiler::pack::compile_layer;
use crate::error::{Error, Result};
use crate::oracle::{RefLayer, ReferenceNet};
use crate::sim::baseline::run_dense_baseline;
use crate::sim::simd::{simd_op, SimdOp};
use crate::sim::stats::{LayerWorkload, SimStats};
use crate::sim::{run_layer, SimOptions};
use crate::sparsify::{sparsify, FtaWeights, WeightMatrix};
use crate::tensor::{ConvGeometry, FeatureMap, Matrix};

/// A conv or fc layer. `geometry` is `None` for fc, which flattens its
/// HWC input into a single row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroLayer {
    pub id: String,
    pub geometry: Option<ConvGeometry>,
    /// Raw INT8 weights, K x N; what the dense baseline computes with.
    pub raw: Matrix<i8>,
    pub fta: FtaWeights,
    /// Element-wise ops applied to the layer output on the SIMD core.
    pub epilogue: Vec<SimdOp>,
}

impl MacroLayer {
    /// Sparsifies `raw` with block pruning at `sparsity` and FTA.
    pub fn new(
        id: impl Into<String>,
        geometry: Option<ConvGeometry>,
        raw: Matrix<i8>,
        alpha: usize,
        sparsity: f64,
        epilogue: Vec<SimdOp>,
    ) -> Result<Self> {
        let id = id.into();
        let fta = sparsify(&WeightMatrix::new(id.clone(), raw.clone())?, alpha, sparsity)?;
        Ok(MacroLayer { id, geometry, raw, fta, epilogue })
    }

    pub fn kind(&self) -> LayerKind {
        match self.geometry {
            None => LayerKind::Fc,
            Some(g) if g.kernel_h == 1 && g.kernel_w == 1 => LayerKind::PwConv,
            Some(_) => LayerKind::StdConv,
        }
    }

    /// Approximated weights with pruned entries zeroed.
    pub fn effective_weights(&self) -> Matrix<i32> {
        let f = &self.fta;
        Matrix::from_fn(f.data.rows(), f.data.cols(), |k, n| if f.mask.keeps(k, n) { f.data.get(k, n) as i32 } else { 0 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelLayer {
    Macro(MacroLayer),
    Simd { id: String, op: SimdOp },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub layers: Vec<ModelLayer>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelRun {
    pub output: FeatureMap,
    /// All layers merged.
    pub stats: SimStats,
    pub per_layer: Vec<SimStats>,
}

fn ref_op(op: &SimdOp) -> Result<RefLayer> {
    Ok(match op {
        SimdOp::Relu => RefLayer::Relu,
        SimdOp::Requantize(q) => RefLayer::Requantize(*q),
        SimdOp::MaxPool { size, stride } => RefLayer::MaxPool { size: *size, stride: *stride },
        SimdOp::AvgPool { size, stride } => RefLayer::AvgPool { size: *size, stride: *stride },
        SimdOp::DwConv { weights, geometry } => RefLayer::DwConv { weights: weights.clone(), geometry: *geometry },
        SimdOp::ResidualAdd | SimdOp::EltwiseMul => {
            return Err(Error::InvalidArgument(format!("{op:?} needs two inputs; sequential models cannot express it")))
        }
    })
}

impl Model {
    /// The same network for the reference evaluator, with FTA weights
    /// (`fta = true`) or the raw ones.
    pub fn to_reference_net(&self, fta: bool) -> Result<ReferenceNet> {
        let mut layers = Vec::new();
        for l in &self.layers {
            match l {
                ModelLayer::Macro(m) => {
                    let weights = if fta { m.effective_weights() } else { m.raw.map(|v| v as i32) };
                    layers.push(match m.geometry {
                        Some(geometry) => RefLayer::Conv { weights, geometry },
                        None => RefLayer::Fc { weights },
                    });
                    for op in &m.epilogue {
                        layers.push(ref_op(op)?);
                    }
                }
                ModelLayer::Simd { op, .. } => layers.push(ref_op(op)?),
            }
        }
        Ok(ReferenceNet { layers })
    }
}

fn lower(layer: &MacroLayer, x: &FeatureMap) -> Result<(Matrix<i8>, usize, usize)> {
    let (cols, oh, ow) = match layer.geometry {
        Some(g) => {
            let (oh, ow) = g.output_dims(x.height, x.width)?;
            (im2col(x, g)?, oh, ow)
        }
        None => (Matrix::from_vec(1, x.data.len(), x.data.clone())?, 1, 1),
    };
    if cols.cols() != layer.raw.rows() {
        return Err(Error::Shape(format!(
            "layer {} has K={} but its input lowers to K={}",
            layer.id,
            layer.raw.rows(),
            cols.cols()
        )));
    }
    let data = cols
        .as_slice()
        .iter()
        .map(|&v| {
            i8::try_from(v).map_err(|_| {
                Error::InvalidArgument(format!("layer {} input {v} is not INT8; requantize before it", layer.id))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((Matrix::from_vec(cols.rows(), cols.cols(), data)?, oh, ow))
}

fn simd_layer(id: &str, op: &SimdOp, x: &FeatureMap, arch: &ArchConfig, baseline: bool) -> Result<(FeatureMap, SimStats)> {
    let out = simd_op(op, &[x])?;
    let work = op.work(x.data.len(), out.data.len());
    let mut stats = SimStats {
        baseline,
        workload: vec![LayerWorkload { layer_id: id.to_string(), m: x.data.len(), n: 0, k: 0 }],
        ..SimStats::default()
    };
    stats.cycles.simd = work.div_ceil(arch.simd_lanes as u64);
    stats.cycles.total = stats.cycles.simd;
    stats.events.simd_ops = work;
    Ok((out, stats))
}

/// Runs every layer in order on DB-PIM (`baseline = false`) or on the dense
/// baseline with the raw weights.
pub fn run_model(model: &Model, input: &FeatureMap, arch: &ArchConfig, opts: SimOptions, baseline: bool) -> Result<ModelRun> {
    let mut x = input.clone();
    let mut per_layer = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        let (next, stats) = match layer {
            ModelLayer::Macro(l) => {
                let (inputs, oh, ow) = lower(l, &x)?;
                let out = if baseline {
                    run_dense_baseline(&l.id, &l.raw, &inputs, arch, &l.epilogue, opts)?
                } else {
                    let compiled = compile_layer(l.id.clone(), l.kind(), &l.fta, inputs.rows(), arch, l.epilogue.clone())?;
                    run_layer(&compiled, &inputs, opts)?
                };
                (FeatureMap::from_matrix(oh, ow, &out.outputs)?, out.stats)
            }
            ModelLayer::Simd { id, op } => simd_layer(id, op, &x, arch, baseline)?,
        };
        x = next;
        per_layer.push(stats);
    }
    let mut stats = SimStats { baseline, ..SimStats::default() };
    for s in &per_layer {
        stats.merge(s);
    }
    Ok(ModelRun { output: x, stats, per_layer })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{net_ref, Requant};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy(seed: u64, sparsity: f64) -> (Model, FeatureMap) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = Requant { scale_num: 1, scale_den: 1, shift: 12, zero_point: 0 };
        let conv = MacroLayer::new(
            "conv1",
            Some(ConvGeometry::new(3, 1, 1)),
            Matrix::from_fn(27, 16, |_, _| rng.gen()),
            8,
            sparsity,
            vec![SimdOp::Requantize(q), SimdOp::Relu],
        )
        .unwrap();
        let fc = MacroLayer::new("fc", None, Matrix::from_fn(4 * 4 * 16, 10, |_, _| rng.gen()), 8, sparsity, vec![]).unwrap();
        let model = Model {
            layers: vec![
                ModelLayer::Macro(conv),
                ModelLayer::Simd { id: "pool".into(), op: SimdOp::MaxPool { size: 2, stride: 2 } },
                ModelLayer::Macro(fc),
            ],
        };
        let x = FeatureMap::from_vec(8, 8, 3, (0..192).map(|_| rng.gen_range(-128..128)).collect()).unwrap();
        (model, x)
    }

    #[test]
    fn toy_cnn_matches_reference() {
        for (seed, s) in [(1, 0.0), (2, 0.4)] {
            let (model, x) = toy(seed, s);
            let arch = ArchConfig::default();
            let run = run_model(&model, &x, &arch, SimOptions::default(), false).unwrap();
            assert_eq!(run.output, net_ref(&model.to_reference_net(true).unwrap(), &x).unwrap());
            let base = run_model(&model, &x, &arch, SimOptions::default(), true).unwrap();
            assert_eq!(base.output, net_ref(&model.to_reference_net(false).unwrap(), &x).unwrap());
            assert_eq!(run.per_layer.len(), 3);
            assert!(run.stats.cycles.total < base.stats.cycles.total);
        }
    }

    #[test]
    fn non_int8_inputs_are_rejected() {
        let (mut model, x) = toy(3, 0.0);
        if let ModelLayer::Macro(conv) = &mut model.layers[0] {
            conv.epilogue.clear();
        }
        let err = run_model(&model, &x, &ArchConfig::default(), SimOptions::default(), false).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn kinds() {
        let l = |g| MacroLayer::new("l", g, Matrix::from_fn(9, 2, |_, _| 1), 8, 0.0, vec![]).unwrap();
        assert_eq!(l(None).kind(), LayerKind::Fc);
        assert_eq!(l(Some(ConvGeometry::new(3, 1, 0))).kind(), LayerKind::StdConv);
        assert_eq!(l(Some(ConvGeometry::new(1, 1, 0))).kind(), LayerKind::PwConv);
    }
}
