//! Dyadic-block packing of approximated weights into macro images.
//!
//! Compressed row `r` of a core lands in K tile `r / (Tk1 * Tk2)`, at
//! compartment `r % Tk1` and cell row `(r / Tk1) % Tk2`. Within its filter's
//! column span, a weight's comp-pattern blocks are written in ascending
//! block index. Zero-pattern blocks and pruned rows are never stored.

use serde::{Deserialize, Serialize};

use crate::arch::ArchConfig;
use crate::compiler::isa::{emit_instructions, Instruction, LayerKind};
use crate::compiler::placement::{group_by_blocks, group_filters, Placement};
use crate::compiler::tiling::{plan_tiling, RoutingMask, TilePlan};
use crate::csd::{to_csd, DyadicBlock};
use crate::error::{Error, Result};
use crate::sim::simd::SimdOp;
use crate::sparsify::{FtaWeights, ThresholdVector};

/// One storage cell: the magnitude bit of a comp-pattern block plus its
/// metadata (sign, block index) and a valid flag.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DyadicCell {
    pub q: u8,
    /// 1 for a negative digit.
    pub sign: u8,
    pub index: u8,
    pub valid: bool,
}

impl DyadicCell {
    pub const INVALID: DyadicCell = DyadicCell { q: 0, sign: 0, index: 0, valid: false };

    pub fn from_block(b: &DyadicBlock) -> Self {
        debug_assert!(b.is_comp());
        DyadicCell { q: b.q, sign: b.negative as u8, index: b.index, valid: true }
    }

    pub fn shift(&self) -> u32 {
        2 * self.index as u32 + self.q as u32
    }

    /// Signed block value; zero for an invalid cell.
    pub fn value(&self) -> i32 {
        if !self.valid {
            return 0;
        }
        let mag = 1i32 << self.shift();
        if self.sign == 1 {
            -mag
        } else {
            mag
        }
    }

    /// Cell-array byte: bit 0 = Q, bit 1 = valid.
    pub fn cell_byte(&self) -> u8 {
        self.q | (self.valid as u8) << 1
    }

    /// Metadata byte: bit 0 = sign, bits 2..1 = block index.
    pub fn meta_byte(&self) -> u8 {
        self.sign | self.index << 1
    }

    pub fn from_bytes(cell: u8, meta: u8) -> Result<Self> {
        if cell & !0b11 != 0 || meta & !0b111 != 0 {
            return Err(Error::Format(format!("reserved bits set in cell {cell:#04x} / meta {meta:#04x}")));
        }
        Ok(DyadicCell { q: cell & 1, sign: meta & 1, index: (meta >> 1) & 0b11, valid: cell & 0b10 != 0 })
    }
}

/// Contents of one macro for one N-K tile, indexed `[compartment][row][column]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacroImage {
    pub compartments: usize,
    pub rows: usize,
    pub columns: usize,
    pub cells: Vec<DyadicCell>,
}

impl MacroImage {
    pub fn empty(arch: &ArchConfig) -> Self {
        MacroImage {
            compartments: arch.compartments,
            rows: arch.rows_per_compartment,
            columns: arch.columns_per_macro,
            cells: vec![DyadicCell::INVALID; arch.cells_per_macro()],
        }
    }

    pub fn offset(&self, compartment: usize, row: usize, column: usize) -> usize {
        (compartment * self.rows + row) * self.columns + column
    }

    pub fn get(&self, compartment: usize, row: usize, column: usize) -> DyadicCell {
        self.cells[self.offset(compartment, row, column)]
    }

    pub fn set(&mut self, compartment: usize, row: usize, column: usize, cell: DyadicCell) {
        let i = self.offset(compartment, row, column);
        self.cells[i] = cell;
    }

    pub fn valid_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.valid).count()
    }
}

/// Everything the simulator needs to execute one macro layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompiledLayer {
    pub layer_id: String,
    pub kind: LayerKind,
    pub arch: ArchConfig,
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub thresholds: ThresholdVector,
    pub placement: Placement,
    /// One routing mask per placement group.
    pub routing: Vec<RoutingMask>,
    pub plan: TilePlan,
    /// `images[n_tile][k_tile][core_slot]`.
    pub images: Vec<Vec<Vec<MacroImage>>>,
    pub instructions: Vec<Instruction>,
    /// Element-wise SIMD ops applied to the layer output.
    pub epilogue: Vec<SimdOp>,
}

impl CompiledLayer {
    pub fn image(&self, n_tile: usize, k_tile: usize, slot: usize) -> &MacroImage {
        &self.images[n_tile][k_tile][slot]
    }
}

/// Writes every unmasked weight's comp-pattern blocks into the macro images
/// described by `plan`.
pub fn pack_weights(
    fta: &FtaWeights,
    placement: &Placement,
    routing: &[RoutingMask],
    plan: &TilePlan,
    arch: &ArchConfig,
) -> Result<Vec<Vec<Vec<MacroImage>>>> {
    let rows: Vec<Vec<usize>> = routing.iter().map(RoutingMask::compressed_rows).collect();
    let mut images = Vec::with_capacity(plan.n_tiles.len());
    for nt in &plan.n_tiles {
        let mut per_k = Vec::with_capacity(nt.k_tiles.len());
        for kt in 0..nt.k_tiles.len() {
            let mut per_slot = Vec::with_capacity(nt.groups.len());
            for &g in &nt.groups {
                let group = &placement.groups[g];
                let mut image = MacroImage::empty(arch);
                let start = kt * plan.rows_per_tile;
                let end = (start + plan.rows_per_tile).min(rows[g].len());
                for r in start..end.max(start) {
                    let local = r - start;
                    let (compartment, row) = (local % arch.compartments, local / arch.compartments);
                    let k = rows[g][r];
                    for (j, &f) in group.filters.iter().enumerate() {
                        if !fta.mask.keeps(k, f) {
                            continue;
                        }
                        let w = fta.data.get(k, f);
                        let comps: Vec<DyadicBlock> =
                            to_csd(w).blocks().into_iter().filter(DyadicBlock::is_comp).collect();
                        let span = group.span(j);
                        if comps.len() != span.len() {
                            return Err(Error::InvalidArgument(format!(
                                "weight {w} at ({k}, {f}) has {} comp blocks, filter needs {}",
                                comps.len(),
                                span.len()
                            )));
                        }
                        for (i, b) in comps.iter().enumerate() {
                            image.set(compartment, row, span.start + i, DyadicCell::from_block(b));
                        }
                    }
                }
                per_slot.push(image);
            }
            per_k.push(per_slot);
        }
        images.push(per_k);
    }
    Ok(images)
}

/// Placement, routing, tiling, packing and instruction emission for one
/// macro layer with `m` input rows.
pub fn compile_layer(
    layer_id: impl Into<String>,
    kind: LayerKind,
    fta: &FtaWeights,
    m: usize,
    arch: &ArchConfig,
    epilogue: Vec<SimdOp>,
) -> Result<CompiledLayer> {
    arch.validate()?;
    if !kind.uses_macros() {
        return Err(Error::InvalidArgument(format!("{kind:?} layers run on the SIMD core")));
    }
    if let Some(op) = epilogue.iter().find(|op| !op.is_elementwise()) {
        return Err(Error::InvalidArgument(format!("{op:?} cannot be a layer epilogue")));
    }
    fta.validate()?;
    let (k, n) = (fta.data.rows(), fta.data.cols());
    // Threshold-homogeneous groups pack columns tighter; block-aligned groups
    // route only their own block's kept rows. Keep whichever needs fewer row
    // passes (ties: homogeneous).
    let mut candidates = vec![group_filters(&fta.thresholds, arch)?];
    if arch.mixed_threshold_macros {
        candidates.push(group_by_blocks(&fta.thresholds, arch)?);
    }
    let mut best: Option<(usize, Placement, Vec<RoutingMask>, TilePlan)> = None;
    for placement in candidates {
        let routing: Vec<RoutingMask> =
            placement.groups.iter().map(|g| RoutingMask::for_group(g, &fta.mask)).collect();
        let plan = plan_tiling(m, k, &placement, &routing, arch)?;
        let passes = plan.n_tiles.iter().flat_map(|t| &t.k_tiles).map(|t| t.row_passes).sum();
        if best.as_ref().is_none_or(|b| passes < b.0) {
            best = Some((passes, placement, routing, plan));
        }
    }
    let (_, placement, routing, plan) = best.expect("two candidate placements");
    let images = pack_weights(fta, &placement, &routing, &plan, arch)?;
    let instructions = emit_instructions(Some(&plan), kind, epilogue.len())?;
    Ok(CompiledLayer {
        layer_id: layer_id.into(),
        kind,
        arch: *arch,
        m,
        n,
        k,
        thresholds: fta.thresholds.clone(),
        placement,
        routing,
        plan,
        images,
        instructions,
        epilogue,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparsify::{sparsify, PruneMask, WeightMatrix};
    use crate::tensor::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Rebuilds the weight matrix from images and metadata alone, without
    /// the CSD encoder or the packer's index arithmetic.
    fn unpack(layer: &CompiledLayer) -> Matrix<i32> {
        let mut out = Matrix::zeros(layer.k, layer.n);
        for (ni, nt) in layer.plan.n_tiles.iter().enumerate() {
            for (ki, _) in nt.k_tiles.iter().enumerate() {
                for (slot, &g) in nt.groups.iter().enumerate() {
                    let group = &layer.placement.groups[g];
                    let img = layer.image(ni, ki, slot);
                    let mut originals = Vec::new();
                    for (k, &b) in layer.routing[g].bits.iter().enumerate() {
                        if b {
                            originals.push(k);
                        }
                    }
                    for c in 0..img.compartments {
                        for r in 0..img.rows {
                            let compressed = ki * img.compartments * img.rows + r * img.compartments + c;
                            for col in 0..img.columns {
                                let cell = img.get(c, r, col);
                                if !cell.valid {
                                    continue;
                                }
                                let k = originals[compressed];
                                let f = group.filter_at(col).unwrap();
                                let mut v = 1i32;
                                for _ in 0..(cell.index * 2 + cell.q) {
                                    v *= 2;
                                }
                                if cell.sign == 1 {
                                    v = -v;
                                }
                                out.set(k, f, out.get(k, f) + v);
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn single(values: Vec<i8>, mask: Vec<u8>, th: Vec<u8>) -> CompiledLayer {
        let k = values.len() / th.len();
        let fta = FtaWeights {
            data: Matrix::from_vec(k, th.len(), values).unwrap(),
            mask: PruneMask { bits: Matrix::from_vec(k, th.len(), mask).unwrap(), alpha: 1 },
            thresholds: ThresholdVector::new(th).unwrap(),
        };
        compile_layer("t", LayerKind::Fc, &fta, 1, &ArchConfig::default(), vec![]).unwrap()
    }

    #[test]
    fn worked_cells() {
        // Filter 0 column {-64, pruned 0, 2}; threshold 1.
        let layer = single(vec![-64, 0, 2], vec![1, 0, 1], vec![1]);
        let img = layer.image(0, 0, 0);
        assert_eq!(img.get(0, 0, 0), DyadicCell { q: 0, sign: 1, index: 3, valid: true });
        assert_eq!(img.get(1, 0, 0), DyadicCell { q: 1, sign: 0, index: 0, valid: true });
        assert_eq!(img.valid_cells(), 2);
        assert_eq!(layer.routing[0].compressed_rows(), vec![0, 2]);
    }

    #[test]
    fn cell_bytes_round_trip() {
        for b in 0..16u8 {
            let cell = DyadicCell { q: b & 1, sign: (b >> 1) & 1, index: b >> 2, valid: true };
            assert_eq!(DyadicCell::from_bytes(cell.cell_byte(), cell.meta_byte()).unwrap(), cell);
        }
        assert!(DyadicCell::from_bytes(0x80, 0).is_err());
    }

    #[test]
    fn unpack_reconstructs_random_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..25 {
            let k = rng.gen_range(1..600);
            let n = rng.gen_range(1..150);
            let w = WeightMatrix::new("r", Matrix::from_fn(k, n, |_, _| rng.gen())).unwrap();
            let fta = sparsify(&w, 8, [0.0, 0.2, 0.4, 0.6][rng.gen_range(0..4)]).unwrap();
            let layer = compile_layer("r", LayerKind::Fc, &fta, 3, &ArchConfig::default(), vec![]).unwrap();
            assert_eq!(unpack(&layer), fta.data.map(|v| v as i32));
            for nt in &layer.images {
                for kt in nt {
                    for img in kt {
                        assert!(img.columns <= 16 && img.compartments <= 16 && img.rows <= 16);
                    }
                }
            }
            let expected: usize = (0..k)
                .flat_map(|r| (0..n).map(move |c| (r, c)))
                .filter(|&(r, c)| fta.mask.keeps(r, c))
                .map(|(_, c)| fta.thresholds.get(c) as usize)
                .sum();
            let stored: usize = layer.images.iter().flatten().flatten().map(MacroImage::valid_cells).sum();
            assert_eq!(stored, expected);
        }
    }

    #[test]
    fn rejects_non_elementwise_epilogue() {
        let w = WeightMatrix::new("r", Matrix::from_fn(4, 4, |r, c| (r + c) as i8)).unwrap();
        let fta = sparsify(&w, 2, 0.0).unwrap();
        let arch = ArchConfig::default();
        let pool = vec![SimdOp::MaxPool { size: 2, stride: 2 }];
        assert!(compile_layer("x", LayerKind::Fc, &fta, 1, &arch, pool).is_err());
        assert!(compile_layer("x", LayerKind::DwConv, &fta, 1, &arch, vec![]).is_err());
    }

    fn total_passes(l: &CompiledLayer) -> usize {
        l.plan.n_tiles.iter().flat_map(|t| &t.k_tiles).map(|t| t.row_passes).sum()
    }

    #[test]
    fn mixed_macros_follow_pruning_blocks() {
        use crate::io::synth::{generate_synthetic, InputMode, LayerShape, WeightMode};
        let shape = LayerShape { id: "m".into(), m: 4, k: 512, n: 96 };
        let syn = generate_synthetic(&shape, &WeightMode::MixedPlanted { fractions: [0.05, 0.25, 0.7] }, &InputMode::Uniform, 3)
            .unwrap();
        let fta = sparsify(&WeightMatrix::new("m", syn.weights).unwrap(), 8, 0.5).unwrap();
        let plain = ArchConfig::default();
        let mixed = ArchConfig { mixed_threshold_macros: true, ..plain };
        let a = compile_layer("m", LayerKind::Fc, &fta, 4, &plain, vec![]).unwrap();
        let b = compile_layer("m", LayerKind::Fc, &fta, 4, &mixed, vec![]).unwrap();
        assert!(a.placement.groups.iter().all(|g| g.widths.windows(2).all(|w| w[0] == w[1])));
        assert!(b.placement.groups.iter().any(|g| g.widths.windows(2).any(|w| w[0] != w[1])));
        assert!(total_passes(&b) < total_passes(&a));
        assert_eq!(unpack(&b), fta.data.map(|v| v as i32));
    }
}

