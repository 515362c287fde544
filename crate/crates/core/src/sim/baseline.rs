//! Dense digital-PIM baseline: no pruning, no approximation, no skipping.
//!
//! Each filter stores its raw two's-complement weight bits in 8 adjacent
//! columns (bit `p` in column `8j + p`), so a 16-column macro holds two
//! filters. Every row pass processes all eight input bits. The same tiling
//! and executor as the dyadic path keep the cost structure identical.

use crate::arch::ArchConfig;
use crate::compiler::isa::{emit_instructions, LayerKind};
use crate::compiler::placement::dense_placement;
use crate::compiler::tiling::{plan_tiling, RoutingMask};
use crate::error::{Error, Result};
use crate::sim::dbmu::StoredCell;
use crate::sim::ipu::input_bit_weight;
use crate::sim::simd::SimdOp;
use crate::sim::{execute, Datapath, Program, RowCells, SimOptions, SimOutput};
use crate::tensor::Matrix;

/// Runs `inputs` (M x K) against raw INT8 `weights` (K x N) on the dense
/// baseline, then applies `epilogue`.
pub fn run_dense_baseline(
    layer_id: &str,
    weights: &Matrix<i8>,
    inputs: &Matrix<i8>,
    arch: &ArchConfig,
    epilogue: &[SimdOp],
    opts: SimOptions,
) -> Result<SimOutput> {
    arch.validate()?;
    if let Some(op) = epilogue.iter().find(|op| !op.is_elementwise()) {
        return Err(Error::InvalidArgument(format!("{op:?} cannot be a layer epilogue")));
    }
    let (k, n) = (weights.rows(), weights.cols());
    let m = inputs.rows();
    let placement = dense_placement(n, arch)?;
    let routing = vec![RoutingMask::all(k); placement.groups.len()];
    let plan = plan_tiling(m, k, &placement, &routing, arch)?;
    let instructions = emit_instructions(Some(&plan), LayerKind::Fc, epilogue.len())?;
    let bits = arch.input_bits as usize;

    let mut rows = Vec::with_capacity(plan.n_tiles.len());
    for nt in &plan.n_tiles {
        let mut per_k = Vec::with_capacity(nt.k_tiles.len());
        for kt in 0..nt.k_tiles.len() {
            let mut per_slot = Vec::with_capacity(nt.groups.len());
            for &g in &nt.groups {
                let group = &placement.groups[g];
                let per_row = (0..arch.rows_per_compartment)
                    .map(|row| {
                        let mut cells = Vec::new();
                        let mut filled = 0;
                        for c in 0..arch.compartments {
                            let kk = kt * plan.rows_per_tile + row * arch.compartments + c;
                            if kk >= k {
                                break;
                            }
                            filled += 1;
                            for (j, &f) in group.filters.iter().enumerate() {
                                let w = weights.get(kk, f) as u8;
                                for p in 0..bits {
                                    if (w >> p) & 1 == 1 {
                                        cells.push(StoredCell {
                                            compartment: c as u8,
                                            column: (j * bits + p) as u8,
                                            value: input_bit_weight(p as u32) as i32,
                                        });
                                    }
                                }
                            }
                        }
                        // Every occupied column of a filled compartment computes,
                        // whether its weight bit is 0 or 1.
                        RowCells { cells, effective: (filled * group.occupied_columns()) as u64 }
                    })
                    .collect();
                per_slot.push(per_row);
            }
            per_k.push(per_slot);
        }
        rows.push(per_k);
    }

    let program = Program {
        layer_id,
        m,
        n,
        k,
        arch,
        placement: &placement,
        routing: &routing,
        plan: &plan,
        instructions: &instructions,
        epilogue,
        rows,
        datapath: Datapath::DenseBinary,
    };
    execute(&program, inputs, opts)
}
