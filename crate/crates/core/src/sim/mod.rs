//! Cycle-level simulation of compiled layers.
//!
//! The executor walks the instruction stream. Every RUN_ROWPASS drives one
//! cell row of each engaged core; within a core, each macro takes one output
//! row of the M tile. Wall cycles for the pass are the largest IPU cycle
//! count over all engaged macros of all cores (the cores meet at a barrier
//! after every pass).

pub mod alloc;
pub mod baseline;
pub mod dbmu;
pub mod ipu;
pub mod simd;
pub mod stats;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::arch::ArchConfig;
use crate::compiler::isa::Instruction;
use crate::compiler::pack::CompiledLayer;
use crate::compiler::placement::Placement;
use crate::compiler::tiling::{RoutingMask, TilePlan};
use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, Matrix};

use alloc::sparse_allocate;
use dbmu::{accumulate_columns, row_cells, RowPassInput, StoredCell};
use simd::{simd_op, SimdOp};
use stats::{LayerWorkload, SimStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Skip all-zero input bit columns. Off, every row pass takes 8 cycles.
    pub ipu_skip: bool,
    /// Record one trace entry per macro row pass.
    pub trace: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { ipu_skip: true, trace: false }
    }
}

/// One macro row pass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// Wall cycle at which the row pass starts.
    pub cycle: u64,
    pub core: usize,
    pub macro_id: usize,
    pub n_tile: usize,
    pub k_tile: usize,
    pub m_tile: usize,
    pub row: usize,
    pub mask: u8,
    pub cycles: u32,
}

pub const TRACE_HEADER: &str = "# cycle core macro n_tile k_tile m_tile row mask cycles";

/// Line-oriented trace: a header line, then space-separated fields with the
/// active-bit mask as 8 binary digits, bit 7 first.
pub fn format_trace(entries: &[TraceEntry]) -> String {
    let mut s = String::from(TRACE_HEADER);
    s.push('\n');
    for e in entries {
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {} {:08b} {}",
            e.cycle, e.core, e.macro_id, e.n_tile, e.k_tile, e.m_tile, e.row, e.mask, e.cycles
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimOutput {
    pub outputs: Matrix<i32>,
    pub stats: SimStats,
    pub trace: Vec<TraceEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Datapath {
    Dyadic,
    DenseBinary,
}

/// Cells of one row of one macro image.
pub(crate) struct RowCells {
    pub cells: Vec<StoredCell>,
    /// Cells doing useful work when the row is driven.
    pub effective: u64,
}

/// Everything the executor reads, independent of how the weights were
/// stored.
pub(crate) struct Program<'a> {
    pub layer_id: &'a str,
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub arch: &'a ArchConfig,
    pub placement: &'a Placement,
    pub routing: &'a [RoutingMask],
    pub plan: &'a TilePlan,
    pub instructions: &'a [Instruction],
    pub epilogue: &'a [SimdOp],
    /// `[n_tile][k_tile][slot][row]`.
    pub rows: Vec<Vec<Vec<Vec<RowCells>>>>,
    pub datapath: Datapath,
}

/// Runs a compiled layer on `inputs` (M x K).
pub fn run_layer(layer: &CompiledLayer, inputs: &Matrix<i8>, opts: SimOptions) -> Result<SimOutput> {
    let rows = layer
        .images
        .iter()
        .map(|per_k| {
            per_k
                .iter()
                .map(|per_slot| {
                    per_slot
                        .iter()
                        .map(|img| {
                            (0..img.rows)
                                .map(|r| {
                                    let cells = row_cells(img, r);
                                    RowCells { effective: cells.len() as u64, cells }
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let program = Program {
        layer_id: &layer.layer_id,
        m: layer.m,
        n: layer.n,
        k: layer.k,
        arch: &layer.arch,
        placement: &layer.placement,
        routing: &layer.routing,
        plan: &layer.plan,
        instructions: &layer.instructions,
        epilogue: &layer.epilogue,
        rows,
        datapath: Datapath::Dyadic,
    };
    execute(&program, inputs, opts)
}

fn to_i32(v: i64, row: usize, col: usize) -> Result<i32> {
    i32::try_from(v).map_err(|_| Error::AccumulatorOverflow { row, col, value: v })
}

pub(crate) fn execute(p: &Program, inputs: &Matrix<i8>, opts: SimOptions) -> Result<SimOutput> {
    if inputs.rows() != p.m || inputs.cols() != p.k {
        return Err(Error::Shape(format!(
            "layer {} expects {}x{} inputs, got {}x{}",
            p.layer_id,
            p.m,
            p.k,
            inputs.rows(),
            inputs.cols()
        )));
    }
    let arch = p.arch;
    let plan = p.plan;
    let skip = opts.ipu_skip && p.datapath == Datapath::Dyadic;
    let bits_per_input = arch.input_bits as u64;
    let cells_per_row = (arch.compartments * arch.columns_per_macro) as u64;
    let streams = p.routing.iter().map(|r| sparse_allocate(inputs, r)).collect::<Result<Vec<_>>>()?;

    let mut regs = vec![0i64; p.m * p.n];
    let mut partial = vec![0i64; p.m * p.n];
    let mut outputs = Matrix::<i32>::zeros(p.m, p.n);
    let mut stats = SimStats {
        baseline: p.datapath == Datapath::DenseBinary,
        workload: vec![LayerWorkload { layer_id: p.layer_id.to_string(), m: p.m, n: p.n, k: p.k }],
        ..SimStats::default()
    };
    let mut trace = Vec::new();
    let mut column_sums = vec![0i64; arch.columns_per_macro];
    let mut values = vec![0i8; arch.compartments];

    // Filters held by the cores of an N tile.
    let tile_filters = |n_tile: usize| {
        plan.n_tiles[n_tile].groups.iter().flat_map(|&g| p.placement.groups[g].filters.iter().copied())
    };

    for ins in p.instructions {
        match *ins {
            Instruction::LoadTile { n_tile, k_tile } => {
                let (nt, kt) = (n_tile as usize, k_tile as usize);
                stats.cycles.tile_load += arch.overheads.tile_load;
                let written: u64 = p.rows[nt][kt].iter().flatten().map(|r| r.effective).sum();
                stats.events.tile_loads += written * arch.macros_per_core as u64;
            }
            Instruction::RunRowPass { n_tile, k_tile, m_tile, row } => {
                let (nt, kt, mt, row) = (n_tile as usize, k_tile as usize, m_tile as usize, row as usize);
                let start_cycle = stats.cycles.row_pass
                    + stats.cycles.tile_load
                    + stats.cycles.accum
                    + stats.cycles.writeback
                    + stats.cycles.simd;
                let mut wall = 0u32;
                for (core, &g) in plan.n_tiles[nt].groups.iter().enumerate() {
                    let base = kt * plan.rows_per_tile + row * arch.compartments;
                    let routed = plan.group_rows[g];
                    if base >= routed {
                        continue; // this core has run out of rows
                    }
                    let filled = (routed - base).min(arch.compartments);
                    let group = &p.placement.groups[g];
                    let rc = &p.rows[nt][kt][core][row];
                    for (macro_id, m_row) in plan.m_range(mt).enumerate() {
                        for (c, v) in values.iter_mut().enumerate() {
                            *v = if c < filled { streams[g].get(m_row, base + c) } else { 0 };
                        }
                        let input = RowPassInput::new(values.clone(), skip);
                        let bits = input.cycles();
                        wall = wall.max(bits);

                        column_sums.iter_mut().for_each(|s| *s = 0);
                        accumulate_columns(&rc.cells, &input, &mut column_sums);
                        for (j, &f) in group.filters.iter().enumerate() {
                            let sum: i64 = column_sums[group.span(j)].iter().sum();
                            let reg = &mut regs[m_row * p.n + f];
                            *reg += sum;
                            to_i32(*reg, m_row, f)?;
                        }

                        let bits = bits as u64;
                        stats.macro_row_passes += 1;
                        stats.effective_cells += rc.effective;
                        stats.total_cells += cells_per_row;
                        stats.effective_cell_ops += rc.effective * bits;
                        stats.padded_cell_ops += (cells_per_row - rc.effective) * bits;
                        let e = &mut stats.events;
                        e.cell_ops += rc.effective * bits;
                        e.adder_tree_ops += group.occupied_columns() as u64 * bits;
                        if p.datapath == Datapath::Dyadic {
                            e.meta_rf_reads += rc.effective;
                        }
                        e.network_switches += 1;
                        e.buffer_reads += filled as u64;
                        if opts.trace {
                            trace.push(TraceEntry {
                                cycle: start_cycle,
                                core,
                                macro_id,
                                n_tile: nt,
                                k_tile: kt,
                                m_tile: mt,
                                row,
                                mask: input.active,
                                cycles: input.cycles(),
                            });
                        }
                    }
                }
                stats.row_passes += 1;
                stats.cycles.row_pass += wall as u64 + arch.overheads.row_pass;
                stats.skipped_bit_cycles += bits_per_input - wall as u64;
            }
            Instruction::Accum { n_tile, m_tile, .. } => {
                stats.cycles.accum += arch.overheads.accum;
                for m_row in plan.m_range(m_tile as usize) {
                    for f in tile_filters(n_tile as usize) {
                        let i = m_row * p.n + f;
                        partial[i] += std::mem::take(&mut regs[i]);
                        to_i32(partial[i], m_row, f)?;
                        stats.events.buffer_reads += 1;
                        stats.events.buffer_writes += 1;
                    }
                }
            }
            Instruction::Writeback { n_tile, m_tile } => {
                stats.cycles.writeback += arch.overheads.writeback;
                for m_row in plan.m_range(m_tile as usize) {
                    for f in tile_filters(n_tile as usize) {
                        let i = m_row * p.n + f;
                        let v = std::mem::take(&mut partial[i]) + std::mem::take(&mut regs[i]);
                        outputs.set(m_row, f, to_i32(v, m_row, f)?);
                        stats.events.buffer_reads += 1;
                        stats.events.buffer_writes += 1;
                        stats.events.writebacks += 1;
                    }
                }
            }
            Instruction::SimdOp { op } => {
                let op = p
                    .epilogue
                    .get(op as usize)
                    .ok_or_else(|| Error::Format(format!("SIMD_OP {op} has no epilogue entry")))?;
                let fm = FeatureMap::from_matrix(p.m, 1, &outputs)?;
                let out = simd_op(op, &[&fm])?;
                outputs = Matrix::from_vec(p.m, p.n, out.data)?;
                let work = op.work(p.m * p.n, p.m * p.n);
                stats.cycles.simd += work.div_ceil(arch.simd_lanes as u64);
                stats.events.simd_ops += work;
            }
            Instruction::Barrier => {}
        }
    }
    let c = &mut stats.cycles;
    c.total = c.row_pass + c.tile_load + c.accum + c.writeback + c.simd;
    Ok(SimOutput { outputs, stats, trace })
}
