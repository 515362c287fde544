use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleBreakdown {
    pub total: u64,
    pub row_pass: u64,
    pub tile_load: u64,
    pub accum: u64,
    pub writeback: u64,
    pub simd: u64,
}

/// Event tallies priced by the energy model.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub cell_ops: u64,
    pub adder_tree_ops: u64,
    pub meta_rf_reads: u64,
    pub buffer_reads: u64,
    pub buffer_writes: u64,
    pub network_switches: u64,
    pub simd_ops: u64,
    pub tile_loads: u64,
    pub writebacks: u64,
}

/// Shape of one simulated layer; stats from different runs are comparable
/// only when these lists agree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerWorkload {
    pub layer_id: String,
    pub m: usize,
    pub n: usize,
    pub k: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimStats {
    pub baseline: bool,
    pub workload: Vec<LayerWorkload>,
    pub cycles: CycleBreakdown,
    /// Controller-level row passes (all cores in lockstep).
    pub row_passes: u64,
    /// Row passes summed over every engaged macro.
    pub macro_row_passes: u64,
    /// Bit-serial cycles saved: input bits minus wall cycles, per row pass.
    pub skipped_bit_cycles: u64,
    /// Valid cell x active bit products.
    pub effective_cell_ops: u64,
    /// Invalid cell x active bit slots.
    pub padded_cell_ops: u64,
    /// Cells doing useful work, summed over engaged macro row passes.
    pub effective_cells: u64,
    /// All cells of engaged macros, summed over their row passes.
    pub total_cells: u64,
    pub events: EventCounts,
}

impl SimStats {
    pub fn merge(&mut self, other: &SimStats) {
        self.workload.extend(other.workload.iter().cloned());
        let c = &mut self.cycles;
        c.total += other.cycles.total;
        c.row_pass += other.cycles.row_pass;
        c.tile_load += other.cycles.tile_load;
        c.accum += other.cycles.accum;
        c.writeback += other.cycles.writeback;
        c.simd += other.cycles.simd;
        self.row_passes += other.row_passes;
        self.macro_row_passes += other.macro_row_passes;
        self.skipped_bit_cycles += other.skipped_bit_cycles;
        self.effective_cell_ops += other.effective_cell_ops;
        self.padded_cell_ops += other.padded_cell_ops;
        self.effective_cells += other.effective_cells;
        self.total_cells += other.total_cells;
        let e = &mut self.events;
        let o = &other.events;
        e.cell_ops += o.cell_ops;
        e.adder_tree_ops += o.adder_tree_ops;
        e.meta_rf_reads += o.meta_rf_reads;
        e.buffer_reads += o.buffer_reads;
        e.buffer_writes += o.buffer_writes;
        e.network_switches += o.network_switches;
        e.simd_ops += o.simd_ops;
        e.tile_loads += o.tile_loads;
        e.writebacks += o.writebacks;
    }

    pub fn total_cycles(&self) -> u64 {
        self.cycles.total
    }
}
