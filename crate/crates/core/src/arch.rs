//! Hardware parameters of the modeled accelerator.

use serde::{Deserialize, Serialize};

use crate::csd::MAX_THRESHOLD;
use crate::error::{Error, Result};

/// Fixed cycle charges outside the macro row passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overheads {
    /// Per LOAD_TILE (weights written into one N-K tile of macros).
    pub tile_load: u64,
    /// Per RUN_ROWPASS on top of the bit-serial cycles.
    pub row_pass: u64,
    /// Per ACCUM (spill of accumulator registers into output-buffer partials).
    pub accum: u64,
    /// Per WRITEBACK.
    pub writeback: u64,
}

impl Overheads {
    pub const ZERO: Overheads = Overheads { tile_load: 0, row_pass: 0, accum: 0, writeback: 0 };
}

impl Default for Overheads {
    fn default() -> Self {
        Overheads { tile_load: 16, row_pass: 0, accum: 1, writeback: 4 }
    }
}

/// On-chip buffer capacities in bytes. Only recorded and validated; the
/// simulator counts buffer events but does not model capacity stalls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BufferSizes {
    pub input: usize,
    pub output: usize,
    pub instruction: usize,
    pub mask_rf: usize,
    pub meta_rf: usize,
}

impl Default for BufferSizes {
    fn default() -> Self {
        BufferSizes {
            input: 128 * 1024,
            output: 256 * 1024,
            instruction: 16 * 1024,
            mask_rf: 2048 / 8,
            meta_rf: 1536,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub cores: usize,
    /// Macros per core holding identical weights (Tm).
    pub macros_per_core: usize,
    pub columns_per_macro: usize,
    /// Compartments per macro (Tk1), each fed one routed input per row pass.
    pub compartments: usize,
    /// Cell rows per compartment (Tk2), traversed sequentially.
    pub rows_per_compartment: usize,
    /// Pruning block width in filters.
    pub alpha: usize,
    pub input_bits: u32,
    /// Elements the SIMD core retires per cycle.
    pub simd_lanes: usize,
    pub buffers: BufferSizes,
    pub overheads: Overheads,
    /// Whether a macro's adder tree can split its columns into filters of
    /// different widths. Off: each macro holds filters of one threshold.
    /// On: the compiler may also place one pruning block per macro, mixing
    /// thresholds, and keeps whichever placement needs fewer row passes.
    pub mixed_threshold_macros: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            cores: 8,
            macros_per_core: 4,
            columns_per_macro: 16,
            compartments: 16,
            rows_per_compartment: 16,
            alpha: 8,
            input_bits: 8,
            simd_lanes: 16,
            buffers: BufferSizes::default(),
            overheads: Overheads::default(),
            mixed_threshold_macros: false,
        }
    }
}

impl ArchConfig {
    /// Default geometry with every fixed overhead set to zero.
    pub fn analytical() -> Self {
        ArchConfig { overheads: Overheads::ZERO, ..Default::default() }
    }

    /// Compressed reduction rows held by one K tile (Tk1 x Tk2).
    pub fn rows_per_tile(&self) -> usize {
        self.compartments * self.rows_per_compartment
    }

    pub fn cells_per_macro(&self) -> usize {
        self.rows_per_tile() * self.columns_per_macro
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("cores", self.cores),
            ("macros_per_core", self.macros_per_core),
            ("columns_per_macro", self.columns_per_macro),
            ("compartments", self.compartments),
            ("rows_per_compartment", self.rows_per_compartment),
            ("alpha", self.alpha),
            ("simd_lanes", self.simd_lanes),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.input_bits != 8 {
            return Err(Error::Config(format!(
                "input_bits is {}, only 8-bit inputs are modeled",
                self.input_bits
            )));
        }
        if self.alpha * MAX_THRESHOLD as usize > self.columns_per_macro {
            return Err(Error::Config(format!(
                "alpha {} x threshold {MAX_THRESHOLD} exceeds {} columns",
                self.alpha, self.columns_per_macro
            )));
        }
        if self.columns_per_macro < 8 {
            return Err(Error::Config(
                "the dense baseline needs at least 8 columns per macro".into(),
            ));
        }
        if self.compartments > 64 || self.rows_per_compartment > 256 || self.columns_per_macro > 256 {
            return Err(Error::Config("macro geometry too large (at most 64 compartments, 256 rows, 256 columns)".into()));
        }
        Ok(())
    }
}
