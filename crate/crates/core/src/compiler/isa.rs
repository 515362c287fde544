//! Controller instruction set.
//!
//! Each instruction is one little-endian 64-bit word:
//!
//! | bits    | field                        |
//! |---------|------------------------------|
//! | 63..56  | opcode                       |
//! | 55..40  | N tile (or SIMD op index)    |
//! | 39..24  | K tile                       |
//! | 23..8   | M tile                       |
//! | 7..0    | cell row within the K tile   |
//!
//! Opcodes: 1 LOAD_TILE, 2 RUN_ROWPASS, 3 ACCUM, 4 WRITEBACK, 5 SIMD_OP,
//! 6 BARRIER. Unused fields are zero.
//!
//! Semantics: LOAD_TILE writes the weights of one N-K tile into every
//! macro. RUN_ROWPASS drives one cell row of every core with the routed
//! inputs of one M tile and adds the results into the accumulator
//! registers. ACCUM spills the registers of a non-final K tile into the
//! output-buffer partial sums; WRITEBACK adds the registers of the final K
//! tile to those partials and commits the outputs. SIMD_OP applies epilogue
//! operation `n` to the whole layer output. BARRIER separates N tiles.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::compiler::tiling::TilePlan;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    StdConv,
    PwConv,
    Fc,
    DwConv,
    SimdOp,
}

impl LayerKind {
    pub fn uses_macros(&self) -> bool {
        matches!(self, LayerKind::StdConv | LayerKind::PwConv | LayerKind::Fc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Instruction {
    LoadTile { n_tile: u16, k_tile: u16 },
    RunRowPass { n_tile: u16, k_tile: u16, m_tile: u16, row: u8 },
    Accum { n_tile: u16, k_tile: u16, m_tile: u16 },
    Writeback { n_tile: u16, m_tile: u16 },
    SimdOp { op: u16 },
    Barrier,
}

impl Instruction {
    pub fn encode(&self) -> u64 {
        let word = |op: u64, n: u16, k: u16, m: u16, row: u8| {
            op << 56 | (n as u64) << 40 | (k as u64) << 24 | (m as u64) << 8 | row as u64
        };
        match *self {
            Instruction::LoadTile { n_tile, k_tile } => word(1, n_tile, k_tile, 0, 0),
            Instruction::RunRowPass { n_tile, k_tile, m_tile, row } => word(2, n_tile, k_tile, m_tile, row),
            Instruction::Accum { n_tile, k_tile, m_tile } => word(3, n_tile, k_tile, m_tile, 0),
            Instruction::Writeback { n_tile, m_tile } => word(4, n_tile, 0, m_tile, 0),
            Instruction::SimdOp { op } => word(5, op, 0, 0, 0),
            Instruction::Barrier => word(6, 0, 0, 0, 0),
        }
    }

    pub fn decode(word: u64) -> Result<Self> {
        let n = (word >> 40) as u16;
        let k = (word >> 24) as u16;
        let m = (word >> 8) as u16;
        let row = word as u8;
        Ok(match word >> 56 {
            1 => Instruction::LoadTile { n_tile: n, k_tile: k },
            2 => Instruction::RunRowPass { n_tile: n, k_tile: k, m_tile: m, row },
            3 => Instruction::Accum { n_tile: n, k_tile: k, m_tile: m },
            4 => Instruction::Writeback { n_tile: n, m_tile: m },
            5 => Instruction::SimdOp { op: n },
            6 => Instruction::Barrier,
            op => return Err(Error::Format(format!("unknown opcode {op} in word {word:#018x}"))),
        })
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Instruction::LoadTile { n_tile, k_tile } => write!(f, "LOAD_TILE n={n_tile} k={k_tile}"),
            Instruction::RunRowPass { n_tile, k_tile, m_tile, row } => {
                write!(f, "RUN_ROWPASS n={n_tile} k={k_tile} m={m_tile} row={row}")
            }
            Instruction::Accum { n_tile, k_tile, m_tile } => {
                write!(f, "ACCUM n={n_tile} k={k_tile} m={m_tile}")
            }
            Instruction::Writeback { n_tile, m_tile } => write!(f, "WRITEBACK n={n_tile} m={m_tile}"),
            Instruction::SimdOp { op } => write!(f, "SIMD_OP op={op}"),
            Instruction::Barrier => write!(f, "BARRIER"),
        }
    }
}

fn id(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::InvalidArgument(format!("{what} {v} exceeds the 16-bit field")))
}

/// Replays the N-K-M loop nest of `plan`, then the epilogue.
pub fn emit_instructions(plan: Option<&TilePlan>, kind: LayerKind, epilogue: usize) -> Result<Vec<Instruction>> {
    let mut out = Vec::new();
    if kind.uses_macros() {
        let plan = plan.ok_or_else(|| Error::InvalidArgument(format!("{kind:?} layer needs a tile plan")))?;
        for (ni, nt) in plan.n_tiles.iter().enumerate() {
            if ni > 0 {
                out.push(Instruction::Barrier);
            }
            let n_tile = id(ni, "N tile")?;
            let last = nt.k_tiles.len().saturating_sub(1);
            for (ki, kt) in nt.k_tiles.iter().enumerate() {
                let k_tile = id(ki, "K tile")?;
                out.push(Instruction::LoadTile { n_tile, k_tile });
                for mi in 0..plan.m_tiles {
                    let m_tile = id(mi, "M tile")?;
                    for row in 0..kt.row_passes {
                        let row = u8::try_from(row).map_err(|_| Error::InvalidArgument("row index exceeds 8 bits".into()))?;
                        out.push(Instruction::RunRowPass { n_tile, k_tile, m_tile, row });
                    }
                    out.push(if ki < last {
                        Instruction::Accum { n_tile, k_tile, m_tile }
                    } else {
                        Instruction::Writeback { n_tile, m_tile }
                    });
                }
            }
        }
    }
    for op in 0..epilogue {
        out.push(Instruction::SimdOp { op: id(op, "SIMD op")? });
    }
    Ok(out)
}

/// Checks every RUN_ROWPASS and ACCUM targets the most recently loaded tile.
pub fn validate_stream(stream: &[Instruction]) -> Result<()> {
    let mut loaded = None;
    for (pc, ins) in stream.iter().enumerate() {
        match *ins {
            Instruction::LoadTile { n_tile, k_tile } => loaded = Some((n_tile, k_tile)),
            Instruction::RunRowPass { n_tile, k_tile, .. } | Instruction::Accum { n_tile, k_tile, .. } => {
                if loaded != Some((n_tile, k_tile)) {
                    return Err(Error::Format(format!(
                        "instruction {pc} ({ins}) uses tile ({n_tile}, {k_tile}) without loading it"
                    )));
                }
            }
            Instruction::Writeback { n_tile, .. } => {
                if loaded.map(|(n, _)| n) != Some(n_tile) {
                    return Err(Error::Format(format!("instruction {pc} ({ins}) writes back an unloaded N tile")));
                }
            }
            Instruction::SimdOp { .. } | Instruction::Barrier => {}
        }
    }
    Ok(())
}
