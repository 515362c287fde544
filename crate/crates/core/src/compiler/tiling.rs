//! Routing masks and the N-K-M tile plan.
//!
//! Inside a tile, the N dimension is unrolled over cores (one filter group
//! per core) and macro columns, and the compressed K dimension over the
//! `Tk1` compartments; the `Tk2` cell rows are walked one row pass at a
//! time. Outer loops run N, then K, then M, with `Tm` output rows per M tile
//! (one per macro of a core).

use serde::{Deserialize, Serialize};

use crate::arch::ArchConfig;
use crate::compiler::placement::{FilterGroup, Placement};
use crate::error::{Error, Result};
use crate::sparsify::PruneMask;

/// Which original reduction rows feed a core. Compressed row `i` is the
/// `i`-th set bit, scanning upward from row 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingMask {
    pub bits: Vec<bool>,
}

impl RoutingMask {
    pub fn all(k: usize) -> Self {
        RoutingMask { bits: vec![true; k] }
    }

    /// A row is routed when any filter of the group keeps it.
    pub fn for_group(group: &FilterGroup, mask: &PruneMask) -> Self {
        let k = mask.bits.rows();
        RoutingMask {
            bits: (0..k).map(|r| group.filters.iter().any(|&f| mask.keeps(r, f))).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn active(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Original row index of every compressed row, ascending.
    pub fn compressed_rows(&self) -> Vec<usize> {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(k, _)| k).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KTile {
    /// Row passes needed: the most any core of the N tile uses.
    pub row_passes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NTile {
    /// Placement group per core slot, at most `cores` entries.
    pub groups: Vec<usize>,
    pub k_tiles: Vec<KTile>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilePlan {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub m_tiles: usize,
    pub macros_per_core: usize,
    pub compartments: usize,
    pub rows_per_tile: usize,
    pub n_tiles: Vec<NTile>,
    /// Compressed row count per placement group.
    pub group_rows: Vec<usize>,
}

impl TilePlan {
    pub fn tile_count(&self) -> usize {
        self.n_tiles.iter().map(|t| t.k_tiles.len()).sum::<usize>() * self.m_tiles
    }

    /// Row passes a group performs in K tile `k_tile`.
    pub fn group_row_passes(&self, group: usize, k_tile: usize) -> usize {
        let start = k_tile * self.rows_per_tile;
        let rows = self.group_rows[group].saturating_sub(start).min(self.rows_per_tile);
        rows.div_ceil(self.compartments)
    }

    /// Output rows handled by M tile `m_tile`.
    pub fn m_range(&self, m_tile: usize) -> std::ops::Range<usize> {
        let start = m_tile * self.macros_per_core;
        start..(start + self.macros_per_core).min(self.m)
    }
}

pub fn plan_tiling(
    m: usize,
    k: usize,
    placement: &Placement,
    routing: &[RoutingMask],
    arch: &ArchConfig,
) -> Result<TilePlan> {
    if m == 0 || k == 0 || placement.n == 0 {
        return Err(Error::Shape(format!("tile plan needs positive dims, got M={m} N={} K={k}", placement.n)));
    }
    if routing.len() != placement.groups.len() {
        return Err(Error::Shape(format!(
            "{} routing masks for {} filter groups",
            routing.len(),
            placement.groups.len()
        )));
    }
    if let Some(r) = routing.iter().find(|r| r.len() != k) {
        return Err(Error::Shape(format!("routing mask covers {} rows, layer has {k}", r.len())));
    }
    let group_rows: Vec<usize> = routing.iter().map(RoutingMask::active).collect();
    let rows_per_tile = arch.rows_per_tile();
    let ids: Vec<usize> = (0..placement.groups.len()).collect();
    let n_tiles = ids
        .chunks(arch.cores)
        .map(|groups| {
            let deepest = groups.iter().map(|&g| group_rows[g]).max().unwrap_or(0);
            let k_tiles = (0..deepest.div_ceil(rows_per_tile))
                .map(|kt| {
                    let start = kt * rows_per_tile;
                    let row_passes = groups
                        .iter()
                        .map(|&g| group_rows[g].saturating_sub(start).min(rows_per_tile))
                        .max()
                        .unwrap_or(0)
                        .div_ceil(arch.compartments);
                    KTile { row_passes }
                })
                .collect();
            NTile { groups: groups.to_vec(), k_tiles }
        })
        .collect();
    Ok(TilePlan {
        m,
        n: placement.n,
        k,
        m_tiles: m.div_ceil(arch.macros_per_core),
        macros_per_core: arch.macros_per_core,
        compartments: arch.compartments,
        rows_per_tile,
        n_tiles,
        group_rows,
    })
}
