//! Filter-to-macro placement. A filter needing `t` columns occupies `t`
//! adjacent columns of one macro; a group that does not fill its macro
//! leaves the remaining columns invalid.
//!
//! Two strategies: threshold-homogeneous groups pack each threshold class
//! as densely as the columns allow; block-aligned groups keep every pruning
//! block of `alpha` filters in one macro so the core routes exactly that
//! block's unpruned rows.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::arch::ArchConfig;
use crate::error::{Error, Result};
use crate::sparsify::ThresholdVector;

/// Filters sharing one macro (one core slot of an N tile).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterGroup {
    /// Original filter indices, left to right.
    pub filters: Vec<usize>,
    /// Columns of each filter: its threshold for dyadic placement, 8 for
    /// the dense binary baseline.
    pub widths: Vec<usize>,
}

impl FilterGroup {
    pub fn uniform(width: usize, filters: Vec<usize>) -> Self {
        FilterGroup { widths: vec![width; filters.len()], filters }
    }

    pub fn occupied_columns(&self) -> usize {
        self.widths.iter().sum()
    }

    /// Columns of filter slot `j`.
    pub fn span(&self, j: usize) -> Range<usize> {
        let start: usize = self.widths[..j].iter().sum();
        start..start + self.widths[j]
    }

    /// Filter owning `column`, if any.
    pub fn filter_at(&self, column: usize) -> Option<usize> {
        let mut end = 0;
        for (j, w) in self.widths.iter().enumerate() {
            end += w;
            if column < end {
                return Some(self.filters[j]);
            }
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub n: usize,
    pub columns_per_macro: usize,
    pub groups: Vec<FilterGroup>,
    /// Threshold-0 filters: constant-zero outputs, no macro columns.
    pub zero_filters: Vec<usize>,
}

impl Placement {
    pub fn occupied_columns(&self) -> usize {
        self.groups.iter().map(FilterGroup::occupied_columns).sum()
    }

    /// Occupied over provided columns across all placed macros.
    pub fn column_utilization(&self) -> Option<f64> {
        if self.groups.is_empty() {
            return None;
        }
        Some(self.occupied_columns() as f64 / (self.groups.len() * self.columns_per_macro) as f64)
    }
}

/// Sorts filters by threshold (stable in filter index), drops threshold-0
/// filters and packs each threshold class into homogeneous macro groups.
pub fn group_filters(th: &ThresholdVector, arch: &ArchConfig) -> Result<Placement> {
    let mut order: Vec<usize> = (0..th.len()).collect();
    order.sort_by_key(|&f| (th.get(f), f));
    let mut groups = Vec::new();
    let mut zero_filters = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let t = th.get(order[i]) as usize;
        let run_end = order[i..].iter().position(|&f| th.get(f) as usize != t).map_or(order.len(), |p| i + p);
        if t == 0 {
            zero_filters.extend_from_slice(&order[i..run_end]);
        } else {
            groups.extend(chunk_filters(&order[i..run_end], t, arch.columns_per_macro)?);
        }
        i = run_end;
    }
    Ok(Placement { n: th.len(), columns_per_macro: arch.columns_per_macro, groups, zero_filters })
}

/// One group per pruning block of `arch.alpha` consecutive filters, minus
/// its threshold-0 filters. A block always fits because
/// `alpha * 2 <= columns_per_macro`.
pub fn group_by_blocks(th: &ThresholdVector, arch: &ArchConfig) -> Result<Placement> {
    let mut groups = Vec::new();
    let mut zero_filters = Vec::new();
    let all: Vec<usize> = (0..th.len()).collect();
    for block in all.chunks(arch.alpha) {
        let (zero, live): (Vec<usize>, Vec<usize>) = block.iter().partition(|&&f| th.get(f) == 0);
        zero_filters.extend(zero);
        if live.is_empty() {
            continue;
        }
        let widths: Vec<usize> = live.iter().map(|&f| th.get(f) as usize).collect();
        if widths.iter().sum::<usize>() > arch.columns_per_macro {
            return Err(Error::Config(format!(
                "pruning block starting at filter {} needs more than {} columns",
                block[0], arch.columns_per_macro
            )));
        }
        groups.push(FilterGroup { filters: live, widths });
    }
    zero_filters.sort_unstable();
    Ok(Placement { n: th.len(), columns_per_macro: arch.columns_per_macro, groups, zero_filters })
}

/// Dense baseline placement: every filter takes 8 binary columns, in order.
pub fn dense_placement(n: usize, arch: &ArchConfig) -> Result<Placement> {
    let filters: Vec<usize> = (0..n).collect();
    Ok(Placement {
        n,
        columns_per_macro: arch.columns_per_macro,
        groups: chunk_filters(&filters, arch.input_bits as usize, arch.columns_per_macro)?,
        zero_filters: Vec::new(),
    })
}

fn chunk_filters(filters: &[usize], width: usize, columns: usize) -> Result<Vec<FilterGroup>> {
    let per_macro = columns / width;
    if per_macro == 0 {
        return Err(Error::Config(format!("a {width}-column filter does not fit {columns} columns")));
    }
    Ok(filters.chunks(per_macro).map(|c| FilterGroup::uniform(width, c.to_vec())).collect())
}
