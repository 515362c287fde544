//! Dyadic-block multiply units and the CSD-aware adder tree.
//!
//! Each valid cell ANDs its stored bit with the current input bit of its
//! compartment. Because the stored blocks sit at arbitrary digit positions,
//! the adder tree applies each cell's sign and `2^(2*index + q)` shift
//! before summing a column; the shift-and-add stage then weights the
//! per-bit column sums by the input bit's place value.

use crate::compiler::pack::MacroImage;
use crate::compiler::placement::FilterGroup;
use crate::sim::ipu::{input_bit_weight, ipu_scan};

/// A cell that contributes to a row pass, with its signed place value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoredCell {
    pub compartment: u8,
    pub column: u8,
    pub value: i32,
}

/// Inputs of one row pass, one per compartment, with the bits to process.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowPassInput {
    pub values: Vec<i8>,
    pub active: u8,
}

impl RowPassInput {
    /// `skip = false` processes all eight bits regardless of content.
    pub fn new(values: Vec<i8>, skip: bool) -> Self {
        let active = if skip { ipu_scan(&values).mask } else { 0xFF };
        RowPassInput { values, active }
    }

    pub fn cycles(&self) -> u32 {
        self.active.count_ones()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowPassResult {
    pub column_sums: Vec<i64>,
    pub filter_sums: Vec<i64>,
    pub effective_cell_ops: u64,
    pub padded_cell_ops: u64,
}

/// Valid cells of one cell row, compartment-major.
pub fn row_cells(image: &MacroImage, row: usize) -> Vec<StoredCell> {
    let mut out = Vec::new();
    for c in 0..image.compartments {
        for col in 0..image.columns {
            let cell = image.get(c, row, col);
            if cell.valid {
                out.push(StoredCell { compartment: c as u8, column: col as u8, value: cell.value() });
            }
        }
    }
    out
}

/// Bit-serial accumulation of one row pass into per-column sums.
pub(crate) fn accumulate_columns(cells: &[StoredCell], input: &RowPassInput, column_sums: &mut [i64]) {
    let mut bits = input.active;
    while bits != 0 {
        let b = bits.trailing_zeros();
        bits &= bits - 1;
        let place = input_bit_weight(b);
        for cell in cells {
            let x = input.values[cell.compartment as usize] as u8;
            if (x >> b) & 1 == 1 {
                column_sums[cell.column as usize] += cell.value as i64 * place;
            }
        }
    }
}

pub(crate) fn filter_sums(group: &FilterGroup, column_sums: &[i64]) -> Vec<i64> {
    (0..group.filters.len()).map(|j| column_sums[group.span(j)].iter().sum()).collect()
}

/// One row pass of one macro.
pub fn dbmu_rowpass(image: &MacroImage, group: &FilterGroup, row: usize, input: &RowPassInput) -> RowPassResult {
    let cells = row_cells(image, row);
    let mut column_sums = vec![0i64; image.columns];
    accumulate_columns(&cells, input, &mut column_sums);
    let bits = input.cycles() as u64;
    let total = (image.compartments * image.columns) as u64;
    RowPassResult {
        filter_sums: filter_sums(group, &column_sums),
        column_sums,
        effective_cell_ops: cells.len() as u64 * bits,
        padded_cell_ops: (total - cells.len() as u64) * bits,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::ArchConfig;
    use crate::compiler::pack::DyadicCell;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn worked_image() -> (MacroImage, FilterGroup) {
        let mut img = MacroImage::empty(&ArchConfig::default());
        // -64 in compartment 0, +2 in compartment 1, both in column 0.
        img.set(0, 0, 0, DyadicCell { q: 0, sign: 1, index: 3, valid: true });
        img.set(1, 0, 0, DyadicCell { q: 1, sign: 0, index: 0, valid: true });
        (img, FilterGroup::uniform(1, vec![0]))
    }

    #[test]
    fn shifted_signed_sum_not_bitwise_or() {
        let (img, group) = worked_image();
        let mut inputs = vec![0i8; 16];
        inputs[0] = 1;
        inputs[1] = 1;
        let r = dbmu_rowpass(&img, &group, 0, &RowPassInput::new(inputs, true));
        assert_eq!(r.filter_sums, vec![-62]);
        assert_eq!(r.effective_cell_ops, 2);
        assert_eq!(r.padded_cell_ops, 254);

        let mut only_first = vec![0i8; 16];
        only_first[0] = 1;
        let r = dbmu_rowpass(&img, &group, 0, &RowPassInput::new(only_first, true));
        assert_eq!(r.column_sums[0], -64);
    }

    #[test]
    fn zero_input_is_zero() {
        let (img, group) = worked_image();
        let input = RowPassInput::new(vec![0; 16], true);
        assert_eq!(input.cycles(), 0);
        let r = dbmu_rowpass(&img, &group, 0, &input);
        assert!(r.column_sums.iter().all(|&v| v == 0));
        assert_eq!(r.effective_cell_ops, 0);
    }

    #[test]
    fn random_row_matches_mvm() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let arch = ArchConfig::default();
        for _ in 0..50 {
            let mut img = MacroImage::empty(&arch);
            let mut want = [0i64; 16];
            let inputs: Vec<i8> = (0..16).map(|_| rng.gen()).collect();
            for c in 0..16 {
                for col in 0..16 {
                    if rng.gen_bool(0.5) {
                        let cell = DyadicCell { q: rng.gen_range(0..2), sign: rng.gen_range(0..2), index: rng.gen_range(0..4), valid: true };
                        img.set(c, 3, col, cell);
                        want[col] += inputs[c] as i64 * cell.value() as i64;
                    }
                }
            }
            let group = FilterGroup::uniform(2, (0..8).collect());
            for skip in [true, false] {
                let r = dbmu_rowpass(&img, &group, 3, &RowPassInput::new(inputs.clone(), skip));
                assert_eq!(r.column_sums, want.to_vec());
                for j in 0..8 {
                    assert_eq!(r.filter_sums[j], want[2 * j] + want[2 * j + 1]);
                }
            }
        }
    }
}
