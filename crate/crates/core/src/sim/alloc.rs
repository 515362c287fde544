//! Sparse allocation network: per core, extracts the input columns its
//! routing mask selects, in compressed-row order.

use crate::compiler::tiling::RoutingMask;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Gathers `inputs[.., k]` for every routed `k`, scanning the mask with a
/// leading-one detector (lowest set bit first).
pub fn sparse_allocate(inputs: &Matrix<i8>, routing: &RoutingMask) -> Result<Matrix<i8>> {
    if inputs.cols() != routing.len() {
        return Err(Error::Shape(format!(
            "inputs have {} columns, routing mask covers {}",
            inputs.cols(),
            routing.len()
        )));
    }
    let mut picks = Vec::with_capacity(routing.active());
    for (w, chunk) in routing.bits.chunks(64).enumerate() {
        let mut word: u64 = chunk.iter().enumerate().fold(0, |acc, (i, &b)| acc | (b as u64) << i);
        while word != 0 {
            let lead = word.trailing_zeros() as usize;
            picks.push(w * 64 + lead);
            word &= word - 1;
        }
    }
    Ok(Matrix::from_fn(inputs.rows(), picks.len(), |m, i| inputs.get(m, picks[i])))
}
