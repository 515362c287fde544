//! Hybrid-grained sparsification: block-wise L2 pruning across groups of
//! `alpha` filters, then fixed-threshold approximation of the surviving
//! weights onto CSD query tables.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::csd::{self, QueryTable, MAX_THRESHOLD};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// `K x N` INT8 weights; column `n` is filter `n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightMatrix {
    pub data: Matrix<i8>,
    pub layer_id: String,
}

impl WeightMatrix {
    pub fn new(layer_id: impl Into<String>, data: Matrix<i8>) -> Result<Self> {
        if data.rows() == 0 || data.cols() == 0 {
            return Err(Error::Shape("weight matrix must be non-empty".into()));
        }
        Ok(WeightMatrix { data, layer_id: layer_id.into() })
    }

    pub fn k(&self) -> usize {
        self.data.rows()
    }

    pub fn n(&self) -> usize {
        self.data.cols()
    }
}

/// `K x G` block mask, `G = ceil(N / alpha)`. A zero bit forces the `alpha`
/// weights of that block to zero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneMask {
    pub bits: Matrix<u8>,
    pub alpha: usize,
}

impl PruneMask {
    pub fn all_ones(k: usize, n: usize, alpha: usize) -> Self {
        PruneMask { bits: Matrix::from_fn(k, n.div_ceil(alpha), |_, _| 1), alpha }
    }

    pub fn groups(&self) -> usize {
        self.bits.cols()
    }

    /// Whether weight `(k, filter)` survived pruning.
    pub fn keeps(&self, k: usize, filter: usize) -> bool {
        self.bits.get(k, filter / self.alpha) != 0
    }

    pub fn check_shape(&self, k: usize, n: usize) -> Result<()> {
        if self.alpha == 0 || self.bits.rows() != k || self.bits.cols() != n.div_ceil(self.alpha) {
            return Err(Error::Shape(format!(
                "mask {}x{} (alpha {}) does not fit a {k}x{n} weight matrix",
                self.bits.rows(),
                self.bits.cols(),
                self.alpha
            )));
        }
        Ok(())
    }

    pub fn masked_blocks(&self) -> usize {
        self.bits.as_slice().iter().filter(|&&b| b == 0).count()
    }
}

/// Per-filter non-zero digit targets, each in `0..=2`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdVector(pub Vec<u8>);

impl ThresholdVector {
    pub fn new(values: Vec<u8>) -> Result<Self> {
        if let Some(&t) = values.iter().find(|&&t| t > MAX_THRESHOLD) {
            return Err(Error::ThresholdOutOfRange(t));
        }
        Ok(ThresholdVector(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, filter: usize) -> u8 {
        self.0[filter]
    }

    pub fn histogram(&self) -> [usize; 3] {
        let mut h = [0; 3];
        for &t in &self.0 {
            h[t as usize] += 1;
        }
        h
    }
}

/// Approximated weights with the mask and thresholds that produced them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FtaWeights {
    pub data: Matrix<i8>,
    pub thresholds: ThresholdVector,
    pub mask: PruneMask,
}

impl FtaWeights {
    /// Verifies every unmasked weight of filter `i` has exactly
    /// `thresholds[i]` non-zero digits and every masked weight is zero.
    pub fn validate(&self) -> Result<()> {
        let (k, n) = (self.data.rows(), self.data.cols());
        self.mask.check_shape(k, n)?;
        if self.thresholds.len() != n {
            return Err(Error::Shape(format!("{} thresholds for {n} filters", self.thresholds.len())));
        }
        for r in 0..k {
            for c in 0..n {
                let w = self.data.get(r, c);
                if self.mask.keeps(r, c) {
                    if csd::phi(w) != self.thresholds.get(c) {
                        return Err(Error::InvalidArgument(format!(
                            "weight {w} at ({r}, {c}) has {} non-zero digits, filter threshold is {}",
                            csd::phi(w),
                            self.thresholds.get(c)
                        )));
                    }
                } else if w != 0 {
                    return Err(Error::InvalidArgument(format!(
                        "masked weight at ({r}, {c}) is {w}, expected 0"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Integer squared L2 norm of each `(k, group)` block, over the group's
/// actual width.
pub fn block_norms(w: &WeightMatrix, alpha: usize) -> Matrix<u64> {
    let groups = w.n().div_ceil(alpha);
    Matrix::from_fn(w.k(), groups, |k, g| {
        let end = ((g + 1) * alpha).min(w.n());
        (g * alpha..end).map(|n| (w.data.get(k, n) as i64).pow(2) as u64).sum()
    })
}

/// Masks the `floor(sparsity * K * G)` blocks with the smallest L2 norm.
/// Equal norms are broken by lowest `(k, g)`.
pub fn block_l2_prune(w: &WeightMatrix, alpha: usize, sparsity: f64) -> Result<PruneMask> {
    if alpha == 0 {
        return Err(Error::InvalidArgument("alpha must be positive".into()));
    }
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::InvalidArgument(format!("sparsity {sparsity} must be in [0, 1)")));
    }
    let norms = block_norms(w, alpha);
    let groups = norms.cols();
    let total = w.k() * groups;
    let prune = (sparsity * total as f64).floor() as usize;
    let mut order: Vec<(u64, usize, usize)> = (0..w.k())
        .flat_map(|k| (0..groups).map(move |g| (k, g)))
        .map(|(k, g)| (norms.get(k, g), k, g))
        .collect();
    order.sort_unstable();
    let mut mask = PruneMask::all_ones(w.k(), w.n(), alpha);
    for &(_, k, g) in order.iter().take(prune) {
        mask.bits.set(k, g, 0);
    }
    Ok(mask)
}

/// Per-filter threshold: the mode of the unmasked digit counts (smaller
/// count on ties), mapped 0 -> 1 and capped at 2; filters whose unmasked
/// weights are all zero get 0.
pub fn compute_thresholds(w: &WeightMatrix, mask: &PruneMask) -> Result<ThresholdVector> {
    mask.check_shape(w.k(), w.n())?;
    let values = (0..w.n())
        .map(|n| {
            let mut counts: BTreeMap<u8, usize> = BTreeMap::new();
            for k in (0..w.k()).filter(|&k| mask.keeps(k, n)) {
                *counts.entry(csd::phi(w.data.get(k, n))).or_default() += 1;
            }
            if counts.keys().all(|&phi| phi == 0) {
                return 0;
            }
            // Ascending keys with a strict comparison: ties keep the smaller count.
            let mode = counts
                .iter()
                .fold((0u8, 0usize), |best, (&phi, &c)| if c > best.1 { (phi, c) } else { best })
                .0;
            match mode {
                0 => 1,
                m => m.min(MAX_THRESHOLD),
            }
        })
        .collect();
    ThresholdVector::new(values)
}

/// Snaps each unmasked weight to the nearest member of its filter's query
/// table; masked weights become zero.
pub fn fta_approximate(
    w: &WeightMatrix,
    mask: &PruneMask,
    thresholds: &ThresholdVector,
) -> Result<FtaWeights> {
    mask.check_shape(w.k(), w.n())?;
    if thresholds.len() != w.n() {
        return Err(Error::Shape(format!("{} thresholds for {} filters", thresholds.len(), w.n())));
    }
    let tables = [QueryTable::new(0)?, QueryTable::new(1)?, QueryTable::new(2)?];
    let data = Matrix::from_fn(w.k(), w.n(), |k, n| {
        if mask.keeps(k, n) {
            tables[thresholds.get(n) as usize].nearest(w.data.get(k, n))
        } else {
            0
        }
    });
    Ok(FtaWeights { data, thresholds: thresholds.clone(), mask: mask.clone() })
}

/// Pruning, threshold selection and approximation in one call.
pub fn sparsify(w: &WeightMatrix, alpha: usize, sparsity: f64) -> Result<FtaWeights> {
    let mask = block_l2_prune(w, alpha, sparsity)?;
    let th = compute_thresholds(w, &mask)?;
    fta_approximate(w, &mask, &th)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub layer_id: String,
    pub k: usize,
    pub n: usize,
    /// Fraction of masked `(k, group)` blocks.
    pub block_sparsity: f64,
    /// Fraction of zero weights after approximation.
    pub value_sparsity: f64,
    /// Zero-bit fraction of the raw weights in two's complement.
    pub binary_zero_bit_fraction: f64,
    /// Zero-digit fraction of the raw weights in CSD.
    pub csd_zero_bit_fraction: f64,
    /// Zero-digit fraction of the approximated weights in CSD.
    pub fta_zero_bit_fraction: f64,
    /// Filters with threshold 0, 1 and 2.
    pub threshold_histogram: [usize; 3],
}

pub fn sparsity_report(w: &WeightMatrix, mask: &PruneMask, fta: &FtaWeights) -> Result<SparsityReport> {
    mask.check_shape(w.k(), w.n())?;
    if fta.data.rows() != w.k() || fta.data.cols() != w.n() {
        return Err(Error::Shape("approximated weights differ in shape".into()));
    }
    let count = (w.k() * w.n()) as f64;
    let bits = 8.0 * count;
    let raw = w.data.as_slice();
    let approx = fta.data.as_slice();
    Ok(SparsityReport {
        layer_id: w.layer_id.clone(),
        k: w.k(),
        n: w.n(),
        block_sparsity: mask.masked_blocks() as f64 / mask.bits.as_slice().len() as f64,
        value_sparsity: approx.iter().filter(|&&v| v == 0).count() as f64 / count,
        binary_zero_bit_fraction: 1.0
            - raw.iter().map(|&v| csd::binary_popcount(v) as f64).sum::<f64>() / bits,
        csd_zero_bit_fraction: 1.0 - raw.iter().map(|&v| csd::phi(v) as f64).sum::<f64>() / bits,
        fta_zero_bit_fraction: 1.0 - approx.iter().map(|&v| csd::phi(v) as f64).sum::<f64>() / bits,
        threshold_histogram: fta.thresholds.histogram(),
    })
}
