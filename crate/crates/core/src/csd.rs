//! Canonical signed digit (non-adjacent form) encoding of 8-bit signed
//! integers, the dyadic-block view of an encoding, and the per-count
//! query tables used by fixed-threshold approximation.
//!
//! Digit index 0 is the least significant digit everywhere in this crate.
//! Rendered strings are MSB first, using `1`, `0` and `N` (for -1), with an
//! underscore between the two nibbles.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Number of ternary digits in an encoded INT8 weight.
pub const DIGITS: usize = 8;
/// Number of dyadic blocks in an encoded INT8 weight.
pub const BLOCKS: usize = DIGITS / 2;
/// Largest per-filter threshold the approximation will target.
pub const MAX_THRESHOLD: u8 = 2;

/// An 8-digit non-adjacent-form encoding of one INT8 value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CsdWord {
    digits: [i8; DIGITS],
}

impl CsdWord {
    pub const ZERO: CsdWord = CsdWord { digits: [0; DIGITS] };

    /// Builds a word from LSB-first digits, checking every invariant.
    pub fn from_digits(digits: [i8; DIGITS]) -> Result<Self> {
        if let Some(d) = digits.iter().find(|d| !(-1..=1).contains(*d)) {
            return Err(Error::InvalidCsd(format!("digit {d} is not ternary")));
        }
        if let Some(i) = (0..DIGITS - 1).find(|&i| digits[i] != 0 && digits[i + 1] != 0) {
            return Err(Error::InvalidCsd(format!(
                "digits {i} and {} are both non-zero",
                i + 1
            )));
        }
        let word = CsdWord { digits };
        let value = word.value();
        if !(i8::MIN as i32..=i8::MAX as i32).contains(&value) {
            return Err(Error::InvalidCsd(format!("value {value} outside INT8")));
        }
        Ok(word)
    }

    /// LSB-first digits.
    pub fn digits(&self) -> [i8; DIGITS] {
        self.digits
    }

    pub fn digit(&self, i: usize) -> i8 {
        self.digits[i]
    }

    pub fn value(&self) -> i32 {
        self.digits
            .iter()
            .enumerate()
            .map(|(i, &d)| d as i32 * (1 << i))
            .sum()
    }

    pub fn nonzero_count(&self) -> u8 {
        self.digits.iter().filter(|&&d| d != 0).count() as u8
    }

    /// The four dyadic blocks, block `b` covering digits `2b+1` and `2b`.
    pub fn blocks(&self) -> [DyadicBlock; BLOCKS] {
        std::array::from_fn(|b| {
            let high = self.digits[2 * b + 1];
            let low = self.digits[2 * b];
            match (high, low) {
                (0, 0) => DyadicBlock::zero(b as u8),
                (h, 0) => DyadicBlock::comp(b as u8, true, h < 0),
                (0, l) => DyadicBlock::comp(b as u8, false, l < 0),
                _ => unreachable!("non-adjacency violated inside a block"),
            }
        })
    }
}

impl Default for CsdWord {
    fn default() -> Self {
        CsdWord::ZERO
    }
}

/// Encodes `v` as its unique non-adjacent form.
///
/// Uses the standard recurrence: while the remainder is odd, pick the digit
/// in {-1, +1} that makes the remainder divisible by 4.
pub fn to_csd(v: i8) -> CsdWord {
    let mut digits = [0i8; DIGITS];
    let mut rest = v as i16;
    let mut i = 0;
    while rest != 0 {
        if rest & 1 != 0 {
            let d = 2 - rest.rem_euclid(4);
            digits[i] = d as i8;
            rest -= d;
        }
        rest /= 2;
        i += 1;
    }
    CsdWord { digits }
}

pub fn from_csd(w: &CsdWord) -> i32 {
    w.value()
}

pub fn count_nonzero(w: &CsdWord) -> u8 {
    w.nonzero_count()
}

pub fn to_blocks(w: &CsdWord) -> [DyadicBlock; BLOCKS] {
    w.blocks()
}

/// Non-zero CSD digit count of an INT8 value.
pub fn phi(v: i8) -> u8 {
    to_csd(v).nonzero_count()
}

impl fmt::Display for CsdWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in (0..DIGITS).rev() {
            let c = match self.digits[i] {
                1 => '1',
                -1 => 'N',
                _ => '0',
            };
            write!(f, "{c}")?;
            if i == 4 {
                write!(f, "_")?;
            }
        }
        Ok(())
    }
}

impl FromStr for CsdWord {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let chars: Vec<char> = s.chars().filter(|&c| c != '_').collect();
        if chars.len() != DIGITS {
            return Err(Error::InvalidCsd(format!(
                "expected {DIGITS} digits, got {} in {s:?}",
                chars.len()
            )));
        }
        let mut digits = [0i8; DIGITS];
        for (pos, c) in chars.iter().enumerate() {
            digits[DIGITS - 1 - pos] = match c {
                '1' => 1,
                '0' => 0,
                'N' | 'n' => -1,
                other => {
                    return Err(Error::InvalidCsd(format!("unexpected character {other:?}")))
                }
            };
        }
        CsdWord::from_digits(digits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockKind {
    ZeroPattern,
    CompPattern,
}

/// One two-digit slice of a CSD word. By non-adjacency it holds at most one
/// non-zero digit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DyadicBlock {
    pub index: u8,
    pub kind: BlockKind,
    /// Magnitude of the high digit; 1 means the non-zero digit is `2*index+1`.
    pub q: u8,
    /// True for a -1 digit. Meaningless for a zero pattern.
    pub negative: bool,
}

impl DyadicBlock {
    pub fn zero(index: u8) -> Self {
        DyadicBlock { index, kind: BlockKind::ZeroPattern, q: 0, negative: false }
    }

    pub fn comp(index: u8, high: bool, negative: bool) -> Self {
        DyadicBlock { index, kind: BlockKind::CompPattern, q: high as u8, negative }
    }

    pub fn is_comp(&self) -> bool {
        self.kind == BlockKind::CompPattern
    }

    /// Bit position of the non-zero digit: `2*index + q`.
    pub fn shift(&self) -> u32 {
        2 * self.index as u32 + self.q as u32
    }

    /// Stored magnitude bits `(high, low)`; complementary for a comp pattern.
    pub fn bits(&self) -> (u8, u8) {
        match self.kind {
            BlockKind::ZeroPattern => (0, 0),
            BlockKind::CompPattern => (self.q, 1 - self.q),
        }
    }

    pub fn value(&self) -> i32 {
        match self.kind {
            BlockKind::ZeroPattern => 0,
            BlockKind::CompPattern => {
                let mag = 1i32 << self.shift();
                if self.negative {
                    -mag
                } else {
                    mag
                }
            }
        }
    }
}

/// INT8 values whose CSD encoding has exactly `phi_th` non-zero digits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryTable {
    phi_th: u8,
    members: Vec<i8>,
}

impl QueryTable {
    pub fn new(phi_th: u8) -> Result<Self> {
        if phi_th > MAX_THRESHOLD {
            return Err(Error::ThresholdOutOfRange(phi_th));
        }
        let members = (i8::MIN..=i8::MAX).filter(|&t| phi(t) == phi_th).collect();
        Ok(QueryTable { phi_th, members })
    }

    pub fn phi_th(&self) -> u8 {
        self.phi_th
    }

    /// Members in ascending order.
    pub fn members(&self) -> &[i8] {
        &self.members
    }

    pub fn contains(&self, v: i8) -> bool {
        self.members.binary_search(&v).is_ok()
    }

    /// Closest member to `w`; on a tie the larger (positive-side) candidate wins.
    pub fn nearest(&self, w: i8) -> i8 {
        let w = w as i32;
        match self.members.binary_search_by(|&t| (t as i32).cmp(&w)) {
            Ok(i) => self.members[i],
            Err(i) => {
                let above = self.members.get(i).copied();
                let below = i.checked_sub(1).map(|j| self.members[j]);
                match (below, above) {
                    (Some(b), Some(a)) => {
                        if (a as i32 - w) <= (w - b as i32) {
                            a
                        } else {
                            b
                        }
                    }
                    (Some(b), None) => b,
                    (None, Some(a)) => a,
                    (None, None) => unreachable!("query tables are never empty"),
                }
            }
        }
    }

    /// Largest distance from any INT8 value to its nearest member.
    pub fn max_gap(&self) -> u32 {
        (i8::MIN..=i8::MAX)
            .map(|v| (self.nearest(v) as i32 - v as i32).unsigned_abs())
            .max()
            .unwrap_or(0)
    }
}

pub fn query_table(phi_th: u8) -> Result<QueryTable> {
    QueryTable::new(phi_th)
}

/// Number of set bits in the two's-complement byte of `v`.
pub fn binary_popcount(v: i8) -> u32 {
    (v as u8).count_ones()
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent brute force: every 8-digit ternary string, grouped by value.
    fn enumerate_all() -> Vec<[i8; DIGITS]> {
        (0..3usize.pow(DIGITS as u32))
            .map(|mut code| {
                let mut d = [0i8; DIGITS];
                for slot in d.iter_mut() {
                    *slot = (code % 3) as i8 - 1;
                    code /= 3;
                }
                d
            })
            .collect()
    }

    fn decode(d: &[i8; DIGITS]) -> i32 {
        d.iter().enumerate().map(|(i, &x)| x as i32 * (1 << i)).sum()
    }

    fn non_adjacent(d: &[i8; DIGITS]) -> bool {
        (0..DIGITS - 1).all(|i| d[i] == 0 || d[i + 1] == 0)
    }

    #[test]
    fn table_one_values() {
        assert_eq!(to_csd(67).to_string(), "0100_010N");
        assert_eq!(to_csd(-67).to_string(), "0N00_0N01");
        assert_eq!(to_csd(-67).nonzero_count(), 3);
        assert_eq!(from_csd(&"0100_010N".parse().unwrap()), 67);
        assert_eq!(to_csd(0), CsdWord::ZERO);
        assert_eq!(from_csd(&CsdWord::ZERO), 0);
    }

    #[test]
    fn matches_minimum_weight_enumeration() {
        let all = enumerate_all();
        for v in i8::MIN..=i8::MAX {
            let candidates: Vec<_> = all.iter().filter(|d| decode(d) == v as i32).collect();
            let min_nz = candidates
                .iter()
                .map(|d| d.iter().filter(|&&x| x != 0).count())
                .min()
                .unwrap();
            let naf: Vec<_> = candidates.iter().filter(|d| non_adjacent(d)).collect();
            assert_eq!(naf.len(), 1, "value {v}");
            assert_eq!(to_csd(v).digits(), **naf[0], "value {v}");
            assert_eq!(to_csd(v).nonzero_count() as usize, min_nz, "value {v}");
        }
    }

    #[test]
    fn round_trip_and_invariants() {
        let mut max = 0;
        for v in i8::MIN..=i8::MAX {
            let w = to_csd(v);
            assert_eq!(w.value(), v as i32);
            assert!(non_adjacent(&w.digits()));
            assert_eq!(CsdWord::from_digits(w.digits()).unwrap(), w);
            max = max.max(w.nonzero_count());
            let blocks = w.blocks();
            assert_eq!(blocks.iter().map(DyadicBlock::value).sum::<i32>(), v as i32);
            for b in blocks.iter().filter(|b| b.is_comp()) {
                let (h, l) = b.bits();
                assert_eq!(h + l, 1);
            }
        }
        assert_eq!(max, 4);
    }

    #[test]
    fn csd_has_fewer_nonzeros_than_binary() {
        let csd: u32 = (i8::MIN..=i8::MAX).map(|v| phi(v) as u32).sum();
        let bin: u32 = (i8::MIN..=i8::MAX).map(binary_popcount).sum();
        assert!(csd < bin, "csd {csd} binary {bin}");
    }

    #[test]
    fn block_examples() {
        let b = to_csd(-64).blocks();
        assert_eq!(b[3], DyadicBlock::comp(3, false, true));
        assert!(b[..3].iter().all(|x| !x.is_comp()));
        let b = to_csd(2).blocks();
        assert_eq!(b[0], DyadicBlock::comp(0, true, false));
        assert!(b[1..].iter().all(|x| !x.is_comp()));
        assert!(to_csd(0).blocks().iter().all(|x| !x.is_comp()));
    }

    #[test]
    fn query_tables() {
        assert_eq!(query_table(0).unwrap().members(), &[0]);
        let t1 = query_table(1).unwrap();
        assert_eq!(
            t1.members(),
            &[-128, -64, -32, -16, -8, -4, -2, -1, 1, 2, 4, 8, 16, 32, 64]
        );
        // Frozen from an exhaustive scan of all 256 values.
        assert_eq!(query_table(2).unwrap().members().len(), 72);
        assert!(matches!(query_table(3), Err(Error::ThresholdOutOfRange(3))));
        let t2 = query_table(2).unwrap();
        assert!(t1.members().iter().all(|v| !t2.contains(*v)));
    }

    #[test]
    fn nearest_prefers_positive_on_tie() {
        let t1 = query_table(1).unwrap();
        assert_eq!(t1.nearest(0), 1);
        assert_eq!(t1.nearest(-63), -64);
        assert_eq!(t1.nearest(13), 16);
        assert_eq!(t1.nearest(-3), -2);
        assert_eq!(t1.nearest(3), 4);
        assert_eq!(t1.nearest(127), 64);
    }

    #[test]
    fn parse_rejects_bad_strings() {
        assert!("0110_0000".parse::<CsdWord>().is_err());
        assert!("0000_000".parse::<CsdWord>().is_err());
        assert!("0000_000x".parse::<CsdWord>().is_err());
        // 2^7 + 2^5 + 2^3 + 2^1 = 170 is non-adjacent but outside INT8.
        assert!("1010_1010".parse::<CsdWord>().is_err());
        assert_eq!("0N000N01".parse::<CsdWord>().unwrap().value(), -67);
    }
}
