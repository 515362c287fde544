//! Input pre-processing unit: finds the bit positions that are zero across
//! a whole input group so their bit-serial cycles can be skipped.

/// Active-bit mask of one input group and the cycles it costs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IpuScan {
    /// Bit `b` set iff some input has two's-complement bit `b` set.
    pub mask: u8,
    pub cycles: u32,
}

pub fn ipu_scan(group: &[i8]) -> IpuScan {
    let mask = group.iter().fold(0u8, |acc, &v| acc | v as u8);
    IpuScan { mask, cycles: mask.count_ones() }
}

/// Place value of input bit `b` in two's complement: bit 7 carries -2^7.
pub fn input_bit_weight(b: u32) -> i64 {
    if b == 7 {
        -128
    } else {
        1 << b
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_and_binary_groups() {
        assert_eq!(ipu_scan(&[0; 16]), IpuScan { mask: 0, cycles: 0 });
        let ones = [0, 1, 1, 0, 1, 0, 0, 0, 1, 1, 0, 0, 0, 0, 1, 0];
        assert!(ipu_scan(&ones).cycles <= 1);
        assert_eq!(ipu_scan(&[-1]).cycles, 8);
    }

    #[test]
    fn matches_or_reduction() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let g: Vec<i8> = (0..16).map(|_| rng.gen::<i8>() & rng.gen::<i8>() & rng.gen::<i8>()).collect();
            let mut mask = 0u8;
            for b in 0..8 {
                if g.iter().any(|&v| (v as u8 >> b) & 1 == 1) {
                    mask |= 1 << b;
                }
            }
            let scan = ipu_scan(&g);
            assert_eq!(scan.mask, mask);
            assert_eq!(scan.cycles, mask.count_ones());
        }
    }

    #[test]
    fn bit_weights_rebuild_values() {
        for v in i8::MIN..=i8::MAX {
            let sum: i64 = (0..8).filter(|&b| (v as u8 >> b) & 1 == 1).map(input_bit_weight).sum();
            assert_eq!(sum, v as i64);
        }
    }
}
