//! SIMD core: integer operations that do not run on the macros.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::Requant;
use crate::tensor::{ConvGeometry, FeatureMap};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum SimdOp {
    Relu,
    MaxPool { size: usize, stride: usize },
    AvgPool { size: usize, stride: usize },
    Requantize(Requant),
    /// Element-wise sum of two maps of equal shape.
    ResidualAdd,
    /// Element-wise product of two maps of equal shape.
    EltwiseMul,
    /// Per-channel convolution; `weights[(ky * kernel_w + kx) * C + c]`.
    DwConv { weights: Vec<i32>, geometry: ConvGeometry },
}

impl SimdOp {
    pub fn arity(&self) -> usize {
        match self {
            SimdOp::ResidualAdd | SimdOp::EltwiseMul => 2,
            _ => 1,
        }
    }

    /// Whether the op maps each element independently (usable as a layer epilogue).
    pub fn is_elementwise(&self) -> bool {
        matches!(self, SimdOp::Relu | SimdOp::Requantize(_))
    }

    /// Lane operations the op performs on an input of `elements` values
    /// producing `outputs` values.
    pub fn work(&self, elements: usize, outputs: usize) -> u64 {
        match self {
            SimdOp::MaxPool { size, .. } | SimdOp::AvgPool { size, .. } => (outputs * size * size) as u64,
            SimdOp::DwConv { geometry, .. } => (outputs * geometry.kernel_h * geometry.kernel_w) as u64,
            _ => elements.max(outputs) as u64,
        }
    }
}

/// Round-half-away-from-zero requantization with INT8 saturation.
pub fn requantize(x: i32, q: &Requant) -> i32 {
    let num = x as i128 * q.scale_num as i128;
    let den = q.scale_den as i128 * (1i128 << q.shift);
    let (num, den) = if den < 0 { (-num, -den) } else { (num, den) };
    let q_abs = num.abs() / den;
    let rem = num.abs() % den;
    let mag = if 2 * rem >= den { q_abs + 1 } else { q_abs };
    let rounded = if num < 0 { -mag } else { mag };
    (rounded + q.zero_point as i128).clamp(i8::MIN as i128, i8::MAX as i128) as i32
}

pub fn simd_op(op: &SimdOp, inputs: &[&FeatureMap]) -> Result<FeatureMap> {
    if inputs.len() != op.arity() {
        return Err(Error::Shape(format!("{op:?} takes {} inputs, got {}", op.arity(), inputs.len())));
    }
    let x = inputs[0];
    match op {
        SimdOp::Relu => Ok(map(x, |v| v.max(0))),
        SimdOp::Requantize(q) => {
            if q.scale_den == 0 || q.shift > 62 {
                return Err(Error::InvalidArgument(format!("bad requantization parameters {q:?}")));
            }
            Ok(map(x, |v| requantize(v, q)))
        }
        SimdOp::ResidualAdd | SimdOp::EltwiseMul => {
            let y = inputs[1];
            if x.shape() != y.shape() {
                return Err(Error::Shape(format!("{:?} vs {:?}", x.shape(), y.shape())));
            }
            let data = x
                .data
                .iter()
                .zip(&y.data)
                .map(|(&a, &b)| {
                    let r = if matches!(op, SimdOp::ResidualAdd) {
                        a as i64 + b as i64
                    } else {
                        a as i64 * b as i64
                    };
                    i32::try_from(r).map_err(|_| Error::Shape(format!("SIMD result {r} exceeds 32 bits")))
                })
                .collect::<Result<Vec<_>>>()?;
            FeatureMap::from_vec(x.height, x.width, x.channels, data)
        }
        SimdOp::MaxPool { size, stride } => pool(x, *size, *stride, |w| *w.iter().max().unwrap()),
        SimdOp::AvgPool { size, stride } => pool(x, *size, *stride, |w| {
            let sum: i64 = w.iter().sum();
            let n = w.len() as i64;
            let (q, r) = (sum.abs() / n, sum.abs() % n);
            let mag = if 2 * r >= n { q + 1 } else { q };
            sum.signum() * mag
        }),
        SimdOp::DwConv { weights, geometry } => dw_conv(x, weights, *geometry),
    }
}

fn map(x: &FeatureMap, f: impl Fn(i32) -> i32) -> FeatureMap {
    FeatureMap { data: x.data.iter().map(|&v| f(v)).collect(), ..x.clone() }
}

fn pool(x: &FeatureMap, size: usize, stride: usize, reduce: impl Fn(&[i64]) -> i64) -> Result<FeatureMap> {
    if size == 0 || stride == 0 || size > x.height || size > x.width {
        return Err(Error::Shape(format!("{size}x{size} window does not fit {:?}", x.shape())));
    }
    let oh = (x.height - size) / stride + 1;
    let ow = (x.width - size) / stride + 1;
    let mut out = FeatureMap::zeros(oh, ow, x.channels);
    let mut window = Vec::with_capacity(size * size);
    for y in 0..oh {
        for xo in 0..ow {
            for c in 0..x.channels {
                window.clear();
                for dy in 0..size {
                    for dx in 0..size {
                        window.push(x.get(y * stride + dy, xo * stride + dx, c) as i64);
                    }
                }
                out.set(y, xo, c, reduce(&window) as i32);
            }
        }
    }
    Ok(out)
}

fn dw_conv(x: &FeatureMap, weights: &[i32], g: ConvGeometry) -> Result<FeatureMap> {
    let c_n = x.channels;
    if weights.len() != g.kernel_h * g.kernel_w * c_n {
        return Err(Error::Shape(format!(
            "{} depthwise weights for a {}x{}x{c_n} kernel",
            weights.len(),
            g.kernel_h,
            g.kernel_w
        )));
    }
    let (oh, ow) = g.output_dims(x.height, x.width)?;
    let mut out = FeatureMap::zeros(oh, ow, c_n);
    for y in 0..oh {
        for xo in 0..ow {
            let mut acc = vec![0i64; c_n];
            for ky in 0..g.kernel_h {
                let iy = (y * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= x.height as isize {
                    continue;
                }
                for kx in 0..g.kernel_w {
                    let ix = (xo * g.stride + kx) as isize - g.pad as isize;
                    if ix < 0 || ix >= x.width as isize {
                        continue;
                    }
                    let src = x.index(iy as usize, ix as usize, 0);
                    let tap = (ky * g.kernel_w + kx) * c_n;
                    for (c, a) in acc.iter_mut().enumerate() {
                        *a += x.data[src + c] as i64 * weights[tap + c] as i64;
                    }
                }
            }
            for (c, a) in acc.into_iter().enumerate() {
                let v = i32::try_from(a).map_err(|_| Error::Shape(format!("depthwise sum {a} exceeds 32 bits")))?;
                out.set(y, xo, c, v);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::dw_conv_ref;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fm(h: usize, w: usize, c: usize, v: &[i32]) -> FeatureMap {
        FeatureMap::from_vec(h, w, c, v.to_vec()).unwrap()
    }

    #[test]
    fn relu_and_pooling() {
        let x = fm(1, 2, 1, &[-5, 7]);
        assert_eq!(simd_op(&SimdOp::Relu, &[&x]).unwrap().data, vec![0, 7]);
        let p = fm(2, 2, 1, &[1, 2, 3, 4]);
        let out = simd_op(&SimdOp::MaxPool { size: 2, stride: 2 }, &[&p]).unwrap();
        assert_eq!(out.data, vec![4]);
        let out = simd_op(&SimdOp::AvgPool { size: 2, stride: 2 }, &[&p]).unwrap();
        // 10 / 4 = 2.5 rounds away from zero.
        assert_eq!(out.data, vec![3]);
        let n = fm(2, 2, 1, &[-1, -2, -3, -4]);
        assert_eq!(simd_op(&SimdOp::AvgPool { size: 2, stride: 2 }, &[&n]).unwrap().data, vec![-3]);
    }

    #[test]
    fn requantize_rounding() {
        let q = Requant { scale_num: 1, scale_den: 2, shift: 0, zero_point: 0 };
        assert_eq!(requantize(3, &q), 2);
        assert_eq!(requantize(-3, &q), -2);
        assert_eq!(requantize(2, &q), 1);
        assert_eq!(requantize(10_000, &q), 127);
        assert_eq!(requantize(-10_000, &q), -128);
        let q = Requant { scale_num: 3, scale_den: 1, shift: 4, zero_point: 5 };
        assert_eq!(requantize(40, &q), 13);
        let bad = Requant { scale_num: 1, scale_den: 0, shift: 0, zero_point: 0 };
        assert!(simd_op(&SimdOp::Requantize(bad), &[&fm(1, 1, 1, &[1])]).is_err());
    }

    #[test]
    fn binary_ops_check_shapes() {
        let a = fm(1, 2, 1, &[3, -4]);
        let b = fm(1, 2, 1, &[5, 6]);
        assert_eq!(simd_op(&SimdOp::ResidualAdd, &[&a, &b]).unwrap().data, vec![8, 2]);
        assert_eq!(simd_op(&SimdOp::EltwiseMul, &[&a, &b]).unwrap().data, vec![15, -24]);
        let c = fm(2, 1, 1, &[1, 1]);
        assert!(simd_op(&SimdOp::ResidualAdd, &[&a, &c]).is_err());
        assert!(simd_op(&SimdOp::ResidualAdd, &[&a]).is_err());
    }

    #[test]
    fn depthwise_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = FeatureMap::from_vec(6, 6, 3, (0..108).map(|_| rng.gen_range(-128..128)).collect()).unwrap();
        let w: Vec<i32> = (0..27).map(|_| rng.gen_range(-128..128)).collect();
        for g in [ConvGeometry::new(3, 1, 0), ConvGeometry::new(3, 2, 1)] {
            let op = SimdOp::DwConv { weights: w.clone(), geometry: g };
            assert_eq!(simd_op(&op, &[&x]).unwrap(), dw_conv_ref(&x, &w, g).unwrap());
        }
    }
}
