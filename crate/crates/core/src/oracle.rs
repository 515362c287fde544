//! Brute-force references. Nothing here calls into the compiler, the
//! simulator or the CSD encoder: every routine is a literal loop over the
//! definition so it can bracket those stages independently.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ConvGeometry, FeatureMap, Matrix};

/// `O = I x W` as an i64 triple loop, row-major accumulation order.
pub fn mvm_ref(inputs: &Matrix<i32>, weights: &Matrix<i32>) -> Result<Matrix<i64>> {
    if inputs.cols() != weights.rows() {
        return Err(Error::Shape(format!(
            "inputs are {}x{} but weights are {}x{}",
            inputs.rows(),
            inputs.cols(),
            weights.rows(),
            weights.cols()
        )));
    }
    let (m, k, n) = (inputs.rows(), inputs.cols(), weights.cols());
    let mut out = Matrix::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0i64;
            for t in 0..k {
                acc += inputs.get(i, t) as i64 * weights.get(t, j) as i64;
            }
            out.set(i, j, acc);
        }
    }
    Ok(out)
}

/// Second accumulation order (outer product over the reduction index), used
/// to cross-check [`mvm_ref`].
pub fn mvm_ref_outer(inputs: &Matrix<i32>, weights: &Matrix<i32>) -> Result<Matrix<i64>> {
    if inputs.cols() != weights.rows() {
        return Err(Error::Shape("inner dimensions differ".into()));
    }
    let (m, k, n) = (inputs.rows(), inputs.cols(), weights.cols());
    let mut acc = vec![0i64; m * n];
    for t in (0..k).rev() {
        for i in 0..m {
            let a = inputs.get(i, t) as i64;
            if a == 0 {
                continue;
            }
            for j in 0..n {
                acc[i * n + j] += a * weights.get(t, j) as i64;
            }
        }
    }
    Matrix::from_vec(m, n, acc)
}

/// Direct sliding-window convolution. `kernels` is `K x N` with row
/// `(ky * kernel_w + kx) * C + c`; out-of-bounds taps read zero.
pub fn conv_ref(
    ifmap: &FeatureMap,
    kernels: &Matrix<i32>,
    geometry: ConvGeometry,
) -> Result<FeatureMap> {
    let c_in = ifmap.channels;
    if kernels.rows() != geometry.kernel_h * geometry.kernel_w * c_in {
        return Err(Error::Shape(format!(
            "kernel matrix has {} rows, expected {}",
            kernels.rows(),
            geometry.kernel_h * geometry.kernel_w * c_in
        )));
    }
    let (oh, ow) = geometry.output_dims(ifmap.height, ifmap.width)?;
    let n_out = kernels.cols();
    let mut out = FeatureMap::zeros(oh, ow, n_out);
    for oy in 0..oh {
        for ox in 0..ow {
            for n in 0..n_out {
                let mut acc = 0i64;
                for ky in 0..geometry.kernel_h {
                    for kx in 0..geometry.kernel_w {
                        let y = (oy * geometry.stride + ky) as isize - geometry.pad as isize;
                        let x = (ox * geometry.stride + kx) as isize - geometry.pad as isize;
                        if y < 0 || x < 0 || y >= ifmap.height as isize || x >= ifmap.width as isize
                        {
                            continue;
                        }
                        for c in 0..c_in {
                            let w = kernels.get((ky * geometry.kernel_w + kx) * c_in + c, n);
                            acc += ifmap.get(y as usize, x as usize, c) as i64 * w as i64;
                        }
                    }
                }
                out.set(oy, ox, n, narrow(acc)?);
            }
        }
    }
    Ok(out)
}

/// Per-channel direct convolution. `kernels[(ky * kernel_w + kx) * C + c]`.
pub fn dw_conv_ref(ifmap: &FeatureMap, kernels: &[i32], geometry: ConvGeometry) -> Result<FeatureMap> {
    let c_n = ifmap.channels;
    if kernels.len() != geometry.kernel_h * geometry.kernel_w * c_n {
        return Err(Error::Shape("depthwise kernel size mismatch".into()));
    }
    let (oh, ow) = geometry.output_dims(ifmap.height, ifmap.width)?;
    let mut out = FeatureMap::zeros(oh, ow, c_n);
    for c in 0..c_n {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0i64;
                for ky in 0..geometry.kernel_h {
                    for kx in 0..geometry.kernel_w {
                        let y = (oy * geometry.stride + ky) as isize - geometry.pad as isize;
                        let x = (ox * geometry.stride + kx) as isize - geometry.pad as isize;
                        if y >= 0 && x >= 0 && y < ifmap.height as isize && x < ifmap.width as isize
                        {
                            acc += ifmap.get(y as usize, x as usize, c) as i64
                                * kernels[(ky * geometry.kernel_w + kx) * c_n + c] as i64;
                        }
                    }
                }
                out.set(oy, ox, c, narrow(acc)?);
            }
        }
    }
    Ok(out)
}

fn narrow(v: i64) -> Result<i32> {
    i32::try_from(v).map_err(|_| Error::Shape(format!("reference value {v} exceeds 32 bits")))
}

/// Every 8-digit ternary string that decodes to one value.
#[derive(Debug, Clone)]
pub struct CsdEnumeration {
    pub value: i32,
    /// LSB-first digit strings.
    pub encodings: Vec<[i8; 8]>,
    pub min_nonzero: usize,
}

impl CsdEnumeration {
    pub fn non_adjacent(&self) -> Vec<[i8; 8]> {
        self.encodings
            .iter()
            .filter(|d| (0..7).all(|i| d[i] == 0 || d[i + 1] == 0))
            .copied()
            .collect()
    }
}

/// Enumerates all 3^8 ternary strings and keeps those equal to `v`.
pub fn csd_enumerate(v: i8) -> CsdEnumeration {
    let mut encodings = Vec::new();
    for code in 0..6561u32 {
        let mut rest = code;
        let mut digits = [0i8; 8];
        let mut value = 0i32;
        for (i, d) in digits.iter_mut().enumerate() {
            *d = (rest % 3) as i8 - 1;
            rest /= 3;
            value += *d as i32 * (1 << i);
        }
        if value == v as i32 {
            encodings.push(digits);
        }
    }
    let min_nonzero = encodings
        .iter()
        .map(|d| d.iter().filter(|&&x| x != 0).count())
        .min()
        .unwrap_or(0);
    CsdEnumeration { value: v as i32, encodings, min_nonzero }
}

/// Requantization parameters: `round(x * num / (den * 2^shift)) + zero_point`,
/// rounding half away from zero, then saturating to INT8.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Requant {
    pub scale_num: i32,
    pub scale_den: i32,
    pub shift: u32,
    pub zero_point: i32,
}

/// One layer of a reference network. Weights are the values the hardware
/// is expected to compute with (raw or approximated).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RefLayer {
    Conv { weights: Matrix<i32>, geometry: ConvGeometry },
    /// Flattens the HWC input and produces a `1 x 1 x N` map.
    Fc { weights: Matrix<i32> },
    DwConv { weights: Vec<i32>, geometry: ConvGeometry },
    Relu,
    Requantize(Requant),
    MaxPool { size: usize, stride: usize },
    AvgPool { size: usize, stride: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReferenceNet {
    pub layers: Vec<RefLayer>,
}

/// Exact integer inference, layer by layer.
pub fn net_ref(net: &ReferenceNet, input: &FeatureMap) -> Result<FeatureMap> {
    let mut x = input.clone();
    for (i, layer) in net.layers.iter().enumerate() {
        x = match layer {
            RefLayer::Conv { weights, geometry } => conv_ref(&x, weights, *geometry),
            RefLayer::Fc { weights } => {
                if weights.rows() != x.data.len() {
                    return Err(Error::Shape(format!(
                        "layer {i}: fc expects {} inputs, got {}",
                        weights.rows(),
                        x.data.len()
                    )));
                }
                let mut out = FeatureMap::zeros(1, 1, weights.cols());
                for n in 0..weights.cols() {
                    let mut acc = 0i64;
                    for (k, &v) in x.data.iter().enumerate() {
                        acc += v as i64 * weights.get(k, n) as i64;
                    }
                    out.data[n] = narrow(acc)?;
                }
                Ok(out)
            }
            RefLayer::DwConv { weights, geometry } => dw_conv_ref(&x, weights, *geometry),
            RefLayer::Relu => {
                let mut out = x.clone();
                for v in out.data.iter_mut() {
                    if *v < 0 {
                        *v = 0;
                    }
                }
                Ok(out)
            }
            RefLayer::Requantize(q) => {
                let mut out = x.clone();
                for v in out.data.iter_mut() {
                    *v = requantize_ref(*v, q);
                }
                Ok(out)
            }
            RefLayer::MaxPool { size, stride } => pool_ref(&x, *size, *stride, true),
            RefLayer::AvgPool { size, stride } => pool_ref(&x, *size, *stride, false),
        }
        .map_err(|e| match e {
            Error::Shape(m) => Error::Shape(format!("layer {i}: {m}")),
            other => other,
        })?;
    }
    Ok(x)
}

fn requantize_ref(x: i32, q: &Requant) -> i32 {
    let num = x as i128 * q.scale_num as i128;
    let den = q.scale_den as i128 * (1i128 << q.shift);
    let (num, den) = if den < 0 { (-num, -den) } else { (num, den) };
    // Half away from zero: floor((2|num| + den) / 2den), sign restored.
    let mag = (2 * num.abs() + den) / (2 * den);
    let rounded = if num < 0 { -mag } else { mag };
    (rounded + q.zero_point as i128).clamp(-128, 127) as i32
}

fn pool_ref(x: &FeatureMap, size: usize, stride: usize, max: bool) -> Result<FeatureMap> {
    if size == 0 || stride == 0 || size > x.height || size > x.width {
        return Err(Error::Shape(format!("pool window {size} invalid for {:?}", x.shape())));
    }
    let oh = (x.height - size) / stride + 1;
    let ow = (x.width - size) / stride + 1;
    let mut out = FeatureMap::zeros(oh, ow, x.channels);
    for oy in 0..oh {
        for ox in 0..ow {
            for c in 0..x.channels {
                let mut vals = Vec::with_capacity(size * size);
                for dy in 0..size {
                    for dx in 0..size {
                        vals.push(x.get(oy * stride + dy, ox * stride + dx, c) as i64);
                    }
                }
                let v = if max {
                    *vals.iter().max().unwrap()
                } else {
                    let sum: i64 = vals.iter().sum();
                    let n = vals.len() as i64;
                    let mag = (2 * sum.abs() + n) / (2 * n);
                    if sum < 0 {
                        -mag
                    } else {
                        mag
                    }
                };
                out.set(oy, ox, c, v as i32);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, v: &[i32]) -> Matrix<i32> {
        Matrix::from_vec(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn mvm_small_cases() {
        let out = mvm_ref(&mat(1, 1, &[3]), &mat(1, 1, &[-4])).unwrap();
        assert_eq!(out.get(0, 0), -12);
        let i = mat(2, 3, &[1, 2, 3, 4, 5, 6]);
        let eye = Matrix::from_fn(3, 3, |r, c| (r == c) as i32);
        assert_eq!(mvm_ref(&i, &eye).unwrap().map(|v| v as i32), i);
        assert!(mvm_ref(&i, &mat(2, 1, &[1, 1])).is_err());
    }

    #[test]
    fn both_accumulation_orders_agree() {
        let mut seed = 0x2545F4914F6CDD1Du64;
        let mut next = move || {
            seed ^= seed << 13;
            seed ^= seed >> 7;
            seed ^= seed << 17;
            (seed % 256) as i32 - 128
        };
        for (m, k, n) in [(1, 1, 1), (3, 17, 5), (16, 64, 9), (7, 300, 33)] {
            let i = Matrix::from_fn(m, k, |_, _| next());
            let w = Matrix::from_fn(k, n, |_, _| next());
            assert_eq!(mvm_ref(&i, &w).unwrap(), mvm_ref_outer(&i, &w).unwrap());
        }
    }

    #[test]
    fn conv_delta_and_box() {
        let data: Vec<i32> = (0..16).collect();
        let x = FeatureMap::from_vec(4, 4, 1, data).unwrap();
        // Delta at the bottom-right tap: output (y, x) reads input (y+1, x+1).
        let mut k = vec![0; 4];
        k[3] = 1;
        let out = conv_ref(&x, &mat(4, 1, &k), ConvGeometry::new(2, 1, 0)).unwrap();
        assert_eq!(out.shape(), [3, 3, 1]);
        assert_eq!(out.get(0, 0, 0), x.get(1, 1, 0));
        assert_eq!(out.get(2, 1, 0), x.get(3, 2, 0));

        let c = FeatureMap::from_vec(5, 5, 1, vec![7; 25]).unwrap();
        let out = conv_ref(&c, &mat(4, 1, &[1, 1, 1, 1]), ConvGeometry::new(2, 1, 0)).unwrap();
        assert!(out.data.iter().all(|&v| v == 28));
    }

    #[test]
    fn enumeration_facts() {
        let zero = csd_enumerate(0);
        assert_eq!(zero.non_adjacent(), vec![[0i8; 8]]);
        let e = csd_enumerate(67);
        let naf = e.non_adjacent();
        assert_eq!(naf.len(), 1);
        assert_eq!(naf[0].iter().filter(|&&d| d != 0).count(), 3);
        assert_eq!(e.min_nonzero, 3);
    }

    #[test]
    fn net_basics() {
        let x = FeatureMap::from_vec(1, 2, 1, vec![-5, 7]).unwrap();
        assert_eq!(net_ref(&ReferenceNet::default(), &x).unwrap(), x);
        let relu = ReferenceNet { layers: vec![RefLayer::Relu] };
        assert_eq!(net_ref(&relu, &x).unwrap().data, vec![0, 7]);
    }

    #[test]
    fn requantize_rounds_half_away() {
        let q = Requant { scale_num: 1, scale_den: 2, shift: 0, zero_point: 0 };
        assert_eq!(requantize_ref(3, &q), 2);
        assert_eq!(requantize_ref(-3, &q), -2);
        assert_eq!(requantize_ref(1000, &q), 127);
        assert_eq!(requantize_ref(-1000, &q), -128);
        let q = Requant { scale_num: 3, scale_den: 1, shift: 4, zero_point: 5 };
        // 40 * 3 / 16 = 7.5 -> 8, + 5
        assert_eq!(requantize_ref(40, &q), 13);
    }
}
