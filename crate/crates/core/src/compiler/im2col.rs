//! Convolution lowering: each output pixel becomes one row of the input
//! matrix, so `O (M x N) = I (M x K) * W (K x N)` with `M = OH * OW` and
//! `K = kernel_h * kernel_w * C`. Row `(ky * kernel_w + kx) * C + c` of the
//! weight matrix holds tap `(ky, kx)` of input channel `c`.

use crate::error::Result;
use crate::tensor::{ConvGeometry, FeatureMap, Matrix};

pub fn im2col(ifmap: &FeatureMap, geometry: ConvGeometry) -> Result<Matrix<i32>> {
    let (oh, ow) = geometry.output_dims(ifmap.height, ifmap.width)?;
    let c = ifmap.channels;
    let k = geometry.kernel_h * geometry.kernel_w * c;
    let mut out = Matrix::zeros(oh * ow, k);
    for oy in 0..oh {
        for ox in 0..ow {
            let m = oy * ow + ox;
            for ky in 0..geometry.kernel_h {
                let y = (oy * geometry.stride + ky) as isize - geometry.pad as isize;
                if y < 0 || y >= ifmap.height as isize {
                    continue;
                }
                for kx in 0..geometry.kernel_w {
                    let x = (ox * geometry.stride + kx) as isize - geometry.pad as isize;
                    if x < 0 || x >= ifmap.width as isize {
                        continue;
                    }
                    let base = (ky * geometry.kernel_w + kx) * c;
                    let src = ifmap.index(y as usize, x as usize, 0);
                    for ch in 0..c {
                        out.set(m, base + ch, ifmap.data[src + ch]);
                    }
                }
            }
        }
    }
    Ok(out)
}
