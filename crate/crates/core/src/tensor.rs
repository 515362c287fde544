//! Dense row-major containers shared by every stage.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major 2-D matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix<T>", bound(deserialize = "T: Copy + Default + Deserialize<'de>"))]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Copy + Default> TryFrom<RawMatrix<T>> for Matrix<T> {
    type Error = Error;

    fn try_from(r: RawMatrix<T>) -> Result<Self> {
        Matrix::from_vec(r.rows, r.cols, r.data)
    }
}

impl<T: Copy + Default> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![T::default(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} elements cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U: Copy + Default>(&self, f: impl Fn(T) -> U) -> Matrix<U> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn column(&self, c: usize) -> Vec<T> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }
}

/// Feature map in height-width-channel order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<i32>,
}

impl FeatureMap {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        FeatureMap { height, width, channels, data: vec![0; height * width * channels] }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<i32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{} elements cannot fill a {height}x{width}x{channels} feature map",
                data.len()
            )));
        }
        Ok(FeatureMap { height, width, channels, data })
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> i32 {
        self.data[self.index(y, x, c)]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: i32) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    /// Views an `(H*W) x C` output matrix as a feature map.
    pub fn from_matrix(height: usize, width: usize, m: &Matrix<i32>) -> Result<Self> {
        if m.rows() != height * width {
            return Err(Error::Shape(format!(
                "{} rows cannot form a {height}x{width} map",
                m.rows()
            )));
        }
        FeatureMap::from_vec(height, width, m.cols(), m.as_slice().to_vec())
    }

    /// Checks every element fits INT8 and narrows.
    pub fn to_i8(&self) -> Result<Vec<i8>> {
        self.data
            .iter()
            .map(|&v| {
                i8::try_from(v).map_err(|_| Error::Shape(format!("value {v} does not fit INT8")))
            })
            .collect()
    }
}

/// Convolution window geometry, shared by the lowering, the SIMD
/// depthwise path and the references.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        ConvGeometry { kernel_h: kernel, kernel_w: kernel, stride, pad }
    }

    /// Output height and width, or an error for empty or non-positive outputs.
    pub fn output_dims(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        if self.stride == 0 || self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(Error::Shape("kernel and stride must be positive".into()));
        }
        let ph = height + 2 * self.pad;
        let pw = width + 2 * self.pad;
        if ph < self.kernel_h || pw < self.kernel_w {
            return Err(Error::Shape(format!(
                "{}x{} kernel does not fit a padded {ph}x{pw} input",
                self.kernel_h, self.kernel_w
            )));
        }
        Ok(((ph - self.kernel_h) / self.stride + 1, (pw - self.kernel_w) / self.stride + 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deserialization_checks_the_shape() {
        let m: Matrix<i8> = serde_json::from_str(r#"{"rows":1,"cols":2,"data":[3,-4]}"#).unwrap();
        assert_eq!(m.row(0), &[3, -4]);
        assert!(serde_json::from_str::<Matrix<i8>>(r#"{"rows":2,"cols":2,"data":[3,-4]}"#).is_err());
    }
}
