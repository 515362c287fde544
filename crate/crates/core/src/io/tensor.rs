//! Tensor container.
//!
//! ```text
//! 0      8 bytes   magic "DBPIMTC\0"
//! 8      u32 LE    manifest length H
//! 12     H bytes   UTF-8 JSON manifest
//! 12+H   payload   row-major, little-endian elements
//! ```
//!
//! Manifest keys: `name`, `dtype` (`"i8"` or `"i32"`), `shape` (list of
//! dimensions), `layout` (`"row-major"`), `byte_order` (`"little-endian"`)
//! and `checksum` (`"sha256:"` followed by the lowercase hex digest of the
//! payload). Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, Matrix};

pub const MAGIC: &[u8; 8] = b"DBPIMTC\0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    I8,
    I32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub layout: String,
    pub byte_order: String,
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TensorData {
    I8(Vec<i8>),
    I32(Vec<i32>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: TensorData) -> Result<Self> {
        let len = match &data {
            TensorData::I8(v) => v.len(),
            TensorData::I32(v) => v.len(),
        };
        if shape.iter().product::<usize>() != len {
            return Err(Error::Shape(format!("shape {shape:?} does not hold {len} elements")));
        }
        Ok(Tensor { name: name.into(), shape, data })
    }

    pub fn from_i8(name: impl Into<String>, m: &Matrix<i8>) -> Self {
        Tensor { name: name.into(), shape: vec![m.rows(), m.cols()], data: TensorData::I8(m.as_slice().to_vec()) }
    }

    pub fn from_i32(name: impl Into<String>, m: &Matrix<i32>) -> Self {
        Tensor { name: name.into(), shape: vec![m.rows(), m.cols()], data: TensorData::I32(m.as_slice().to_vec()) }
    }

    /// A `[height, width, channels]` i32 tensor.
    pub fn from_feature_map(name: impl Into<String>, f: &FeatureMap) -> Self {
        Tensor { name: name.into(), shape: f.shape().to_vec(), data: TensorData::I32(f.data.clone()) }
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            TensorData::I8(_) => DType::I8,
            TensorData::I32(_) => DType::I32,
        }
    }

    fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::Shape(format!("tensor {} has shape {:?}, expected 2 dimensions", self.name, self.shape))),
        }
    }

    pub fn to_i8_matrix(&self) -> Result<Matrix<i8>> {
        let (r, c) = self.dims2()?;
        match &self.data {
            TensorData::I8(v) => Matrix::from_vec(r, c, v.clone()),
            TensorData::I32(v) => {
                let narrowed = v
                    .iter()
                    .map(|&x| {
                        i8::try_from(x).map_err(|_| Error::Format(format!("tensor {} holds {x}, not INT8", self.name)))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Matrix::from_vec(r, c, narrowed)
            }
        }
    }

    pub fn to_i32_matrix(&self) -> Result<Matrix<i32>> {
        let (r, c) = self.dims2()?;
        Matrix::from_vec(r, c, self.values_i32())
    }

    pub fn to_feature_map(&self) -> Result<FeatureMap> {
        match self.shape[..] {
            [h, w, c] => FeatureMap::from_vec(h, w, c, self.values_i32()),
            _ => Err(Error::Shape(format!("tensor {} has shape {:?}, expected [H, W, C]", self.name, self.shape))),
        }
    }

    pub fn values_i32(&self) -> Vec<i32> {
        match &self.data {
            TensorData::I8(v) => v.iter().map(|&x| x as i32).collect(),
            TensorData::I32(v) => v.clone(),
        }
    }

    fn payload(&self) -> Vec<u8> {
        match &self.data {
            TensorData::I8(v) => v.iter().map(|&x| x as u8).collect(),
            TensorData::I32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let payload = self.payload();
        let manifest = Manifest {
            name: self.name.clone(),
            dtype: self.dtype(),
            shape: self.shape.clone(),
            layout: "row-major".into(),
            byte_order: "little-endian".into(),
            checksum: format!("sha256:{}", sha256_hex(&payload)),
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(12 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(Error::Format("not a tensor container".into()));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let json = bytes.get(12..12 + hlen).ok_or_else(|| Error::Format("truncated manifest".into()))?;
        let m: Manifest = serde_json::from_slice(json)?;
        if m.layout != "row-major" || m.byte_order != "little-endian" {
            return Err(Error::Format(format!("unsupported layout {} / byte order {}", m.layout, m.byte_order)));
        }
        let payload = &bytes[12 + hlen..];
        let count: usize = m.shape.iter().product();
        let size = match m.dtype {
            DType::I8 => 1,
            DType::I32 => 4,
        };
        if payload.len() != count * size {
            return Err(Error::Format(format!(
                "payload is {} bytes, shape {:?} of {:?} needs {}",
                payload.len(),
                m.shape,
                m.dtype,
                count * size
            )));
        }
        let want = format!("sha256:{}", sha256_hex(payload));
        if m.checksum != want {
            return Err(Error::Format(format!("checksum mismatch: manifest {} but payload {want}", m.checksum)));
        }
        let data = match m.dtype {
            DType::I8 => TensorData::I8(payload.iter().map(|&b| b as i8).collect()),
            DType::I32 => TensorData::I32(payload.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect()),
        };
        Ok(Tensor { name: m.name, shape: m.shape, data })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Tensor::decode(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn i8_round_trip(r in 1usize..20, c in 1usize..20, seed in any::<i8>()) {
            let m = Matrix::from_fn(r, c, |i, j| seed.wrapping_add((i * 31 + j * 7) as i8));
            let t = Tensor::from_i8("w", &m);
            let back = Tensor::decode(&t.encode().unwrap()).unwrap();
            prop_assert_eq!(back.to_i8_matrix().unwrap(), m);
        }

        #[test]
        fn i32_round_trip(v in proptest::collection::vec(any::<i32>(), 1..100)) {
            let t = Tensor::new("o", vec![v.len()], TensorData::I32(v)).unwrap();
            prop_assert_eq!(Tensor::decode(&t.encode().unwrap()).unwrap(), t);
        }
    }

    #[test]
    fn manifest_is_documented_json() {
        let t = Tensor::from_i8("x", &Matrix::from_vec(1, 2, vec![1i8, -1]).unwrap());
        let bytes = t.encode().unwrap();
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let v: serde_json::Value = serde_json::from_slice(&bytes[12..12 + hlen]).unwrap();
        assert_eq!(v["dtype"], "i8");
        assert_eq!(v["shape"], serde_json::json!([1, 2]));
        assert_eq!(v["layout"], "row-major");
        assert_eq!(v["byte_order"], "little-endian");
        // sha256 of the bytes 01 ff
        assert_eq!(v["checksum"], "sha256:4b3a43f592f577fcfcb5b0e1f42bec5182c9edc414e1f667528f56e7cf0be11d");
        assert_eq!(&bytes[12 + hlen..], &[1, 0xff]);
    }

    #[test]
    fn corruption_is_detected() {
        let t = Tensor::from_i32("o", &Matrix::from_vec(2, 2, vec![1, 2, 3, 4]).unwrap());
        let bytes = t.encode().unwrap();
        let mut bad = bytes.clone();
        *bad.last_mut().unwrap() ^= 1;
        assert!(Tensor::decode(&bad).is_err());
        assert!(Tensor::decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(Tensor::decode(b"nope").is_err());
        assert!(t.to_feature_map().is_err());
        assert!(Tensor::new("x", vec![3], TensorData::I8(vec![1])).is_err());
    }
}
