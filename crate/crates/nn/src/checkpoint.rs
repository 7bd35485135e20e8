//! Single-file binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "AQCK" | u32 version | u64 fp_len | fingerprint (UTF-8 JSON)
//! | u64 tensor_count | tensors...
//! tensor: u32 name_len | name | u8 dtype | u8 ndim | u64 dims... | u64 byte_len | raw LE data
//! ```
//!
//! Tensor bytes are the raw little-endian element representation, so a
//! save/load round trip is bit-exact. The fingerprint is an opaque string
//! (the workspace stores resolved model configuration JSON there) checked by
//! consumers, not by this module.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::ArrayD;

use crate::error::NnError;
use crate::param::{NamedParams, NamedParamsMut};
use crate::scalar::{Dtype, Scalar};
use crate::Result;

const MAGIC: &[u8; 4] = b"AQCK";
const VERSION: u32 = 1;

/// One named tensor with raw little-endian payload.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub data: Vec<u8>,
}

impl TensorEntry {
    /// Build an entry from a tensor view (row-major element order).
    pub fn from_array<F: Scalar>(name: impl Into<String>, array: &ArrayD<F>) -> Self {
        let mut data = Vec::with_capacity(array.len() * F::DTYPE.size());
        for &v in array.iter() {
            v.write_le(&mut data);
        }
        TensorEntry {
            name: name.into(),
            dtype: F::DTYPE,
            shape: array.shape().to_vec(),
            data,
        }
    }

    /// Decode into an array of the matching scalar type.
    pub fn to_array<F: Scalar>(&self) -> Result<ArrayD<F>> {
        if self.dtype != F::DTYPE {
            return Err(NnError::Format(format!(
                "tensor '{}' holds {:?}, requested {:?}",
                self.name, self.dtype, F::DTYPE
            )));
        }
        let n: usize = self.shape.iter().product();
        let esz = self.dtype.size();
        if self.data.len() != n * esz {
            return Err(NnError::Format(format!(
                "tensor '{}' payload is {} bytes, expected {}",
                self.name,
                self.data.len(),
                n * esz
            )));
        }
        let values: Vec<F> = (0..n).map(|i| F::read_le(&self.data[i * esz..])).collect();
        ArrayD::from_shape_vec(self.shape.clone(), values)
            .map_err(|e| NnError::Format(format!("tensor '{}': {e}", self.name)))
    }
}

/// A fingerprint string plus ordered named tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub fingerprint: String,
    pub tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn new(fingerprint: impl Into<String>) -> Self {
        Checkpoint {
            fingerprint: fingerprint.into(),
            tensors: Vec::new(),
        }
    }

    /// Collect every parameter value under its registered name.
    pub fn push_params<F: Scalar>(&mut self, params: NamedParams<'_, F>) {
        for (name, p) in params {
            self.tensors.push(TensorEntry::from_array(name, &p.value));
        }
    }

    /// Add one non-parameter tensor (e.g. batch-norm running statistics).
    pub fn push_tensor<F: Scalar>(&mut self, name: impl Into<String>, array: &ArrayD<F>) {
        self.tensors.push(TensorEntry::from_array(name, array));
    }

    pub fn find(&self, name: &str) -> Option<&TensorEntry> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let fp = self.fingerprint.as_bytes();
        w.write_all(&(fp.len() as u64).to_le_bytes())?;
        w.write_all(fp)?;
        w.write_all(&(self.tensors.len() as u64).to_le_bytes())?;
        for t in &self.tensors {
            let name = t.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&[t.dtype.tag()])?;
            w.write_all(&[t.shape.len() as u8])?;
            for d in &t.shape {
                w.write_all(&(*d as u64).to_le_bytes())?;
            }
            w.write_all(&(t.data.len() as u64).to_le_bytes())?;
            w.write_all(&t.data)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NnError::Format("bad magic (not a checkpoint file)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(NnError::Format(format!(
                "unsupported checkpoint version {version} (expected {VERSION})"
            )));
        }
        let fp_len = read_u64(&mut r)? as usize;
        let mut fp = vec![0u8; fp_len];
        r.read_exact(&mut fp)?;
        let fingerprint = String::from_utf8(fp)
            .map_err(|_| NnError::Format("fingerprint is not UTF-8".into()))?;
        let count = read_u64(&mut r)? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| NnError::Format("tensor name is not UTF-8".into()))?;
            let mut tag = [0u8; 2];
            r.read_exact(&mut tag)?;
            let dtype = Dtype::from_tag(tag[0])
                .ok_or_else(|| NnError::Format(format!("unknown dtype tag {}", tag[0])))?;
            let ndim = tag[1] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u64(&mut r)? as usize);
            }
            let byte_len = read_u64(&mut r)? as usize;
            let expect: usize = shape.iter().product::<usize>() * dtype.size();
            if byte_len != expect {
                return Err(NnError::Format(format!(
                    "tensor '{name}': payload {byte_len} bytes does not match shape {shape:?}"
                )));
            }
            let mut data = vec![0u8; byte_len];
            r.read_exact(&mut data)?;
            tensors.push(TensorEntry {
                name,
                dtype,
                shape,
                data,
            });
        }
        Ok(Checkpoint {
            fingerprint,
            tensors,
        })
    }
}

/// Result of matching checkpoint tensors against network parameters.
#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub loaded: Vec<String>,
    pub missing: Vec<String>,
    pub unexpected: Vec<String>,
}

impl LoadReport {
    pub fn is_exact(&self) -> bool {
        self.missing.is_empty() && self.unexpected.is_empty()
    }
}

/// Assign checkpoint tensors onto parameters by name, requiring an exact
/// one-to-one match; any discrepancy is reported as a full diff.
pub fn assign_exact<F: Scalar>(ckpt: &Checkpoint, params: NamedParamsMut<'_, F>) -> Result<()> {
    let report = assign_matching(ckpt, params)?;
    if !report.is_exact() {
        let mut msg = String::new();
        for m in &report.missing {
            msg.push_str(&format!("  missing from checkpoint: {m}\n"));
        }
        for u in &report.unexpected {
            msg.push_str(&format!("  not used by network: {u}\n"));
        }
        return Err(NnError::ParamMismatch(msg.trim_end().to_string()));
    }
    Ok(())
}

/// Assign whatever tensors match by name (shape must still agree); returns
/// the names that loaded, the parameters left untouched, and the checkpoint
/// tensors that matched nothing.
pub fn assign_matching<F: Scalar>(
    ckpt: &Checkpoint,
    params: NamedParamsMut<'_, F>,
) -> Result<LoadReport> {
    let mut report = LoadReport::default();
    let mut used = vec![false; ckpt.tensors.len()];
    for (name, p) in params {
        match ckpt.tensors.iter().position(|t| t.name == name) {
            None => report.missing.push(name),
            Some(pos) => {
                let t = &ckpt.tensors[pos];
                if t.shape != p.value.shape() {
                    return Err(NnError::ParamMismatch(format!(
                        "  shape mismatch for {name}: checkpoint {:?}, network {:?}",
                        t.shape,
                        p.value.shape()
                    )));
                }
                p.value = t.to_array::<F>()?;
                used[pos] = true;
                report.loaded.push(name);
            }
        }
    }
    for (pos, t) in ckpt.tensors.iter().enumerate() {
        if !used[pos] {
            report.unexpected.push(t.name.clone());
        }
    }
    Ok(report)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
