//! SQCK checkpoint format.
//!
//! ```text
//! "SQCK" | u32 version=1 | u32 tensor count
//! per tensor, sorted by name:
//!   u16 name len | name | u8 dtype | u8 ndim | ndim × u32 dims | raw LE data
//! u32 CRC32 of everything above
//! ```
//!
//! dtype codes: 0 = f32, 1 = f64, 2 = u8. The model configuration travels as a
//! u8 tensor named `__config__` holding its JSON encoding.

use std::collections::BTreeMap;
use std::path::Path;

use super::{ClassifierModel, ModelConfig};
use crate::binio;
use crate::error::{Error, Result};
use crate::numerics::Scalar;
#[cfg(test)]
use crate::numerics::Tensor;

const MAGIC: [u8; 4] = *b"SQCK";
const VERSION: u32 = 1;
const CONFIG_TENSOR: &str = "__config__";
const DTYPE_U8: u8 = 2;

struct RawTensor<'b> {
    dtype: u8,
    shape: Vec<usize>,
    data: &'b [u8],
}

pub fn checkpoint_to_bytes<T: Scalar>(model: &ClassifierModel<T>) -> Result<Vec<u8>> {
    let config_json = serde_json::to_vec(model.config())?;
    let mut entries: Vec<(&str, u8, Vec<usize>, Vec<u8>)> = Vec::new();
    entries.push((CONFIG_TENSOR, DTYPE_U8, vec![config_json.len()], config_json));
    for (_, p) in model.params().iter() {
        let mut raw = Vec::with_capacity(p.numel() * T::DTYPE.size());
        for &v in p.value.data() {
            v.write_le(&mut raw);
        }
        entries.push((&p.name, T::DTYPE.code(), p.value.shape().to_vec(), raw));
    }
    entries.sort_by(|a, b| a.0.cmp(b.0));

    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, dtype, shape, raw) in &entries {
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Config(format!("tensor name too long: {name}")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(*dtype);
        out.push(shape.len() as u8);
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(raw);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn checkpoint_save<T: Scalar>(model: &ClassifierModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = checkpoint_to_bytes(model)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn parse(bytes: &[u8]) -> Result<BTreeMap<String, RawTensor<'_>>> {
    let mut cur = binio::open(bytes, MAGIC, VERSION)?;
    let count = cur.u32("tensor count")?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name_len = cur.u16("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "tensor name")?)
            .map_err(|_| Error::Malformed("tensor name is not UTF-8".into()))?
            .to_owned();
        let dtype = cur.u8("dtype")?;
        let ndim = cur.u8("ndim")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u32("dims")? as usize);
        }
        let elem = match dtype {
            0 => 4,
            1 => 8,
            DTYPE_U8 => 1,
            other => return Err(Error::Malformed(format!("unknown dtype code {other} for `{name}`"))),
        };
        let n = shape
            .iter()
            .try_fold(elem, |acc: usize, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Malformed(format!("tensor `{name}` is too large")))?;
        let data = cur.take(n, &name)?;
        if tensors.insert(name.clone(), RawTensor { dtype, shape, data }).is_some() {
            return Err(Error::Malformed(format!("duplicate tensor `{name}`")));
        }
    }
    binio::finish(cur)?;
    Ok(tensors)
}

fn fill<T: Scalar>(model: &mut ClassifierModel<T>, tensors: &BTreeMap<String, RawTensor<'_>>) -> Result<()> {
    for p in model.params_mut().iter_mut() {
        let raw = tensors
            .get(&p.name)
            .ok_or_else(|| Error::MissingTensor(p.name.clone()))?;
        if raw.shape != p.value.shape() {
            return Err(Error::TensorShape {
                name: p.name.clone(),
                expected: p.value.shape().to_vec(),
                found: raw.shape.clone(),
            });
        }
        if raw.dtype != T::DTYPE.code() {
            return Err(Error::Malformed(format!(
                "tensor `{}` has dtype code {}, model uses {:?}",
                p.name,
                raw.dtype,
                T::DTYPE
            )));
        }
        let size = T::DTYPE.size();
        for (dst, chunk) in p.value.data_mut().iter_mut().zip(raw.data.chunks_exact(size)) {
            *dst = T::read_le(chunk);
        }
        p.grad = None;
    }
    let expected = model.params().len() + 1;
    if tensors.len() != expected {
        let unknown: Vec<&String> = tensors
            .keys()
            .filter(|k| k.as_str() != CONFIG_TENSOR && model.params().find(k).is_none())
            .collect();
        return Err(Error::Malformed(format!("unexpected tensors {unknown:?}")));
    }
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint, rebuilding the model from its embedded configuration.
pub fn checkpoint_load<T: Scalar>(path: impl AsRef<Path>) -> Result<ClassifierModel<T>> {
    let bytes = read_file(path.as_ref())?;
    let tensors = parse(&bytes)?;
    let cfg = tensors
        .get(CONFIG_TENSOR)
        .ok_or_else(|| Error::MissingTensor(CONFIG_TENSOR.into()))?;
    let config: ModelConfig = serde_json::from_slice(cfg.data)?;
    let mut model = ClassifierModel::new(config, 0)?;
    fill(&mut model, &tensors)?;
    Ok(model)
}

/// Loads parameter values into an existing model; every tensor must match
/// the model's own shapes.
pub fn checkpoint_load_into<T: Scalar>(model: &mut ClassifierModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let bytes = read_file(path.as_ref())?;
    let tensors = parse(&bytes)?;
    fill(model, &tensors)
}

#[cfg(test)]
fn tensor_of<T: Scalar>(raw: &RawTensor<'_>) -> Result<Tensor<T>> {
    let size = T::DTYPE.size();
    Tensor::new(raw.shape.clone(), raw.data.chunks_exact(size).map(T::read_le).collect())
}
