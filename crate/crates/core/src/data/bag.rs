//! SQBG bag file format.
//!
//! ```text
//! "SQBG" | u32 version=1 | u32 M | u32 d | u32 label
//! M·d f32 features, row-major
//! M × (i32 x, i32 y) tile coordinates
//! u32 id length | UTF-8 id
//! u32 CRC32 of everything above
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use crate::binio;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

const MAGIC: [u8; 4] = *b"SQBG";
const VERSION: u32 = 1;

/// One bag: `M` instance feature vectors with their tile-grid coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct BagRecord {
    pub features: Tensor<f32>,
    pub coords: Vec<(i32, i32)>,
    pub label: usize,
    pub id: String,
}

impl BagRecord {
    pub fn new(features: Tensor<f32>, coords: Vec<(i32, i32)>, label: usize, id: impl Into<String>) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::Dimension {
                op: "bag features",
                lhs: features.shape().to_vec(),
                rhs: vec![],
            });
        }
        if coords.len() != features.rows() {
            return Err(Error::Dimension {
                op: "bag coords",
                lhs: features.shape().to_vec(),
                rhs: vec![coords.len(), 2],
            });
        }
        Ok(Self {
            features,
            coords,
            label,
            id: id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (m, d) = (self.len(), self.dim());
        let label = u32::try_from(self.label)
            .map_err(|_| Error::Config(format!("label {} does not fit u32", self.label)))?;
        let id_len = u32::try_from(self.id.len())
            .map_err(|_| Error::Config("bag id too long".into()))?;
        let mut out = Vec::with_capacity(24 + 4 * m * d + 8 * m + self.id.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(m as u32).to_le_bytes());
        out.extend_from_slice(&(d as u32).to_le_bytes());
        out.extend_from_slice(&label.to_le_bytes());
        for v in self.features.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &(x, y) in &self.coords {
            out.extend_from_slice(&x.to_le_bytes());
            out.extend_from_slice(&y.to_le_bytes());
        }
        out.extend_from_slice(&id_len.to_le_bytes());
        out.extend_from_slice(self.id.as_bytes());
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = binio::open(bytes, MAGIC, VERSION)?;
        let m = cur.u32("M")? as usize;
        let d = cur.u32("d")? as usize;
        let label = cur.u32("label")? as usize;
        if m == 0 {
            return Err(Error::EmptyBag);
        }
        if d == 0 {
            return Err(Error::Malformed("feature dimension is zero".into()));
        }
        // Fixed-size payload plus an empty id and the CRC.
        let need = m
            .checked_mul(d)
            .and_then(|md| md.checked_mul(4))
            .and_then(|f| f.checked_add(8 * m + 8))
            .ok_or_else(|| Error::Malformed(format!("bag of {m}×{d} is too large")))?;
        if cur.remaining() < need {
            return Err(Error::Truncated(format!(
                "declared M={m}, d={d} needs at least {need} more bytes, {} left",
                cur.remaining()
            )));
        }
        let raw = cur.take(4 * m * d, "features")?;
        let features = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let mut coords = Vec::with_capacity(m);
        for _ in 0..m {
            let x = cur.i32("coords")?;
            let y = cur.i32("coords")?;
            coords.push((x, y));
        }
        let id_len = cur.u32("id length")? as usize;
        let id = std::str::from_utf8(cur.take(id_len, "id")?)
            .map_err(|_| Error::Malformed("bag id is not UTF-8".into()))?
            .to_owned();
        binio::finish(cur)?;
        Self::new(Tensor::matrix(m, d, features)?, coords, label, id)
    }
}

pub fn bag_write(record: &BagRecord, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, record.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn bag_read(path: impl AsRef<Path>) -> Result<BagRecord> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    BagRecord::from_bytes(&bytes)
}

/// Reads only `(M, d, label)` from a bag file header.
pub fn bag_header(path: impl AsRef<Path>) -> Result<(usize, usize, usize)> {
    use std::io::Read;
    let path = path.as_ref();
    let mut head = [0u8; 20];
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    f.read_exact(&mut head)
        .map_err(|_| Error::Truncated(format!("{}: header shorter than 20 bytes", path.display())))?;
    let mut cur = binio::open(&head, MAGIC, VERSION)?;
    Ok((
        cur.u32("M")? as usize,
        cur.u32("d")? as usize,
        cur.u32("label")? as usize,
    ))
}
