//! Dense query-embedding files.
//!
//! Layout of `embeddings.bin`, all integers little-endian:
//!
//! ```text
//! "RRE1"            4 bytes
//! header_len        u32
//! header            header_len bytes of UTF-8 JSON, right-padded with spaces
//!                   so the float block starts on a 64-byte boundary
//! block             count * d_enc floats, row-major, f32 or f64 LE
//! ```
//!
//! Row order is given by `manifest.txt`, one query id per line.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const MAGIC: &[u8; 4] = b"RRE1";
pub const ALIGN: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingHeader {
    pub encoder_name: String,
    pub d_enc: usize,
    pub count: usize,
    pub dtype: Dtype,
    /// Provenance keys such as pooling or encoder revision.
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    pub header: EmbeddingHeader,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Tensor,
}

fn index_ids(ids: &[String]) -> Result<HashMap<String, usize>> {
    let mut index = HashMap::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if id.is_empty() {
            return Err(Error::Format(format!("manifest line {}: empty id", i + 1)));
        }
        if index.insert(id.clone(), i).is_some() {
            return Err(Error::Format(format!("manifest: duplicate id {id:?}")));
        }
    }
    Ok(index)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    let ids: Vec<String> = text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect();
    index_ids(&ids)?;
    Ok(ids)
}

pub fn write_manifest(path: impl AsRef<Path>, ids: &[String]) -> Result<()> {
    let mut text = ids.join("\n");
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

impl EmbeddingTable {
    pub fn new(encoder_name: impl Into<String>, ids: Vec<String>, data: Tensor) -> Result<Self> {
        if ids.len() != data.rows() {
            return Err(Error::Format(format!(
                "{} ids for {} embedding rows",
                ids.len(),
                data.rows()
            )));
        }
        let index = index_ids(&ids)?;
        Ok(Self {
            header: EmbeddingHeader {
                encoder_name: encoder_name.into(),
                d_enc: data.cols(),
                count: data.rows(),
                dtype: Dtype::F64,
                extra: BTreeMap::new(),
            },
            ids,
            index,
            data,
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.data.row(i)
    }

    pub fn row_by_id(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.data.row(i))
    }

    /// Serializes with the dtype stored in the header. f32 output rounds.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_string(&self.header)?;
        let mut hlen = header.len();
        let rem = (MAGIC.len() + 4 + hlen) % ALIGN;
        if rem != 0 {
            hlen += ALIGN - rem;
        }
        let width = self.header.dtype.width();
        let mut out = Vec::with_capacity(8 + hlen + self.data.len() * width);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(hlen as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.resize(8 + hlen, b' ');
        for &v in self.data.data() {
            match self.header.dtype {
                Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
        Ok(out)
    }

    /// Strict parse: bad magic, misaligned header, short or overlong blocks
    /// and any disagreement with the manifest are all format errors.
    pub fn from_bytes(bytes: &[u8], ids: Vec<String>) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(Error::Format("not an RRE1 embeddings file".into()));
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let start = 8usize
            .checked_add(hlen)
            .filter(|&s| s <= bytes.len())
            .ok_or_else(|| Error::Format("header runs past end of file".into()))?;
        if start % ALIGN != 0 {
            return Err(Error::Format(format!(
                "float block offset {start} is not a multiple of {ALIGN}"
            )));
        }
        let text = std::str::from_utf8(&bytes[8..start])
            .map_err(|_| Error::Format("header is not UTF-8".into()))?;
        let header: EmbeddingHeader = serde_json::from_str(text.trim_end_matches(' '))
            .map_err(|e| Error::Format(format!("bad header: {e}")))?;
        if header.d_enc == 0 {
            return Err(Error::Format("header d_enc is 0".into()));
        }
        if header.count != ids.len() {
            return Err(Error::Format(format!(
                "header count {} but manifest lists {} ids",
                header.count,
                ids.len()
            )));
        }
        let width = header.dtype.width();
        let expected = header.count * header.d_enc * width;
        let block = &bytes[start..];
        if block.len() < expected {
            return Err(Error::Format(format!(
                "truncated float block: expected {expected} bytes, found {}",
                block.len()
            )));
        }
        if block.len() > expected {
            return Err(Error::Format(format!(
                "{} trailing bytes after float block",
                block.len() - expected
            )));
        }
        let data: Vec<f64> = match header.dtype {
            Dtype::F32 => block
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
            Dtype::F64 => block
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        };
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite value in float block".into()));
        }
        let index = index_ids(&ids)?;
        let data = Tensor::new(header.count, header.d_enc, data)?;
        Ok(Self {
            header,
            ids,
            index,
            data,
        })
    }

    pub fn load(path: impl AsRef<Path>, manifest: impl AsRef<Path>) -> Result<Self> {
        let ids = read_manifest(manifest)?;
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes, ids)
    }

    pub fn save(&self, path: impl AsRef<Path>, manifest: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        write_manifest(manifest, &self.ids)
    }
}
