//! On-disk tensors: one JSON header line followed by a raw little-endian
//! `f32` payload. Used for condition files (`.cond`), latents, attention
//! maps and, in container form, checkpoints.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TENSOR_FORMAT: &str = "cadenza.tensor";
pub const CONTAINER_FORMAT: &str = "cadenza.container";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE: &str = "f32le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorHeader {
    format: String,
    version: u32,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame_rate: Option<f64>,
    shape: Vec<usize>,
    dtype: String,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    meta: serde_json::Map<String, serde_json::Value>,
}

/// A single tensor with its kind tag (melody, dynamics, rhythm, latent,
/// attention, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub kind: String,
    pub frame_rate: Option<f64>,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub meta: serde_json::Map<String, serde_json::Value>,
}

impl TensorFile {
    pub fn new(kind: &str, frame_rate: Option<f64>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidDimension(format!(
                "shape {shape:?} holds {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            kind: kind.to_string(),
            frame_rate,
            shape,
            data,
            meta: Default::default(),
        })
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.meta.insert(key.to_string(), value.into());
        self
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = TensorHeader {
            format: TENSOR_FORMAT.into(),
            version: FORMAT_VERSION,
            kind: self.kind.clone(),
            frame_rate: self.frame_rate,
            shape: self.shape.clone(),
            dtype: DTYPE.into(),
            meta: self.meta.clone(),
        };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        out.reserve(self.data.len() * 4);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut reader = BufReader::new(bytes);
        let header: TensorHeader = read_header(&mut reader)?;
        if header.format != TENSOR_FORMAT {
            return Err(Error::parse(format!("not a tensor file (format {:?})", header.format)));
        }
        check_version_dtype(header.version, &header.dtype)?;
        let n: usize = header.shape.iter().product();
        let data = read_f32s(&mut reader, n)?;
        let mut rest = Vec::new();
        reader.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::parse(format!("{} trailing bytes after payload", rest.len())));
        }
        Ok(Self {
            kind: header.kind,
            frame_rate: header.frame_rate,
            shape: header.shape,
            data,
            meta: header.meta,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::NotFound(path.to_path_buf()));
        }
        Self::from_bytes(&fs::read(path)?)
    }

    /// Checks kind and rank, returning `(rows, cols)`.
    pub fn expect_matrix(&self, kind: &str) -> Result<(usize, usize)> {
        if self.kind != kind {
            return Err(Error::parse(format!("expected a {kind} tensor, found {}", self.kind)));
        }
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::parse(format!("expected a matrix, found shape {other:?}"))),
        }
    }
}

fn read_header<T: for<'de> Deserialize<'de>, R: BufRead>(reader: &mut R) -> Result<T> {
    let mut line = Vec::new();
    reader.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(Error::parse("missing header line"));
    }
    serde_json::from_slice(&line).map_err(|e| Error::parse(format!("bad header: {e}")))
}

fn check_version_dtype(version: u32, dtype: &str) -> Result<()> {
    if version != FORMAT_VERSION {
        return Err(Error::parse(format!("unsupported format version {version}")));
    }
    if dtype != DTYPE {
        return Err(Error::parse(format!("unsupported dtype {dtype}")));
    }
    Ok(())
}

fn read_f32s<R: Read>(reader: &mut R, n: usize) -> Result<Vec<f32>> {
    let mut raw = vec![0u8; n * 4];
    reader
        .read_exact(&mut raw)
        .map_err(|_| Error::parse(format!("payload shorter than {n} values")))?;
    Ok(raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ContainerHeader {
    format: String,
    version: u32,
    dtype: String,
    kind: String,
    #[serde(default)]
    meta: serde_json::Value,
    tensors: Vec<Entry>,
}

/// Named tensors plus arbitrary JSON metadata, in the same header+payload
/// layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl Container {
    pub fn new(kind: &str, meta: serde_json::Value) -> Self {
        Self {
            kind: kind.into(),
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) {
        self.tensors.push((name.into(), shape, data));
    }

    pub fn get(&self, name: &str) -> Option<(&[usize], &[f32])> {
        self.tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, s, d)| (s.as_slice(), d.as_slice()))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, shape, data) in &self.tensors {
            if shape.iter().product::<usize>() != data.len() {
                return Err(Error::InvalidDimension(format!("tensor {name}: shape {shape:?} vs {} values", data.len())));
            }
            entries.push(Entry {
                name: name.clone(),
                shape: shape.clone(),
                offset,
            });
            offset += data.len();
        }
        let header = ContainerHeader {
            format: CONTAINER_FORMAT.into(),
            version: FORMAT_VERSION,
            dtype: DTYPE.into(),
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            tensors: entries,
        };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        for (_, _, data) in &self.tensors {
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut reader = BufReader::new(bytes);
        let header: ContainerHeader = read_header(&mut reader)?;
        if header.format != CONTAINER_FORMAT {
            return Err(Error::parse(format!("not a container (format {:?})", header.format)));
        }
        check_version_dtype(header.version, &header.dtype)?;
        let total: usize = header.tensors.iter().map(|e| e.shape.iter().product::<usize>()).sum();
        let flat = read_f32s(&mut reader, total)?;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let data = flat
                .get(e.offset..e.offset + n)
                .ok_or_else(|| Error::parse(format!("tensor {} out of bounds", e.name)))?
                .to_vec();
            tensors.push((e.name, e.shape, data));
        }
        Ok(Self {
            kind: header.kind,
            meta: header.meta,
            tensors,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::NotFound(path.to_path_buf()));
        }
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
