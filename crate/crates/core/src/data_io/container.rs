//! `EVT1` tensor container.
//!
//! Layout: the five bytes `EVT1\n`, one JSON header line
//! `{"dtype":"f32"|"u8","shape":[d0,d1,...],"order":"row-major"}\n`, then the raw
//! little-endian payload of exactly `prod(shape)` elements.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"EVT1\n";
const MAX_HEADER_BYTES: u64 = 64 * 1024;

#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    F32 { shape: Vec<usize>, data: Vec<f32> },
    U8 { shape: Vec<usize>, data: Vec<u8> },
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    shape: Vec<usize>,
    order: String,
}

impl Tensor {
    pub fn dtype(&self) -> &'static str {
        match self {
            Tensor::F32 { .. } => "f32",
            Tensor::U8 { .. } => "u8",
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            Tensor::F32 { shape, .. } | Tensor::U8 { shape, .. } => shape,
        }
    }

    fn len(&self) -> usize {
        match self {
            Tensor::F32 { data, .. } => data.len(),
            Tensor::U8 { data, .. } => data.len(),
        }
    }
}

fn element_count(shape: &[usize]) -> Result<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::ShapeOverflow(shape.to_vec()))
}

pub fn write_tensor<W: Write>(tensor: &Tensor, mut out: W) -> Result<()> {
    let count = element_count(tensor.shape())?;
    if count != tensor.len() {
        return Err(Error::ShapeMismatch(format!(
            "shape {:?} holds {count} elements, data has {}",
            tensor.shape(),
            tensor.len()
        )));
    }
    let header = Header {
        dtype: tensor.dtype().to_string(),
        shape: tensor.shape().to_vec(),
        order: "row-major".to_string(),
    };
    out.write_all(MAGIC)?;
    serde_json::to_writer(&mut out, &header).map_err(|e| Error::HeaderParse(e.to_string()))?;
    out.write_all(b"\n")?;
    match tensor {
        Tensor::F32 { data, .. } => {
            for v in data {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Tensor::U8 { data, .. } => out.write_all(data)?,
    }
    out.flush()?;
    Ok(())
}

pub fn read_tensor<R: BufRead>(mut input: R) -> Result<Tensor> {
    let mut magic = [0u8; 5];
    let mut got = 0;
    while got < magic.len() {
        let n = input.read(&mut magic[got..])?;
        if n == 0 {
            return Err(Error::BadMagic);
        }
        got += n;
    }
    if &magic != MAGIC {
        return Err(Error::BadMagic);
    }
    let mut line = Vec::new();
    (&mut input).take(MAX_HEADER_BYTES).read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(Error::HeaderParse("header line is not terminated".into()));
    }
    line.pop();
    let header: Header =
        serde_json::from_slice(&line).map_err(|e| Error::HeaderParse(e.to_string()))?;
    if header.order != "row-major" {
        return Err(Error::HeaderParse(format!("unsupported order '{}'", header.order)));
    }
    let elem_size = match header.dtype.as_str() {
        "f32" => 4,
        "u8" => 1,
        other => return Err(Error::HeaderParse(format!("unknown dtype tag '{other}'"))),
    };
    let count = element_count(&header.shape)?;
    let bytes = count
        .checked_mul(elem_size)
        .ok_or_else(|| Error::ShapeOverflow(header.shape.clone()))?;
    let mut payload = Vec::new();
    (&mut input).take(bytes as u64).read_to_end(&mut payload)?;
    if payload.len() != bytes {
        return Err(Error::HeaderParse(format!(
            "payload truncated: expected {bytes} bytes, found {}",
            payload.len()
        )));
    }
    let mut extra = [0u8; 1];
    if input.read(&mut extra)? != 0 {
        return Err(Error::HeaderParse("trailing bytes after payload".into()));
    }
    Ok(match elem_size {
        4 => Tensor::F32 {
            shape: header.shape,
            data: payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        },
        _ => Tensor::U8 {
            shape: header.shape,
            data: payload,
        },
    })
}

/// Writes through a temporary file in the destination directory and renames it
/// into place, so a failed write never leaves a partial file behind.
pub fn write_atomic<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<&mut File>) -> Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        write(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn save_tensor(tensor: &Tensor, path: &Path) -> Result<()> {
    write_atomic(path, |w| write_tensor(tensor, w))
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    read_tensor(BufReader::new(File::open(path)?))
}
