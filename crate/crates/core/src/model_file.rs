//! `EVM1` model container.
//!
//! Same shape as the tensor container: a magic line, one JSON header line, then
//! the little-endian `f64` payload of every section listed in the header, in order.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneParams, BackboneShape, Dense};
use crate::belief::Frame;
use crate::data_io::write_atomic;
use crate::enn::PrototypeBank;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::ssl::TrainConfig;

pub const MODEL_MAGIC: &[u8; 5] = b"EVM1\n";
pub const FORMAT_VERSION: u32 = 1;
const MAX_HEADER_BYTES: u64 = 1024 * 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: Model,
    pub config: TrainConfig,
    /// SHA-256 of the training log CSV, empty for untrained models.
    pub log_digest: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Section {
    name: String,
    dtype: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    frame: Vec<u8>,
    backbone: BackboneShape,
    feature_dim: usize,
    config: TrainConfig,
    log_digest: String,
    sections: Vec<Section>,
}

fn sections_of(model: &Model) -> Vec<(Section, Vec<f64>)> {
    let mut out = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, data: Vec<f64>| {
        out.push((
            Section {
                name,
                dtype: "f64".into(),
                shape,
            },
            data,
        ))
    };
    for (i, layer) in model.backbone.layers.iter().enumerate() {
        let (r, c) = layer.weight.dim();
        push(format!("backbone.{i}.weight"), vec![r, c], layer.weight.iter().copied().collect());
        push(format!("backbone.{i}.bias"), vec![c], layer.bias.to_vec());
    }
    let bank = &model.bank;
    let n = bank.count();
    push("enn.prototypes".into(), vec![n, bank.feature_dim], bank.prototypes.clone());
    push("enn.memberships_raw".into(), vec![n, bank.classes], bank.memberships_raw.clone());
    push("enn.alpha_raw".into(), vec![n], bank.alpha_raw.clone());
    push("enn.gamma_raw".into(), vec![n], bank.gamma_raw.clone());
    out
}

pub fn write_model<W: Write>(file: &ModelFile, mut out: W) -> Result<()> {
    file.model.validate()?;
    let sections = sections_of(&file.model);
    let header = Header {
        format_version: FORMAT_VERSION,
        frame: file.model.frame.labels().to_vec(),
        backbone: file.model.backbone.shape.clone(),
        feature_dim: file.model.bank.feature_dim,
        config: file.config.clone(),
        log_digest: file.log_digest.clone(),
        sections: sections.iter().map(|(s, _)| s.clone()).collect(),
    };
    out.write_all(MODEL_MAGIC)?;
    serde_json::to_writer(&mut out, &header).map_err(|e| Error::HeaderParse(e.to_string()))?;
    out.write_all(b"\n")?;
    for (_, data) in &sections {
        for v in data {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn take_section(
    sections: &mut std::collections::HashMap<String, (Vec<usize>, Vec<f64>)>,
    name: &str,
    shape: &[usize],
) -> Result<Vec<f64>> {
    let (found, data) = sections
        .remove(name)
        .ok_or_else(|| Error::HeaderParse(format!("missing section '{name}'")))?;
    if found != shape {
        return Err(Error::ShapeMismatch(format!(
            "section '{name}' has shape {found:?}, expected {shape:?}"
        )));
    }
    Ok(data)
}

pub fn read_model<R: BufRead>(mut input: R) -> Result<ModelFile> {
    let mut magic = [0u8; 5];
    input.read_exact(&mut magic).map_err(|_| Error::BadMagic)?;
    if &magic != MODEL_MAGIC {
        return Err(Error::BadMagic);
    }
    let mut line = Vec::new();
    (&mut input).take(MAX_HEADER_BYTES).read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(Error::HeaderParse("header line is not terminated".into()));
    }
    line.pop();
    let value: serde_json::Value =
        serde_json::from_slice(&line).map_err(|e| Error::HeaderParse(e.to_string()))?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::HeaderParse("missing format_version".into()))?;
    if version != FORMAT_VERSION as u64 {
        return Err(Error::VersionMismatch {
            found: version as u32,
            expected: FORMAT_VERSION,
        });
    }
    let header: Header =
        serde_json::from_value(value).map_err(|e| Error::HeaderParse(e.to_string()))?;

    let mut sections = std::collections::HashMap::new();
    for s in &header.sections {
        if s.dtype != "f64" {
            return Err(Error::HeaderParse(format!("unknown dtype tag '{}'", s.dtype)));
        }
        let count = s
            .shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|c| c.checked_mul(8).map(|_| c))
            .ok_or_else(|| Error::ShapeOverflow(s.shape.clone()))?;
        let mut bytes = Vec::new();
        (&mut input).take(count as u64 * 8).read_to_end(&mut bytes)?;
        if bytes.len() != count * 8 {
            return Err(Error::HeaderParse(format!("section '{}' truncated", s.name)));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        sections.insert(s.name.clone(), (s.shape.clone(), data));
    }
    let mut extra = [0u8; 1];
    if input.read(&mut extra)? != 0 {
        return Err(Error::HeaderParse("trailing bytes after payload".into()));
    }

    let frame = Frame::new(header.frame)?;
    let shape = header.backbone;
    let mut layers = Vec::new();
    for (i, (r, c)) in shape.layer_dims().into_iter().enumerate() {
        let w = take_section(&mut sections, &format!("backbone.{i}.weight"), &[r, c])?;
        let b = take_section(&mut sections, &format!("backbone.{i}.bias"), &[c])?;
        layers.push(Dense {
            weight: Array2::from_shape_vec((r, c), w)
                .map_err(|e| Error::ShapeMismatch(e.to_string()))?,
            bias: Array1::from(b),
        });
    }
    let n = header
        .sections
        .iter()
        .find(|s| s.name == "enn.alpha_raw")
        .and_then(|s| s.shape.first().copied())
        .ok_or_else(|| Error::HeaderParse("missing section 'enn.alpha_raw'".into()))?;
    let classes = frame.len();
    let bank = PrototypeBank {
        feature_dim: header.feature_dim,
        classes,
        prototypes: take_section(&mut sections, "enn.prototypes", &[n, header.feature_dim])?,
        memberships_raw: take_section(&mut sections, "enn.memberships_raw", &[n, classes])?,
        alpha_raw: take_section(&mut sections, "enn.alpha_raw", &[n])?,
        gamma_raw: take_section(&mut sections, "enn.gamma_raw", &[n])?,
    };
    if let Some(name) = sections.keys().next() {
        log::warn!("ignoring unknown model section '{name}'");
    }
    let model = Model {
        frame,
        backbone: BackboneParams { shape, layers },
        bank,
    };
    model.validate()?;
    Ok(ModelFile {
        model,
        config: header.config,
        log_digest: header.log_digest,
    })
}

pub fn save_model(file: &ModelFile, path: &Path) -> Result<()> {
    write_atomic(path, |w| write_model(file, w))
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    read_model(BufReader::new(File::open(path)?))
}
