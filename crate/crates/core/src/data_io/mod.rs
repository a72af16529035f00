//! Synthetic data, preprocessing and on-disk formats.

mod container;
mod phantom;
mod pgm;
mod preprocess;

pub use container::{
    load_tensor, read_tensor, save_tensor, write_atomic, write_tensor, Tensor, MAGIC,
};
pub use phantom::{generate_phantom, PhantomConfig};
pub use pgm::{encode_pgm, write_pgm};
pub use preprocess::{center_crop_offset, preprocess};

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::maps::{LabelMap, PixelMap};

/// Multi-modality image with its label map.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVolume {
    pub case_id: String,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// `height x width x channels`, row-major.
    pub image: Vec<f32>,
    pub labels: LabelMap,
}

impl LabeledVolume {
    pub fn new(case_id: impl Into<String>, image: PixelMap, labels: LabelMap) -> Result<Self> {
        if image.height() != labels.height() || image.width() != labels.width() {
            return Err(Error::ShapeMismatch("image and labels differ in size".into()));
        }
        if image.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonfiniteInput);
        }
        Ok(Self {
            case_id: case_id.into(),
            height: image.height(),
            width: image.width(),
            channels: image.channels(),
            image: image.data().iter().map(|&v| v as f32).collect(),
            labels,
        })
    }

    pub fn image_map(&self) -> PixelMap {
        PixelMap::new(
            self.height,
            self.width,
            self.channels,
            self.image.iter().map(|&v| f64::from(v)).collect(),
        )
        .expect("volume shape is consistent")
    }

    pub fn image_tensor(&self) -> Tensor {
        Tensor::F32 {
            shape: vec![self.height, self.width, self.channels],
            data: self.image.clone(),
        }
    }

    pub fn label_tensor(&self) -> Tensor {
        Tensor::U8 {
            shape: vec![self.height, self.width],
            data: self.labels.data().to_vec(),
        }
    }
}

/// Path of the label file that accompanies an image file: `case_3.evt` -> `case_3_labels.evt`.
pub fn labels_path(image_path: &Path) -> PathBuf {
    let stem = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    image_path.with_file_name(format!("{stem}_labels.evt"))
}

/// Writes the image to `path` and the labels to [`labels_path`].
pub fn save_volume(volume: &LabeledVolume, path: &Path) -> Result<()> {
    save_tensor(&volume.image_tensor(), path)?;
    save_tensor(&volume.label_tensor(), &labels_path(path))
}

fn load_image_parts(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    match load_tensor(path)? {
        Tensor::F32 { shape, data } if shape.len() == 3 => Ok((shape, data)),
        other => Err(Error::HeaderParse(format!(
            "expected a 3-d f32 image, got {} with shape {:?}",
            other.dtype(),
            other.shape()
        ))),
    }
}

/// Reads an `H x W x C` f32 image tensor.
pub fn load_image(path: &Path) -> Result<PixelMap> {
    let (shape, data) = load_image_parts(path)?;
    PixelMap::new(shape[0], shape[1], shape[2], data.into_iter().map(f64::from).collect())
}

/// Reads an `H x W` u8 label tensor.
pub fn load_labels(path: &Path) -> Result<LabelMap> {
    match load_tensor(path)? {
        Tensor::U8 { shape, data } if shape.len() == 2 => LabelMap::new(shape[0], shape[1], data),
        other => Err(Error::HeaderParse(format!(
            "expected a 2-d u8 label map, got {} with shape {:?}",
            other.dtype(),
            other.shape()
        ))),
    }
}

/// Reads an image and its label file. The case id is the image file stem.
pub fn load_volume(path: &Path) -> Result<LabeledVolume> {
    let (shape, image) = load_image_parts(path)?;
    let labels = load_labels(&labels_path(path))?;
    if labels.height() != shape[0] || labels.width() != shape[1] {
        return Err(Error::ShapeMismatch(format!(
            "image {:?} vs labels {}x{}",
            shape,
            labels.height(),
            labels.width()
        )));
    }
    if image.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonfiniteInput);
    }
    let case_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(LabeledVolume {
        case_id,
        height: shape[0],
        width: shape[1],
        channels: shape[2],
        image,
        labels,
    })
}

/// Image files `case_*.evt` in `dir`, ordered by case number.
pub fn list_cases(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            name.starts_with("case_") && name.ends_with(".evt") && !name.ends_with("_labels.evt")
        })
        .collect();
    paths.sort_by_key(|p| case_sort_key(p));
    Ok(paths)
}

/// Loads every case in `dir` with its labels, ordered by case number.
pub fn load_dataset(dir: &Path) -> Result<Vec<LabeledVolume>> {
    list_cases(dir)?.iter().map(|p| load_volume(p)).collect()
}

fn case_sort_key(path: &Path) -> (u64, String) {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let number = stem
        .strip_prefix("case_")
        .and_then(|n| n.parse().ok())
        .unwrap_or(u64::MAX);
    (number, stem)
}
