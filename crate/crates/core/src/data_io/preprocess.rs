//! Per-modality z-scoring over the brain mask, then center cropping.

use super::LabeledVolume;
use crate::error::{Error, Result};
use crate::maps::LabelMap;

/// Channels with a standard deviation below this are zeroed.
pub const MIN_STD: f64 = 1e-8;

/// Top-left corner of a centered `crop_h x crop_w` window.
pub fn center_crop_offset(
    height: usize,
    width: usize,
    crop_h: usize,
    crop_w: usize,
) -> Result<(usize, usize)> {
    if crop_h > height || crop_w > width {
        return Err(Error::CropLargerThanImage {
            crop_h,
            crop_w,
            height,
            width,
        });
    }
    Ok(((height - crop_h) / 2, (width - crop_w) / 2))
}

/// Normalizes each modality to zero mean and unit variance over its nonzero
/// pixels (the brain mask), leaving background pixels at zero, then crops the
/// center `crop` window when one is given.
pub fn preprocess(volume: &LabeledVolume, crop: Option<(usize, usize)>) -> Result<LabeledVolume> {
    let (h, w, c) = (volume.height, volume.width, volume.channels);
    let (crop_h, crop_w) = crop.unwrap_or((h, w));
    let (oy, ox) = center_crop_offset(h, w, crop_h, crop_w)?;

    let mut normalized: Vec<f64> = volume.image.iter().map(|&v| f64::from(v)).collect();
    for ch in 0..c {
        let values: Vec<f64> = normalized
            .iter()
            .skip(ch)
            .step_by(c)
            .copied()
            .filter(|&v| v != 0.0)
            .collect();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n.max(1.0);
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n.max(1.0);
        let std = var.sqrt();
        let degenerate = values.is_empty() || std < MIN_STD;
        if degenerate {
            log::warn!(
                "case {}: modality {ch} has std {std:.3e} over its mask, channel zeroed",
                volume.case_id
            );
        }
        for v in normalized.iter_mut().skip(ch).step_by(c) {
            *v = if degenerate || *v == 0.0 {
                0.0
            } else {
                (*v - mean) / std
            };
        }
    }

    let mut image = Vec::with_capacity(crop_h * crop_w * c);
    let mut labels = Vec::with_capacity(crop_h * crop_w);
    for y in oy..oy + crop_h {
        let start = (y * w + ox) * c;
        image.extend(normalized[start..start + crop_w * c].iter().map(|&v| v as f32));
        labels.extend_from_slice(&volume.labels.data()[y * w + ox..y * w + ox + crop_w]);
    }
    Ok(LabeledVolume {
        case_id: volume.case_id.clone(),
        height: crop_h,
        width: crop_w,
        channels: c,
        image,
        labels: LabelMap::new(crop_h, crop_w, labels)?,
    })
}
