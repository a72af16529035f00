//! Synthetic multi-modality tumor phantoms.
//!
//! A phantom is an elliptical "brain" on a zero background containing three
//! concentric ellipses labeled 2 (outer), 1 and 4 (inner). Every label has its
//! own intensity per modality. The image (not the labels) is Gaussian-blurred so
//! pixels near region borders take intermediate values, then noise is added
//! inside the brain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::LabeledVolume;
use crate::error::{Error, Result};
use crate::maps::{LabelMap, PixelMap};

/// Largest axis ratio of the tumor ellipses is `sqrt(MAX_ECCENTRICITY)`.
const MAX_ECCENTRICITY: f64 = 1.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub size: (usize, usize),
    /// Brain semi-axes as fractions of the image height and width.
    pub brain_radius: f64,
    /// Radii of the label-2, label-1 and label-4 regions as fractions of the
    /// shorter image side. Must be strictly decreasing.
    pub region_radii: [f64; 3],
    /// Per modality: intensities of healthy tissue and of labels 2, 1 and 4.
    pub intensities: Vec<[f64; 4]>,
    pub blur_sigma: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            size: (160, 160),
            brain_radius: 0.45,
            region_radii: [0.22, 0.13, 0.07],
            intensities: vec![
                [1.0, 1.6, 1.3, 1.4],
                [1.0, 0.85, 0.6, 0.9],
                [1.0, 1.5, 1.7, 1.3],
                [1.0, 0.95, 0.7, 1.8],
            ],
            blur_sigma: 1.5,
            noise: 0.1,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn modalities(&self) -> usize {
        self.intensities.len()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        let [outer, middle, inner] = self.region_radii;
        if !(outer > middle && middle > inner && inner > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "region radii must be strictly nested, got {:?}",
                self.region_radii
            )));
        }
        if self.intensities.is_empty() {
            return Err(Error::InvalidConfig("at least one modality is required".into()));
        }
        if !(self.blur_sigma >= 0.0 && self.noise >= 0.0) {
            return Err(Error::InvalidConfig("blur and noise must be >= 0".into()));
        }
        let (h, w) = self.size;
        if h == 0 || w == 0 {
            return Err(Error::EmptyImage);
        }
        let short = h.min(w) as f64;
        let extent = outer * short * MAX_ECCENTRICITY.sqrt();
        let room = self.brain_radius * short - 1.0;
        if extent > room || self.brain_radius > 0.5 {
            return Err(Error::RegionsDontFit(format!(
                "tumor extent {extent:.1}px exceeds brain room {room:.1}px"
            )));
        }
        Ok(())
    }
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Separable Gaussian blur of every channel, reflect padding, kernel radius `ceil(3σ)`.
pub(crate) fn gaussian_blur(image: &PixelMap, sigma: f64) -> PixelMap {
    if sigma <= 0.0 {
        return image.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let (h, w, c) = (image.height(), image.width(), image.channels());
    let mut rows = PixelMap::zeros(h, w, c);
    for y in 0..h {
        for x in 0..w {
            let out = rows.pixel_mut(y, x);
            for (k, d) in kernel.iter().zip(-radius..=radius) {
                let src = image.pixel(y, reflect(x as isize + d, w));
                for ch in 0..c {
                    out[ch] += k * src[ch];
                }
            }
        }
    }
    let mut out = PixelMap::zeros(h, w, c);
    for y in 0..h {
        for x in 0..w {
            for (k, d) in kernel.iter().zip(-radius..=radius) {
                let yy = reflect(y as isize + d, h);
                for ch in 0..c {
                    let v = rows.pixel(yy, x)[ch];
                    out.pixel_mut(y, x)[ch] += k * v;
                }
            }
        }
    }
    out
}

pub fn generate_phantom(config: &PhantomConfig, case_id: impl Into<String>) -> Result<LabeledVolume> {
    config.validate()?;
    let (h, w) = config.size;
    let short = h.min(w) as f64;
    let [r_outer, r_middle, r_inner] = config.region_radii;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let ecc = rng.random_range(1.0 / MAX_ECCENTRICITY..=MAX_ECCENTRICITY);
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    let (cos, sin) = (angle.cos(), angle.sin());
    let (by, bx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let slack = (config.brain_radius * short - 1.0 - r_outer * short * MAX_ECCENTRICITY.sqrt()).max(0.0);
    let dist = slack * rng.random::<f64>().sqrt();
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let (cy, cx) = (by + dist * theta.sin(), bx + dist * theta.cos());

    let mut labels = Vec::with_capacity(h * w);
    let mut brain = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let ny = (y as f64 - by) / (config.brain_radius * h as f64);
            let nx = (x as f64 - bx) / (config.brain_radius * w as f64);
            brain.push(ny * ny + nx * nx <= 1.0);
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            let u = (dx * cos + dy * sin) / ecc.sqrt();
            let v = (-dx * sin + dy * cos) * ecc.sqrt();
            let rho = (u * u + v * v).sqrt() / short;
            labels.push(if rho <= r_inner {
                4
            } else if rho <= r_middle {
                1
            } else if rho <= r_outer {
                2
            } else {
                0
            });
        }
    }

    let c = config.modalities();
    let mut image = PixelMap::zeros(h, w, c);
    for (i, px) in image.data_mut().chunks_exact_mut(c).enumerate() {
        if !brain[i] {
            continue;
        }
        let column = match labels[i] {
            2 => 1,
            1 => 2,
            4 => 3,
            _ => 0,
        };
        for (ch, v) in px.iter_mut().enumerate() {
            *v = config.intensities[ch][column];
        }
    }
    let mut image = gaussian_blur(&image, config.blur_sigma);
    if config.noise > 0.0 {
        let normal = Normal::new(0.0, config.noise).expect("noise validated");
        for (i, px) in image.data_mut().chunks_exact_mut(c).enumerate() {
            if brain[i] {
                for v in px {
                    *v += normal.sample(&mut rng);
                }
            }
        }
    }
    LabeledVolume::new(case_id, image, LabelMap::new(h, w, labels)?)
}
