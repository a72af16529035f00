//! Image perturbations used to build transformed copies of a training image.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::PixelMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformKind {
    /// Additive i.i.d. Gaussian noise with standard deviation `sigma`.
    GaussianNoise { sigma: f64 },
    HorizontalFlip,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformSpec {
    pub kind: TransformKind,
    pub seed: u64,
}

/// How an output computed on a transformed image maps back onto the original grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alignment {
    Identity,
    Mirror,
}

impl Alignment {
    /// Brings a map from the transformed grid back to the original one.
    /// Both alignments are involutions, so the same call maps gradients forward.
    pub fn apply(self, map: &PixelMap) -> PixelMap {
        match self {
            Alignment::Identity => map.clone(),
            Alignment::Mirror => map.flip_horizontal(),
        }
    }
}

impl TransformKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TransformKind::GaussianNoise { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => Err(
                Error::InvalidConfig(format!("noise sigma must be >= 0, got {sigma}")),
            ),
            _ => Ok(()),
        }
    }
}

pub fn apply_transform(image: &PixelMap, spec: &TransformSpec) -> Result<(PixelMap, Alignment)> {
    spec.kind.validate()?;
    if image.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonfiniteInput);
    }
    match spec.kind {
        TransformKind::GaussianNoise { sigma } => {
            let mut out = image.clone();
            if sigma > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                let normal = Normal::new(0.0, sigma).expect("sigma validated");
                for v in out.data_mut() {
                    *v += normal.sample(&mut rng);
                }
            }
            Ok((out, Alignment::Identity))
        }
        TransformKind::HorizontalFlip => Ok((image.flip_horizontal(), Alignment::Mirror)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image() -> PixelMap {
        PixelMap::new(2, 3, 2, (0..12).map(|v| v as f64 * 0.1).collect()).unwrap()
    }

    #[test]
    fn zero_noise_is_identity() {
        let spec = TransformSpec {
            kind: TransformKind::GaussianNoise { sigma: 0.0 },
            seed: 3,
        };
        let (out, align) = apply_transform(&image(), &spec).unwrap();
        assert_eq!(out, image());
        assert_eq!(align, Alignment::Identity);
    }

    #[test]
    fn flip_twice_restores() {
        let spec = TransformSpec {
            kind: TransformKind::HorizontalFlip,
            seed: 0,
        };
        let (once, align) = apply_transform(&image(), &spec).unwrap();
        assert_eq!(align, Alignment::Mirror);
        let (twice, _) = apply_transform(&once, &spec).unwrap();
        assert_eq!(twice, image());
        assert_eq!(align.apply(&once), image());
    }

    #[test]
    fn noise_is_seeded() {
        let spec = TransformSpec {
            kind: TransformKind::GaussianNoise { sigma: 0.1 },
            seed: 42,
        };
        let a = apply_transform(&image(), &spec).unwrap().0;
        let b = apply_transform(&image(), &spec).unwrap().0;
        assert_eq!(a, b);
        assert_ne!(a, image());
        let other = TransformSpec { seed: 43, ..spec };
        assert_ne!(apply_transform(&image(), &other).unwrap().0, a);
    }

    #[test]
    fn negative_sigma_rejected() {
        let spec = TransformSpec {
            kind: TransformKind::GaussianNoise { sigma: -1.0 },
            seed: 0,
        };
        assert!(apply_transform(&image(), &spec).is_err());
    }
}
