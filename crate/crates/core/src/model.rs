//! The full segmentation network: backbone, evidential head and fusion layer.

use crate::backbone::{extract_patch_features, BackboneGrads, BackboneOutput, BackboneParams};
use crate::belief::Frame;
use crate::enn::{enn_backward_map, enn_forward_map, BankGradients, PrototypeBank};
use crate::error::{Error, Result};
use crate::fusion::{fuse_backward_map, fuse_map, segment, FusionOutput};
use crate::maps::{ConflictMap, FeatureMap, LabelMap, MassMap, PixelMap, ProbabilityMap};

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub frame: Frame,
    pub backbone: BackboneParams,
    pub bank: PrototypeBank,
}

/// Everything the network produces for one image.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub probs: ProbabilityMap,
    pub masses: MassMap,
    pub fused: ProbabilityMap,
    pub conflict: ConflictMap,
    pub total_conflict_pixels: usize,
}

impl Prediction {
    pub fn fused_labels(&self, frame: &Frame) -> Result<LabelMap> {
        segment(&self.fused, frame)
    }

    /// Segmentation from the probabilistic head alone.
    pub fn backbone_labels(&self, frame: &Frame) -> Result<LabelMap> {
        segment(&self.probs, frame)
    }
}

/// Intermediate values of a forward pass, kept for the backward pass.
pub struct TrainingPass {
    features: FeatureMap,
    backbone: BackboneOutput,
    masses: MassMap,
    fusion: FusionOutput,
}

impl TrainingPass {
    pub fn fused(&self) -> &ProbabilityMap {
        &self.fusion.fused
    }

    pub fn conflict(&self) -> &ConflictMap {
        &self.fusion.conflict
    }
}

impl Model {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.bank.validate()?;
        if self.backbone.shape.classes != self.frame.len() || self.bank.classes != self.frame.len() {
            return Err(Error::ShapeMismatch("class count differs from frame".into()));
        }
        if self.bank.feature_dim != self.backbone.shape.tap_dim() {
            return Err(Error::DimMismatch {
                expected: self.backbone.shape.tap_dim(),
                got: self.bank.feature_dim,
            });
        }
        Ok(())
    }

    fn check_image(&self, image: &PixelMap) -> Result<()> {
        if image.channels() != self.backbone.shape.input_channels {
            return Err(Error::DimMismatch {
                expected: self.backbone.shape.input_channels,
                got: image.channels(),
            });
        }
        Ok(())
    }

    /// Tap features of the backbone for `image`.
    pub fn tap_features(&self, image: &PixelMap) -> Result<FeatureMap> {
        self.check_image(image)?;
        let features = extract_patch_features(image, self.backbone.shape.patch_radius)?;
        Ok(self.backbone.forward(&features)?.tap)
    }

    pub fn predict(&self, image: &PixelMap) -> Result<Prediction> {
        let pass = self.forward_train(image)?;
        Ok(Prediction {
            probs: pass.backbone.probs,
            masses: pass.masses,
            fused: pass.fusion.fused,
            conflict: pass.fusion.conflict,
            total_conflict_pixels: pass.fusion.total_conflict_pixels,
        })
    }

    pub fn forward_train(&self, image: &PixelMap) -> Result<TrainingPass> {
        self.check_image(image)?;
        let features = extract_patch_features(image, self.backbone.shape.patch_radius)?;
        let backbone = self.backbone.forward(&features)?;
        let masses = enn_forward_map(&backbone.tap, &self.bank)?;
        let fusion = fuse_map(&backbone.probs, &masses)?;
        Ok(TrainingPass {
            features,
            backbone,
            masses,
            fusion,
        })
    }

    /// Gradients of a loss on the fused map, propagated through both heads.
    pub fn backward_train(
        &self,
        pass: &TrainingPass,
        d_fused: &ProbabilityMap,
    ) -> Result<(BackboneGrads, BankGradients)> {
        let (d_probs, d_masses) =
            fuse_backward_map(&pass.backbone.probs, &pass.masses, &pass.fusion.fused, d_fused)?;
        let (bank_grads, d_tap) = enn_backward_map(&pass.backbone.tap, &self.bank, &d_masses)?;
        let backbone_grads = self.backbone.backward(
            &pass.features,
            &pass.backbone.cache,
            &pass.backbone.probs,
            &d_probs,
            Some(&d_tap),
        )?;
        Ok((backbone_grads, bank_grads))
    }
}
