//! Semi-supervised training.
//!
//! Even iterations draw a labeled image and minimize [`loss1`] between the fused
//! outputs of its transformed copies and the ground truth. Odd iterations draw an
//! unlabeled image and minimize [`loss2`] across the fused outputs of the original
//! and its transformed copies. The backbone and the prototype bank are updated by
//! plain gradient descent with separate learning rates.

mod loss;
mod transform;

pub use loss::{loss1, loss2, one_hot, MSE_WEIGHT};
pub use transform::{apply_transform, Alignment, TransformKind, TransformSpec};

use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::{BackboneParams, BackboneShape};
use crate::belief::{argmax, Frame};
use crate::data_io::LabeledVolume;
use crate::enn::kmeans_init;
use crate::error::{Error, Result};
use crate::maps::{LabelMap, PixelMap, ProbabilityMap};
use crate::model::Model;

/// Which objectives the trainer alternates between.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// loss1 on even iterations, loss2 on odd ones. Without unlabeled images every
    /// iteration is supervised.
    Alternating,
    /// loss1 on even iterations; odd iterations perform no update. Gives the same
    /// supervised steps as `Alternating`, without the consistency term.
    LabeledOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub labeled_fraction: f64,
    pub epochs: usize,
    pub iterations_per_epoch: usize,
    pub lr_backbone: f64,
    pub lr_enn: f64,
    pub transforms: Vec<TransformKind>,
    pub schedule: Schedule,
    pub prototypes: usize,
    pub hidden: Vec<usize>,
    pub patch_radius: usize,
    /// Tap-feature pixels sampled for prototype initialization.
    pub warmup_pixels: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            labeled_fraction: 0.5,
            epochs: 20,
            iterations_per_epoch: 100,
            lr_backbone: 0.001,
            lr_enn: 0.01,
            transforms: vec![
                TransformKind::GaussianNoise { sigma: 0.1 },
                TransformKind::HorizontalFlip,
            ],
            schedule: Schedule::Alternating,
            prototypes: 8,
            hidden: vec![32, 16],
            patch_radius: 1,
            warmup_pixels: 4096,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Fully supervised training: every image labeled, no perturbation.
    pub fn supervised(self) -> Self {
        Self {
            labeled_fraction: 1.0,
            transforms: vec![TransformKind::GaussianNoise { sigma: 0.0 }],
            ..self
        }
    }

    pub fn total_iterations(&self) -> usize {
        self.epochs * self.iterations_per_epoch
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "labeled fraction must be in (0, 1], got {}",
                self.labeled_fraction
            )));
        }
        if !(self.lr_backbone > 0.0 && self.lr_enn > 0.0) {
            return Err(Error::InvalidConfig("learning rates must be positive".into()));
        }
        if self.transforms.is_empty() {
            return Err(Error::InvalidConfig("at least one transform is required".into()));
        }
        for t in &self.transforms {
            t.validate()?;
        }
        if self.prototypes == 0 || self.warmup_pixels < self.prototypes {
            return Err(Error::InvalidConfig("need prototypes <= warm-up pixels".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Loss1,
    Loss2,
    Skip,
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Loss1 => "loss1",
            Objective::Loss2 => "loss2",
            Objective::Skip => "skip",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: Objective,
    pub loss: f64,
    pub lr_backbone: f64,
    pub lr_enn: f64,
}

impl IterationRecord {
    pub fn parity(&self) -> &'static str {
        if self.iteration.is_multiple_of(2) {
            "even"
        } else {
            "odd"
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss1: Option<f64>,
    pub mean_loss2: Option<f64>,
    /// Pixel accuracy of the fused segmentation on the labeled images drawn this epoch.
    pub labeled_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub iterations: Vec<IterationRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    /// Writes `iteration,parity,objective,loss,lr_backbone,lr_enn` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "parity", "objective", "loss", "lr_backbone", "lr_enn"])?;
        for r in &self.iterations {
            w.write_record([
                r.iteration.to_string(),
                r.parity().to_string(),
                r.objective.to_string(),
                r.loss.to_string(),
                r.lr_backbone.to_string(),
                r.lr_enn.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Hex SHA-256 of the CSV rendering.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_csv_string().as_bytes()))
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.iterations
            .iter()
            .rev()
            .find(|r| r.objective != Objective::Skip)
            .map(|r| r.loss)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: TrainLog,
    pub labeled_cases: Vec<String>,
    pub unlabeled_cases: Vec<String>,
}

struct Case {
    id: String,
    image: PixelMap,
    labels: LabelMap,
    target: ProbabilityMap,
}

/// Deterministic labeled/unlabeled split of `n` cases.
pub fn split_indices(n: usize, labeled_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let labeled = ((n as f64 * labeled_fraction).ceil() as usize).min(n);
    let unlabeled = order.split_off(labeled);
    (order, unlabeled)
}

/// Backbone with seeded weights and a prototype bank fitted by k-means to tap
/// features sampled from `images`.
pub fn initialize_model(
    images: &[&PixelMap],
    frame: &Frame,
    config: &TrainConfig,
) -> Result<Model> {
    let channels = images.first().ok_or(Error::NoLabeledData)?.channels();
    let shape = BackboneShape {
        patch_radius: config.patch_radius,
        input_channels: channels,
        hidden: config.hidden.clone(),
        classes: frame.len(),
    };
    let backbone = BackboneParams::init(shape, config.seed.wrapping_add(1))?;
    let placeholder = crate::enn::PrototypeBank::from_centers(1, frame.len(), vec![0.0])?;
    let mut model = Model {
        frame: frame.clone(),
        backbone,
        bank: placeholder,
    };
    let mut pool = Vec::new();
    let mut dim = 0;
    for image in images {
        let tap = model.tap_features(image)?;
        dim = tap.channels();
        pool.extend(tap.rows().map(|r| r.to_vec()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
    pool.shuffle(&mut rng);
    pool.truncate(config.warmup_pixels);
    let flat: Vec<f64> = pool.into_iter().flatten().collect();
    model.bank = kmeans_init(
        &flat,
        dim,
        config.prototypes,
        frame.len(),
        config.seed.wrapping_add(3),
    )?;
    model.validate()?;
    Ok(model)
}

struct StepResult {
    loss: f64,
    correct: usize,
    counted: usize,
}

fn supervised_step(
    model: &mut Model,
    case: &Case,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<StepResult> {
    let mut passes = Vec::new();
    let mut outputs = Vec::new();
    for &kind in &config.transforms {
        let spec = TransformSpec {
            kind,
            seed: rng.next_u64(),
        };
        let (image, align) = apply_transform(&case.image, &spec)?;
        let pass = model.forward_train(&image)?;
        outputs.push(align.apply(pass.fused()));
        passes.push((pass, align));
    }
    let (loss, grads) = loss1(&outputs, &case.target)?;
    let frame = &model.frame;
    let mut correct = 0;
    for out in &outputs {
        correct += out
            .rows()
            .zip(case.labels.data())
            .filter(|(p, &l)| frame.label(argmax(p)) == l)
            .count();
    }
    let counted = outputs.len() * case.labels.data().len();
    apply_step(model, &passes, &grads, config)?;
    Ok(StepResult {
        loss,
        correct,
        counted,
    })
}

fn consistency_step(
    model: &mut Model,
    case: &Case,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let base = model.forward_train(&case.image)?;
    let mut outputs = vec![base.fused().clone()];
    let mut passes = vec![(base, Alignment::Identity)];
    for &kind in &config.transforms {
        let spec = TransformSpec {
            kind,
            seed: rng.next_u64(),
        };
        let (image, align) = apply_transform(&case.image, &spec)?;
        let pass = model.forward_train(&image)?;
        outputs.push(align.apply(pass.fused()));
        passes.push((pass, align));
    }
    let (loss, grads) = loss2(&outputs)?;
    apply_step(model, &passes, &grads, config)?;
    Ok(loss)
}

fn apply_step(
    model: &mut Model,
    passes: &[(crate::model::TrainingPass, Alignment)],
    grads: &[ProbabilityMap],
    config: &TrainConfig,
) -> Result<()> {
    let mut total: Option<(crate::backbone::BackboneGrads, crate::enn::BankGradients)> = None;
    for ((pass, align), g) in passes.iter().zip(grads) {
        let (gb, ge) = model.backward_train(pass, &align.apply(g))?;
        match total.as_mut() {
            Some((tb, te)) => {
                tb.add_assign(&gb);
                te.add_assign(&ge);
            }
            None => total = Some((gb, ge)),
        }
    }
    if let Some((gb, ge)) = total {
        model.backbone.apply_gradients(&gb, config.lr_backbone);
        model.bank.apply_gradients(&ge, config.lr_enn);
    }
    Ok(())
}

/// Trains a model on preprocessed volumes.
pub fn train(dataset: &[LabeledVolume], frame: &Frame, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::NoLabeledData);
    }
    let cases = dataset
        .iter()
        .map(|v| {
            Ok(Case {
                id: v.case_id.clone(),
                image: v.image_map(),
                target: one_hot(&v.labels, frame)?,
                labels: v.labels.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (labeled, unlabeled) = split_indices(cases.len(), config.labeled_fraction, config.seed);
    if labeled.is_empty() {
        return Err(Error::NoLabeledData);
    }
    let warmup: Vec<&PixelMap> = labeled.iter().map(|&i| &cases[i].image).collect();
    let mut model = initialize_model(&warmup, frame, config)?;
    log::info!(
        "training on {} labeled / {} unlabeled cases for {} iterations",
        labeled.len(),
        unlabeled.len(),
        config.total_iterations()
    );

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(4));
    let mut log = TrainLog::default();
    for epoch in 0..config.epochs {
        let (mut sum1, mut n1, mut sum2, mut n2) = (0.0, 0usize, 0.0, 0usize);
        let (mut correct, mut counted) = (0usize, 0usize);
        for step in 0..config.iterations_per_epoch {
            let iteration = epoch * config.iterations_per_epoch + step;
            let even = iteration.is_multiple_of(2);
            let objective = match config.schedule {
                _ if even => Objective::Loss1,
                Schedule::Alternating if unlabeled.is_empty() => Objective::Loss1,
                Schedule::Alternating => Objective::Loss2,
                Schedule::LabeledOnly => Objective::Skip,
            };
            let loss = match objective {
                Objective::Loss1 => {
                    let case = &cases[labeled[rng.random_range(0..labeled.len())]];
                    let r = supervised_step(&mut model, case, config, &mut rng)?;
                    correct += r.correct;
                    counted += r.counted;
                    sum1 += r.loss;
                    n1 += 1;
                    r.loss
                }
                Objective::Loss2 => {
                    let case = &cases[unlabeled[rng.random_range(0..unlabeled.len())]];
                    let l = consistency_step(&mut model, case, config, &mut rng)?;
                    sum2 += l;
                    n2 += 1;
                    l
                }
                Objective::Skip => 0.0,
            };
            if !loss.is_finite() {
                return Err(Error::Divergence { iteration, loss });
            }
            log.iterations.push(IterationRecord {
                iteration,
                objective,
                loss,
                lr_backbone: config.lr_backbone,
                lr_enn: config.lr_enn,
            });
        }
        let mean = |s: f64, n: usize| (n > 0).then(|| s / n as f64);
        let record = EpochRecord {
            epoch,
            mean_loss1: mean(sum1, n1),
            mean_loss2: mean(sum2, n2),
            labeled_accuracy: (counted > 0).then(|| correct as f64 / counted as f64),
        };
        log::info!("epoch {epoch}: {record:?}");
        log.epochs.push(record);
    }
    Ok(TrainOutcome {
        model,
        log,
        labeled_cases: labeled.iter().map(|&i| cases[i].id.clone()).collect(),
        unlabeled_cases: unlabeled.iter().map(|&i| cases[i].id.clone()).collect(),
    })
}
