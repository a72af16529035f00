//! Fixed-seed phantom benchmark for the uncertainty, fusion and
//! semi-supervision comparisons.

use serde::{Deserialize, Serialize};

use crate::belief::Frame;
use crate::data_io::{generate_phantom, preprocess, LabeledVolume, PhantomConfig};
use crate::error::{Error, Result};
use crate::maps::LabelMap;
use crate::metrics::{evaluate, mean_report, BinaryMask, Region};
use crate::model::Model;
use crate::ssl::{train, Schedule, TrainConfig, TrainOutcome};

/// Pixels within Chebyshev distance `width` of a pixel with a different label.
pub fn boundary_band(labels: &LabelMap, width: usize) -> BinaryMask {
    let (h, w) = (labels.height(), labels.width());
    let mut band = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let here = labels.get(y, x);
            let (y0, y1) = (y.saturating_sub(width), (y + width).min(h - 1));
            let (x0, x1) = (x.saturating_sub(width), (x + width).min(w - 1));
            band[y * w + x] =
                (y0..=y1).any(|yy| (x0..=x1).any(|xx| labels.get(yy, xx) != here));
        }
    }
    BinaryMask {
        height: h,
        width: w,
        data: band,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub train_cases: usize,
    pub eval_cases: usize,
    pub size: usize,
    pub blur_sigma: f64,
    pub band_width: usize,
    /// Seed of the first training phantom; evaluation phantoms use a disjoint range.
    pub phantom_seed: u64,
    pub train: TrainConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            train_cases: 20,
            eval_cases: 10,
            size: 96,
            blur_sigma: 1.5,
            band_width: 2,
            phantom_seed: 0,
            train: TrainConfig {
                epochs: 20,
                iterations_per_epoch: 100,
                hidden: vec![64, 32],
                ..TrainConfig::default()
            },
        }
    }
}

impl BenchmarkConfig {
    /// Every training case labeled, identity transform.
    pub fn supervised() -> Self {
        let base = Self::default();
        Self {
            train: base.train.clone().supervised(),
            ..base
        }
    }

    /// Loss1 on the labeled half only; odd iterations are skipped.
    pub fn labeled_only() -> Self {
        let base = Self::default();
        Self {
            train: TrainConfig {
                schedule: Schedule::LabeledOnly,
                ..base.train.clone()
            },
            ..base
        }
    }
}

const EVAL_SEED_OFFSET: u64 = 1_000_000;

fn phantoms(config: &BenchmarkConfig, first_seed: u64, count: usize) -> Result<Vec<LabeledVolume>> {
    let phantom = PhantomConfig {
        size: (config.size, config.size),
        blur_sigma: config.blur_sigma,
        ..PhantomConfig::default()
    };
    (0..count as u64)
        .map(|i| {
            let raw = generate_phantom(&phantom.with_seed(first_seed + i), format!("case_{i}"))?;
            preprocess(&raw, None)
        })
        .collect()
}

/// Preprocessed training and held-out evaluation phantoms.
pub fn benchmark_data(config: &BenchmarkConfig) -> Result<(Vec<LabeledVolume>, Vec<LabeledVolume>)> {
    let train = phantoms(config, config.phantom_seed, config.train_cases)?;
    let eval = phantoms(config, config.phantom_seed + EVAL_SEED_OFFSET, config.eval_cases)?;
    Ok((train, eval))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub kappa_band: f64,
    pub kappa_interior: f64,
    /// Mean Dice over WT, TC and ET, averaged over cases.
    pub fused_mean_dice: f64,
    pub backbone_mean_dice: f64,
    pub fused_wt_dice: f64,
    pub backbone_wt_dice: f64,
    pub fused_band_accuracy: f64,
    pub backbone_band_accuracy: f64,
    /// Pixels where the fused and backbone-only segmentations disagree.
    pub changed_pixels: usize,
}

impl BenchmarkReport {
    pub fn kappa_ratio(&self) -> f64 {
        self.kappa_band / self.kappa_interior
    }
}

pub fn evaluate_model(model: &Model, cases: &[LabeledVolume], band_width: usize) -> Result<BenchmarkReport> {
    if cases.is_empty() {
        return Err(Error::EmptyList);
    }
    let frame: &Frame = &model.frame;
    let (mut k_band, mut n_band, mut k_int, mut n_int) = (0.0, 0usize, 0.0, 0usize);
    let (mut fused_ok, mut backbone_ok) = (0usize, 0usize);
    let mut changed = 0;
    let mut fused_reports = Vec::new();
    let mut backbone_reports = Vec::new();
    for case in cases {
        let pred = model.predict(&case.image_map())?;
        let fused = pred.fused_labels(frame)?;
        let backbone = pred.backbone_labels(frame)?;
        let band = boundary_band(&case.labels, band_width);
        for (i, &in_band) in band.data.iter().enumerate() {
            let kappa = pred.conflict.data()[i];
            let truth = case.labels.data()[i];
            if in_band {
                k_band += kappa;
                n_band += 1;
                fused_ok += (fused.data()[i] == truth) as usize;
                backbone_ok += (backbone.data()[i] == truth) as usize;
            } else {
                k_int += kappa;
                n_int += 1;
            }
            changed += (fused.data()[i] != backbone.data()[i]) as usize;
        }
        fused_reports.push(evaluate(&fused, &case.labels, &case.case_id)?);
        backbone_reports.push(evaluate(&backbone, &case.labels, &case.case_id)?);
    }
    let fused_mean = mean_report(&fused_reports);
    let backbone_mean = mean_report(&backbone_reports);
    let wt = |r: &crate::metrics::MetricsReport| r.region(Region::WT).map_or(0.0, |m| m.dice);
    let frac = |a: usize, n: usize| if n == 0 { 0.0 } else { a as f64 / n as f64 };
    Ok(BenchmarkReport {
        kappa_band: if n_band == 0 { 0.0 } else { k_band / n_band as f64 },
        kappa_interior: if n_int == 0 { 0.0 } else { k_int / n_int as f64 },
        fused_mean_dice: fused_mean.mean_dice(),
        backbone_mean_dice: backbone_mean.mean_dice(),
        fused_wt_dice: wt(&fused_mean),
        backbone_wt_dice: wt(&backbone_mean),
        fused_band_accuracy: frac(fused_ok, n_band),
        backbone_band_accuracy: frac(backbone_ok, n_band),
        changed_pixels: changed,
    })
}

/// Trains on the benchmark phantoms and evaluates on the held-out ones.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<(TrainOutcome, BenchmarkReport)> {
    let (train_set, eval_set) = benchmark_data(config)?;
    let frame = Frame::segmentation();
    let outcome = train(&train_set, &frame, &config.train)?;
    let report = evaluate_model(&outcome.model, &eval_set, config.band_width)?;
    Ok((outcome, report))
}
