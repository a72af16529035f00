use std::fmt;
use std::path::{Path, PathBuf};

use evseg::belief::Frame;
use evseg::data_io::{
    generate_phantom, list_cases, load_dataset, load_image, load_volume, preprocess, save_tensor,
    save_volume, write_atomic, write_pgm, LabeledVolume, PhantomConfig, Tensor,
};
use evseg::maps::LabelMap;
use evseg::metrics::{evaluate, mean_report, write_reports_csv, MetricsReport};
use evseg::model_file::{load_model, save_model, ModelFile};
use evseg::ssl::{initialize_model, train as run_training, TrainConfig};
use rayon::prelude::*;

use crate::{EvalArgs, GenArgs, InitArgs, Mode, Switch, TrainArgs, UncertaintyArgs};

/// Side length of the center crop applied to large inputs.
const CROP: usize = 160;
const THREADS_VAR: &str = "EVSEG_THREADS";

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<evseg::Error> for Failure {
    fn from(e: evseg::Error) -> Self {
        match e {
            e if e.is_numeric() => Failure::Numeric(e.to_string()),
            e @ evseg::Error::InvalidConfig(_) => Failure::Usage(e.to_string()),
            e => Failure::Data(e.to_string()),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn with_context(path: &Path) -> impl Fn(evseg::Error) -> Failure + '_ {
    move |e| {
        let inner = Failure::from(e);
        let message = format!("{}: {inner}", path.display());
        match inner {
            Failure::Usage(_) => Failure::Usage(message),
            Failure::Data(_) => Failure::Data(message),
            Failure::Numeric(_) => Failure::Numeric(message),
        }
    }
}

fn crop_for(volume: &LabeledVolume) -> Option<(usize, usize)> {
    (volume.height >= CROP && volume.width >= CROP).then_some((CROP, CROP))
}

fn prepare(volume: &LabeledVolume) -> evseg::Result<LabeledVolume> {
    preprocess(volume, crop_for(volume))
}

/// `None` lets rayon pick; `Some(0)` means sequential.
fn worker_threads() -> std::result::Result<Option<usize>, Failure> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(None),
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Usage(format!("{THREADS_VAR} must be a non-negative integer, got '{v}'"))),
    }
}

pub fn gen(args: &GenArgs) -> CmdResult {
    if args.count == 0 {
        return Err(Failure::Usage("--count must be at least 1".into()));
    }
    std::fs::create_dir_all(&args.out)
        .map_err(|e| Failure::Data(format!("{}: {e}", args.out.display())))?;
    let config = PhantomConfig {
        size: (args.size, args.size),
        ..PhantomConfig::default()
    };
    for i in 0..args.count {
        let case_id = format!("case_{i}");
        let volume = generate_phantom(&config.with_seed(args.seed.wrapping_add(i as u64)), &case_id)?;
        let path = args.out.join(format!("{case_id}.evt"));
        save_volume(&volume, &path).map_err(with_context(&path))?;
        println!("{case_id}\t{case_id}.evt\t{case_id}_labels.evt");
    }
    Ok(())
}

/// Training-log path written next to the model: `model.evm` -> `model.log.csv`.
pub fn log_path(model: &Path) -> PathBuf {
    model.with_extension("log.csv")
}

pub fn train(args: &TrainArgs) -> CmdResult {
    let mut config = TrainConfig {
        labeled_fraction: args.labeled_frac,
        epochs: args.epochs,
        lr_backbone: args.lr_backbone,
        lr_enn: args.lr_enn,
        prototypes: args.prototypes,
        seed: args.seed,
        ..TrainConfig::default()
    };
    if args.mode == Mode::Supervised {
        config = config.supervised();
    }
    config.validate()?;
    if config.epochs == 0 {
        return Err(Failure::Usage("--epochs must be at least 1".into()));
    }
    let raw = load_dataset(&args.data).map_err(with_context(&args.data))?;
    let dataset = raw.iter().map(prepare).collect::<evseg::Result<Vec<_>>>()?;
    let frame = Frame::segmentation();
    let outcome = run_training(&dataset, &frame, &config)?;

    let log_file = log_path(&args.out);
    write_atomic(&log_file, |w| outcome.log.write_csv(w)).map_err(with_context(&log_file))?;
    let file = ModelFile {
        model: outcome.model,
        config,
        log_digest: outcome.log.digest(),
    };
    save_model(&file, &args.out).map_err(with_context(&args.out))?;
    println!(
        "trained on {} labeled / {} unlabeled cases, final loss {}",
        outcome.labeled_cases.len(),
        outcome.unlabeled_cases.len(),
        outcome.log.final_loss().map_or("n/a".to_string(), |l| format!("{l:.6}"))
    );
    println!("model {} log {}", args.out.display(), log_file.display());
    Ok(())
}

fn evaluate_case(file: &ModelFile, path: &Path, args: &EvalArgs) -> evseg::Result<MetricsReport> {
    let volume = prepare(&load_volume(path)?)?;
    let prediction = if args.truth_as_prediction {
        volume.labels.clone()
    } else {
        let out = file.model.predict(&volume.image_map())?;
        match args.fusion {
            Switch::On => out.fused_labels(&file.model.frame)?,
            Switch::Off => out.backbone_labels(&file.model.frame)?,
        }
    };
    evaluate(&prediction, &volume.labels, &volume.case_id)
}

pub fn eval(args: &EvalArgs) -> CmdResult {
    let threads = worker_threads()?;
    let file = load_model(&args.model).map_err(with_context(&args.model))?;
    let cases = list_cases(&args.data).map_err(with_context(&args.data))?;
    if cases.is_empty() {
        return Err(Failure::Data(format!("{}: no cases found", args.data.display())));
    }
    let run = |p: &PathBuf| evaluate_case(&file, p, args);
    let results: Vec<evseg::Result<MetricsReport>> = match threads {
        Some(0) => cases.iter().map(run).collect(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Failure::Usage(format!("cannot start {n} workers: {e}")))?
            .install(|| cases.par_iter().map(run).collect()),
        None => cases.par_iter().map(run).collect(),
    };

    let mut reports = Vec::new();
    let mut failed = 0;
    for (path, result) in cases.iter().zip(results) {
        match result {
            Ok(r) => reports.push(r),
            Err(e) => {
                failed += 1;
                eprintln!("evseg: {}: {e}", path.display());
            }
        }
    }
    if reports.is_empty() {
        return Err(Failure::Data("no case could be evaluated".into()));
    }
    let mean = mean_report(&reports);
    reports.push(mean.clone());
    write_atomic(&args.report, |w| write_reports_csv(&reports, w))
        .map_err(with_context(&args.report))?;
    for r in &mean.regions {
        println!("{}\tdice {:.4}\tppv {:.4}\tsensitivity {:.4}", r.region, r.dice, r.ppv, r.sensitivity);
    }
    if failed > 0 {
        return Err(Failure::Data(format!("{failed} case(s) could not be evaluated")));
    }
    Ok(())
}

/// Label map written next to the PGM: `kappa.pgm` -> `kappa_labels.evt`.
pub fn uncertainty_labels_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}_labels.evt"))
}

pub fn uncertainty(args: &UncertaintyArgs) -> CmdResult {
    let file = load_model(&args.model).map_err(with_context(&args.model))?;
    let image = load_image(&args.case).map_err(with_context(&args.case))?;
    let blank = LabelMap::new(image.height(), image.width(), vec![0; image.height() * image.width()])?;
    let volume = prepare(&LabeledVolume::new("case", image, blank)?)?;
    let prediction = file.model.predict(&volume.image_map())?;
    let labels = prediction.fused_labels(&file.model.frame)?;

    let labels_file = uncertainty_labels_path(&args.out);
    let tensor = Tensor::U8 {
        shape: vec![labels.height(), labels.width()],
        data: labels.data().to_vec(),
    };
    save_tensor(&tensor, &labels_file).map_err(with_context(&labels_file))?;
    write_pgm(&prediction.conflict, &args.out).map_err(with_context(&args.out))?;
    let kappa = prediction.conflict.data();
    println!(
        "{}x{} conflict map, mean {:.4}, max {:.4}",
        labels.height(),
        labels.width(),
        kappa.iter().sum::<f64>() / kappa.len() as f64,
        kappa.iter().copied().fold(0.0, f64::max)
    );
    Ok(())
}

/// Mass-function weight logit low enough that every prototype's α is exactly 0.
const VACUOUS_ALPHA_RAW: f64 = -1e3;

pub fn init(args: &InitArgs) -> CmdResult {
    let config = TrainConfig {
        prototypes: args.prototypes,
        seed: args.seed,
        ..TrainConfig::default()
    };
    config.validate()?;
    let raw = load_dataset(&args.data).map_err(with_context(&args.data))?;
    let dataset = raw.iter().map(prepare).collect::<evseg::Result<Vec<_>>>()?;
    let images: Vec<_> = dataset.iter().map(|v| v.image_map()).collect();
    let refs: Vec<_> = images.iter().collect();
    let mut model = initialize_model(&refs, &Frame::segmentation(), &config)?;
    if args.vacuous_enn {
        model.bank.alpha_raw.iter_mut().for_each(|a| *a = VACUOUS_ALPHA_RAW);
    }
    let file = ModelFile {
        model,
        config,
        log_digest: String::new(),
    };
    save_model(&file, &args.out).map_err(with_context(&args.out))?;
    Ok(())
}
