//! Overlap and distance metrics over the WT / TC / ET tumor regions.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::maps::LabelMap;

/// Evaluation region, defined by the set of labels it covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Region {
    /// Whole tumor: labels 1, 2, 4.
    WT,
    /// Tumor core: labels 1, 4.
    TC,
    /// Enhancing tumor: label 4.
    ET,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::WT, Region::TC, Region::ET];

    pub fn labels(self) -> &'static [u8] {
        match self {
            Region::WT => &[1, 2, 4],
            Region::TC => &[1, 4],
            Region::ET => &[4],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::WT => "WT",
            Region::TC => "TC",
            Region::ET => "ET",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "WT" => Ok(Region::WT),
            "TC" => Ok(Region::TC),
            "ET" => Ok(Region::ET),
            other => Err(Error::HeaderParse(format!("unknown region '{other}'"))),
        }
    }
}

pub const VALID_LABELS: [u8; 4] = [0, 1, 2, 4];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width} mask needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Foreground coordinates as `(row, column)`.
    pub fn points(&self) -> Vec<(usize, usize)> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| (i / self.width, i % self.width))
            .collect()
    }
}

pub fn region_mask(labels: &LabelMap, region: Region) -> Result<BinaryMask> {
    let set = region.labels();
    let data = labels
        .data()
        .iter()
        .map(|&l| {
            if VALID_LABELS.contains(&l) {
                Ok(set.contains(&l))
            } else {
                Err(Error::UnknownLabel(l))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    BinaryMask::new(labels.height(), labels.width(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn confusion_counts(pred: &BinaryMask, truth: &BinaryMask) -> Result<ConfusionCounts> {
    if pred.height != truth.height || pred.width != truth.width {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{} vs truth {}x{}",
            pred.height, pred.width, truth.height, truth.width
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.data.iter().zip(&truth.data) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

// A zero denominator means one of the masks is empty. Agreement on absence
// scores 1, anything else 0.
fn ratio(num: u64, den: u64, both_empty: bool, what: &str) -> f64 {
    if den == 0 {
        let v = if both_empty { 1.0 } else { 0.0 };
        log::debug!("{what} undefined (zero denominator), reported as {v}");
        v
    } else {
        num as f64 / den as f64
    }
}

pub fn dice(c: &ConfusionCounts) -> f64 {
    ratio(2 * c.tp, c.fp + 2 * c.tp + c.fn_, c.tp + c.fp + c.fn_ == 0, "dice")
}

pub fn ppv(c: &ConfusionCounts) -> f64 {
    ratio(c.tp, c.tp + c.fp, c.fn_ == 0, "ppv")
}

pub fn sensitivity(c: &ConfusionCounts) -> f64 {
    ratio(c.tp, c.tp + c.fn_, c.fp == 0, "sensitivity")
}

const FAR: f64 = f64::INFINITY;

/// Lower envelope of parabolas `f(q) + (p - q)²` for the finite entries of `f`.
fn distance_transform_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut vertices: Vec<usize> = Vec::with_capacity(n);
    let mut bounds: Vec<f64> = Vec::with_capacity(n + 1);
    for q in 0..n {
        if f[q] == FAR {
            continue;
        }
        let fq = f[q] + (q * q) as f64;
        loop {
            match vertices.last() {
                None => {
                    vertices.push(q);
                    bounds.clear();
                    bounds.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&v) => {
                    let s = (fq - (f[v] + (v * v) as f64)) / (2.0 * (q as f64 - v as f64));
                    if s <= *bounds.last().unwrap() {
                        vertices.pop();
                        bounds.pop();
                    } else {
                        vertices.push(q);
                        bounds.push(s);
                        break;
                    }
                }
            }
        }
    }
    if vertices.is_empty() {
        out.iter_mut().for_each(|o| *o = FAR);
        return;
    }
    let mut k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        while k + 1 < vertices.len() && bounds[k + 1] < p as f64 {
            k += 1;
        }
        let v = vertices[k];
        let d = p as f64 - v as f64;
        *o = f[v] + d * d;
    }
}

/// Exact squared Euclidean distance from every pixel to the nearest foreground pixel.
pub fn squared_distance_transform(mask: &BinaryMask) -> Vec<f64> {
    let (h, w) = (mask.height, mask.width);
    let mut grid: Vec<f64> = mask.data.iter().map(|&b| if b { 0.0 } else { FAR }).collect();
    let mut column = vec![0.0; h];
    let mut col_out = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            column[y] = grid[y * w + x];
        }
        distance_transform_1d(&column, &mut col_out);
        for y in 0..h {
            grid[y * w + x] = col_out[y];
        }
    }
    let mut row_out = vec![0.0; w];
    for y in 0..h {
        distance_transform_1d(&grid[y * w..(y + 1) * w], &mut row_out);
        grid[y * w..(y + 1) * w].copy_from_slice(&row_out);
    }
    grid
}

fn directed(from: &BinaryMask, to_distance: &[f64]) -> f64 {
    from.data
        .iter()
        .zip(to_distance)
        .filter(|(&b, _)| b)
        .map(|(_, &d)| d)
        .fold(0.0, f64::max)
}

/// Symmetric Hausdorff distance between the foreground point sets, in pixels.
/// `None` when either mask is empty.
pub fn hausdorff(pred: &BinaryMask, truth: &BinaryMask) -> Result<Option<f64>> {
    if pred.height != truth.height || pred.width != truth.width {
        return Err(Error::ShapeMismatch("hausdorff masks differ in size".into()));
    }
    if pred.is_empty() || truth.is_empty() {
        return Ok(None);
    }
    let to_truth = squared_distance_transform(truth);
    let to_pred = squared_distance_transform(pred);
    let d2 = directed(pred, &to_truth).max(directed(truth, &to_pred));
    Ok(Some(d2.sqrt()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionMetrics {
    pub region: Region,
    pub counts: ConfusionCounts,
    pub dice: f64,
    pub ppv: f64,
    pub sensitivity: f64,
    pub hausdorff: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub case_id: String,
    pub regions: Vec<RegionMetrics>,
}

impl MetricsReport {
    pub fn region(&self, region: Region) -> Option<&RegionMetrics> {
        self.regions.iter().find(|r| r.region == region)
    }

    pub fn mean_dice(&self) -> f64 {
        self.regions.iter().map(|r| r.dice).sum::<f64>() / self.regions.len() as f64
    }
}

pub fn evaluate(pred: &LabelMap, truth: &LabelMap, case_id: &str) -> Result<MetricsReport> {
    if !pred.same_shape(truth) {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{} vs truth {}x{}",
            pred.height(),
            pred.width(),
            truth.height(),
            truth.width()
        )));
    }
    let regions = Region::ALL
        .iter()
        .map(|&region| {
            let p = region_mask(pred, region)?;
            let t = region_mask(truth, region)?;
            let counts = confusion_counts(&p, &t)?;
            Ok(RegionMetrics {
                region,
                counts,
                dice: dice(&counts),
                ppv: ppv(&counts),
                sensitivity: sensitivity(&counts),
                hausdorff: hausdorff(&p, &t)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport {
        case_id: case_id.to_string(),
        regions,
    })
}

/// Per-region averages across cases. Hausdorff averages skip undefined entries;
/// counts are summed.
pub fn mean_report(reports: &[MetricsReport]) -> MetricsReport {
    let regions = Region::ALL
        .iter()
        .map(|&region| {
            let rows: Vec<&RegionMetrics> =
                reports.iter().filter_map(|r| r.region(region)).collect();
            let n = rows.len().max(1) as f64;
            let mean = |f: fn(&RegionMetrics) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
            let distances: Vec<f64> = rows.iter().filter_map(|r| r.hausdorff).collect();
            let mut counts = ConfusionCounts::default();
            for r in &rows {
                counts.tp += r.counts.tp;
                counts.fp += r.counts.fp;
                counts.fn_ += r.counts.fn_;
                counts.tn += r.counts.tn;
            }
            RegionMetrics {
                region,
                counts,
                dice: mean(|r| r.dice),
                ppv: mean(|r| r.ppv),
                sensitivity: mean(|r| r.sensitivity),
                hausdorff: (!distances.is_empty())
                    .then(|| distances.iter().sum::<f64>() / distances.len() as f64),
            }
        })
        .collect();
    MetricsReport {
        case_id: "mean".to_string(),
        regions,
    }
}

pub const CSV_HEADER: [&str; 10] = [
    "case_id",
    "region",
    "dice",
    "ppv",
    "sensitivity",
    "hausdorff",
    "tp",
    "fp",
    "fn",
    "tn",
];

/// Marker written in the hausdorff column when the distance is undefined.
pub const UNDEFINED: &str = "undefined";

pub fn write_reports_csv<W: Write>(reports: &[MetricsReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for report in reports {
        for r in &report.regions {
            w.write_record([
                report.case_id.clone(),
                r.region.to_string(),
                r.dice.to_string(),
                r.ppv.to_string(),
                r.sensitivity.to_string(),
                r.hausdorff.map_or(UNDEFINED.to_string(), |d| d.to_string()),
                r.counts.tp.to_string(),
                r.counts.fp.to_string(),
                r.counts.fn_.to_string(),
                r.counts.tn.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn parse<T: FromStr>(field: &str, column: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::HeaderParse(format!("bad {column} value '{field}'")))
}

/// Reads rows written by [`write_reports_csv`], grouping consecutive rows by case id.
pub fn read_reports_csv<R: Read>(input: R) -> Result<Vec<MetricsReport>> {
    let mut reader = csv::Reader::from_reader(input);
    if reader.headers()?.iter().ne(CSV_HEADER) {
        return Err(Error::HeaderParse("unexpected report columns".into()));
    }
    let mut reports: Vec<MetricsReport> = Vec::new();
    for record in reader.records() {
        let rec = record?;
        let hausdorff = match &rec[5] {
            UNDEFINED => None,
            v => Some(parse(v, "hausdorff")?),
        };
        let metrics = RegionMetrics {
            region: rec[1].parse()?,
            dice: parse(&rec[2], "dice")?,
            ppv: parse(&rec[3], "ppv")?,
            sensitivity: parse(&rec[4], "sensitivity")?,
            hausdorff,
            counts: ConfusionCounts {
                tp: parse(&rec[6], "tp")?,
                fp: parse(&rec[7], "fp")?,
                fn_: parse(&rec[8], "fn")?,
                tn: parse(&rec[9], "tn")?,
            },
        };
        match reports.last_mut() {
            Some(last) if last.case_id == rec[0] => last.regions.push(metrics),
            _ => reports.push(MetricsReport {
                case_id: rec[0].to_string(),
                regions: vec![metrics],
            }),
        }
    }
    Ok(reports)
}
