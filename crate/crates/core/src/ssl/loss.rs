//! Soft-Dice plus squared-error objectives for supervised and consistency training.
//!
//! Both losses are built from one pair term over two maps `a` and `b`:
//!
//! ```text
//! term(a, b) = 1 - 2 Σ a·b / (Σ a + Σ b) + 0.5 · mean (a - b)²
//! ```
//!
//! with sums and the mean running over every pixel and class.

use crate::belief::Frame;
use crate::error::{Error, Result};
use crate::maps::{LabelMap, PixelMap, ProbabilityMap};

/// Weight of the squared-error part of each pair term.
pub const MSE_WEIGHT: f64 = 0.5;

struct PairTerm {
    value: f64,
    grad_a: Vec<f64>,
    grad_b: Vec<f64>,
}

fn pair_term(a: &[f64], b: &[f64]) -> Result<PairTerm> {
    let n = a.len() as f64;
    let inter: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let union: f64 = a.iter().sum::<f64>() + b.iter().sum::<f64>();
    if union == 0.0 {
        return Err(Error::EmptySum);
    }
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let value = 1.0 - 2.0 * inter / union + MSE_WEIGHT * sq / n;
    let u2 = union * union;
    let mse_scale = 2.0 * MSE_WEIGHT / n;
    let mut grad_a = Vec::with_capacity(a.len());
    let mut grad_b = Vec::with_capacity(a.len());
    for (x, y) in a.iter().zip(b) {
        let diff = mse_scale * (x - y);
        grad_a.push(-2.0 * (y * union - inter) / u2 + diff);
        grad_b.push(-2.0 * (x * union - inter) / u2 - diff);
    }
    Ok(PairTerm {
        value,
        grad_a,
        grad_b,
    })
}

fn check_shapes(maps: &[&ProbabilityMap]) -> Result<()> {
    let first = maps[0];
    for m in &maps[1..] {
        if !m.same_shape(first) {
            return Err(Error::ShapeMismatch(format!(
                "{}x{}x{} vs {}x{}x{}",
                first.height(),
                first.width(),
                first.channels(),
                m.height(),
                m.width(),
                m.channels()
            )));
        }
    }
    Ok(())
}

fn as_map(like: &ProbabilityMap, data: Vec<f64>) -> ProbabilityMap {
    PixelMap::new(like.height(), like.width(), like.channels(), data).expect("same shape")
}

/// One-hot encoding of a label map over the frame's classes.
pub fn one_hot(labels: &LabelMap, frame: &Frame) -> Result<ProbabilityMap> {
    let k = frame.len();
    let mut data = vec![0.0; labels.data().len() * k];
    for (i, &l) in labels.data().iter().enumerate() {
        let c = frame.index_of(l).ok_or(Error::UnknownLabel(l))?;
        data[i * k + c] = 1.0;
    }
    PixelMap::new(labels.height(), labels.width(), k, data)
}

/// Supervised loss summed over the transformed outputs, with gradients per output.
pub fn loss1(
    outputs: &[ProbabilityMap],
    target: &ProbabilityMap,
) -> Result<(f64, Vec<ProbabilityMap>)> {
    if outputs.is_empty() {
        return Err(Error::TooFewOutputs { min: 1, got: 0 });
    }
    let mut all: Vec<&ProbabilityMap> = outputs.iter().collect();
    all.push(target);
    check_shapes(&all)?;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(outputs.len());
    for s in outputs {
        let term = pair_term(s.data(), target.data())?;
        total += term.value;
        grads.push(as_map(s, term.grad_a));
    }
    Ok((total, grads))
}

/// Consistency loss summed over every unordered pair of outputs.
pub fn loss2(outputs: &[ProbabilityMap]) -> Result<(f64, Vec<ProbabilityMap>)> {
    if outputs.len() < 2 {
        return Err(Error::TooFewOutputs {
            min: 2,
            got: outputs.len(),
        });
    }
    check_shapes(&outputs.iter().collect::<Vec<_>>())?;
    let len = outputs[0].data().len();
    let mut grads = vec![vec![0.0; len]; outputs.len()];
    let mut total = 0.0;
    for i in 0..outputs.len() {
        for t in i + 1..outputs.len() {
            let term = pair_term(outputs[i].data(), outputs[t].data())?;
            total += term.value;
            for (g, v) in grads[i].iter_mut().zip(&term.grad_a) {
                *g += v;
            }
            for (g, v) in grads[t].iter_mut().zip(&term.grad_b) {
                *g += v;
            }
        }
    }
    let grads = grads
        .into_iter()
        .map(|g| as_map(&outputs[0], g))
        .collect();
    Ok((total, grads))
}
