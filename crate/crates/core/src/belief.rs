//! Dempster-Shafer algebra over a small finite frame of discernment.
//!
//! Focal sets are bitmasks over frame indices, so a frame holds at most 16
//! hypotheses. Combination enumerates focal-set pairs exactly; with the four
//! segmentation classes that is at most 15 x 15 products per combination.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

/// Largest supported frame.
pub const MAX_FRAME_SIZE: usize = 16;

/// Tolerance on the total mass of a mass function.
pub const MASS_SUM_TOLERANCE: f64 = 1e-9;

/// Tolerance on the total of a probability vector converted to a Bayesian mass.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-6;

/// Conflict at or above `1 - TOTAL_CONFLICT_EPS` makes Dempster's rule undefined.
pub const TOTAL_CONFLICT_EPS: f64 = 1e-12;

/// Ordered set of class labels. Index `i` of the frame is bit `i` of a [`FocalSet`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Frame {
    labels: Vec<u8>,
}

impl Frame {
    pub fn new(labels: Vec<u8>) -> Result<Self> {
        if labels.len() < 2 || labels.len() > MAX_FRAME_SIZE {
            return Err(Error::InvalidFrame(format!(
                "frame size must be in 2..={MAX_FRAME_SIZE}, got {}",
                labels.len()
            )));
        }
        for (i, a) in labels.iter().enumerate() {
            if labels[..i].contains(a) {
                return Err(Error::InvalidFrame(format!("duplicate label {a}")));
            }
        }
        Ok(Self { labels })
    }

    /// The four-class segmentation frame {0, 1, 2, 4}.
    pub fn segmentation() -> Self {
        Self {
            labels: vec![0, 1, 2, 4],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label(&self, index: usize) -> u8 {
        self.labels[index]
    }

    pub fn index_of(&self, label: u8) -> Option<usize> {
        self.labels.iter().position(|&l| l == label)
    }

    /// The whole frame as a focal set.
    pub fn omega(&self) -> FocalSet {
        FocalSet(((1u32 << self.labels.len()) - 1) as u16)
    }
}

/// Nonempty subset of a frame, one bit per frame index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FocalSet(pub u16);

impl FocalSet {
    pub fn singleton(index: usize) -> Self {
        FocalSet(1 << index)
    }

    pub fn bits(self) -> u16 {
        self.0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_singleton(self) -> bool {
        self.0.count_ones() == 1
    }

    pub fn contains(self, index: usize) -> bool {
        self.0 & (1 << index) != 0
    }

    pub fn intersect(self, other: FocalSet) -> FocalSet {
        FocalSet(self.0 & other.0)
    }
}

impl fmt::Display for FocalSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        let mut first = true;
        for i in 0..16 {
            if self.contains(i) {
                if !first {
                    write!(f, ",")?;
                }
                write!(f, "{i}")?;
                first = false;
            }
        }
        write!(f, "}}")
    }
}

/// Basic belief assignment. Only focal sets with strictly positive mass are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct MassFunction {
    frame: Frame,
    masses: BTreeMap<FocalSet, f64>,
}

impl MassFunction {
    /// Builds a mass function, merging repeated focal sets and dropping zero masses.
    pub fn new(frame: Frame, entries: impl IntoIterator<Item = (FocalSet, f64)>) -> Result<Self> {
        let omega = frame.omega();
        let mut masses = BTreeMap::new();
        for (set, mass) in entries {
            if set.is_empty() {
                return Err(Error::InvalidMass("mass on the empty set".into()));
            }
            if set.bits() & !omega.bits() != 0 {
                return Err(Error::InvalidMass(format!("focal set {set} outside frame")));
            }
            if !mass.is_finite() || mass < 0.0 {
                return Err(Error::InvalidMass(format!("mass {mass} on {set}")));
            }
            if mass > 0.0 {
                *masses.entry(set).or_insert(0.0) += mass;
            }
        }
        let total: f64 = masses.values().sum();
        if (total - 1.0).abs() > MASS_SUM_TOLERANCE {
            return Err(Error::InvalidMass(format!("masses sum to {total}")));
        }
        Ok(Self { frame, masses })
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    /// Mass of `set`, zero when it is not focal.
    pub fn mass(&self, set: FocalSet) -> f64 {
        self.masses.get(&set).copied().unwrap_or(0.0)
    }

    /// Focal sets with their masses in increasing bitmask order.
    pub fn focal_sets(&self) -> impl Iterator<Item = (FocalSet, f64)> + '_ {
        self.masses.iter().map(|(&s, &m)| (s, m))
    }

    pub fn total(&self) -> f64 {
        self.masses.values().sum()
    }

    /// True when every focal set is a singleton.
    pub fn is_bayesian(&self) -> bool {
        self.masses.keys().all(|s| s.is_singleton())
    }

    /// Singleton masses followed by m(Ω). Requires the mass function to have
    /// no composite focal sets other than Ω.
    pub fn to_singleton_omega(&self) -> Option<Vec<f64>> {
        let k = self.frame.len();
        let omega = self.frame.omega();
        let mut out = vec![0.0; k + 1];
        for (set, m) in self.focal_sets() {
            if set == omega {
                out[k] = m;
            } else if set.is_singleton() {
                out[set.bits().trailing_zeros() as usize] = m;
            } else {
                return None;
            }
        }
        Some(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinationResult {
    pub mass: MassFunction,
    pub conflict: f64,
}

/// Total ignorance: all mass on Ω.
pub fn vacuous(frame: &Frame) -> MassFunction {
    let mut masses = BTreeMap::new();
    masses.insert(frame.omega(), 1.0);
    MassFunction {
        frame: frame.clone(),
        masses,
    }
}

/// Reads a probability vector as a Bayesian mass function.
pub fn bayesian_from_probabilities(frame: &Frame, p: &[f64]) -> Result<MassFunction> {
    if p.len() != frame.len() {
        return Err(Error::DimMismatch {
            expected: frame.len(),
            got: p.len(),
        });
    }
    for (index, &value) in p.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonfiniteInput);
        }
        if value < 0.0 {
            return Err(Error::NegativeProbability { index, value });
        }
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
        return Err(Error::SumOutOfTolerance { sum });
    }
    let masses = p
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(k, &v)| (FocalSet::singleton(k), v / sum))
        .collect();
    Ok(MassFunction {
        frame: frame.clone(),
        masses,
    })
}

// Sorting the terms makes the sum independent of argument order, so swapping
// the operands of a combination reproduces every value bit for bit.
fn ordered_sum(terms: &mut [f64]) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

/// Dempster's rule of combination.
pub fn combine_dempster(m1: &MassFunction, m2: &MassFunction) -> Result<CombinationResult> {
    if m1.frame != m2.frame {
        return Err(Error::FrameMismatch);
    }
    let mut conflicting = Vec::new();
    let mut by_set: BTreeMap<FocalSet, Vec<f64>> = BTreeMap::new();
    for (b, mb) in m1.focal_sets() {
        for (c, mc) in m2.focal_sets() {
            let a = b.intersect(c);
            let product = mb * mc;
            if a.is_empty() {
                conflicting.push(product);
            } else {
                by_set.entry(a).or_default().push(product);
            }
        }
    }
    let conflict = ordered_sum(&mut conflicting);
    if conflict >= 1.0 - TOTAL_CONFLICT_EPS {
        return Err(Error::TotalConflict { kappa: conflict });
    }
    let normalizer = 1.0 - conflict;
    let masses: BTreeMap<FocalSet, f64> = by_set
        .into_iter()
        .map(|(set, mut terms)| (set, ordered_sum(&mut terms) / normalizer))
        .filter(|&(_, m)| m > 0.0)
        .collect();
    Ok(CombinationResult {
        mass: MassFunction {
            frame: m1.frame.clone(),
            masses,
        },
        conflict,
    })
}

/// Left fold of [`combine_dempster`]. The reported conflict accounts for the
/// renormalization removed at every step: `1 - prod(1 - kappa_step)`.
pub fn combine_many(masses: &[MassFunction]) -> Result<CombinationResult> {
    let (first, rest) = masses.split_first().ok_or(Error::EmptyList)?;
    let mut acc = first.clone();
    let mut retained = 1.0;
    for m in rest {
        let step = combine_dempster(&acc, m)?;
        retained *= 1.0 - step.conflict;
        acc = step.mass;
    }
    Ok(CombinationResult {
        mass: acc,
        conflict: 1.0 - retained,
    })
}

/// Pignistic probabilities and the label of their argmax (lowest index on ties).
pub fn decide(m: &MassFunction) -> (u8, Vec<f64>) {
    let k = m.frame.len();
    let mut betp = vec![0.0; k];
    for (set, mass) in m.focal_sets() {
        let share = mass / set.len() as f64;
        for (i, b) in betp.iter_mut().enumerate() {
            if set.contains(i) {
                *b += share;
            }
        }
    }
    let best = argmax(&betp);
    (m.frame.label(best), betp)
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
