//! Prototype-based evidential classifier.
//!
//! Each prototype `i` turns the squared distance `d²` between a feature vector and
//! its center into a simple mass function: `u_ik · s_i` on class `k` and
//! `1 - s_i` on Ω, where `s_i = α_i exp(-γ_i d²)`. The prototype masses are then
//! combined with Dempster's rule. Because every prototype only has singleton and
//! Ω focal sets, the combination has a product closed form:
//!
//! ```text
//! M_k = Π_i (1 - s_i + u_ik s_i) - Π_i (1 - s_i)      M_Ω = Π_i (1 - s_i)
//! m = M / (Σ_k M_k + M_Ω)
//! ```
//!
//! Parameters are stored unconstrained: `α = sigmoid(ξ)`, `γ = raw² + ε`, and
//! `u_i· = raw_i·² / Σ raw_i·²`, so plain gradient steps never leave the valid set.

use serde::{Deserialize, Serialize};

use crate::belief::{FocalSet, Frame, MassFunction};
use crate::error::{Error, Result};
use crate::kmeans::{kmeans, squared_distance};
use crate::maps::{FeatureMap, MassMap, PixelMap};

pub const GAMMA_EPS: f64 = 1e-6;

/// Initial value of every raw membership. Memberships are normalized squares,
/// so a small uniform value starts them uniform but quick to move.
pub const MEMBERSHIP_INIT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeBank {
    pub feature_dim: usize,
    pub classes: usize,
    /// `I x F`, row-major.
    pub prototypes: Vec<f64>,
    /// `I x K`, row-major.
    pub memberships_raw: Vec<f64>,
    pub alpha_raw: Vec<f64>,
    pub gamma_raw: Vec<f64>,
}

/// Gradients with the same layout as [`PrototypeBank`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BankGradients {
    pub prototypes: Vec<f64>,
    pub memberships_raw: Vec<f64>,
    pub alpha_raw: Vec<f64>,
    pub gamma_raw: Vec<f64>,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl PrototypeBank {
    /// Bank with the given centers, uniform memberships, α = 0.5 and γ = 1.
    pub fn from_centers(feature_dim: usize, classes: usize, centers: Vec<f64>) -> Result<Self> {
        if feature_dim == 0 || centers.is_empty() || !centers.len().is_multiple_of(feature_dim) {
            return Err(Error::DimMismatch {
                expected: feature_dim,
                got: centers.len(),
            });
        }
        let count = centers.len() / feature_dim;
        Ok(Self {
            feature_dim,
            classes,
            prototypes: centers,
            memberships_raw: vec![MEMBERSHIP_INIT; count * classes],
            alpha_raw: vec![0.0; count],
            gamma_raw: vec![(1.0 - GAMMA_EPS).sqrt(); count],
        })
    }

    pub fn count(&self) -> usize {
        self.alpha_raw.len()
    }

    pub fn prototype(&self, i: usize) -> &[f64] {
        &self.prototypes[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn alpha(&self, i: usize) -> f64 {
        sigmoid(self.alpha_raw[i])
    }

    pub fn gamma(&self, i: usize) -> f64 {
        self.gamma_raw[i] * self.gamma_raw[i] + GAMMA_EPS
    }

    /// Normalized memberships of prototype `i`; uniform when all raw values are zero.
    pub fn memberships(&self, i: usize) -> Vec<f64> {
        let raw = &self.memberships_raw[i * self.classes..(i + 1) * self.classes];
        let total: f64 = raw.iter().map(|r| r * r).sum();
        if total > 0.0 {
            raw.iter().map(|r| r * r / total).collect()
        } else {
            vec![1.0 / self.classes as f64; self.classes]
        }
    }

    pub fn validate(&self) -> Result<()> {
        let count = self.count();
        let checks = [
            (self.prototypes.len(), count * self.feature_dim),
            (self.memberships_raw.len(), count * self.classes),
            (self.gamma_raw.len(), count),
        ];
        for (got, expected) in checks {
            if got != expected {
                return Err(Error::DimMismatch { expected, got });
            }
        }
        if count == 0 || self.classes < 2 {
            return Err(Error::InvalidConfig("bank needs prototypes and >= 2 classes".into()));
        }
        Ok(())
    }

    pub fn zero_gradients(&self) -> BankGradients {
        BankGradients {
            prototypes: vec![0.0; self.prototypes.len()],
            memberships_raw: vec![0.0; self.memberships_raw.len()],
            alpha_raw: vec![0.0; self.alpha_raw.len()],
            gamma_raw: vec![0.0; self.gamma_raw.len()],
        }
    }

    /// Plain gradient-descent step.
    pub fn apply_gradients(&mut self, grads: &BankGradients, lr: f64) {
        let pairs = [
            (&mut self.prototypes, &grads.prototypes),
            (&mut self.memberships_raw, &grads.memberships_raw),
            (&mut self.alpha_raw, &grads.alpha_raw),
            (&mut self.gamma_raw, &grads.gamma_raw),
        ];
        for (params, g) in pairs {
            for (p, g) in params.iter_mut().zip(g.iter()) {
                *p -= lr * g;
            }
        }
    }

    fn derived(&self) -> Derived {
        let count = self.count();
        let mut memberships = Vec::with_capacity(count * self.classes);
        let mut raw_norm = Vec::with_capacity(count);
        for i in 0..count {
            memberships.extend(self.memberships(i));
            let raw = &self.memberships_raw[i * self.classes..(i + 1) * self.classes];
            raw_norm.push(raw.iter().map(|r| r * r).sum());
        }
        Derived {
            alpha: (0..count).map(|i| self.alpha(i)).collect(),
            gamma: (0..count).map(|i| self.gamma(i)).collect(),
            memberships,
            raw_norm,
        }
    }
}

impl BankGradients {
    pub fn add_assign(&mut self, other: &BankGradients) {
        let pairs = [
            (&mut self.prototypes, &other.prototypes),
            (&mut self.memberships_raw, &other.memberships_raw),
            (&mut self.alpha_raw, &other.alpha_raw),
            (&mut self.gamma_raw, &other.gamma_raw),
        ];
        for (a, b) in pairs {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += y;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.prototypes
            .iter()
            .chain(&self.memberships_raw)
            .chain(&self.alpha_raw)
            .chain(&self.gamma_raw)
    }
}

struct Derived {
    alpha: Vec<f64>,
    gamma: Vec<f64>,
    memberships: Vec<f64>,
    raw_norm: Vec<f64>,
}

/// Initializes prototypes as k-means centers of `features` (`n x dim`, row-major).
///
/// Memberships start uniform and α at 0.5. Each γ is set to `1 / (2 · msd)` where
/// `msd` is the mean squared distance of the cluster's members to its center;
/// singleton or degenerate clusters fall back to the overall mean, then to 1.
pub fn kmeans_init(
    features: &[f64],
    dim: usize,
    count: usize,
    classes: usize,
    seed: u64,
) -> Result<PrototypeBank> {
    let clustering = kmeans(features, dim, count, seed)?;
    let n = features.len() / dim;
    let mut sq = vec![0.0; count];
    let mut members = vec![0usize; count];
    for (p, &a) in clustering.assignments.iter().enumerate() {
        sq[a] += squared_distance(&features[p * dim..(p + 1) * dim], clustering.center(a));
        members[a] += 1;
    }
    let overall = sq.iter().sum::<f64>() / n as f64;
    let mut bank = PrototypeBank::from_centers(dim, classes, clustering.centers)?;
    for i in 0..count {
        let mut msd = if members[i] > 1 {
            sq[i] / members[i] as f64
        } else {
            0.0
        };
        if msd <= 0.0 {
            msd = overall;
        }
        let gamma = if msd > 0.0 {
            (0.5 / msd).max(GAMMA_EPS)
        } else {
            1.0
        };
        bank.gamma_raw[i] = (gamma - GAMMA_EPS).max(0.0).sqrt();
    }
    Ok(bank)
}

fn check_dim(x: &[f64], bank: &PrototypeBank) -> Result<()> {
    if x.len() != bank.feature_dim {
        return Err(Error::DimMismatch {
            expected: bank.feature_dim,
            got: x.len(),
        });
    }
    Ok(())
}

/// Closed-form combined masses for one feature vector, written to `out` (`K + 1`).
fn pixel_masses(x: &[f64], bank: &PrototypeBank, derived: &Derived, out: &mut [f64]) {
    let k = bank.classes;
    let mut prod_a = vec![1.0; k];
    let mut prod_b = 1.0;
    for i in 0..bank.count() {
        let d2 = squared_distance(x, bank.prototype(i));
        let s = derived.alpha[i] * (-derived.gamma[i] * d2).exp();
        let u = &derived.memberships[i * k..(i + 1) * k];
        for (pa, &uk) in prod_a.iter_mut().zip(u) {
            *pa *= 1.0 - s + uk * s;
        }
        prod_b *= 1.0 - s;
    }
    let mut total = prod_b;
    for (o, pa) in out.iter_mut().zip(&prod_a) {
        *o = pa - prod_b;
        total += *o;
    }
    out[k] = prod_b;
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Combined mass function for one feature vector.
pub fn enn_forward(x: &[f64], bank: &PrototypeBank, frame: &Frame) -> Result<MassFunction> {
    check_dim(x, bank)?;
    if frame.len() != bank.classes {
        return Err(Error::FrameMismatch);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonfiniteInput);
    }
    let mut out = vec![0.0; bank.classes + 1];
    pixel_masses(x, bank, &bank.derived(), &mut out);
    let omega = frame.omega();
    let entries = out[..bank.classes]
        .iter()
        .enumerate()
        .map(|(c, &m)| (FocalSet::singleton(c), m))
        .chain(std::iter::once((omega, out[bank.classes])));
    MassFunction::new(frame.clone(), entries)
}

/// Combined masses packed as `K + 1` values (singletons, then Ω).
pub fn enn_masses(x: &[f64], bank: &PrototypeBank) -> Result<Vec<f64>> {
    check_dim(x, bank)?;
    let mut out = vec![0.0; bank.classes + 1];
    pixel_masses(x, bank, &bank.derived(), &mut out);
    Ok(out)
}

/// Per-pixel forward pass over a feature map.
pub fn enn_forward_map(features: &FeatureMap, bank: &PrototypeBank) -> Result<MassMap> {
    if features.channels() != bank.feature_dim {
        return Err(Error::DimMismatch {
            expected: bank.feature_dim,
            got: features.channels(),
        });
    }
    if features.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonfiniteInput);
    }
    let derived = bank.derived();
    let width = bank.classes + 1;
    let mut out = PixelMap::zeros(features.height(), features.width(), width);
    for (x, o) in features.rows().zip(out.data_mut().chunks_exact_mut(width)) {
        pixel_masses(x, bank, &derived, o);
    }
    Ok(out)
}

/// Backward pass for one pixel, accumulating parameter gradients into `grads`
/// and writing the input gradient into `dx`.
fn pixel_backward(
    x: &[f64],
    upstream: &[f64],
    bank: &PrototypeBank,
    derived: &Derived,
    grads: &mut BankGradients,
    dx: &mut [f64],
) {
    let k = bank.classes;
    let count = bank.count();
    let dim = bank.feature_dim;

    let mut d2 = vec![0.0; count];
    let mut s = vec![0.0; count];
    let mut a = vec![0.0; count * k];
    let mut b = vec![0.0; count];
    for i in 0..count {
        d2[i] = squared_distance(x, bank.prototype(i));
        s[i] = derived.alpha[i] * (-derived.gamma[i] * d2[i]).exp();
        for c in 0..k {
            a[i * k + c] = 1.0 - s[i] + derived.memberships[i * k + c] * s[i];
        }
        b[i] = 1.0 - s[i];
    }

    // Leave-one-out products via prefix/suffix scans.
    let leave_one_out = |values: &dyn Fn(usize) -> f64| -> (Vec<f64>, f64) {
        let mut prefix = vec![1.0; count + 1];
        for i in 0..count {
            prefix[i + 1] = prefix[i] * values(i);
        }
        let mut out = vec![0.0; count];
        let mut suffix = 1.0;
        for i in (0..count).rev() {
            out[i] = prefix[i] * suffix;
            suffix *= values(i);
        }
        (out, prefix[count])
    };

    let mut loo_a = vec![0.0; count * k];
    let mut prod_a = vec![0.0; k];
    for c in 0..k {
        let (loo, full) = leave_one_out(&|i| a[i * k + c]);
        for i in 0..count {
            loo_a[i * k + c] = loo[i];
        }
        prod_a[c] = full;
    }
    let (loo_b, prod_b) = leave_one_out(&|i| b[i]);

    let mut unnorm = vec![0.0; k + 1];
    for c in 0..k {
        unnorm[c] = prod_a[c] - prod_b;
    }
    unnorm[k] = prod_b;
    let total: f64 = unnorm.iter().sum();
    let masses: Vec<f64> = unnorm.iter().map(|m| m / total).collect();
    let dot: f64 = upstream.iter().zip(&masses).map(|(g, m)| g * m).sum();
    let g_unnorm: Vec<f64> = upstream.iter().map(|g| (g - dot) / total).collect();
    let g_prod_a = &g_unnorm[..k];
    let g_prod_b = g_unnorm[k] - g_prod_a.iter().sum::<f64>();

    dx.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..count {
        let u = &derived.memberships[i * k..(i + 1) * k];
        let mut g_s = -g_prod_b * loo_b[i];
        let mut g_u = vec![0.0; k];
        for c in 0..k {
            let g_a = g_prod_a[c] * loo_a[i * k + c];
            g_s += g_a * (u[c] - 1.0);
            g_u[c] = g_a * s[i];
        }

        let raw = &bank.memberships_raw[i * k..(i + 1) * k];
        let norm = derived.raw_norm[i];
        if norm > 0.0 {
            let weighted: f64 = g_u.iter().zip(u).map(|(g, u)| g * u).sum();
            for c in 0..k {
                grads.memberships_raw[i * k + c] += 2.0 * raw[c] / norm * (g_u[c] - weighted);
            }
        }

        let alpha = derived.alpha[i];
        let gamma = derived.gamma[i];
        grads.alpha_raw[i] += g_s * s[i] * (1.0 - alpha);
        grads.gamma_raw[i] += g_s * (-d2[i] * s[i]) * 2.0 * bank.gamma_raw[i];

        // d s / d(d²) = -γ s
        let g_d2 = -g_s * gamma * s[i];
        let p = bank.prototype(i);
        for f in 0..dim {
            let diff = 2.0 * (x[f] - p[f]) * g_d2;
            dx[f] += diff;
            grads.prototypes[i * dim + f] -= diff;
        }
    }
}

/// Gradients of a scalar loss with respect to the bank parameters and the input,
/// given the loss gradient on the `K + 1` output masses.
pub fn enn_backward(
    x: &[f64],
    bank: &PrototypeBank,
    upstream: &[f64],
) -> Result<(BankGradients, Vec<f64>)> {
    check_dim(x, bank)?;
    if upstream.len() != bank.classes + 1 {
        return Err(Error::DimMismatch {
            expected: bank.classes + 1,
            got: upstream.len(),
        });
    }
    let mut grads = bank.zero_gradients();
    let mut dx = vec![0.0; bank.feature_dim];
    pixel_backward(x, upstream, bank, &bank.derived(), &mut grads, &mut dx);
    Ok((grads, dx))
}

/// Map-level backward pass. Parameter gradients are summed in row-major pixel order.
pub fn enn_backward_map(
    features: &FeatureMap,
    bank: &PrototypeBank,
    upstream: &MassMap,
) -> Result<(BankGradients, FeatureMap)> {
    if features.channels() != bank.feature_dim {
        return Err(Error::DimMismatch {
            expected: bank.feature_dim,
            got: features.channels(),
        });
    }
    if upstream.channels() != bank.classes + 1 || upstream.pixels() != features.pixels() {
        return Err(Error::ShapeMismatch("upstream gradient does not match features".into()));
    }
    let derived = bank.derived();
    let mut grads = bank.zero_gradients();
    let mut dx = PixelMap::zeros(features.height(), features.width(), features.channels());
    let dim = bank.feature_dim;
    for ((x, g), d) in features
        .rows()
        .zip(upstream.rows())
        .zip(dx.data_mut().chunks_exact_mut(dim))
    {
        if g.iter().all(|&v| v == 0.0) {
            continue;
        }
        pixel_backward(x, g, bank, &derived, &mut grads, d);
    }
    Ok((grads, dx))
}
