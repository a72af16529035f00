//! Evidential fusion of the probabilistic and evidential heads.
//!
//! A probability vector `p` read as a Bayesian mass, combined with a
//! singleton-plus-Ω mass `m`, gives
//!
//! ```text
//! fused_k = p_k (m_k + m_Ω) / (1 - κ)      1 - κ = Σ_j p_j (m_j + m_Ω)
//! ```
//!
//! The conflict κ is high where the two heads put their mass on different
//! classes and is exported as a per-pixel uncertainty map.

use crate::belief::{argmax, Frame, TOTAL_CONFLICT_EPS};
use crate::error::{Error, Result};
use crate::maps::{ConflictMap, LabelMap, MassMap, PixelMap, ProbabilityMap};

/// Conflict recorded for pixels where the heads contradict each other completely.
pub const SATURATED_CONFLICT: f64 = 1.0 - TOTAL_CONFLICT_EPS;

fn fuse_into(p: &[f64], m: &[f64], out: &mut [f64]) -> f64 {
    let k = p.len();
    let omega = m[k];
    let mut agreement = 0.0;
    for c in 0..k {
        out[c] = p[c] * (m[c] + omega);
        agreement += out[c];
    }
    if agreement > 0.0 {
        for o in out.iter_mut() {
            *o /= agreement;
        }
    }
    1.0 - agreement
}

/// Fused Bayesian masses and the conflict between the two sources.
pub fn fuse_pixel(p: &[f64], m: &[f64]) -> Result<(Vec<f64>, f64)> {
    if m.len() != p.len() + 1 {
        return Err(Error::DimMismatch {
            expected: p.len() + 1,
            got: m.len(),
        });
    }
    if p.iter().chain(m).any(|v| !v.is_finite()) {
        return Err(Error::NonfiniteInput);
    }
    let mut fused = vec![0.0; p.len()];
    let kappa = fuse_into(p, m, &mut fused);
    if kappa >= SATURATED_CONFLICT {
        return Err(Error::TotalConflict { kappa });
    }
    Ok((fused, kappa))
}

#[derive(Debug, Clone)]
pub struct FusionOutput {
    pub fused: ProbabilityMap,
    pub conflict: ConflictMap,
    /// Pixels whose sources were in total conflict; they keep `p_U` as output.
    pub total_conflict_pixels: usize,
}

/// Pixelwise fusion of a probability map with a mass map.
pub fn fuse_map(probs: &ProbabilityMap, masses: &MassMap) -> Result<FusionOutput> {
    let k = probs.channels();
    if probs.height() != masses.height()
        || probs.width() != masses.width()
        || masses.channels() != k + 1
    {
        return Err(Error::ShapeMismatch(format!(
            "probabilities {}x{}x{} vs masses {}x{}x{}",
            probs.height(),
            probs.width(),
            k,
            masses.height(),
            masses.width(),
            masses.channels()
        )));
    }
    let mut fused = PixelMap::zeros(probs.height(), probs.width(), k);
    let mut conflict = PixelMap::zeros(probs.height(), probs.width(), 1);
    let mut saturated = 0;
    for ((p, m), (out, kappa)) in probs.rows().zip(masses.rows()).zip(
        fused
            .data_mut()
            .chunks_exact_mut(k)
            .zip(conflict.data_mut().iter_mut()),
    ) {
        let value = fuse_into(p, m, out);
        if value >= SATURATED_CONFLICT || !value.is_finite() {
            out.copy_from_slice(p);
            *kappa = SATURATED_CONFLICT;
            saturated += 1;
        } else {
            *kappa = value.max(0.0);
        }
    }
    if saturated > 0 {
        log::warn!("{saturated} pixels in total conflict fell back to the probabilistic head");
    }
    Ok(FusionOutput {
        fused,
        conflict,
        total_conflict_pixels: saturated,
    })
}

/// Gradients of a loss on the fused map with respect to both inputs.
pub fn fuse_backward_map(
    probs: &ProbabilityMap,
    masses: &MassMap,
    fused: &ProbabilityMap,
    d_fused: &ProbabilityMap,
) -> Result<(ProbabilityMap, MassMap)> {
    let k = probs.channels();
    if !probs.same_shape(fused) || !probs.same_shape(d_fused) || masses.channels() != k + 1 {
        return Err(Error::ShapeMismatch("fusion gradient inputs".into()));
    }
    let mut d_probs = PixelMap::zeros(probs.height(), probs.width(), k);
    let mut d_masses = PixelMap::zeros(probs.height(), probs.width(), k + 1);
    let rows = probs
        .rows()
        .zip(masses.rows())
        .zip(fused.rows().zip(d_fused.rows()));
    let outs = d_probs
        .data_mut()
        .chunks_exact_mut(k)
        .zip(d_masses.data_mut().chunks_exact_mut(k + 1));
    for (((p, m), (f, g)), (dp, dm)) in rows.zip(outs) {
        let agreement: f64 = (0..k).map(|c| p[c] * (m[c] + m[k])).sum();
        if agreement <= TOTAL_CONFLICT_EPS {
            dp.copy_from_slice(g);
            continue;
        }
        let dot: f64 = g.iter().zip(f).map(|(g, f)| g * f).sum();
        let mut d_omega = 0.0;
        for c in 0..k {
            let dw = (g[c] - dot) / agreement;
            dp[c] = dw * (m[c] + m[k]);
            dm[c] = dw * p[c];
            d_omega += dm[c];
        }
        dm[k] = d_omega;
    }
    Ok((d_probs, d_masses))
}

/// Per-pixel argmax mapped to frame labels, lowest index on ties.
pub fn segment(fused: &ProbabilityMap, frame: &Frame) -> Result<LabelMap> {
    if fused.channels() != frame.len() {
        return Err(Error::DimMismatch {
            expected: frame.len(),
            got: fused.channels(),
        });
    }
    let labels = fused.rows().map(|p| frame.label(argmax(p))).collect();
    LabelMap::new(fused.height(), fused.width(), labels)
}
