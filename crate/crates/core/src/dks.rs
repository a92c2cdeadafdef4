//! Key-frame selection from the gap between predicted and from-scratch
//! pre-training losses.
//!
//! Frame indices are 0-based: frame 0 is always a key-frame and a scene
//! change at frame `t` means frame `t` is the first frame of the new scene.

use serde::Serialize;

use crate::error::{Error, Result};

/// Pre-training losses for a clip of `T` frames.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossProfile {
    /// From-scratch loss of every frame (`T` entries).
    pub i_losses: Vec<f64>,
    /// Loss of frame `t` predicted from frame `t - 1`, for `t ≥ 1`
    /// (`T - 1` entries; entry `k` belongs to frame `k + 1`).
    pub p_losses: Vec<f64>,
}

impl LossProfile {
    pub fn new(i_losses: Vec<f64>, p_losses: Vec<f64>) -> Result<Self> {
        if i_losses.is_empty() || p_losses.len() + 1 != i_losses.len() {
            return Err(Error::InvalidArgument(format!(
                "{} from-scratch losses need {} predicted losses, got {}",
                i_losses.len(),
                i_losses.len().saturating_sub(1),
                p_losses.len()
            )));
        }
        Ok(Self { i_losses, p_losses })
    }

    pub fn frames(&self) -> usize {
        self.i_losses.len()
    }

    /// `Δℓ_t = ℓᴾ_t − ℓᴵ_t` for `t ≥ 1`; entry `k` belongs to frame `k + 1`.
    pub fn deltas(&self) -> Vec<f64> {
        self.p_losses
            .iter()
            .zip(&self.i_losses[1..])
            .map(|(p, i)| p - i)
            .collect()
    }
}

/// Sorted, unique key-frame indices, always starting with frame 0.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct KeyframeSet {
    indices: Vec<usize>,
}

impl KeyframeSet {
    /// Builds a set from arbitrary indices; frame 0 is added if missing.
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.push(0);
        indices.sort_unstable();
        indices.dedup();
        Self { indices }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn contains(&self, frame: usize) -> bool {
        self.indices.binary_search(&frame).is_ok()
    }

    /// Adds key-frames so that no run of frames is longer than `interval`.
    pub fn with_max_interval(&self, frames: usize, interval: usize) -> Self {
        let mut out = Vec::new();
        let mut last = 0;
        for t in 0..frames {
            if self.contains(t) || t - last >= interval {
                out.push(t);
                last = t;
            }
        }
        Self::new(out)
    }
}

/// Frame `t ≥ 1` is a key-frame iff `Δℓ_t > μ_t + 3σ_t`, where `μ_t` and
/// `σ_t` are the mean and population standard deviation of the deltas of
/// frames `max(1, t - w) ..= min(T - 1, t + w)`, `t` itself included.
pub fn select_keyframes(profile: &LossProfile, window_half_width: usize) -> Result<KeyframeSet> {
    if window_half_width == 0 {
        return Err(Error::InvalidArgument("key-frame window half width must be at least 1".into()));
    }
    let deltas = profile.deltas();
    let frames = profile.frames();
    let mut keys = vec![0];
    for t in 1..frames {
        let lo = t.saturating_sub(window_half_width).max(1);
        let hi = (t + window_half_width).min(frames - 1);
        let d_t = deltas[t - 1];
        // Centered on Δℓ_t so equal windows compare 0 > 0 exactly.
        let centered: Vec<f64> = deltas[lo - 1..hi].iter().map(|d| d - d_t).collect();
        let n = centered.len() as f64;
        let mean = centered.iter().sum::<f64>() / n;
        let var = centered.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
        if -mean > 3.0 * var.sqrt() {
            keys.push(t);
        }
    }
    Ok(KeyframeSet::new(keys))
}
