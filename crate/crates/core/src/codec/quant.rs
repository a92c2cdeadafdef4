//! Uniform asymmetric scalar quantization with floor-clamp code mapping.

use half::f16;

use crate::error::{Error, Result};

/// `code = ⌊clamp((v − β) / γ, 0, 2^b − 1)⌋`, `v̂ = code · γ + β`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AsymmetricQuantizer {
    pub gamma: f64,
    pub beta: f64,
    pub bits: u32,
}

/// Smallest step used for constant inputs.
pub const MIN_GAMMA: f64 = 1e-12;

// Keeps quotients such as 1 / (1/255) from flooring to 254.
const CODE_SLACK: f64 = 1e-9;

impl AsymmetricQuantizer {
    pub fn max_code(&self) -> u32 {
        ((1u64 << self.bits) - 1) as u32
    }

    pub fn code(&self, v: f64) -> u32 {
        let x = ((v - self.beta) / self.gamma + CODE_SLACK).clamp(0.0, self.max_code() as f64);
        x.floor() as u32
    }

    pub fn dequantize(&self, code: u32) -> f64 {
        code as f64 * self.gamma + self.beta
    }

    pub fn quantize_dequantize(&self, v: f64) -> f64 {
        self.dequantize(self.code(v))
    }

    /// Whether `[lo, hi]` maps without clamping.
    pub fn covers(&self, lo: f64, hi: f64) -> bool {
        self.beta <= lo && self.beta + self.max_code() as f64 * self.gamma >= hi
    }

    /// A quantizer whose `γ` and `β` are exact `f16` values covering
    /// `[lo, hi]`: `β` is `hint_beta` (clipped to `lo`) rounded down and `γ`
    /// is `hint_gamma` raised as needed for coverage, rounded up.
    pub fn storable(hint_gamma: f64, hint_beta: f64, lo: f64, hi: f64, bits: u32) -> Result<Self> {
        check_bits(bits)?;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::InvalidArgument(format!("bad quantizer range [{lo}, {hi}]")));
        }
        let max_code = ((1u64 << bits) - 1) as f64;
        let beta = f16_at_most(hint_beta.min(lo))?;
        let needed = (hi - beta) / max_code;
        let mut gamma = f16_at_least(hint_gamma.max(needed).max(f16::from_bits(1).to_f64()))?;
        while beta + max_code * gamma < hi {
            gamma = next_up(f16::from_f64(gamma)).to_f64();
            if !gamma.is_finite() {
                return Err(Error::InvalidArgument(format!("range [{lo}, {hi}] exceeds 16-bit float")));
            }
        }
        Ok(Self { gamma, beta, bits })
    }

    /// Storable quantizer fitted to the range of `values`.
    pub fn fit_storable(values: &[f64], bits: u32) -> Result<Self> {
        let (lo, hi) = range(values)?;
        let gamma = ((hi - lo) / ((1u64 << bits) - 1) as f64).max(MIN_GAMMA);
        Self::storable(gamma, lo, lo, hi, bits)
    }

    pub fn gamma_f16(&self) -> f16 {
        f16::from_f64(self.gamma)
    }

    pub fn beta_f16(&self) -> f16 {
        f16::from_f64(self.beta)
    }

    pub fn from_f16(gamma: f16, beta: f16, bits: u32) -> Self {
        Self {
            gamma: gamma.to_f64(),
            beta: beta.to_f64(),
            bits,
        }
    }
}

fn check_bits(bits: u32) -> Result<()> {
    if !(1..=16).contains(&bits) {
        return Err(Error::InvalidArgument(format!("quantizer bits must lie in 1..=16, got {bits}")));
    }
    Ok(())
}

fn range(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("nothing to quantize".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::InvalidArgument("non-finite value in quantizer input".into()));
    }
    Ok((lo, hi))
}

/// Quantizes `values` with `β = min`, `γ = (max − min) / (2^b − 1)`
/// (at least [`MIN_GAMMA`]).
pub fn quantize_asymmetric(values: &[f64], bits: u32) -> Result<(Vec<u32>, AsymmetricQuantizer)> {
    check_bits(bits)?;
    let (lo, hi) = range(values)?;
    let q = AsymmetricQuantizer {
        gamma: ((hi - lo) / ((1u64 << bits) - 1) as f64).max(MIN_GAMMA),
        beta: lo,
        bits,
    };
    Ok((values.iter().map(|&v| q.code(v)).collect(), q))
}

fn next_up(h: f16) -> f16 {
    let b = h.to_bits();
    if h.to_f64() == 0.0 {
        f16::from_bits(1)
    } else if b & 0x8000 == 0 {
        f16::from_bits(b + 1)
    } else {
        f16::from_bits(b - 1)
    }
}

fn next_down(h: f16) -> f16 {
    let b = h.to_bits();
    if h.to_f64() == 0.0 {
        f16::from_bits(0x8001)
    } else if b & 0x8000 == 0 {
        f16::from_bits(b - 1)
    } else {
        f16::from_bits(b + 1)
    }
}

/// Largest finite `f16` not above `x`.
pub fn f16_at_most(x: f64) -> Result<f64> {
    let mut h = f16::from_f64(x);
    if h.to_f64() > x {
        h = next_down(h);
    }
    if !h.is_finite() {
        return Err(Error::InvalidArgument(format!("{x} exceeds 16-bit float range")));
    }
    Ok(h.to_f64())
}

/// Smallest finite `f16` not below `x`.
pub fn f16_at_least(x: f64) -> Result<f64> {
    let mut h = f16::from_f64(x);
    if h.to_f64() < x {
        h = next_up(h);
    }
    if !h.is_finite() {
        return Err(Error::InvalidArgument(format!("{x} exceeds 16-bit float range")));
    }
    Ok(h.to_f64())
}
