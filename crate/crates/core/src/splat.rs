//! Splat primitives and the closed-form per-splat math.
//!
//! A splat is an anisotropic 2D Gaussian parameterized by its center, the
//! three lower-triangular entries of a Cholesky factor `L` (so that the
//! covariance is `Σ = L Lᵀ`), and a signed weighted color. Pixel
//! coordinates are continuous with the origin at the top-left corner of the
//! image; pixel `(i, j)` has its center at `(i + 0.5, j + 0.5)`.

use crate::error::{Error, Result};

/// Lower bound on the diagonal Cholesky entries, in pixels.
pub const CHOLESKY_EPS: f64 = 1e-3;

/// One 2D Gaussian primitive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Splat {
    /// Center in pixel coordinates.
    pub position: [f64; 2],
    /// `(ℓ1, ℓ2, ℓ3)` with `L = [[ℓ1, 0], [ℓ2, ℓ3]]`, pixel units.
    pub cholesky: [f64; 3],
    /// Linear RGB contribution at the center. Unclamped and may be negative.
    pub color: [f64; 3],
    /// Training-time rendering weight. Folded into `color` before storage.
    pub importance: f64,
}

impl Splat {
    pub fn new(position: [f64; 2], cholesky: [f64; 3], color: [f64; 3]) -> Self {
        Self {
            position,
            cholesky,
            color,
            importance: 1.0,
        }
    }

    /// Checks the splat invariants.
    pub fn validate(&self) -> Result<()> {
        let finite = self.position.iter().all(|v| v.is_finite())
            && self.cholesky.iter().all(|v| v.is_finite())
            && self.color.iter().all(|v| v.is_finite())
            && self.importance.is_finite();
        if !finite {
            return Err(Error::InvalidSplat("non-finite parameter".into()));
        }
        if self.cholesky[0] < CHOLESKY_EPS || self.cholesky[2] < CHOLESKY_EPS {
            return Err(Error::InvalidSplat(format!(
                "degenerate Cholesky factor ({}, {}, {})",
                self.cholesky[0], self.cholesky[1], self.cholesky[2]
            )));
        }
        Ok(())
    }

    /// Projects the diagonal Cholesky entries back onto `[CHOLESKY_EPS, ∞)`.
    pub fn clamp_cholesky(&mut self) {
        self.cholesky[0] = self.cholesky[0].max(CHOLESKY_EPS);
        self.cholesky[2] = self.cholesky[2].max(CHOLESKY_EPS);
    }

    /// Half-width and half-height of the axis-aligned box enclosing the
    /// `k`-sigma ellipse: `k·√Σ₁₁` and `k·√Σ₂₂`.
    pub fn extent(&self, k: f64) -> [f64; 2] {
        let [a, b, c] = self.cholesky;
        [k * a, k * (b * b + c * c).sqrt()]
    }

    pub fn kernel(&self, use_importance: bool) -> Kernel {
        Kernel::new(self, use_importance)
    }
}

/// Covariance `Σ = L Lᵀ` as a row-major 2×2 matrix.
pub fn covariance_from_cholesky(cholesky: [f64; 3]) -> Result<[[f64; 2]; 2]> {
    let [a, b, c] = cholesky;
    if !(a >= CHOLESKY_EPS && c >= CHOLESKY_EPS) || !b.is_finite() {
        return Err(Error::InvalidSplat(format!(
            "degenerate Cholesky factor ({a}, {b}, {c})"
        )));
    }
    Ok([[a * a, a * b], [a * b, b * b + c * c]])
}

/// Mahalanobis exponent `½ dᵀ Σ⁻¹ d` with `d = pixel − position`.
pub fn exponent(splat: &Splat, pixel: [f64; 2]) -> f64 {
    splat.kernel(false).exponent(pixel)
}

/// Color contribution of `splat` at `pixel`: `c′·exp(−σ)`, or
/// `w·c′·exp(−σ)` when `use_importance` is set.
pub fn contribution(splat: &Splat, pixel: [f64; 2], use_importance: bool) -> [f64; 3] {
    splat.kernel(use_importance).contribution(pixel)
}

/// Per-splat constants for evaluating the Gaussian at many pixels.
///
/// With `L⁻¹ d = (u₁, u₂)` the exponent is `½(u₁² + u₂²)`, where
/// `u₁ = d₁ / ℓ1` and `u₂ = (d₂ − ℓ2·u₁) / ℓ3`. Every rendering path goes
/// through this type so that the brute-force and tiled renderers produce
/// identical bits.
#[derive(Clone, Copy, Debug)]
pub struct Kernel {
    pub center: [f64; 2],
    pub inv_a: f64,
    pub b: f64,
    pub inv_c: f64,
    /// `w·c′` or `c′` depending on the importance flag.
    pub color: [f64; 3],
}

impl Kernel {
    pub fn new(splat: &Splat, use_importance: bool) -> Self {
        let [a, b, c] = splat.cholesky;
        let color = if use_importance {
            let w = splat.importance;
            [w * splat.color[0], w * splat.color[1], w * splat.color[2]]
        } else {
            splat.color
        };
        Self {
            center: splat.position,
            inv_a: 1.0 / a,
            b,
            inv_c: 1.0 / c,
            color,
        }
    }

    #[inline(always)]
    pub fn whiten(&self, pixel: [f64; 2]) -> (f64, f64) {
        let dx = pixel[0] - self.center[0];
        let dy = pixel[1] - self.center[1];
        let u1 = dx * self.inv_a;
        let u2 = (dy - self.b * u1) * self.inv_c;
        (u1, u2)
    }

    #[inline(always)]
    pub fn exponent(&self, pixel: [f64; 2]) -> f64 {
        let (u1, u2) = self.whiten(pixel);
        0.5 * (u1 * u1 + u2 * u2)
    }

    #[inline(always)]
    pub fn contribution(&self, pixel: [f64; 2]) -> [f64; 3] {
        let e = (-self.exponent(pixel)).exp();
        [self.color[0] * e, self.color[1] * e, self.color[2] * e]
    }
}

/// Whether a frame was trained from scratch or predicted from its predecessor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum FrameKind {
    I,
    P,
}

/// Where a splat of a P-frame came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Provenance {
    /// Carried over from the given slot of the previous finalized frame.
    Inherited(u32),
    /// Freshly added to this frame.
    Injected,
}

/// The splat set for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SplatFrame {
    pub splats: Vec<Splat>,
    pub kind: FrameKind,
    pub provenance: Vec<Provenance>,
}

impl SplatFrame {
    /// A key frame: every splat is marked as injected.
    pub fn key(splats: Vec<Splat>) -> Self {
        let provenance = vec![Provenance::Injected; splats.len()];
        Self {
            splats,
            kind: FrameKind::I,
            provenance,
        }
    }

    /// Starts a P-frame from a finalized predecessor. Every splat inherits
    /// its slot and has its importance reset to 1.
    pub fn predicted_from(prev: &SplatFrame) -> Self {
        let splats = prev
            .splats
            .iter()
            .map(|s| Splat {
                importance: 1.0,
                ..*s
            })
            .collect();
        let provenance = (0..prev.len() as u32).map(Provenance::Inherited).collect();
        Self {
            splats,
            kind: FrameKind::P,
            provenance,
        }
    }

    pub fn len(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.provenance.len() != self.splats.len() {
            return Err(Error::InvalidSplat(format!(
                "provenance length {} does not match {} splats",
                self.provenance.len(),
                self.splats.len()
            )));
        }
        for (i, s) in self.splats.iter().enumerate() {
            s.validate()
                .map_err(|e| Error::InvalidSplat(format!("splat {i}: {e}")))?;
        }
        Ok(())
    }

    /// Number of splats carried over from the previous frame.
    pub fn inherited_count(&self) -> usize {
        self.provenance
            .iter()
            .filter(|p| matches!(p, Provenance::Inherited(_)))
            .count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn splat_with(cholesky: [f64; 3]) -> Splat {
        Splat::new([10.0, 20.0], cholesky, [1.0, 1.0, 1.0])
    }

    #[test]
    fn covariance_identity() {
        assert_eq!(
            covariance_from_cholesky([1.0, 0.0, 1.0]).unwrap(),
            [[1.0, 0.0], [0.0, 1.0]]
        );
    }

    #[test]
    fn covariance_matches_matrix_product() {
        // L = [[2, 0], [1, 1]], L Lᵀ by hand.
        let l = [[2.0, 0.0], [1.0, 1.0]];
        let mut expected = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                expected[i][j] = (0..2).map(|k| l[i][k] * l[j][k]).sum();
            }
        }
        assert_eq!(expected, [[4.0, 2.0], [2.0, 2.0]]);
        assert_eq!(covariance_from_cholesky([2.0, 1.0, 1.0]).unwrap(), expected);
    }

    #[test]
    fn covariance_rejects_degenerate() {
        assert!(covariance_from_cholesky([1e-4, 0.0, 1.0]).is_err());
        assert!(covariance_from_cholesky([1.0, 0.0, 0.0]).is_err());
        assert!(covariance_from_cholesky([f64::NAN, 0.0, 1.0]).is_err());
    }

    #[test]
    fn exponent_examples() {
        let s = splat_with([1.0, 0.0, 1.0]);
        assert_eq!(exponent(&s, [10.0, 20.0]), 0.0);
        assert!((exponent(&s, [11.0, 21.0]) - 1.0).abs() < 1e-15);
        // Σ = [[4, 0], [0, 1]]
        let s = splat_with([2.0, 0.0, 1.0]);
        assert!((exponent(&s, [12.0, 20.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn contribution_examples() {
        let mut s = splat_with([1.0, 0.0, 1.0]);
        s.color = [0.3, -0.2, 0.7];
        assert_eq!(contribution(&s, s.position, false), s.color);
        s.importance = 0.0;
        assert_eq!(contribution(&s, [11.0, 22.0], true), [0.0, 0.0, 0.0]);

        let s = splat_with([1.0, 0.0, 1.0]);
        let c = contribution(&s, [11.0, 21.0], false);
        for v in c {
            assert!((v - (-1.0f64).exp()).abs() < 1e-15);
            assert!((v - 0.3679).abs() < 1e-4);
        }
    }

    #[test]
    fn exponent_uses_inverse_covariance() {
        let s = splat_with([1.7, -0.6, 0.9]);
        let sigma = covariance_from_cholesky(s.cholesky).unwrap();
        let det = sigma[0][0] * sigma[1][1] - sigma[0][1] * sigma[1][0];
        let d = [3.0 - 10.0, 17.5 - 20.0];
        let quad = (sigma[1][1] * d[0] * d[0] - 2.0 * sigma[0][1] * d[0] * d[1]
            + sigma[0][0] * d[1] * d[1])
            / det;
        assert!((exponent(&s, [3.0, 17.5]) - 0.5 * quad).abs() < 1e-12);
    }

    #[test]
    fn extent_is_three_sigma_box() {
        let s = splat_with([2.0, 1.0, 1.0]);
        let [rx, ry] = s.extent(3.0);
        assert_eq!(rx, 6.0);
        assert!((ry - 3.0 * 2f64.sqrt()).abs() < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn cholesky() -> impl Strategy<Value = [f64; 3]> {
            (CHOLESKY_EPS..20.0, -20.0..20.0f64, CHOLESKY_EPS..20.0).prop_map(|(a, b, c)| [a, b, c])
        }

        proptest! {
            #[test]
            fn covariance_is_spd(l in cholesky()) {
                let s = covariance_from_cholesky(l).unwrap();
                prop_assert_eq!(s[0][1], s[1][0]);
                let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
                let expected = (l[0] * l[2]).powi(2);
                prop_assert!((det - expected).abs() <= 1e-9 * expected.max(1.0));
                prop_assert!(s[0][0] + s[1][1] > 0.0);
                prop_assert!(det > 0.0);
            }

            #[test]
            fn exponent_translation_invariant(
                l in cholesky(),
                p in (-50.0..50.0f64, -50.0..50.0f64),
                q in (-50.0..50.0f64, -50.0..50.0f64),
                t in (-100.0..100.0f64, -100.0..100.0f64),
            ) {
                let a = Splat::new([p.0, p.1], l, [1.0; 3]);
                let b = Splat::new([p.0 + t.0, p.1 + t.1], l, [1.0; 3]);
                let ea = exponent(&a, [q.0, q.1]);
                let eb = exponent(&b, [q.0 + t.0, q.1 + t.1]);
                prop_assert!(ea >= 0.0);
                prop_assert!((ea - eb).abs() <= 1e-6 * ea.max(1.0));
            }

            #[test]
            fn contribution_linear_in_color_and_importance(
                l in cholesky(),
                c in proptest::array::uniform3(-2.0..2.0f64),
                w in -3.0..3.0f64,
                k in -4.0..4.0f64,
            ) {
                let mut s = Splat::new([0.0, 0.0], l, c);
                s.importance = w;
                let px = [0.7, -1.3];
                let base = contribution(&s, px, true);
                let mut scaled = s;
                scaled.color = [k * c[0], k * c[1], k * c[2]];
                let with_color = contribution(&scaled, px, true);
                let mut reweighted = s;
                reweighted.importance = k * w;
                let with_w = contribution(&reweighted, px, true);
                for ch in 0..3 {
                    prop_assert!((with_color[ch] - k * base[ch]).abs() <= 1e-12);
                    prop_assert!((with_w[ch] - k * base[ch]).abs() <= 1e-12);
                }
            }
        }
    }
}
