//! Per-frame quantization: absolute coding for key-frames, slot-wise delta
//! coding against the decoded previous frame for P-frames.

use half::f16;

use crate::codec::quant::AsymmetricQuantizer;
use crate::codec::rvq::{rvq_encode, train_codebooks, Codebooks, Vec3};
use crate::codec::QuantConfig;
use crate::error::{Error, Result};
use crate::splat::{FrameKind, Provenance, Splat, SplatFrame};

/// Maps pixel positions to `[-1, 1]` over the image for 16-bit storage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameGeometry {
    pub width: usize,
    pub height: usize,
}

impl FrameGeometry {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }

    fn half(&self) -> [f64; 2] {
        [self.width as f64 / 2.0, self.height as f64 / 2.0]
    }

    pub fn normalize(&self, p: [f64; 2]) -> [f64; 2] {
        let h = self.half();
        [(p[0] - h[0]) / h[0], (p[1] - h[1]) / h[1]]
    }

    pub fn denormalize(&self, p: [f64; 2]) -> [f64; 2] {
        let h = self.half();
        [p[0] * h[0] + h[0], p[1] * h[1] + h[1]]
    }
}

/// Scale/offset pairs and `b`-bit codes for the three Cholesky entries.
#[derive(Clone, Debug, PartialEq)]
pub struct CholeskyPlane {
    /// Zero when `codes` is empty.
    pub gamma: [f16; 3],
    pub beta: [f16; 3],
    pub codes: Vec<[u32; 3]>,
}

impl CholeskyPlane {
    pub fn quantizers(&self, bits: u32) -> [AsymmetricQuantizer; 3] {
        std::array::from_fn(|i| AsymmetricQuantizer::from_f16(self.gamma[i], self.beta[i], bits))
    }

    fn dequantize_all(&self, bits: u32) -> Vec<[f64; 3]> {
        let q = self.quantizers(bits);
        self.codes
            .iter()
            .map(|c| std::array::from_fn(|i| q[i].dequantize(c[i])))
            .collect()
    }
}

/// Per-frame codebooks and per-splat stage indices.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorPlane {
    /// `None` when there are no splats to code.
    pub codebooks: Option<Codebooks>,
    pub indices: Vec<Vec<u32>>,
}

/// Splats injected into a P-frame, coded absolutely.
#[derive(Clone, Debug, PartialEq)]
pub struct InjectedBlock {
    pub positions: Vec<[f16; 2]>,
    pub cholesky: CholeskyPlane,
    pub colors: Vec<[f16; 3]>,
}

impl InjectedBlock {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// One coded frame. For key-frames the main planes hold absolute values;
/// for P-frames they hold deltas for the inherited splats, listed in
/// ascending slot order, followed by the injected block.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedFrame {
    pub kind: FrameKind,
    /// P-frames: which slots of the previous frame survive. Empty for I.
    pub slot_mask: Vec<bool>,
    pub positions: Vec<[f16; 2]>,
    pub cholesky: CholeskyPlane,
    pub colors: ColorPlane,
    pub injected: InjectedBlock,
}

impl QuantizedFrame {
    pub fn main_count(&self) -> usize {
        self.positions.len()
    }

    pub fn len(&self) -> usize {
        self.main_count() + self.injected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The values a frame's planes quantize, before rounding.
#[derive(Clone, Debug)]
pub(crate) struct CodingTargets {
    pub kind: FrameKind,
    pub slot_mask: Vec<bool>,
    pub positions: Vec<[f64; 2]>,
    pub cholesky: Vec<[f64; 3]>,
    pub colors: Vec<Vec3>,
    pub injected: Vec<Splat>,
}

/// Splits `frame` into what each plane codes. P-frames must list inherited
/// splats first, in strictly ascending slot order, then injected ones.
pub(crate) fn coding_targets(
    frame: &SplatFrame,
    prev: Option<&SplatFrame>,
    geom: FrameGeometry,
) -> Result<CodingTargets> {
    frame.validate()?;
    match (frame.kind, prev) {
        (FrameKind::I, _) => Ok(CodingTargets {
            kind: FrameKind::I,
            slot_mask: Vec::new(),
            positions: frame.splats.iter().map(|s| geom.normalize(s.position)).collect(),
            cholesky: frame.splats.iter().map(|s| s.cholesky).collect(),
            colors: frame.splats.iter().map(|s| s.color).collect(),
            injected: Vec::new(),
        }),
        (FrameKind::P, None) => Err(Error::SlotMap("P-frame without a previous frame".into())),
        (FrameKind::P, Some(prev)) => {
            let mut slot_mask = vec![false; prev.len()];
            let mut slots = Vec::new();
            let mut injected = Vec::new();
            let mut last: Option<usize> = None;
            for (s, p) in frame.splats.iter().zip(&frame.provenance) {
                match *p {
                    Provenance::Inherited(slot) => {
                        let slot = slot as usize;
                        if !injected.is_empty() {
                            return Err(Error::SlotMap("inherited splat after an injected one".into()));
                        }
                        if slot >= prev.len() {
                            return Err(Error::SlotMap(format!(
                                "slot {slot} outside a previous frame of {}",
                                prev.len()
                            )));
                        }
                        if last.is_some_and(|l| l >= slot) {
                            return Err(Error::SlotMap(format!("slot {slot} out of order")));
                        }
                        last = Some(slot);
                        slot_mask[slot] = true;
                        slots.push(slot);
                    }
                    Provenance::Injected => injected.push(*s),
                }
            }
            let inherited = &frame.splats[..slots.len()];
            let positions = inherited
                .iter()
                .zip(&slots)
                .map(|(s, &k)| {
                    let a = geom.normalize(s.position);
                    let b = geom.normalize(prev.splats[k].position);
                    [a[0] - b[0], a[1] - b[1]]
                })
                .collect();
            let cholesky = inherited
                .iter()
                .zip(&slots)
                .map(|(s, &k)| std::array::from_fn(|i| s.cholesky[i] - prev.splats[k].cholesky[i]))
                .collect();
            let colors = inherited
                .iter()
                .zip(&slots)
                .map(|(s, &k)| std::array::from_fn(|i| s.color[i] - prev.splats[k].color[i]))
                .collect();
            Ok(CodingTargets {
                kind: FrameKind::P,
                slot_mask,
                positions,
                cholesky,
                colors,
                injected,
            })
        }
    }
}

/// Quantizers and codebooks used to code one frame.
#[derive(Clone, Debug)]
pub(crate) struct FrameQuantizers {
    pub main: [AsymmetricQuantizer; 3],
    pub injected: [AsymmetricQuantizer; 3],
    pub codebooks: Option<Codebooks>,
}

pub(crate) fn component_range(values: &[[f64; 3]], i: usize) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v[i]), hi.max(v[i])))
}

fn fitted_quantizers(values: &[[f64; 3]], bits: u32) -> Result<[AsymmetricQuantizer; 3]> {
    let placeholder = AsymmetricQuantizer {
        gamma: 0.0,
        beta: 0.0,
        bits,
    };
    if values.is_empty() {
        return Ok([placeholder; 3]);
    }
    let mut out = [placeholder; 3];
    for (i, q) in out.iter_mut().enumerate() {
        let column: Vec<f64> = values.iter().map(|v| v[i]).collect();
        *q = AsymmetricQuantizer::fit_storable(&column, bits)?;
    }
    Ok(out)
}

impl FrameQuantizers {
    /// Quantizers fitted to the ranges of `targets` and freshly trained,
    /// `f16`-rounded codebooks.
    pub fn fit(targets: &CodingTargets, quant: &QuantConfig, seed: u64) -> Result<Self> {
        let injected: Vec<[f64; 3]> = targets.injected.iter().map(|s| s.cholesky).collect();
        let codebooks = if targets.colors.is_empty() {
            None
        } else {
            Some(train_codebooks(&targets.colors, quant.rvq_stages, quant.rvq_codebook_size, seed)?.to_f16())
        };
        Ok(Self {
            main: fitted_quantizers(&targets.cholesky, quant.cholesky_bits)?,
            injected: fitted_quantizers(&injected, quant.cholesky_bits)?,
            codebooks,
        })
    }
}

fn to_f16_pair(p: [f64; 2]) -> [f16; 2] {
    p.map(f16::from_f64)
}

fn cholesky_plane(values: &[[f64; 3]], q: &[AsymmetricQuantizer; 3]) -> CholeskyPlane {
    if values.is_empty() {
        return CholeskyPlane {
            gamma: [f16::ZERO; 3],
            beta: [f16::ZERO; 3],
            codes: Vec::new(),
        };
    }
    CholeskyPlane {
        gamma: q.map(|q| q.gamma_f16()),
        beta: q.map(|q| q.beta_f16()),
        codes: values.iter().map(|v| std::array::from_fn(|i| q[i].code(v[i]))).collect(),
    }
}

fn check_storable(v: f64) -> Result<()> {
    if f16::from_f64(v).is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{v} exceeds 16-bit float range")))
    }
}

/// Codes `targets` with the given quantizers.
pub(crate) fn quantize_targets(targets: &CodingTargets, q: &FrameQuantizers, geom: FrameGeometry) -> Result<QuantizedFrame> {
    for v in targets.positions.iter().flatten() {
        check_storable(*v)?;
    }
    let colors = match (&q.codebooks, targets.colors.is_empty()) {
        (_, true) => ColorPlane {
            codebooks: None,
            indices: Vec::new(),
        },
        (Some(books), false) => ColorPlane {
            codebooks: Some(books.clone()),
            indices: targets.colors.iter().map(|c| rvq_encode(c, books)).collect(),
        },
        (None, false) => return Err(Error::InvalidArgument("colors to code but no codebooks".into())),
    };
    let inj_chol: Vec<[f64; 3]> = targets.injected.iter().map(|s| s.cholesky).collect();
    for s in &targets.injected {
        for v in geom.normalize(s.position).iter().chain(&s.color) {
            check_storable(*v)?;
        }
    }
    Ok(QuantizedFrame {
        kind: targets.kind,
        slot_mask: targets.slot_mask.clone(),
        positions: targets.positions.iter().map(|&p| to_f16_pair(p)).collect(),
        cholesky: cholesky_plane(&targets.cholesky, &q.main),
        colors,
        injected: InjectedBlock {
            positions: targets.injected.iter().map(|s| to_f16_pair(geom.normalize(s.position))).collect(),
            cholesky: cholesky_plane(&inj_chol, &q.injected),
            colors: targets.injected.iter().map(|s| s.color.map(f16::from_f64)).collect(),
        },
    })
}

/// Quantizes `frame`. P-frames are coded against `prev`, which must be the
/// decoded previous frame so encoder and decoder stay in lockstep.
pub fn encode_frame(
    frame: &SplatFrame,
    prev: Option<&SplatFrame>,
    geom: FrameGeometry,
    quant: &QuantConfig,
    seed: u64,
) -> Result<QuantizedFrame> {
    let targets = coding_targets(frame, prev, geom)?;
    let q = FrameQuantizers::fit(&targets, quant, seed)?;
    quantize_targets(&targets, &q, geom)
}

/// Reconstructs the splats of a coded frame.
pub fn decode_frame(
    qf: &QuantizedFrame,
    prev: Option<&SplatFrame>,
    geom: FrameGeometry,
    bits: u32,
) -> Result<SplatFrame> {
    let m = qf.main_count();
    if qf.cholesky.codes.len() != m || qf.colors.indices.len() != m {
        return Err(Error::InvalidArgument("plane lengths disagree".into()));
    }
    let chol = qf.cholesky.dequantize_all(bits);
    let colors: Vec<Vec3> = match &qf.colors.codebooks {
        Some(books) => qf.colors.indices.iter().map(|idx| books.reconstruct(idx)).collect(),
        None if m == 0 => Vec::new(),
        None => return Err(Error::InvalidArgument("missing codebooks".into())),
    };
    let mut splats = Vec::with_capacity(qf.len());
    let mut provenance = Vec::with_capacity(qf.len());
    match qf.kind {
        FrameKind::I => {
            if !qf.injected.is_empty() || !qf.slot_mask.is_empty() {
                return Err(Error::SlotMap("key-frame with P-frame fields".into()));
            }
            for k in 0..m {
                let p = qf.positions[k].map(f16::to_f64);
                splats.push(Splat::new(geom.denormalize(p), chol[k], colors[k]));
                provenance.push(Provenance::Injected);
            }
        }
        FrameKind::P => {
            let prev = prev.ok_or_else(|| Error::SlotMap("P-frame without a previous frame".into()))?;
            if qf.slot_mask.len() != prev.len() {
                return Err(Error::SlotMap(format!(
                    "slot map covers {} slots, previous frame has {}",
                    qf.slot_mask.len(),
                    prev.len()
                )));
            }
            let slots: Vec<usize> = (0..prev.len()).filter(|&k| qf.slot_mask[k]).collect();
            if slots.len() != m {
                return Err(Error::SlotMap(format!("{} survivors for {m} coded splats", slots.len())));
            }
            for (k, &slot) in slots.iter().enumerate() {
                let base = &prev.splats[slot];
                let d = qf.positions[k].map(f16::to_f64);
                let b = geom.normalize(base.position);
                let position = geom.denormalize([b[0] + d[0], b[1] + d[1]]);
                let cholesky = std::array::from_fn(|i| base.cholesky[i] + chol[k][i]);
                let color = std::array::from_fn(|i| base.color[i] + colors[k][i]);
                splats.push(Splat::new(position, cholesky, color));
                provenance.push(Provenance::Inherited(slot as u32));
            }
        }
    }
    let inj_chol = qf.injected.cholesky.dequantize_all(bits);
    if inj_chol.len() != qf.injected.len() || qf.injected.colors.len() != qf.injected.len() {
        return Err(Error::InvalidArgument("injected plane lengths disagree".into()));
    }
    for k in 0..qf.injected.len() {
        let p = qf.injected.positions[k].map(f16::to_f64);
        let c = qf.injected.colors[k].map(f16::to_f64);
        splats.push(Splat::new(geom.denormalize(p), inj_chol[k], c));
        provenance.push(Provenance::Injected);
    }
    for s in &mut splats {
        s.clamp_cholesky();
    }
    Ok(SplatFrame {
        splats,
        kind: qf.kind,
        provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifecycle::{inject, prune};
    use crate::media::natural_image;
    use crate::pipeline::random_init_frame;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geom() -> FrameGeometry {
        FrameGeometry::new(32, 24)
    }

    fn quant() -> QuantConfig {
        QuantConfig {
            rvq_codebook_size: 16,
            ..QuantConfig::default()
        }
    }

    fn key_frame(seed: u64) -> SplatFrame {
        let target = natural_image(32, 24, seed);
        let mut f = random_init_frame(40, &target, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in &mut f.splats {
            s.cholesky[1] = rng.random_range(-1.0..1.0);
            s.color = [rng.random(), rng.random(), rng.random()];
        }
        f
    }

    fn assert_cholesky_within_gamma(orig: &SplatFrame, dec: &SplatFrame, qf: &QuantizedFrame, bits: u32) {
        let main = qf.cholesky.quantizers(bits);
        let inj = qf.injected.cholesky.quantizers(bits);
        let m = qf.main_count();
        for (k, (a, b)) in orig.splats.iter().zip(&dec.splats).enumerate() {
            let q = if k < m { &main } else { &inj };
            for i in 0..3 {
                let e = (a.cholesky[i] - b.cholesky[i]).abs();
                assert!(e <= q[i].gamma * (1.0 + 1e-9) + 1e-12, "splat {k} comp {i}: {e} > {}", q[i].gamma);
            }
        }
    }

    #[test]
    fn key_frame_round_trip_within_gamma() {
        let f = key_frame(1);
        let qf = encode_frame(&f, None, geom(), &quant(), 0).unwrap();
        let dec = decode_frame(&qf, None, geom(), 6).unwrap();
        assert_eq!(dec.len(), f.len());
        assert_cholesky_within_gamma(&f, &dec, &qf, 6);
        for (a, b) in f.splats.iter().zip(&dec.splats) {
            assert!((a.position[0] - b.position[0]).abs() < 0.02);
        }
        assert_eq!(decode_frame(&qf, None, geom(), 6).unwrap(), dec);
    }

    #[test]
    fn identical_p_frame_decodes_to_previous() {
        let f = key_frame(2);
        let qf = encode_frame(&f, None, geom(), &quant(), 0).unwrap();
        let dec = decode_frame(&qf, None, geom(), 6).unwrap();
        let p = SplatFrame::predicted_from(&dec);
        let qp = encode_frame(&p, Some(&dec), geom(), &quant(), 0).unwrap();
        assert!(qp.positions.iter().flatten().all(|v| v.to_f64() == 0.0));
        let dp = decode_frame(&qp, Some(&dec), geom(), 6).unwrap();
        let q = qp.cholesky.quantizers(6);
        for (a, b) in dec.splats.iter().zip(&dp.splats) {
            assert!((a.position[0] - b.position[0]).abs() < 1e-12 && (a.position[1] - b.position[1]).abs() < 1e-12);
            for i in 0..3 {
                assert!((a.cholesky[i] - b.cholesky[i]).abs() <= q[i].gamma);
            }
        }
    }

    #[test]
    fn p_frame_with_pruning_and_injection() {
        let f = key_frame(3);
        let qf = encode_frame(&f, None, geom(), &quant(), 0).unwrap();
        let dec = decode_frame(&qf, None, geom(), 6).unwrap();
        let mut p = SplatFrame::predicted_from(&dec);
        for (k, s) in p.splats.iter_mut().enumerate() {
            s.importance = k as f64;
            s.position[0] += 0.3;
            s.cholesky[0] *= 1.1;
            s.color[1] += 0.05;
        }
        let target = natural_image(32, 24, 9);
        let p = inject(&prune(&p, 5).unwrap(), 5, 40, &target, 1);
        let p = SplatFrame {
            splats: p.splats.iter().map(|s| Splat { importance: 1.0, ..*s }).collect(),
            ..p
        };
        let qp = encode_frame(&p, Some(&dec), geom(), &quant(), 0).unwrap();
        assert_eq!(qp.main_count(), 35);
        assert_eq!(qp.injected.len(), 5);
        assert_eq!(qp.slot_mask.iter().filter(|b| **b).count(), 35);
        assert!(!qp.slot_mask[..5].iter().any(|b| *b));
        let dp = decode_frame(&qp, Some(&dec), geom(), 6).unwrap();
        assert_eq!(dp.provenance, p.provenance);
        assert_cholesky_within_gamma(&p, &dp, &qp, 6);
        for (a, b) in p.splats.iter().zip(&dp.splats) {
            assert!((a.position[0] - b.position[0]).abs() < 0.02);
        }
    }

    #[test]
    fn slot_map_errors() {
        let f = key_frame(4);
        let mut p = SplatFrame::predicted_from(&f);
        assert!(encode_frame(&p, None, geom(), &quant(), 0).is_err());
        p.provenance.swap(0, 1);
        assert!(matches!(encode_frame(&p, Some(&f), geom(), &quant(), 0), Err(Error::SlotMap(_))));
        let short = SplatFrame {
            splats: f.splats[..10].to_vec(),
            ..SplatFrame::key(f.splats[..10].to_vec())
        };
        let p = SplatFrame::predicted_from(&f);
        assert!(encode_frame(&p, Some(&short), geom(), &quant(), 0).is_err());
        let qp = encode_frame(&p, Some(&f), geom(), &quant(), 0).unwrap();
        assert!(decode_frame(&qp, Some(&short), geom(), 6).is_err());
    }

    #[test]
    fn empty_frames_code() {
        let empty = SplatFrame::key(Vec::new());
        let qf = encode_frame(&empty, None, geom(), &quant(), 0).unwrap();
        assert!(qf.is_empty());
        assert!(decode_frame(&qf, None, geom(), 6).unwrap().is_empty());
    }
}
