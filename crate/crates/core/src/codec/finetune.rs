//! Quantization-aware fine-tuning. Every iteration renders the frame exactly
//! as the decoder would and back-propagates through the quantizers with
//! straight-through estimates; scales, offsets and codebooks are trained
//! alongside the splats.

use rayon::prelude::*;

use crate::codec::frame::{
    coding_targets, component_range, decode_frame, quantize_targets, CodingTargets, FrameGeometry,
    FrameQuantizers, QuantizedFrame,
};
use crate::codec::quant::AsymmetricQuantizer;
use crate::codec::rvq::{Codebooks, Vec3};
use crate::codec::QuantConfig;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::lifecycle::fold_importance;
use crate::optim::{pack, step_scales, unpack, Adam, TrainConfig, PARAMS_PER_SPLAT};
use crate::pipeline::{derive_seed, EncodedSequence};
use crate::raster::{Prepared, RenderParams, SplatGrad};
use crate::splat::{FrameKind, SplatFrame};

const STREAM_CODEBOOK: u64 = 4;

/// Fine-tuning runs at this fraction of the training learning rate.
pub const FINETUNE_LR_FACTOR: f64 = 0.1;

/// Outcome of fine-tuning one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneReport {
    /// Clamped per-pixel MSE of the decoded frame before any update.
    pub initial_mse: f64,
    /// Clamped per-pixel MSE of the returned iterate.
    pub final_mse: f64,
    pub best_iteration: usize,
    pub iterations: usize,
}

/// Fine-tuned clip in three forms that agree with each other.
#[derive(Clone, Debug)]
pub struct FinetuneResult {
    /// Continuous splats that quantize to `quantized`.
    pub frames: Vec<SplatFrame>,
    pub quantized: Vec<QuantizedFrame>,
    /// What a decoder reconstructs from `quantized`.
    pub decoded: Vec<SplatFrame>,
    pub reports: Vec<FinetuneReport>,
}

/// Mean over pixels of the squared RGB distance after clamping to `[0, 1]`.
fn clamped_mse(rendered: &[f64], target: &Image) -> f64 {
    let sum: f64 = rendered
        .iter()
        .zip(target.pixels())
        .map(|(&r, &t)| {
            let d = (r as f32).clamp(0.0, 1.0) as f64 - t.clamp(0.0, 1.0) as f64;
            d * d
        })
        .sum();
    sum / (3 * target.pixel_count()) as f64
}

/// Trainable state beyond the splats.
struct Learned {
    main: [AsymmetricQuantizer; 3],
    injected: [AsymmetricQuantizer; 3],
    books: Option<Codebooks>,
}

impl Learned {
    fn len(&self) -> usize {
        12 + self.books.as_ref().map_or(0, |b| b.stage_count() * b.size() * 3)
    }

    fn pack(&self, out: &mut Vec<f64>) {
        for q in self.main.iter().chain(&self.injected) {
            out.push(q.gamma);
            out.push(q.beta);
        }
        if let Some(b) = &self.books {
            out.extend(b.stages.iter().flatten().flatten());
        }
    }

    fn unpack(&mut self, params: &[f64]) {
        for (q, p) in self.main.iter_mut().chain(&mut self.injected).zip(params.chunks_exact(2)) {
            q.gamma = p[0];
            q.beta = p[1];
        }
        if let Some(b) = &mut self.books {
            for (c, p) in b.stages.iter_mut().flatten().zip(params[12..].chunks_exact(3)) {
                c.copy_from_slice(p);
            }
        }
    }

    /// Brings the quantizers back to storable values covering the current
    /// inputs.
    fn project(&mut self, targets: &CodingTargets) -> Result<()> {
        let injected: Vec<[f64; 3]> = targets.injected.iter().map(|s| s.cholesky).collect();
        for (qs, values) in [(&mut self.main, &targets.cholesky), (&mut self.injected, &injected)] {
            if values.is_empty() {
                continue;
            }
            for (i, q) in qs.iter_mut().enumerate() {
                let (lo, hi) = component_range(values, i);
                *q = AsymmetricQuantizer::storable(q.gamma, q.beta, lo, hi, q.bits)?;
            }
        }
        Ok(())
    }

    fn quantizers(&self) -> FrameQuantizers {
        FrameQuantizers {
            main: self.main,
            injected: self.injected,
            codebooks: self.books.as_ref().map(Codebooks::to_f16),
        }
    }
}

/// Straight-through gradient for one quantized Cholesky entry: returns the
/// gradient for the input and accumulates those of `γ` and `β`.
fn cholesky_grad(q: &AsymmetricQuantizer, v: f64, g: f64, g_scale: &mut [f64]) -> f64 {
    let x = (v - q.beta) / q.gamma;
    let code = q.code(v) as f64;
    if x >= 0.0 && x <= q.max_code() as f64 {
        g_scale[0] += g * (code - x);
        g
    } else {
        g_scale[0] += g * code;
        g_scale[1] += g;
        0.0
    }
}

struct FrameTuner<'a> {
    target: &'a Image,
    prev: Option<&'a SplatFrame>,
    geom: FrameGeometry,
    quant: &'a QuantConfig,
    config: &'a TrainConfig,
    params: RenderParams,
}

struct Evaluation {
    quantized: QuantizedFrame,
    decoded: SplatFrame,
    mse: f64,
    grads: Vec<SplatGrad>,
}

impl FrameTuner<'_> {
    fn evaluate(&self, targets: &CodingTargets, learned: &Learned, want_grads: bool) -> Result<Evaluation> {
        let quantized = quantize_targets(targets, &learned.quantizers(), self.geom)?;
        let decoded = decode_frame(&quantized, self.prev, self.geom, self.quant.cholesky_bits)?;
        let (w, h) = self.target.dims();
        let prepared = Prepared::new(&decoded.splats, w, h, false, self.params);
        let rendered = prepared.forward();
        let mse = clamped_mse(&rendered, self.target);
        let grads = if want_grads {
            let norm = 1.0 / (w * h) as f64;
            let g: Vec<f64> = rendered
                .iter()
                .zip(self.target.pixels())
                .map(|(&r, &t)| 2.0 * (r - t as f64) * norm)
                .collect();
            prepared.backward(&g)
        } else {
            Vec::new()
        };
        Ok(Evaluation {
            quantized,
            decoded,
            mse,
            grads,
        })
    }

    /// Gradients for the continuous splats followed by those of the learned
    /// quantizer state, in the order of `pack` then [`Learned::pack`].
    fn backprop(&self, targets: &CodingTargets, learned: &Learned, eval: &Evaluation) -> Vec<f64> {
        let m = targets.positions.len();
        let n = m + targets.injected.len();
        let mut g_splats = vec![0.0; n * PARAMS_PER_SPLAT];
        let mut g_learned = vec![0.0; learned.len()];
        let commit = if m > 0 {
            2.0 * self.quant.commitment_weight / m as f64
        } else {
            0.0
        };
        let books = eval.quantized.colors.codebooks.as_ref();
        let size = self.quant.rvq_codebook_size;
        for (k, g) in eval.grads.iter().enumerate() {
            let dst = &mut g_splats[k * PARAMS_PER_SPLAT..(k + 1) * PARAMS_PER_SPLAT];
            dst[0] = g.position[0];
            dst[1] = g.position[1];
            let (qs, offset, chol) = if k < m {
                (&learned.main, 0, targets.cholesky[k])
            } else {
                (&learned.injected, 6, targets.injected[k - m].cholesky)
            };
            for i in 0..3 {
                let gs = &mut g_learned[offset + 2 * i..offset + 2 * i + 2];
                dst[2 + i] = cholesky_grad(&qs[i], chol[i], g.cholesky[i], gs);
            }
            dst[5..8].copy_from_slice(&g.color);
            if k < m {
                let idx = &eval.quantized.colors.indices[k];
                let books = books.expect("coded colors have codebooks");
                let q: Vec3 = books.reconstruct(idx);
                let c = targets.colors[k];
                for i in 0..3 {
                    dst[5 + i] += commit * (c[i] - q[i]);
                }
                for (s, &j) in idx.iter().enumerate() {
                    let at = 12 + (s * size + j as usize) * 3;
                    for i in 0..3 {
                        g_learned[at + i] += g.color[i];
                    }
                }
            }
        }
        g_splats.extend(g_learned);
        g_splats
    }

    fn run(&self, frame: &SplatFrame, seed: u64) -> Result<(SplatFrame, Evaluation, FinetuneReport)> {
        let mut current = fold_importance(frame);
        let targets = coding_targets(&current, self.prev, self.geom)?;
        let fitted = FrameQuantizers::fit(&targets, self.quant, seed)?;
        let mut learned = Learned {
            main: fitted.main,
            injected: fitted.injected,
            books: fitted.codebooks,
        };
        let iterations = self.quant.finetune_iterations;
        let first = self.evaluate(&targets, &learned, iterations > 0)?;
        let initial_mse = first.mse;
        let mut report = FinetuneReport {
            initial_mse,
            final_mse: initial_mse,
            best_iteration: 0,
            iterations,
        };
        if iterations == 0 {
            return Ok((current, first, report));
        }

        let n = current.len();
        let mut params = pack(&current.splats);
        let split = params.len();
        learned.pack(&mut params);
        let mut scales = step_scales(n, self.target, self.config, false);
        for q in learned.main.iter().chain(&learned.injected) {
            let s = q.gamma.max(1e-6);
            scales.extend([s, s]);
        }
        scales.resize(params.len(), 1.0);
        let mut adam = Adam::new(params.len(), self.config);

        let mut grads = self.backprop(&targets, &learned, &first);
        let mut best_frame = current.clone();
        let mut best = first;
        for it in 1..=iterations {
            adam.step(&mut params, &grads, &scales, FINETUNE_LR_FACTOR * self.config.learning_rate_at(it - 1));
            unpack(&params[..split], &mut current.splats);
            learned.unpack(&params[split..]);
            let targets = coding_targets(&current, self.prev, self.geom)?;
            learned.project(&targets)?;
            params = pack(&current.splats);
            learned.pack(&mut params);
            let eval = self.evaluate(&targets, &learned, it < iterations)?;
            if it < iterations {
                grads = self.backprop(&targets, &learned, &eval);
            }
            if eval.mse < best.mse {
                report.final_mse = eval.mse;
                report.best_iteration = it;
                best_frame = current.clone();
                best = eval;
            }
        }
        Ok((best_frame, best, report))
    }
}

/// Quantizes a fitted clip frame by frame, coding each P-frame against the
/// decoded previous frame, and fine-tunes every frame for
/// `quant.finetune_iterations` steps on the decoded output. The returned
/// iterate per frame is the one with the lowest decoded error, so the step
/// never makes a frame worse than plain quantization of its input.
/// Segments between key-frames are processed in parallel.
pub fn quantization_finetune(
    sequence: &EncodedSequence,
    targets: &[Image],
    quant: &QuantConfig,
    config: &TrainConfig,
    params: RenderParams,
) -> Result<FinetuneResult> {
    quant.validate()?;
    config.validate()?;
    if targets.len() != sequence.frames.len() {
        return Err(Error::InvalidArgument(format!(
            "{} targets for {} frames",
            targets.len(),
            sequence.frames.len()
        )));
    }
    for t in targets {
        if t.dims() != (sequence.width, sequence.height) {
            return Err(Error::DimensionMismatch {
                expected: (sequence.width, sequence.height),
                actual: t.dims(),
            });
        }
    }
    if sequence.frames.first().is_some_and(|f| f.kind != FrameKind::I) {
        return Err(Error::InvalidArgument("first frame must be a key-frame".into()));
    }
    let geom = FrameGeometry::new(sequence.width, sequence.height);
    let starts: Vec<usize> = (0..sequence.frames.len())
        .filter(|&t| sequence.frames[t].kind == FrameKind::I)
        .collect();
    let segments: Vec<(usize, usize)> = starts
        .iter()
        .enumerate()
        .map(|(i, &s)| (s, starts.get(i + 1).copied().unwrap_or(sequence.frames.len())))
        .collect();
    let coded: Vec<Vec<(SplatFrame, Evaluation, FinetuneReport)>> = segments
        .par_iter()
        .map(|&(start, end)| {
            let mut out: Vec<(SplatFrame, Evaluation, FinetuneReport)> = Vec::with_capacity(end - start);
            for t in start..end {
                let tuner = FrameTuner {
                    target: &targets[t],
                    prev: out.last().map(|(_, e, _)| &e.decoded),
                    geom,
                    quant,
                    config,
                    params,
                };
                let r = tuner
                    .run(&sequence.frames[t], derive_seed(config.seed, STREAM_CODEBOOK, t))
                    .map_err(|e| e.in_frame(t))?;
                log::debug!(
                    "frame {t}: quantized MSE {:.3e} -> {:.3e} (iteration {})",
                    r.2.initial_mse,
                    r.2.final_mse,
                    r.2.best_iteration
                );
                out.push(r);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut result = FinetuneResult {
        frames: Vec::new(),
        quantized: Vec::new(),
        decoded: Vec::new(),
        reports: Vec::new(),
    };
    for (frame, eval, report) in coded.into_iter().flatten() {
        result.frames.push(frame);
        result.quantized.push(eval.quantized);
        result.decoded.push(eval.decoded);
        result.reports.push(report);
    }
    Ok(result)
}
