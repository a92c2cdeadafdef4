//! End-to-end fitting of a clip: pre-training, key-frame selection and the
//! sequential I/P frame loop with pruning and augmentation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dks::{select_keyframes, KeyframeSet, LossProfile};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::lifecycle::{fold_importance, inject, prune, LifecyclePlan};
use crate::optim::{fit, fit_with, FitOptions, TrainConfig, TrainReport};
use crate::splat::{FrameKind, Splat, SplatFrame};

/// Which stages of the pipeline run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PipelineOptions {
    /// Importance-ranked pruning. When off, every frame is fitted directly
    /// at the pruned size so all variants store the same number of splats.
    pub gsp: bool,
    /// Injection of fresh splats into P-frames. Requires `gsp`.
    pub gsa: bool,
    /// Automatic key-frame selection; when off only frame 0 is a key-frame.
    pub dks: bool,
    /// Force a key-frame at least every this many frames.
    pub max_keyframe_interval: Option<usize>,
    /// Half width of the key-frame selection window.
    pub window: usize,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            gsp: true,
            gsa: true,
            dks: true,
            max_keyframe_interval: None,
            window: 10,
        }
    }
}

impl PipelineOptions {
    pub fn validate(&self) -> Result<()> {
        if self.gsa && !self.gsp {
            return Err(Error::InvalidArgument(
                "augmentation needs pruning to keep the splat count fixed".into(),
            ));
        }
        if self.window == 0 {
            return Err(Error::InvalidArgument("key-frame window must be at least 1".into()));
        }
        if self.max_keyframe_interval == Some(0) {
            return Err(Error::InvalidArgument("maximum key-frame interval must be at least 1".into()));
        }
        Ok(())
    }
}

/// A clip to fit with `n` splats per frame.
#[derive(Clone, Debug)]
pub struct EncodeJob {
    pub frames: Vec<Image>,
    pub config: TrainConfig,
    pub n: usize,
    pub options: PipelineOptions,
}

impl EncodeJob {
    pub fn new(frames: Vec<Image>, n: usize) -> Self {
        Self {
            frames,
            config: TrainConfig::default(),
            n,
            options: PipelineOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<LifecyclePlan> {
        let first = self.frames.first().ok_or_else(|| Error::InvalidArgument("no frames to encode".into()))?;
        if first.pixel_count() == 0 {
            return Err(Error::EmptyImage);
        }
        for f in &self.frames[1..] {
            first.check_same_dims(f)?;
        }
        self.config.validate()?;
        self.options.validate()?;
        LifecyclePlan::new(self.n, &self.config)
    }

    /// Splats a frame is fitted with before any pruning.
    fn initial_count(&self, plan: &LifecyclePlan) -> usize {
        if self.options.gsp {
            plan.n_total
        } else {
            plan.n_kept()
        }
    }
}

/// The fitted clip. Stored frames have importance folded into color.
#[derive(Clone, Debug)]
pub struct EncodedSequence {
    pub width: usize,
    pub height: usize,
    pub frames: Vec<SplatFrame>,
    pub keyframes: KeyframeSet,
    pub reports: Vec<TrainReport>,
    /// Present when key-frames were selected automatically.
    pub profile: Option<LossProfile>,
}

/// Progress callback: `(frame, iteration, loss)`.
pub type Progress<'a> = &'a mut dyn FnMut(usize, usize, f64);

pub(crate) fn derive_seed(seed: u64, stream: u64, index: usize) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_INIT: u64 = 1;
const STREAM_INJECT: u64 = 2;
const STREAM_PRETRAIN: u64 = 3;

/// `n` splats spread uniformly over `target` with round footprints of
/// radius `d/√n` (`d` the diagonal). Colors are the target color under each
/// splat scaled by `W·H / (2π·d²)`, which makes the initial rendering about
/// as bright as the target despite the overlap.
pub fn random_init_frame(n: usize, target: &Image, seed: u64) -> Result<SplatFrame> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one splat".into()));
    }
    if target.pixel_count() == 0 {
        return Err(Error::EmptyImage);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = target.diagonal();
    let scale = d / (n as f64).sqrt();
    let gain = target.pixel_count() as f64 / (2.0 * std::f64::consts::PI * d * d);
    let (w, h) = (target.width() as f64, target.height() as f64);
    let splats = (0..n)
        .map(|_| {
            let position = [rng.random_range(0.0..w), rng.random_range(0.0..h)];
            let c = target.sample(position);
            Splat::new(position, [scale, 0.0, scale], c.map(|v| v as f64 * gain))
        })
        .collect();
    Ok(SplatFrame::key(splats))
}

/// From-scratch losses for every frame and predicted losses for every frame
/// after the first, each after `pretrain_iterations` steps. Frames are
/// processed in parallel.
pub fn pretrain_pass(job: &EncodeJob) -> Result<LossProfile> {
    let plan = job.validate()?;
    let n = job.initial_count(&plan);
    let budget = job.config.pretrain_iterations;
    let from_scratch: Vec<(SplatFrame, f64)> = job
        .frames
        .par_iter()
        .enumerate()
        .map(|(t, target)| {
            // One shared initialization keeps init noise out of the loss deltas.
            let init = random_init_frame(n, target, derive_seed(job.config.seed, STREAM_PRETRAIN, 0))?;
            let (frame, report) = fit(&init, target, &job.config, budget, false).map_err(|e| e.in_frame(t))?;
            Ok((frame, report.final_loss))
        })
        .collect::<Result<_>>()?;
    let p_losses: Vec<f64> = (1..job.frames.len())
        .into_par_iter()
        .map(|t| {
            let init = SplatFrame::predicted_from(&from_scratch[t - 1].0);
            let (_, report) = fit(&init, &job.frames[t], &job.config, budget, false).map_err(|e| e.in_frame(t))?;
            Ok(report.final_loss)
        })
        .collect::<Result<_>>()?;
    LossProfile::new(from_scratch.into_iter().map(|(_, l)| l).collect(), p_losses)
}

/// Appends `next` to `acc` as a continuation, dropping the closing summary
/// entry of `acc`.
fn chain_reports(mut acc: TrainReport, next: TrainReport) -> TrainReport {
    let offset = acc.iterations_used;
    acc.loss_trace.pop();
    acc.loss_trace
        .extend(next.loss_trace.iter().map(|&(i, l)| (i + offset, l)));
    TrainReport {
        final_loss: next.final_loss,
        iterations_used: offset + next.iterations_used,
        loss_trace: acc.loss_trace,
        converged: next.converged,
        best_iteration: offset + next.best_iteration,
    }
}

struct FrameFitter<'a> {
    job: &'a EncodeJob,
    plan: LifecyclePlan,
    progress: Option<Progress<'a>>,
}

impl FrameFitter<'_> {
    fn run_fit(
        &mut self,
        t: usize,
        frame: &SplatFrame,
        budget: usize,
        importance: bool,
        offset: usize,
    ) -> Result<(SplatFrame, TrainReport)> {
        let mut options = FitOptions::new(budget, importance);
        let mut forward = self.progress.as_mut().map(|p| move |it: usize, loss: f64| p(t, it + offset, loss));
        if let Some(f) = forward.as_mut() {
            options.observer = Some(f);
        }
        fit_with(frame, &self.job.frames[t], &self.job.config, options).map_err(|e| e.in_frame(t))
    }

    /// Fits with importance, prunes `n_prune`, folds, then refines without
    /// importance. Without pruning the whole budget is one plain fit.
    fn fit_frame(&mut self, t: usize, init: SplatFrame, n_prune: usize) -> Result<(SplatFrame, TrainReport)> {
        let total = self.job.config.max_iterations;
        if !self.job.options.gsp {
            return self.run_fit(t, &init, total, false, 0);
        }
        let refine = ((total as f64 * self.job.config.refine_fraction).round() as usize).min(total - 1);
        let (fitted, first) = self.run_fit(t, &init, total - refine, true, 0)?;
        let pruned = fold_importance(&prune(&fitted, n_prune).map_err(|e| e.in_frame(t))?);
        if refine == 0 {
            // Still report the loss of the pruned, folded frame.
            let (out, last) = self.run_fit(t, &pruned, 1, false, first.iterations_used)?;
            return Ok((out, chain_reports(first, last)));
        }
        let (out, last) = self.run_fit(t, &pruned, refine, false, first.iterations_used)?;
        Ok((out, chain_reports(first, last)))
    }

    fn key_frame(&mut self, t: usize) -> Result<(SplatFrame, TrainReport)> {
        let n = self.job.initial_count(&self.plan);
        let init = random_init_frame(n, &self.job.frames[t], derive_seed(self.job.config.seed, STREAM_INIT, t))?;
        let n_prune = if self.job.options.gsp { self.plan.n_prune } else { 0 };
        self.fit_frame(t, init, n_prune)
    }

    fn predicted_frame(&mut self, t: usize, prev: &SplatFrame) -> Result<(SplatFrame, TrainReport)> {
        let base = SplatFrame::predicted_from(prev);
        if self.job.options.gsa {
            let seed = derive_seed(self.job.config.seed, STREAM_INJECT, t);
            let init = inject(&base, self.plan.n_inject, self.plan.n_total, &self.job.frames[t], seed);
            self.fit_frame(t, init, self.plan.n_inject)
        } else {
            self.fit_frame(t, base, 0)
        }
    }
}

/// Fits every frame of the clip.
pub fn encode_sequence(job: &EncodeJob) -> Result<EncodedSequence> {
    encode_sequence_with_progress(job, None)
}

pub fn encode_sequence_with_progress<'a>(job: &'a EncodeJob, progress: Option<Progress<'a>>) -> Result<EncodedSequence> {
    let plan = job.validate()?;
    let count = job.frames.len();
    let (keyframes, profile) = if job.options.dks && count >= 2 {
        let profile = pretrain_pass(job)?;
        (select_keyframes(&profile, job.options.window)?, Some(profile))
    } else {
        (KeyframeSet::new(vec![0]), None)
    };
    let keyframes = match job.options.max_keyframe_interval {
        Some(k) => keyframes.with_max_interval(count, k),
        None => keyframes,
    };
    log::info!("key-frames: {:?}", keyframes.indices());

    let mut fitter = FrameFitter { job, plan, progress };
    let mut frames: Vec<SplatFrame> = Vec::with_capacity(count);
    let mut reports = Vec::with_capacity(count);
    for t in 0..count {
        let (frame, report) = match frames.last() {
            Some(prev) if !keyframes.contains(t) => fitter.predicted_frame(t, prev)?,
            _ => fitter.key_frame(t)?,
        };
        debug_assert_eq!(frame.len(), plan.n_kept());
        log::debug!(
            "frame {t} ({:?}): loss {:.3e} after {} iterations",
            frame.kind,
            report.final_loss,
            report.iterations_used
        );
        frames.push(frame);
        reports.push(report);
    }
    Ok(EncodedSequence {
        width: job.frames[0].width(),
        height: job.frames[0].height(),
        frames,
        keyframes,
        reports,
        profile,
    })
}

impl EncodedSequence {
    pub fn frame_kinds(&self) -> Vec<FrameKind> {
        self.frames.iter().map(|f| f.kind).collect()
    }
}
