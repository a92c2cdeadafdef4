//! Fitting a splat frame to a target image.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::raster::{Prepared, RenderParams, SplatGrad};
use crate::splat::{Splat, SplatFrame};

/// Optimizer hyperparameters, iteration budgets and lifecycle fractions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lr_halving_interval: usize,
    pub max_iterations: usize,
    pub pretrain_iterations: usize,
    pub convergence_window: usize,
    pub convergence_delta: f64,
    pub prune_fraction: f64,
    pub augment_fraction: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Step multiplier for the Cholesky entries, in pixels. Positions use
    /// the image diagonal.
    pub cholesky_scale: f64,
    /// Step multiplier for the importance weights.
    pub importance_scale: f64,
    /// Share of a frame's budget spent refining after pruning.
    pub refine_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            lr_halving_interval: 20_000,
            max_iterations: 50_000,
            pretrain_iterations: 500,
            convergence_window: 100,
            convergence_delta: 1e-7,
            prune_fraction: 0.10,
            augment_fraction: 0.10,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            cholesky_scale: 100.0,
            importance_scale: 10.0,
            refine_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("convergence_delta", self.convergence_delta),
            ("epsilon", self.epsilon),
            ("cholesky_scale", self.cholesky_scale),
            ("importance_scale", self.importance_scale),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        let counts = [
            ("lr_halving_interval", self.lr_halving_interval),
            ("max_iterations", self.max_iterations),
            ("pretrain_iterations", self.pretrain_iterations),
            ("convergence_window", self.convergence_window),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        for (name, v) in [
            ("prune_fraction", self.prune_fraction),
            ("augment_fraction", self.augment_fraction),
        ] {
            if !(v > 0.0 && v <= 0.5) {
                return Err(Error::InvalidArgument(format!("{name} must lie in (0, 0.5], got {v}")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.refine_fraction) {
            return Err(Error::InvalidArgument(format!(
                "refine_fraction must lie in [0, 1), got {}",
                self.refine_fraction
            )));
        }
        Ok(())
    }

    /// Learning rate in effect at (0-based) iteration `t`.
    pub fn learning_rate_at(&self, t: usize) -> f64 {
        let halvings = (t / self.lr_halving_interval).min(1000) as i32;
        self.learning_rate * 2f64.powi(-halvings)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Loss of the returned iterate.
    pub final_loss: f64,
    /// Gradient steps taken.
    pub iterations_used: usize,
    /// `(iteration, loss)` for every evaluated iterate; the closing entry
    /// reports the returned (best) iterate at `iterations_used`.
    pub loss_trace: Vec<(usize, f64)>,
    pub converged: bool,
    /// Iteration whose parameters were returned.
    pub best_iteration: usize,
}

impl TrainReport {
    /// First iteration whose loss is at or below `threshold`.
    pub fn iterations_to_reach(&self, threshold: f64) -> Option<usize> {
        self.loss_trace
            .iter()
            .find(|(_, l)| *l <= threshold)
            .map(|(i, _)| *i)
    }

    /// Loss at the starting iterate.
    pub fn initial_loss(&self) -> f64 {
        self.loss_trace.first().map(|(_, l)| *l).unwrap_or(self.final_loss)
    }
}

/// Mean over pixels of the squared RGB distance.
pub fn l2_loss(rendered: &Image, target: &Image) -> Result<f64> {
    rendered.check_same_dims(target)?;
    let sum: f64 = rendered
        .pixels()
        .iter()
        .zip(target.pixels())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok(sum / rendered.pixel_count() as f64)
}

/// L2 loss of the unrounded `f64` rendering and its gradients.
pub fn loss_and_grad(
    splats: &[Splat],
    target: &Image,
    use_importance: bool,
    params: RenderParams,
) -> (f64, Vec<SplatGrad>) {
    let (w, h) = target.dims();
    let prepared = Prepared::new(splats, w, h, use_importance, params);
    let rendered = prepared.forward();
    let norm = 1.0 / (w * h) as f64;
    let mut loss = 0.0;
    let grad: Vec<f64> = rendered
        .iter()
        .zip(target.pixels())
        .map(|(&r, &t)| {
            let d = r - t as f64;
            loss += d * d;
            2.0 * d * norm
        })
        .collect();
    let loss = loss * norm;
    if !loss.is_finite() {
        return (loss, Vec::new());
    }
    (loss, prepared.backward(&grad))
}

/// L2 loss of the unrounded `f64` rendering.
pub fn raw_loss(splats: &[Splat], target: &Image, use_importance: bool, params: RenderParams) -> f64 {
    let (w, h) = target.dims();
    let rendered = Prepared::new(splats, w, h, use_importance, params).forward();
    let sum: f64 = rendered
        .iter()
        .zip(target.pixels())
        .map(|(&r, &t)| {
            let d = r - t as f64;
            d * d
        })
        .sum();
    sum / (w * h) as f64
}

/// Bias-corrected first/second-moment optimizer state over a flat
/// parameter vector, with a fixed per-coordinate step multiplier.
#[derive(Clone, Debug)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: i32,
}

impl Adam {
    pub fn new(len: usize, config: &TrainConfig) -> Self {
        Self {
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            m: vec![0.0; len],
            v: vec![0.0; len],
            steps: 0,
        }
    }

    /// One update. `scale[i]` multiplies both the gradient seen by the
    /// moments and the resulting step, i.e. the optimizer runs on
    /// `params[i] / scale[i]`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], scale: &[f64], lr: f64) {
        self.steps = self.steps.saturating_add(1);
        let bc1 = 1.0 - self.beta1.powi(self.steps);
        let bc2 = 1.0 - self.beta2.powi(self.steps);
        for i in 0..params.len() {
            let g = grads[i] * scale[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= scale[i] * lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

pub(crate) const PARAMS_PER_SPLAT: usize = 9;

pub(crate) fn pack(splats: &[Splat]) -> Vec<f64> {
    let mut out = Vec::with_capacity(splats.len() * PARAMS_PER_SPLAT);
    for s in splats {
        out.extend_from_slice(&s.position);
        out.extend_from_slice(&s.cholesky);
        out.extend_from_slice(&s.color);
        out.push(s.importance);
    }
    out
}

pub(crate) fn unpack(params: &[f64], splats: &mut [Splat]) {
    for (s, p) in splats.iter_mut().zip(params.chunks_exact(PARAMS_PER_SPLAT)) {
        s.position = [p[0], p[1]];
        s.cholesky = [p[2], p[3], p[4]];
        s.color = [p[5], p[6], p[7]];
        s.importance = p[8];
        s.clamp_cholesky();
    }
}

/// Per-coordinate step multipliers; frozen coordinates get zero.
pub(crate) fn step_scales(n: usize, target: &Image, config: &TrainConfig, optimize_importance: bool) -> Vec<f64> {
    let d = target.diagonal();
    let per = [
        d,
        d,
        config.cholesky_scale,
        config.cholesky_scale,
        config.cholesky_scale,
        1.0,
        1.0,
        1.0,
        if optimize_importance { config.importance_scale } else { 0.0 },
    ];
    per.iter().copied().cycle().take(n * PARAMS_PER_SPLAT).collect()
}

fn offending_splats(splats: &[Splat]) -> Vec<usize> {
    let bad: Vec<usize> = splats
        .iter()
        .enumerate()
        .filter(|(_, s)| s.validate().is_err() || s.color.iter().any(|c| c.abs() > 1e12))
        .map(|(i, _)| i)
        .collect();
    bad
}

/// Options for [`fit_with`].
pub struct FitOptions<'a> {
    pub budget: usize,
    pub optimize_importance: bool,
    pub params: RenderParams,
    /// Called with `(iteration, loss)` after every evaluation.
    pub observer: Option<&'a mut dyn FnMut(usize, f64)>,
}

impl<'a> FitOptions<'a> {
    pub fn new(budget: usize, optimize_importance: bool) -> Self {
        Self {
            budget,
            optimize_importance,
            params: RenderParams::default(),
            observer: None,
        }
    }
}

/// Fits `frame` to `target` for at most `budget` steps and returns the
/// lowest-loss iterate.
pub fn fit(
    frame: &SplatFrame,
    target: &Image,
    config: &TrainConfig,
    budget: usize,
    optimize_importance: bool,
) -> Result<(SplatFrame, TrainReport)> {
    fit_with(frame, target, config, FitOptions::new(budget, optimize_importance))
}

pub fn fit_with(
    frame: &SplatFrame,
    target: &Image,
    config: &TrainConfig,
    mut options: FitOptions<'_>,
) -> Result<(SplatFrame, TrainReport)> {
    if options.budget == 0 {
        return Err(Error::InvalidArgument("fit budget must be at least 1".into()));
    }
    if target.pixel_count() == 0 {
        return Err(Error::EmptyImage);
    }
    frame.validate()?;
    let use_importance = options.optimize_importance;
    let mut current = frame.splats.clone();
    let mut params = pack(&current);
    let scales = step_scales(current.len(), target, config, use_importance);
    let mut adam = Adam::new(params.len(), config);
    let mut flat_grads = vec![0.0; params.len()];

    let mut best = current.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_iteration = 0;
    let mut trace = Vec::with_capacity(options.budget + 2);
    let mut stable = 0usize;
    let mut converged = false;
    let mut iterations = 0usize;

    let mut record = |it: usize, loss: f64, splats: &[Splat], trace: &mut Vec<(usize, f64)>| -> Result<()> {
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: it,
                splats: offending_splats(splats),
            });
        }
        trace.push((it, loss));
        if let Some(obs) = options.observer.as_mut() {
            obs(it, loss);
        }
        Ok(())
    };

    while iterations < options.budget {
        let (loss, grads) = loss_and_grad(&current, target, use_importance, options.params);
        record(iterations, loss, &current, &mut trace)?;
        if loss < best_loss {
            best_loss = loss;
            best_iteration = iterations;
            best.copy_from_slice(&current);
        }
        if trace.len() >= 2 {
            let prev = trace[trace.len() - 2].1;
            if (loss - prev).abs() <= config.convergence_delta {
                stable += 1;
            } else {
                stable = 0;
            }
            if stable >= config.convergence_window {
                converged = true;
                break;
            }
        }
        for (dst, g) in flat_grads.chunks_exact_mut(PARAMS_PER_SPLAT).zip(&grads) {
            dst.copy_from_slice(&g.to_array());
        }
        adam.step(&mut params, &flat_grads, &scales, config.learning_rate_at(iterations));
        unpack(&params, &mut current);
        // Keep the packed vector on the clamped manifold.
        params = pack(&current);
        iterations += 1;
    }
    if !converged {
        let loss = raw_loss(&current, target, use_importance, options.params);
        record(iterations, loss, &current, &mut trace)?;
        if loss < best_loss {
            best_loss = loss;
            best_iteration = iterations;
            best.copy_from_slice(&current);
        }
    }
    trace.push((iterations, best_loss));

    let out = SplatFrame {
        splats: best,
        kind: frame.kind,
        provenance: frame.provenance.clone(),
    };
    Ok((
        out,
        TrainReport {
            final_loss: best_loss,
            iterations_used: iterations,
            loss_trace: trace,
            converged,
            best_iteration,
        },
    ))
}
