//! Importance-ranked pruning, importance folding and injection of fresh
//! splats.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::optim::TrainConfig;
use crate::splat::{Provenance, Splat, SplatFrame};

/// Importance given to freshly injected splats.
pub const INJECT_IMPORTANCE: f64 = 1e-4;

/// Per-frame splat counts for a rate-control target `n_total`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LifecyclePlan {
    pub n_total: usize,
    pub n_prune: usize,
    pub n_inject: usize,
}

fn fraction_of(fraction: f64, n: usize) -> usize {
    // The nudge keeps products such as 0.29 * 100 from flooring to 28.
    (fraction * n as f64 + 1e-9).floor() as usize
}

impl LifecyclePlan {
    pub fn new(n_total: usize, config: &TrainConfig) -> Result<Self> {
        let n_prune = fraction_of(config.prune_fraction, n_total);
        let n_inject = fraction_of(config.augment_fraction, n_total);
        if n_prune != n_inject {
            return Err(Error::InvalidArgument(format!(
                "prune count {n_prune} must equal inject count {n_inject}"
            )));
        }
        if n_total <= n_prune {
            return Err(Error::InvalidArgument(format!(
                "N = {n_total} leaves no splats after pruning {n_prune}"
            )));
        }
        Ok(Self {
            n_total,
            n_prune,
            n_inject,
        })
    }

    /// Splats carried from one frame to the next.
    pub fn n_kept(&self) -> usize {
        self.n_total - self.n_prune
    }
}

fn keep_only(frame: &SplatFrame, mut removed: Vec<usize>) -> SplatFrame {
    removed.sort_unstable();
    let mut drop = removed.into_iter().peekable();
    let mut out = SplatFrame {
        splats: Vec::with_capacity(frame.len()),
        kind: frame.kind,
        provenance: Vec::with_capacity(frame.len()),
    };
    for (i, (s, p)) in frame.splats.iter().zip(&frame.provenance).enumerate() {
        if drop.peek() == Some(&i) {
            drop.next();
            continue;
        }
        out.splats.push(*s);
        out.provenance.push(*p);
    }
    out
}

/// Removes the `n_prune` splats with the smallest `|importance|`, lower
/// index first on ties. Survivors keep their order and provenance.
pub fn prune(frame: &SplatFrame, n_prune: usize) -> Result<SplatFrame> {
    if n_prune >= frame.len() && n_prune > 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot prune {n_prune} of {} splats",
            frame.len()
        )));
    }
    let mut order: Vec<usize> = (0..frame.len()).collect();
    order.sort_by(|&i, &j| {
        let (wi, wj) = (frame.splats[i].importance.abs(), frame.splats[j].importance.abs());
        wi.total_cmp(&wj).then(i.cmp(&j))
    });
    order.truncate(n_prune);
    Ok(keep_only(frame, order))
}

/// Removes `n_prune` splats chosen uniformly at random. Baseline for
/// importance-ranked pruning.
pub fn prune_random(frame: &SplatFrame, n_prune: usize, seed: u64) -> Result<SplatFrame> {
    if n_prune >= frame.len() && n_prune > 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot prune {n_prune} of {} splats",
            frame.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let removed = sample(&mut rng, frame.len(), n_prune).into_vec();
    Ok(keep_only(frame, removed))
}

/// Multiplies each color by its importance and resets importance to 1.
pub fn fold_importance(frame: &SplatFrame) -> SplatFrame {
    let mut out = frame.clone();
    for s in &mut out.splats {
        let w = s.importance;
        s.color = [w * s.color[0], w * s.color[1], w * s.color[2]];
        s.importance = 1.0;
    }
    out
}

/// Resets every importance to 1 and appends `n_inject` splats placed
/// uniformly over `target`, with importance [`INJECT_IMPORTANCE`], a round
/// footprint of radius `d/√n_total` (`d` the image diagonal) and half the
/// target color under them.
pub fn inject(frame: &SplatFrame, n_inject: usize, n_total: usize, target: &Image, seed: u64) -> SplatFrame {
    let mut out = frame.clone();
    for s in &mut out.splats {
        s.importance = 1.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = target.diagonal() / (n_total.max(1) as f64).sqrt();
    let (w, h) = (target.width() as f64, target.height() as f64);
    for _ in 0..n_inject {
        let position = [rng.random_range(0.0..w), rng.random_range(0.0..h)];
        let c = target.sample(position);
        let mut s = Splat::new(
            position,
            [scale, 0.0, scale],
            [0.5 * c[0] as f64, 0.5 * c[1] as f64, 0.5 * c[2] as f64],
        );
        s.importance = INJECT_IMPORTANCE;
        out.splats.push(s);
        out.provenance.push(Provenance::Injected);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::render;

    fn frame_with_importance(ws: &[f64]) -> SplatFrame {
        let splats = ws
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let mut s = Splat::new([i as f64 * 3.0 + 2.0, 5.0], [2.0, 0.3, 1.5], [0.2, 0.4, 0.6]);
                s.importance = w;
                s
            })
            .collect();
        SplatFrame::key(splats)
    }

    #[test]
    fn prune_examples() {
        let f = frame_with_importance(&[0.01, 1.0, -0.9, 0.001]);
        let p = prune(&f, 2).unwrap();
        let kept: Vec<f64> = p.splats.iter().map(|s| s.importance).collect();
        assert_eq!(kept, vec![1.0, -0.9]);

        let eq = frame_with_importance(&[1.0; 5]);
        let p = prune(&eq, 2).unwrap();
        assert_eq!(p.splats, eq.splats[2..].to_vec());

        assert_eq!(prune(&f, 0).unwrap(), f);
        assert!(prune(&f, 4).is_err());
    }

    #[test]
    fn prune_keeps_provenance() {
        let base = frame_with_importance(&[0.5, 0.1, 0.7, 0.2]);
        let p = SplatFrame {
            splats: base.splats.clone(),
            ..SplatFrame::predicted_from(&base)
        };
        let mut p = p;
        for (s, w) in p.splats.iter_mut().zip([0.5, 0.1, 0.7, 0.2]) {
            s.importance = w;
        }
        let out = prune(&p, 2).unwrap();
        assert_eq!(out.provenance, vec![Provenance::Inherited(0), Provenance::Inherited(2)]);
    }

    #[test]
    fn random_prune_counts_and_determinism() {
        let f = frame_with_importance(&[1.0; 20]);
        let a = prune_random(&f, 5, 3).unwrap();
        assert_eq!(a.len(), 15);
        assert_eq!(a, prune_random(&f, 5, 3).unwrap());
    }

    #[test]
    fn fold_matches_importance_rendering() {
        let f = frame_with_importance(&[0.3, -1.7, 0.0, 2.5]);
        let before = render(&f, 20, 12, true).unwrap();
        let folded = fold_importance(&f);
        assert_eq!(render(&folded, 20, 12, false).unwrap(), before);
        assert!(folded.splats.iter().all(|s| s.importance == 1.0));
        assert_eq!(folded.splats[2].color, [0.0; 3]);
        assert_eq!(fold_importance(&folded), folded);
    }

    #[test]
    fn inject_resets_and_appends() {
        let f = frame_with_importance(&[0.3, 0.4]);
        let target = Image::filled(20, 10, [0.8, 0.6, 0.4]);
        let out = inject(&f, 3, 50, &target, 9);
        assert_eq!(out.len(), 5);
        assert!(out.splats[..2].iter().all(|s| s.importance == 1.0));
        for (s, p) in out.splats[2..].iter().zip(&out.provenance[2..]) {
            assert_eq!(*p, Provenance::Injected);
            assert_eq!(s.importance, INJECT_IMPORTANCE);
            assert!((0.0..20.0).contains(&s.position[0]) && (0.0..10.0).contains(&s.position[1]));
            assert!((s.color[0] - 0.4).abs() < 1e-6);
        }
        assert_eq!(out, inject(&f, 3, 50, &target, 9));
        assert_eq!(inject(&f, 0, 50, &target, 9).splats.len(), 2);
    }

    #[test]
    fn injected_splats_are_nearly_invisible() {
        let f = frame_with_importance(&[1.0, 1.0]);
        let target = Image::filled(24, 16, [1.0, 1.0, 1.0]);
        let out = inject(&f, 10, 40, &target, 1);
        let a = render(&f, 24, 16, false).unwrap();
        let b = render(&out, 24, 16, true).unwrap();
        let bound = 10.0 * INJECT_IMPORTANCE * 0.5;
        for (x, y) in a.pixels().iter().zip(b.pixels()) {
            assert!(((x - y).abs() as f64) <= bound + 1e-6);
        }
    }

    #[test]
    fn plan_counts() {
        let c = TrainConfig::default();
        let p = LifecyclePlan::new(100, &c).unwrap();
        assert_eq!((p.n_prune, p.n_inject, p.n_kept()), (10, 10, 90));
        assert_eq!(LifecyclePlan::new(9, &c).unwrap().n_prune, 0);
        let mut odd = c.clone();
        odd.prune_fraction = 0.29;
        odd.augment_fraction = 0.29;
        assert_eq!(LifecyclePlan::new(100, &odd).unwrap().n_prune, 29);
        odd.augment_fraction = 0.2;
        assert!(LifecyclePlan::new(100, &odd).is_err());
    }
}
