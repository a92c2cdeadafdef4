//! Residual vector quantization of 3-vectors.

use half::f16;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

const KMEANS_ITERATIONS: usize = 25;
const REFINE_ROUNDS: usize = 10;

fn dist2(a: &Vec3, b: &Vec3) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// `M` stages of `B` codewords each.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebooks {
    pub stages: Vec<Vec<Vec3>>,
}

impl Codebooks {
    pub fn new(stages: Vec<Vec<Vec3>>) -> Result<Self> {
        let size = stages.first().map(Vec::len).unwrap_or(0);
        if size == 0 || stages.iter().any(|s| s.len() != size) {
            return Err(Error::InvalidArgument("codebooks need equal, non-empty stages".into()));
        }
        Ok(Self { stages })
    }

    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }

    pub fn size(&self) -> usize {
        self.stages[0].len()
    }

    /// Every codeword rounded to the nearest `f16`.
    pub fn to_f16(&self) -> Self {
        Self {
            stages: self
                .stages
                .iter()
                .map(|s| s.iter().map(|c| c.map(|v| f16::from_f64(v).to_f64())).collect())
                .collect(),
        }
    }

    pub fn reconstruct(&self, indices: &[u32]) -> Vec3 {
        let mut acc = [0.0; 3];
        for (stage, &i) in self.stages.iter().zip(indices) {
            let c = stage[i as usize];
            acc = [acc[0] + c[0], acc[1] + c[1], acc[2] + c[2]];
        }
        acc
    }
}

fn nearest(codebook: &[Vec3], v: &Vec3) -> u32 {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in codebook.iter().enumerate() {
        let d = dist2(c, v);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best as u32
}

/// Greedy stage-wise encoding: each stage picks the codeword nearest to the
/// remaining residual, smallest index on ties.
pub fn rvq_encode(color: &Vec3, books: &Codebooks) -> Vec<u32> {
    let mut residual = *color;
    books
        .stages
        .iter()
        .map(|stage| {
            let i = nearest(stage, &residual);
            residual = sub(&residual, &stage[i as usize]);
            i
        })
        .collect()
}

/// Seeded k-means++ followed by [`KMEANS_ITERATIONS`] Lloyd steps. With
/// fewer distinct points than `k` the codebook repeats points.
pub fn kmeans(points: &[Vec3], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..points.len())]);
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut idx = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    idx = i;
                    break;
                }
                r -= w;
            }
            idx
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[pick];
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &c));
        }
        centers.push(c);
    }
    for _ in 0..KMEANS_ITERATIONS {
        if !lloyd_step(points, &mut centers) {
            break;
        }
    }
    centers
}

/// One assignment/update round; returns whether any center moved.
/// Means are accumulated as offsets from the current center so that a
/// cluster of identical points keeps its center exactly.
fn lloyd_step(points: &[Vec3], centers: &mut [Vec3]) -> bool {
    let mut sums = vec![[0.0; 3]; centers.len()];
    let mut counts = vec![0usize; centers.len()];
    for p in points {
        let i = nearest(centers, p) as usize;
        for c in 0..3 {
            sums[i][c] += p[c] - centers[i][c];
        }
        counts[i] += 1;
    }
    let mut moved = false;
    for ((center, sum), &n) in centers.iter_mut().zip(&sums).zip(&counts) {
        if n > 0 {
            let mean: Vec3 = std::array::from_fn(|c| center[c] + sum[c] / n as f64);
            moved |= mean != *center;
            *center = mean;
        }
    }
    moved
}

/// Mean squared reconstruction error of greedy encoding.
pub fn rvq_error(colors: &[Vec3], books: &Codebooks) -> f64 {
    colors
        .iter()
        .map(|c| dist2(c, &books.reconstruct(&rvq_encode(c, books))))
        .sum::<f64>()
        / colors.len().max(1) as f64
}

/// Trains `stages` codebooks of `size` codewords: k-means per stage on the
/// residuals left by earlier stages, then rounds of joint refinement where
/// each stage's codewords are re-centered on what the other stages leave
/// over, keeping the best codebooks seen.
pub fn train_codebooks(colors: &[Vec3], stages: usize, size: usize, seed: u64) -> Result<Codebooks> {
    if colors.is_empty() {
        return Err(Error::InvalidArgument("no colors to train codebooks on".into()));
    }
    if stages == 0 || size == 0 {
        return Err(Error::InvalidArgument("codebooks need at least one stage and codeword".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut residuals = colors.to_vec();
    let mut books = Vec::with_capacity(stages);
    for _ in 0..stages {
        let book = kmeans(&residuals, size, &mut rng);
        for r in residuals.iter_mut() {
            let i = nearest(&book, r) as usize;
            *r = sub(r, &book[i]);
        }
        books.push(book);
    }
    let mut books = Codebooks::new(books)?;
    if stages == 1 {
        return Ok(books);
    }
    let mut best_err = rvq_error(colors, &books);
    let mut best = books.clone();
    for _ in 0..REFINE_ROUNDS {
        let codes: Vec<Vec<u32>> = colors.iter().map(|c| rvq_encode(c, &books)).collect();
        for k in 0..stages {
            let mut sums = vec![[0.0; 3]; size];
            let mut counts = vec![0usize; size];
            for (c, idx) in colors.iter().zip(&codes) {
                let mut others = books.reconstruct(idx);
                let own = books.stages[k][idx[k] as usize];
                others = sub(&others, &own);
                let target = sub(c, &others);
                let slot = idx[k] as usize;
                for j in 0..3 {
                    sums[slot][j] += target[j];
                }
                counts[slot] += 1;
            }
            for (i, (sum, &n)) in sums.iter().zip(&counts).enumerate() {
                if n > 0 {
                    books.stages[k][i] = sum.map(|v| v / n as f64);
                }
            }
        }
        let err = rvq_error(colors, &books);
        if err < best_err {
            best_err = err;
            best = books.clone();
        } else {
            break;
        }
    }
    Ok(best)
}
