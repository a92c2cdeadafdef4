//! Deterministic synthetic clips used for testing and benchmarking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::media::Clip;

/// What a synthetic clip shows.
#[derive(Clone, Debug, PartialEq)]
pub enum SynthKind {
    /// Every frame is the same smooth textured image.
    Constant,
    /// A disc moving `velocity` pixels per frame over a textured backdrop.
    TranslatingCircle { radius: f64, velocity: [f64; 2] },
    /// A disc on the left half in frame 0 and on the right half afterwards.
    JumpingCircle { radius: f64 },
    /// Smooth noise whose field drifts `drift` pixels per frame.
    TexturedNoise { drift: [f64; 2] },
    /// `first` for frames before `cut`, then `second` (seeded independently).
    Concatenated {
        first: Box<SynthKind>,
        second: Box<SynthKind>,
        cut: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(kind: SynthKind, width: usize, height: usize, frames: usize, seed: u64) -> Self {
        Self {
            kind,
            width,
            height,
            frames,
            seed,
        }
    }

    /// Parses `name:WxHxT[:seed]`, e.g. `circle:64x64x10:3`. Names are
    /// `constant`, `circle`, `jump`, `noise` and `cut` (two scenes, cut at
    /// the middle frame).
    pub fn parse(text: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad synthetic clip spec {text:?}"));
        let mut parts = text.split(':');
        let name = parts.next().ok_or_else(bad)?;
        let dims: Vec<usize> = parts
            .next()
            .ok_or_else(bad)?
            .split('x')
            .map(|v| v.parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let [w, h, t] = dims[..] else { return Err(bad()) };
        let seed = match parts.next() {
            Some(s) => s.parse().map_err(|_| bad())?,
            None => 0,
        };
        if parts.next().is_some() || w == 0 || h == 0 || t == 0 {
            return Err(bad());
        }
        let r = w.min(h) as f64 / 6.0;
        let kind = match name {
            "constant" => SynthKind::Constant,
            "circle" => SynthKind::TranslatingCircle {
                radius: r,
                velocity: [1.0, 0.5],
            },
            "jump" => SynthKind::JumpingCircle { radius: r },
            "noise" => SynthKind::TexturedNoise { drift: [0.5, 0.25] },
            "cut" => SynthKind::Concatenated {
                first: Box::new(SynthKind::TexturedNoise { drift: [0.5, 0.25] }),
                second: Box::new(SynthKind::TexturedNoise { drift: [0.5, 0.0] }),
                cut: t / 2,
            },
            _ => return Err(bad()),
        };
        Ok(Self::new(kind, w, h, t, seed))
    }
}

/// Renders the clip described by `spec`.
pub fn synth_clip(spec: &SynthSpec) -> Clip {
    let frames = (0..spec.frames)
        .map(|t| synth_frame(&spec.kind, spec.width, spec.height, t, spec.seed))
        .collect();
    Clip::new(frames).expect("synthetic frames share dimensions")
}

fn synth_frame(kind: &SynthKind, w: usize, h: usize, t: usize, seed: u64) -> Image {
    match kind {
        SynthKind::Constant => backdrop(w, h, seed, [0.0, 0.0]),
        SynthKind::TranslatingCircle { radius, velocity } => {
            let start = [w as f64 * 0.3, h as f64 * 0.4];
            let center = [start[0] + velocity[0] * t as f64, start[1] + velocity[1] * t as f64];
            let mut img = backdrop(w, h, seed, [0.0, 0.0]);
            draw_disc(&mut img, center, *radius, disc_color(seed));
            img
        }
        SynthKind::JumpingCircle { radius } => {
            let x = if t == 0 { 0.25 } else { 0.75 };
            let center = [w as f64 * x, h as f64 * 0.5];
            let mut img = Image::filled(w, h, [0.05, 0.05, 0.08]);
            draw_disc(&mut img, center, *radius, disc_color(seed));
            img
        }
        SynthKind::TexturedNoise { drift } => {
            backdrop(w, h, seed ^ 0x5eed, [drift[0] * t as f64, drift[1] * t as f64])
        }
        SynthKind::Concatenated { first, second, cut } => {
            if t < *cut {
                synth_frame(first, w, h, t, seed)
            } else {
                synth_frame(second, w, h, t - cut, seed.wrapping_add(0x9e37_79b9_7f4a_7c15))
            }
        }
    }
}

fn disc_color(seed: u64) -> [f32; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd15c);
    [
        rng.random_range(0.75..0.95),
        rng.random_range(0.45..0.75),
        rng.random_range(0.1..0.3),
    ]
}

/// Disc with a one-pixel linear edge ramp, blended over `img`.
fn draw_disc(img: &mut Image, center: [f64; 2], radius: f64, color: [f32; 3]) {
    let (w, h) = img.dims();
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 + 0.5 - center[0];
            let dy = y as f64 + 0.5 - center[1];
            let cover = (radius + 0.5 - (dx * dx + dy * dy).sqrt()).clamp(0.0, 1.0) as f32;
            if cover > 0.0 {
                let bg = img.get(x, y);
                img.set(x, y, std::array::from_fn(|c| bg[c] * (1.0 - cover) + color[c] * cover));
            }
        }
    }
}

/// Seeded lattice noise with smooth (cubic) interpolation, periodic over
/// a `cells × cells` grid.
struct ValueNoise {
    cells: usize,
    lattice: Vec<[f64; 3]>,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, cells: usize) -> Self {
        let lattice = (0..cells * cells)
            .map(|_| [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        Self { cells, lattice }
    }

    fn at(&self, u: f64, v: f64) -> [f64; 3] {
        let n = self.cells as f64;
        let (u, v) = (u.rem_euclid(1.0) * n, v.rem_euclid(1.0) * n);
        let (i0, j0) = (u.floor() as usize % self.cells, v.floor() as usize % self.cells);
        let (i1, j1) = ((i0 + 1) % self.cells, (j0 + 1) % self.cells);
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let (fu, fv) = (smooth(u - u.floor()), smooth(v - v.floor()));
        let g = |i: usize, j: usize| self.lattice[j * self.cells + i];
        let (a, b, c, d) = (g(i0, j0), g(i1, j0), g(i0, j1), g(i1, j1));
        std::array::from_fn(|k| {
            let top = a[k] + (b[k] - a[k]) * fu;
            let bottom = c[k] + (d[k] - c[k]) * fu;
            top + (bottom - top) * fv
        })
    }
}

/// Smooth multi-octave color field, shifted by `offset` pixels.
fn backdrop(w: usize, h: usize, seed: u64, offset: [f64; 2]) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let octaves = [(2usize, 0.55), (4, 0.3), (8, 0.15)];
    let layers: Vec<(ValueNoise, f64)> = octaves
        .iter()
        .map(|&(cells, amp)| (ValueNoise::new(&mut rng, cells), amp))
        .collect();
    let period = (w.max(h) as f64) * 2.0;
    Image::from_fn(w, h, |x, y| {
        let u = (x as f64 + 0.5 + offset[0]) / period;
        let v = (y as f64 + 0.5 + offset[1]) / period;
        let mut acc = [0.0f64; 3];
        for (noise, amp) in &layers {
            let s = noise.at(u, v);
            for c in 0..3 {
                acc[c] += amp * s[c];
            }
        }
        acc.map(|v| (0.1 + 0.8 * v).clamp(0.0, 1.0) as f32)
    })
}

/// A still image with smooth shading, soft-edged shapes and mid-frequency
/// texture, standing in for a natural photograph.
pub fn natural_image(w: usize, h: usize, seed: u64) -> Image {
    let mut img = backdrop(w, h, seed, [0.0, 0.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa11ce);
    let detail = ValueNoise::new(&mut rng, 16);
    let scale = w.min(h) as f64;
    for _ in 0..5 {
        let center = [rng.random_range(0.15..0.85) * w as f64, rng.random_range(0.15..0.85) * h as f64];
        let radius = rng.random_range(0.06..0.16) * scale;
        let color = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        draw_disc(&mut img, center, radius, color);
    }
    let (dw, dh) = (w as f64, h as f64);
    for y in 0..h {
        for x in 0..w {
            let t = detail.at(x as f64 / dw, y as f64 / dh);
            let px = img.get(x, y);
            img.set(x, y, std::array::from_fn(|c| (px[c] + 0.08 * (t[c] as f32 - 0.5)).clamp(0.0, 1.0)));
        }
    }
    img
}
