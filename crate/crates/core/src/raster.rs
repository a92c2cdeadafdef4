//! Tile-based forward renderer and its analytic backward pass.
//!
//! A splat contributes to a pixel iff the pixel center lies inside the
//! axis-aligned box enclosing the splat's `cutoff_sigma` ellipse. The same
//! membership rule is used by the forward pass, the backward pass, the
//! brute-force reference renderer and the decoder, so it is part of the
//! codec definition.
//!
//! Each pixel accumulates in `f64`, in ascending splat index order, and is
//! stored as `f32`. Tiles are processed in parallel; per-splat gradients
//! are reduced in tile order so that results do not depend on the number of
//! worker threads.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::splat::{Kernel, Splat, SplatFrame};

pub const TILE_SIZE: usize = 16;
pub const CUTOFF_SIGMA: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderParams {
    pub tile_size: usize,
    pub cutoff_sigma: f64,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self {
            tile_size: TILE_SIZE,
            cutoff_sigma: CUTOFF_SIGMA,
        }
    }
}

/// Inclusive pixel rectangle whose centers lie inside a splat's cutoff box.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Footprint {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

impl Footprint {
    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    pub fn area(&self) -> usize {
        (self.x1 - self.x0 + 1) * (self.y1 - self.y0 + 1)
    }
}

/// Pixels `i` with `lo ≤ i + 0.5 ≤ hi`, clipped to `[0, len)`.
fn pixel_span(lo: f64, hi: f64, len: usize) -> Option<(usize, usize)> {
    let first = (lo - 0.5).ceil();
    let last = (hi - 0.5).floor();
    if !(first <= last) || last < 0.0 || first > (len - 1) as f64 {
        return None;
    }
    let first = first.max(0.0) as usize;
    let last = (last as usize).min(len - 1);
    Some((first, last))
}

/// Pixel rectangle covered by `splat`'s cutoff box, or `None` when it misses
/// the image entirely.
pub fn footprint(splat: &Splat, width: usize, height: usize, cutoff_sigma: f64) -> Option<Footprint> {
    if width == 0 || height == 0 {
        return None;
    }
    let [rx, ry] = splat.extent(cutoff_sigma);
    let [cx, cy] = splat.position;
    let (x0, x1) = pixel_span(cx - rx, cx + rx, width)?;
    let (y0, y1) = pixel_span(cy - ry, cy + ry, height)?;
    Some(Footprint { x0, x1, y0, y1 })
}

/// Per-tile lists of the splats whose footprint overlaps the tile.
#[derive(Clone, Debug, PartialEq)]
pub struct TileIndex {
    pub tile_size: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    /// Splat indices per tile, row-major over tiles, ascending within a list.
    pub lists: Vec<Vec<u32>>,
    pub footprints: Vec<Option<Footprint>>,
}

impl TileIndex {
    pub fn build(splats: &[Splat], width: usize, height: usize, params: RenderParams) -> Self {
        let ts = params.tile_size.max(1);
        let tiles_x = width.div_ceil(ts);
        let tiles_y = height.div_ceil(ts);
        let mut lists = vec![Vec::new(); tiles_x * tiles_y];
        let footprints: Vec<Option<Footprint>> = splats
            .iter()
            .map(|s| footprint(s, width, height, params.cutoff_sigma))
            .collect();
        for (i, fp) in footprints.iter().enumerate() {
            let Some(fp) = fp else { continue };
            for ty in fp.y0 / ts..=fp.y1 / ts {
                for tx in fp.x0 / ts..=fp.x1 / ts {
                    lists[ty * tiles_x + tx].push(i as u32);
                }
            }
        }
        Self {
            tile_size: ts,
            tiles_x,
            tiles_y,
            lists,
            footprints,
        }
    }

    pub fn tile_count(&self) -> usize {
        self.lists.len()
    }

    /// Total number of (splat, tile) pairs.
    pub fn pair_count(&self) -> usize {
        self.lists.iter().map(Vec::len).sum()
    }

    fn tile_rect(&self, tile: usize, width: usize, height: usize) -> Footprint {
        let tx = tile % self.tiles_x;
        let ty = tile / self.tiles_x;
        let x0 = tx * self.tile_size;
        let y0 = ty * self.tile_size;
        Footprint {
            x0,
            x1: (x0 + self.tile_size).min(width) - 1,
            y0,
            y1: (y0 + self.tile_size).min(height) - 1,
        }
    }
}

pub fn build_tile_index(frame: &SplatFrame, width: usize, height: usize, tile_size: usize) -> TileIndex {
    TileIndex::build(
        &frame.splats,
        width,
        height,
        RenderParams {
            tile_size,
            ..RenderParams::default()
        },
    )
}

/// Per-splat partial derivatives of a scalar objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SplatGrad {
    pub position: [f64; 2],
    pub cholesky: [f64; 3],
    pub color: [f64; 3],
    pub importance: f64,
}

impl SplatGrad {
    pub fn to_array(&self) -> [f64; 9] {
        [
            self.position[0],
            self.position[1],
            self.cholesky[0],
            self.cholesky[1],
            self.cholesky[2],
            self.color[0],
            self.color[1],
            self.color[2],
            self.importance,
        ]
    }

    fn from_array(a: [f64; 9]) -> Self {
        Self {
            position: [a[0], a[1]],
            cholesky: [a[2], a[3], a[4]],
            color: [a[5], a[6], a[7]],
            importance: a[8],
        }
    }
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::EmptyImage);
    }
    Ok(())
}

fn validate_splats(splats: &[Splat]) -> Result<()> {
    for (i, s) in splats.iter().enumerate() {
        s.validate()
            .map_err(|e| Error::InvalidSplat(format!("splat {i}: {e}")))?;
    }
    Ok(())
}

/// A splat set prepared for repeated evaluation at one resolution.
pub(crate) struct Prepared<'a> {
    splats: &'a [Splat],
    kernels: Vec<Kernel>,
    index: TileIndex,
    width: usize,
    height: usize,
    use_importance: bool,
}

impl<'a> Prepared<'a> {
    pub(crate) fn new(
        splats: &'a [Splat],
        width: usize,
        height: usize,
        use_importance: bool,
        params: RenderParams,
    ) -> Self {
        Self {
            splats,
            kernels: splats.iter().map(|s| s.kernel(use_importance)).collect(),
            index: TileIndex::build(splats, width, height, params),
            width,
            height,
            use_importance,
        }
    }

    /// Interleaved RGB accumulation buffer, `f64`.
    pub(crate) fn forward(&self) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        let blocks: Vec<Vec<f64>> = (0..self.index.tile_count())
            .into_par_iter()
            .map(|t| self.forward_tile(t))
            .collect();
        let mut out = vec![0.0f64; w * h * 3];
        for (t, block) in blocks.iter().enumerate() {
            let rect = self.index.tile_rect(t, w, h);
            let bw = rect.x1 - rect.x0 + 1;
            for y in rect.y0..=rect.y1 {
                let src = &block[(y - rect.y0) * bw * 3..(y - rect.y0 + 1) * bw * 3];
                let dst = (y * w + rect.x0) * 3;
                out[dst..dst + bw * 3].copy_from_slice(src);
            }
        }
        out
    }

    fn forward_tile(&self, tile: usize) -> Vec<f64> {
        let rect = self.index.tile_rect(tile, self.width, self.height);
        let bw = rect.x1 - rect.x0 + 1;
        let bh = rect.y1 - rect.y0 + 1;
        let mut acc = vec![0.0f64; bw * bh * 3];
        for &s in &self.index.lists[tile] {
            let s = s as usize;
            let Some(fp) = self.index.footprints[s] else { continue };
            let k = &self.kernels[s];
            for y in fp.y0.max(rect.y0)..=fp.y1.min(rect.y1) {
                let py = y as f64 + 0.5;
                let row = (y - rect.y0) * bw;
                for x in fp.x0.max(rect.x0)..=fp.x1.min(rect.x1) {
                    let c = k.contribution([x as f64 + 0.5, py]);
                    let i = (row + x - rect.x0) * 3;
                    acc[i] += c[0];
                    acc[i + 1] += c[1];
                    acc[i + 2] += c[2];
                }
            }
        }
        acc
    }

    /// Gradients of `Σ_pixels ⟨grad, rendered⟩`, `grad` interleaved RGB.
    pub(crate) fn backward(&self, grad: &[f64]) -> Vec<SplatGrad> {
        debug_assert_eq!(grad.len(), self.width * self.height * 3);
        let partials: Vec<Vec<[f64; 9]>> = (0..self.index.tile_count())
            .into_par_iter()
            .map(|t| self.backward_tile(t, grad))
            .collect();
        let mut total = vec![[0.0f64; 9]; self.splats.len()];
        for (t, part) in partials.iter().enumerate() {
            for (&s, g) in self.index.lists[t].iter().zip(part) {
                let dst = &mut total[s as usize];
                for k in 0..9 {
                    dst[k] += g[k];
                }
            }
        }
        total.into_iter().map(SplatGrad::from_array).collect()
    }

    fn backward_tile(&self, tile: usize, grad: &[f64]) -> Vec<[f64; 9]> {
        let rect = self.index.tile_rect(tile, self.width, self.height);
        let list = &self.index.lists[tile];
        let mut out = vec![[0.0f64; 9]; list.len()];
        for (slot, &s) in list.iter().enumerate() {
            let s = s as usize;
            let Some(fp) = self.index.footprints[s] else { continue };
            let k = &self.kernels[s];
            let splat = &self.splats[s];
            let weight = if self.use_importance { splat.importance } else { 1.0 };
            let c = splat.color;
            let b_over_c = k.b * k.inv_c;
            let mut acc = [0.0f64; 9];
            for y in fp.y0.max(rect.y0)..=fp.y1.min(rect.y1) {
                let py = y as f64 + 0.5;
                for x in fp.x0.max(rect.x0)..=fp.x1.min(rect.x1) {
                    let i = (y * self.width + x) * 3;
                    let g = [grad[i], grad[i + 1], grad[i + 2]];
                    let (u1, u2) = k.whiten([x as f64 + 0.5, py]);
                    let e = (-(0.5 * (u1 * u1 + u2 * u2))).exp();
                    let gc = g[0] * c[0] + g[1] * c[1] + g[2] * c[2];
                    let we = weight * e;
                    acc[5] += we * g[0];
                    acc[6] += we * g[1];
                    acc[7] += we * g[2];
                    acc[8] += e * gc;
                    // dL/dσ
                    let ds = -we * gc;
                    let t1 = u1 - u2 * b_over_c;
                    acc[0] -= ds * t1 * k.inv_a;
                    acc[1] -= ds * u2 * k.inv_c;
                    acc[2] -= ds * t1 * u1 * k.inv_a;
                    acc[3] -= ds * u1 * u2 * k.inv_c;
                    acc[4] -= ds * u2 * u2 * k.inv_c;
                }
            }
            if !self.use_importance {
                acc[8] = 0.0;
            }
            out[slot] = acc;
        }
        out
    }
}

fn to_image(width: usize, height: usize, acc: Vec<f64>) -> Image {
    let pixels = acc.into_iter().map(|v| v as f32).collect();
    Image::from_pixels(width, height, pixels).expect("buffer sized for image")
}

pub fn render(frame: &SplatFrame, width: usize, height: usize, use_importance: bool) -> Result<Image> {
    render_with(&frame.splats, width, height, use_importance, RenderParams::default())
}

pub fn render_with(
    splats: &[Splat],
    width: usize,
    height: usize,
    use_importance: bool,
    params: RenderParams,
) -> Result<Image> {
    check_dims(width, height)?;
    validate_splats(splats)?;
    let prepared = Prepared::new(splats, width, height, use_importance, params);
    Ok(to_image(width, height, prepared.forward()))
}

/// Reference renderer: every pixel visits every splat in index order.
pub fn render_brute_force(
    splats: &[Splat],
    width: usize,
    height: usize,
    use_importance: bool,
    params: RenderParams,
) -> Result<Image> {
    check_dims(width, height)?;
    validate_splats(splats)?;
    let kernels: Vec<Kernel> = splats.iter().map(|s| s.kernel(use_importance)).collect();
    let footprints: Vec<Option<Footprint>> = splats
        .iter()
        .map(|s| footprint(s, width, height, params.cutoff_sigma))
        .collect();
    let mut acc = vec![0.0f64; width * height * 3];
    for y in 0..height {
        for x in 0..width {
            let i = (y * width + x) * 3;
            for (k, fp) in kernels.iter().zip(&footprints) {
                if fp.is_some_and(|fp| fp.contains(x, y)) {
                    let c = k.contribution([x as f64 + 0.5, y as f64 + 0.5]);
                    acc[i] += c[0];
                    acc[i + 1] += c[1];
                    acc[i + 2] += c[2];
                }
            }
        }
    }
    Ok(to_image(width, height, acc))
}

pub fn render_backward(frame: &SplatFrame, grad_image: &Image, use_importance: bool) -> Result<Vec<SplatGrad>> {
    render_backward_with(&frame.splats, grad_image, use_importance, RenderParams::default())
}

pub fn render_backward_with(
    splats: &[Splat],
    grad_image: &Image,
    use_importance: bool,
    params: RenderParams,
) -> Result<Vec<SplatGrad>> {
    let (w, h) = grad_image.dims();
    check_dims(w, h)?;
    validate_splats(splats)?;
    let grad: Vec<f64> = grad_image.pixels().iter().map(|&v| v as f64).collect();
    let prepared = Prepared::new(splats, w, h, use_importance, params);
    Ok(prepared.backward(&grad))
}
