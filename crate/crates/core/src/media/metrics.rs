//! PSNR and MS-SSIM over RGB images with values in `[0, 1]`.

use crate::error::Result;
use crate::image::Image;

/// Peak signal-to-noise ratio in dB over all three channels of the clamped
/// images. Identical inputs give `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_dims(b)?;
    let n = a.pixels().len();
    let sum: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| {
            let d = x.clamp(0.0, 1.0) as f64 - y.clamp(0.0, 1.0) as f64;
            d * d
        })
        .sum();
    let mse = sum / n as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Mean PSNR, skipping infinite entries unless all are infinite.
pub fn mean_psnr(values: &[f64]) -> f64 {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return if values.is_empty() { f64::NAN } else { f64::INFINITY };
    }
    finite.iter().sum::<f64>() / finite.len() as f64
}

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Number of scales usable for a `width × height` image: the largest
/// `s ≤ 5` with `min(width, height) ≥ 2^(s-1) · 11`, at least one.
pub fn ms_ssim_scales(width: usize, height: usize) -> usize {
    let m = width.min(height);
    (1..=MS_SSIM_WEIGHTS.len())
        .rev()
        .find(|&s| m >= (1 << (s - 1)) * WINDOW)
        .unwrap_or(1)
}

/// Multi-scale structural similarity with an 11×11 Gaussian window
/// (σ = 1.5), `K1 = 0.01`, `K2 = 0.03` and the standard five scale weights.
///
/// Each channel is scored separately and the channel scores are averaged.
/// Images too small for five scales use fewer scales with the leading
/// weights renormalized to sum to one; the first such call logs a warning.
pub fn ms_ssim(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_dims(b)?;
    let (w, h) = a.dims();
    let scales = ms_ssim_scales(w, h);
    if scales < MS_SSIM_WEIGHTS.len() {
        static WARNED: std::sync::Once = std::sync::Once::new();
        WARNED.call_once(|| {
            log::warn!("ms-ssim: {w}x{h} image supports {scales} of {} scales", MS_SSIM_WEIGHTS.len());
        });
    }
    let total: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
    let weights: Vec<f64> = MS_SSIM_WEIGHTS[..scales].iter().map(|v| v / total).collect();
    ms_ssim_with_weights(a, b, &weights)
}

/// MS-SSIM with explicit per-scale weights (index 0 is full resolution).
pub fn ms_ssim_with_weights(a: &Image, b: &Image, weights: &[f64]) -> Result<f64> {
    a.check_same_dims(b)?;
    let (w, h) = a.dims();
    let mut acc = 0.0;
    for c in 0..3 {
        let pa = Plane::channel(a, c);
        let pb = Plane::channel(b, c);
        acc += ms_ssim_plane(pa, pb, weights, w, h);
    }
    Ok(acc / 3.0)
}

fn ms_ssim_plane(mut x: Plane, mut y: Plane, weights: &[f64], w: usize, h: usize) -> f64 {
    let mut window = WINDOW.min(w).min(h);
    let mut score = 1.0;
    for (k, &weight) in weights.iter().enumerate() {
        if k > 0 {
            x = x.downsample();
            y = y.downsample();
        }
        window = window.min(x.w).min(x.h);
        let (ssim, cs) = ssim_and_cs(&x, &y, window);
        let v = if k + 1 == weights.len() { ssim } else { cs };
        score *= v.max(0.0).powf(weight);
    }
    score
}

#[derive(Clone)]
struct Plane {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Plane {
    fn channel(img: &Image, c: usize) -> Self {
        Self {
            w: img.width(),
            h: img.height(),
            data: img.pixels().chunks_exact(3).map(|p| p[c].clamp(0.0, 1.0) as f64).collect(),
        }
    }

    fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.w + x]
    }

    /// 2×2 average pooling; odd sizes first repeat the last row/column.
    fn downsample(&self) -> Self {
        let pw = self.w + self.w % 2;
        let ph = self.h + self.h % 2;
        let get = |x: usize, y: usize| self.at(x.min(self.w - 1), y.min(self.h - 1));
        let (nw, nh) = (pw / 2, ph / 2);
        let mut data = Vec::with_capacity(nw * nh);
        for y in 0..nh {
            for x in 0..nw {
                let s = get(2 * x, 2 * y) + get(2 * x + 1, 2 * y) + get(2 * x, 2 * y + 1) + get(2 * x + 1, 2 * y + 1);
                data.push(s / 4.0);
            }
        }
        Self { w: nw, h: nh, data }
    }

    fn map2(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            w: self.w,
            h: self.h,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// Separable Gaussian filter, valid region only.
    fn filter(&self, kernel: &[f64]) -> Plane {
        let k = kernel.len();
        let ow = self.w - k + 1;
        let oh = self.h - k + 1;
        let mut tmp = vec![0.0; ow * self.h];
        for y in 0..self.h {
            for x in 0..ow {
                tmp[y * ow + x] = (0..k).map(|i| kernel[i] * self.at(x + i, y)).sum();
            }
        }
        let mut data = vec![0.0; ow * oh];
        for y in 0..oh {
            for x in 0..ow {
                data[y * ow + x] = (0..k).map(|i| kernel[i] * tmp[(y + i) * ow + x]).sum();
            }
        }
        Plane { w: ow, h: oh, data }
    }
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let center = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - center;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

/// Mean SSIM and mean contrast-structure term over the valid window grid.
fn ssim_and_cs(x: &Plane, y: &Plane, window: usize) -> (f64, f64) {
    let kernel = gaussian_kernel(window, WINDOW_SIGMA);
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let mu_x = x.filter(&kernel);
    let mu_y = y.filter(&kernel);
    let xy = x.map2(y, |a, b| a * b).filter(&kernel);
    let sq = x.map2(y, |a, b| a * a + b * b).filter(&kernel);
    let n = mu_x.data.len() as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mu_x.data.len() {
        let (mx, my) = (mu_x.data[i], mu_y.data[i]);
        let num0 = mx * my * 2.0;
        let den0 = mx * mx + my * my;
        let luminance = (num0 + c1) / (den0 + c1);
        let num1 = xy.data[i] * 2.0;
        let den1 = sq.data[i];
        let contrast = (num1 - num0 + c2) / (den1 - den0 + c2);
        ssim += luminance * contrast;
        cs += contrast;
    }
    (ssim / n, cs / n)
}
