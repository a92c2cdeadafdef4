use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::media::Clip;

/// First four bytes of a raw clip file.
pub const RAW_MAGIC: [u8; 4] = *b"RGBC";
const RAW_HEADER: usize = 16;

/// Maps an 8-bit sample to `[0, 1]`.
pub fn from_8bit(v: u8) -> f32 {
    v as f32 / 255.0
}

/// Nearest 8-bit level of a sample, clamped to `[0, 1]` first.
pub fn to_8bit(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn image_from_rgb8(w: usize, h: usize, bytes: &[u8]) -> Image {
    Image::from_pixels(w, h, bytes.iter().map(|&b| from_8bit(b)).collect()).expect("buffer sized for image")
}

fn rgb8(img: &Image) -> Vec<u8> {
    img.pixels().iter().map(|&v| to_8bit(v)).collect()
}

/// Reads a raw clip: magic, then width, height and frame count as
/// little-endian `u32`, then tightly packed RGB24 frames.
pub fn read_raw_clip(path: &Path) -> Result<Clip> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_raw_clip(&bytes)
}

fn parse_raw_clip(bytes: &[u8]) -> Result<Clip> {
    if bytes.len() < RAW_HEADER {
        return Err(Error::ClipFormat(format!("raw clip header needs 16 bytes, got {}", bytes.len())));
    }
    if bytes[..4] != RAW_MAGIC {
        return Err(Error::ClipFormat("raw clip magic mismatch".into()));
    }
    let field = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (w, h, t) = (field(0), field(1), field(2));
    if w == 0 || h == 0 || t == 0 {
        return Err(Error::ClipFormat(format!("raw clip has zero dimension {w}x{h}x{t}")));
    }
    let frame_bytes = w
        .checked_mul(h)
        .and_then(|v| v.checked_mul(3))
        .ok_or_else(|| Error::ClipFormat("raw clip dimensions overflow".into()))?;
    let expected = frame_bytes
        .checked_mul(t)
        .and_then(|v| v.checked_add(RAW_HEADER))
        .ok_or_else(|| Error::ClipFormat("raw clip dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(Error::ClipFormat(format!(
            "raw clip {w}x{h}x{t} needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let frames = bytes[RAW_HEADER..]
        .chunks_exact(frame_bytes)
        .map(|chunk| image_from_rgb8(w, h, chunk))
        .collect();
    Clip::new(frames)
}

pub fn write_raw_clip(path: &Path, clip: &Clip) -> Result<()> {
    let mut out = Vec::with_capacity(RAW_HEADER + clip.len() * clip.width() * clip.height() * 3);
    out.extend_from_slice(&RAW_MAGIC);
    for v in [clip.width(), clip.height(), clip.len()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for f in clip.frames() {
        out.extend_from_slice(&rgb8(f));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn frame_name(i: usize) -> String {
    format!("frame_{i:05}.png")
}

/// Reads `frame_00000.png`, `frame_00001.png`, ... until the first gap.
pub fn read_image_sequence(dir: &Path) -> Result<Clip> {
    if !dir.is_dir() {
        return Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory")));
    }
    let mut frames = Vec::new();
    loop {
        let path = dir.join(frame_name(frames.len()));
        if !path.exists() {
            break;
        }
        let img = ::image::open(&path)?.to_rgb8();
        let (w, h) = img.dimensions();
        frames.push(image_from_rgb8(w as usize, h as usize, img.as_raw()));
    }
    if frames.is_empty() {
        return Err(Error::ClipFormat(format!("no {} in {}", frame_name(0), dir.display())));
    }
    Clip::new(frames)
}

/// Writes one PNG per frame, creating `dir` if needed.
pub fn write_image_sequence(dir: &Path, clip: &Clip) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in clip.frames().iter().enumerate() {
        let buf = ::image::RgbImage::from_raw(f.width() as u32, f.height() as u32, rgb8(f)).expect("buffer sized for image");
        buf.save(dir.join(frame_name(i)))?;
    }
    Ok(())
}
