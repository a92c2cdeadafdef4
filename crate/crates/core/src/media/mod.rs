//! Clip ingestion and emission, quality metrics and synthetic clips.

mod io;
pub mod metrics;
pub mod synth;

use std::path::{Path, PathBuf};

pub use io::{
    from_8bit, read_image_sequence, read_raw_clip, to_8bit, write_image_sequence, write_raw_clip, RAW_MAGIC,
};
pub use metrics::{mean_psnr, ms_ssim, psnr};
pub use synth::{natural_image, synth_clip, SynthKind, SynthSpec};

use crate::error::{Error, Result};
use crate::image::Image;

/// An in-memory clip: one or more frames sharing the same dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    frames: Vec<Image>,
}

impl Clip {
    pub fn new(frames: Vec<Image>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::ClipFormat("clip has no frames".into()))?;
        if first.pixel_count() == 0 {
            return Err(Error::EmptyImage);
        }
        for f in &frames[1..] {
            first.check_same_dims(f)?;
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Image> {
        self.frames
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Where a clip comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum ClipSource {
    /// Directory of `frame_00000.png`, `frame_00001.png`, ...
    ImageSequence(PathBuf),
    /// Packed RGB24 file with a 16-byte header.
    Raw(PathBuf),
    Synthetic(SynthSpec),
}

impl ClipSource {
    /// Interprets `text` as `synth:<spec>`, a directory, or a raw clip file.
    pub fn parse(text: &str) -> Result<Self> {
        if let Some(spec) = text.strip_prefix("synth:") {
            return Ok(Self::Synthetic(SynthSpec::parse(spec)?));
        }
        let path = Path::new(text);
        if path.is_dir() {
            Ok(Self::ImageSequence(path.to_path_buf()))
        } else {
            Ok(Self::Raw(path.to_path_buf()))
        }
    }

    pub fn load(&self) -> Result<Clip> {
        match self {
            Self::ImageSequence(dir) => read_image_sequence(dir),
            Self::Raw(path) => read_raw_clip(path),
            Self::Synthetic(spec) => Ok(synth_clip(spec)),
        }
    }
}
