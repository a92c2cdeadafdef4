//! Quantization, delta coding and the `.gsv` bitstream.
//!
//! Key-frames are coded absolutely. P-frames code, for every splat that
//! survives from the previous frame, the difference to that frame's
//! decoded splat in the same slot; injected splats are coded absolutely.
//! Positions are 16-bit floats in normalized image coordinates, Cholesky
//! entries go through a per-frame `b`-bit asymmetric quantizer and colors
//! through per-frame residual vector quantization.

pub mod bitstream;
pub mod finetune;
pub mod frame;
pub mod quant;
pub mod rvq;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::optim::TrainConfig;
use crate::pipeline::EncodedSequence;
use crate::raster::{render_with, RenderParams};
use crate::splat::{FrameKind, SplatFrame};

pub use bitstream::{
    inspect, read_bitstream, read_from_keyframe, read_keyframe_table, write_bitstream, Bitstream, KeyframeTable, PlaneSizes,
    StreamHeader, StreamInfo,
};
pub use finetune::{quantization_finetune, FinetuneReport, FinetuneResult};
pub use frame::{decode_frame, encode_frame, FrameGeometry, QuantizedFrame};
pub use quant::{quantize_asymmetric, AsymmetricQuantizer};
pub use rvq::{rvq_encode, train_codebooks, Codebooks};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantConfig {
    /// Bits per Cholesky entry.
    pub cholesky_bits: u32,
    pub rvq_stages: usize,
    /// Codewords per stage, a power of two.
    pub rvq_codebook_size: usize,
    pub commitment_weight: f64,
    pub finetune_iterations: usize,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            cholesky_bits: 6,
            rvq_stages: 2,
            rvq_codebook_size: 256,
            commitment_weight: 0.25,
            finetune_iterations: 2000,
        }
    }
}

impl QuantConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=16).contains(&self.cholesky_bits) {
            return Err(Error::InvalidArgument(format!(
                "cholesky_bits must lie in 1..=16, got {}",
                self.cholesky_bits
            )));
        }
        if !(1..=255).contains(&self.rvq_stages) {
            return Err(Error::InvalidArgument(format!(
                "rvq_stages must lie in 1..=255, got {}",
                self.rvq_stages
            )));
        }
        if !self.rvq_codebook_size.is_power_of_two() || self.rvq_codebook_size > 65536 {
            return Err(Error::InvalidArgument(format!(
                "rvq_codebook_size must be a power of two up to 65536, got {}",
                self.rvq_codebook_size
            )));
        }
        if !(self.commitment_weight >= 0.0 && self.commitment_weight.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "commitment_weight must be non-negative, got {}",
                self.commitment_weight
            )));
        }
        if u32::try_from(self.finetune_iterations).is_err() {
            return Err(Error::InvalidArgument("finetune_iterations too large".into()));
        }
        Ok(())
    }
}

/// A serialized clip together with the encoder-side reconstruction.
#[derive(Clone, Debug)]
pub struct EncodedStream {
    pub bytes: Vec<u8>,
    pub header: StreamHeader,
    pub finetune: FinetuneResult,
}

/// Quantizes, fine-tunes and serializes a fitted clip. `n` is the splat
/// budget recorded in the header.
pub fn encode_stream(
    sequence: &EncodedSequence,
    targets: &[Image],
    n: usize,
    quant: &QuantConfig,
    config: &TrainConfig,
) -> Result<EncodedStream> {
    let params = RenderParams::default();
    let finetune = quantization_finetune(sequence, targets, quant, config, params)?;
    let field = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{what} {v} does not fit the container")))
    };
    let header = StreamHeader {
        width: field(sequence.width, "width")?,
        height: field(sequence.height, "height")?,
        frames: field(sequence.frames.len(), "frame count")?,
        n: field(n, "splat count")?,
        quant: quant.clone(),
        tile_size: u16::try_from(params.tile_size).map_err(|_| Error::InvalidArgument("tile size".into()))?,
        cutoff_sigma: params.cutoff_sigma as f32,
    };
    let bytes = write_bitstream(&header, &finetune.quantized)?;
    Ok(EncodedStream {
        bytes,
        header,
        finetune,
    })
}

/// Reconstructs the splats of consecutive coded frames. The first frame
/// must be a key-frame; segments between key-frames decode in parallel.
pub fn decode_splats(header: &StreamHeader, frames: &[QuantizedFrame]) -> Result<Vec<SplatFrame>> {
    let geom = FrameGeometry::new(header.width as usize, header.height as usize);
    let bits = header.quant.cholesky_bits;
    if frames.first().is_some_and(|f| f.kind != FrameKind::I) {
        return Err(Error::InvalidArgument("decoding must start at a key-frame".into()));
    }
    let starts: Vec<usize> = (0..frames.len()).filter(|&t| frames[t].kind == FrameKind::I).collect();
    let segments: Vec<Vec<SplatFrame>> = starts
        .par_iter()
        .enumerate()
        .map(|(i, &start)| {
            let end = starts.get(i + 1).copied().unwrap_or(frames.len());
            let mut out: Vec<SplatFrame> = Vec::with_capacity(end - start);
            for (t, qf) in frames.iter().enumerate().take(end).skip(start) {
                let f = decode_frame(qf, out.last(), geom, bits).map_err(|e| e.in_frame(t))?;
                out.push(f);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(segments.into_iter().flatten().collect())
}

/// Renders decoded frames with the header's rendering constants.
pub fn render_frames(header: &StreamHeader, frames: &[SplatFrame]) -> Result<Vec<Image>> {
    let params = header.render_params();
    frames
        .par_iter()
        .enumerate()
        .map(|(t, f)| {
            render_with(&f.splats, header.width as usize, header.height as usize, false, params)
                .map_err(|e| e.in_frame(t))
        })
        .collect()
}

/// Parses a stream and renders every frame.
pub fn decode_sequence(bytes: &[u8]) -> Result<Vec<Image>> {
    let stream = read_bitstream(bytes)?;
    let splats = decode_splats(&stream.header, &stream.frames)?;
    render_frames(&stream.header, &splats)
}

/// Renders frames `frame..T` using only the header and the records from
/// key-frame `frame` on.
pub fn decode_from_keyframe(bytes: &[u8], frame: usize) -> Result<Vec<Image>> {
    let (header, frames) = read_from_keyframe(bytes, frame)?;
    let splats = decode_splats(&header, &frames)?;
    render_frames(&header, &splats)
}
