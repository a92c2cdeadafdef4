//! The `.gsv` container: a fixed header, a key-frame offset table and
//! length-prefixed frame records. All fields are little-endian.

use bitvec::prelude::*;
use half::f16;
use serde::Serialize;

use crate::codec::frame::{CholeskyPlane, ColorPlane, InjectedBlock, QuantizedFrame};
use crate::codec::rvq::Codebooks;
use crate::codec::QuantConfig;
use crate::error::{BitstreamError, Error, Result};
use crate::raster::RenderParams;
use crate::splat::FrameKind;

pub const MAGIC: [u8; 4] = *b"GSVC";
pub const VERSION: u16 = 1;
/// Bytes before the key-frame table entries.
pub const HEADER_LEN: usize = 48;
const TABLE_ENTRY_LEN: usize = 12;

/// Stream-wide parameters.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StreamHeader {
    pub width: u32,
    pub height: u32,
    pub frames: u32,
    /// Rate-control splat count.
    pub n: u32,
    pub quant: QuantConfig,
    pub tile_size: u16,
    pub cutoff_sigma: f32,
}

impl StreamHeader {
    pub fn render_params(&self) -> RenderParams {
        RenderParams {
            tile_size: self.tile_size as usize,
            cutoff_sigma: self.cutoff_sigma as f64,
        }
    }
}

/// A parsed stream.
#[derive(Clone, Debug, PartialEq)]
pub struct Bitstream {
    pub header: StreamHeader,
    pub frames: Vec<QuantizedFrame>,
}

/// `(frame index, byte offset of its record)` for every key-frame.
pub type KeyframeTable = Vec<(u32, u64)>;

/// Bytes spent on each part of one frame record.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PlaneSizes {
    /// Length prefix, kind and counts.
    pub record_header: usize,
    pub slot_map: usize,
    pub positions: usize,
    /// Scale/offset pairs and packed codes.
    pub cholesky: usize,
    pub codebooks: usize,
    pub color_indices: usize,
    pub injected: usize,
}

impl PlaneSizes {
    pub fn total(&self) -> usize {
        self.record_header
            + self.slot_map
            + self.positions
            + self.cholesky
            + self.codebooks
            + self.color_indices
            + self.injected
    }

    fn add(&mut self, other: &PlaneSizes) {
        self.record_header += other.record_header;
        self.slot_map += other.slot_map;
        self.positions += other.positions;
        self.cholesky += other.cholesky;
        self.codebooks += other.codebooks;
        self.color_indices += other.color_indices;
        self.injected += other.injected;
    }
}

fn index_bits(codebook_size: usize) -> u32 {
    codebook_size.trailing_zeros()
}

// ---------------------------------------------------------------- writing

struct Writer {
    out: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.out.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.out.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.out.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.out.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.out.extend_from_slice(&v.to_le_bytes());
    }
    fn f16(&mut self, v: f16) {
        self.u16(v.to_bits());
    }
    fn packed(&mut self, values: impl Iterator<Item = u32>, bits: u32) {
        if bits == 0 {
            return;
        }
        let mut bv: BitVec<u8, Lsb0> = BitVec::new();
        for v in values {
            let start = bv.len();
            bv.resize(start + bits as usize, false);
            bv[start..].store_le(v);
        }
        self.out.extend_from_slice(bv.as_raw_slice());
    }
}

fn u32_field(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{what} {v} does not fit the container")))
}

fn write_cholesky(w: &mut Writer, plane: &CholeskyPlane, bits: u32) {
    if plane.codes.is_empty() {
        return;
    }
    plane.gamma.iter().for_each(|&g| w.f16(g));
    plane.beta.iter().for_each(|&b| w.f16(b));
    w.packed(plane.codes.iter().flatten().copied(), bits);
}

fn write_frame(w: &mut Writer, f: &QuantizedFrame, quant: &QuantConfig) -> Result<()> {
    let m = f.main_count();
    w.u8(match f.kind {
        FrameKind::I => 0,
        FrameKind::P => 1,
    });
    w.u32(u32_field(m, "splat count")?);
    w.u32(u32_field(f.injected.len(), "injected count")?);
    if f.kind == FrameKind::P {
        w.u32(u32_field(f.slot_mask.len(), "slot count")?);
        let bv: BitVec<u8, Lsb0> = f.slot_mask.iter().copied().collect();
        w.out.extend_from_slice(bv.as_raw_slice());
    }
    for p in &f.positions {
        w.f16(p[0]);
        w.f16(p[1]);
    }
    write_cholesky(w, &f.cholesky, quant.cholesky_bits);
    if m > 0 {
        let books = f
            .colors
            .codebooks
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("missing codebooks".into()))?;
        for stage in &books.stages {
            for c in stage {
                c.iter().for_each(|&v| w.f16(f16::from_f64(v)));
            }
        }
        w.packed(f.colors.indices.iter().flatten().copied(), index_bits(quant.rvq_codebook_size));
    }
    if !f.injected.is_empty() {
        for p in &f.injected.positions {
            w.f16(p[0]);
            w.f16(p[1]);
        }
        write_cholesky(w, &f.injected.cholesky, quant.cholesky_bits);
        for c in &f.injected.colors {
            c.iter().for_each(|&v| w.f16(v));
        }
    }
    Ok(())
}

fn check_frame_shape(f: &QuantizedFrame, quant: &QuantConfig) -> Result<()> {
    let m = f.main_count();
    let bad = |what: &str| Err(Error::InvalidArgument(format!("frame not writable: {what}")));
    if f.cholesky.codes.len() != m || f.colors.indices.len() != m {
        return bad("plane lengths disagree");
    }
    if f.injected.cholesky.codes.len() != f.injected.len() || f.injected.colors.len() != f.injected.len() {
        return bad("injected plane lengths disagree");
    }
    if f.kind == FrameKind::I && (!f.slot_mask.is_empty() || !f.injected.is_empty()) {
        return bad("key-frame with P-frame fields");
    }
    if f.kind == FrameKind::P && f.slot_mask.iter().filter(|b| **b).count() != m {
        return bad("slot map disagrees with splat count");
    }
    let max_code = (1u64 << quant.cholesky_bits) - 1;
    let codes = f.cholesky.codes.iter().chain(&f.injected.cholesky.codes).flatten();
    if codes.clone().any(|&c| c as u64 > max_code) {
        return bad("Cholesky code exceeds bit width");
    }
    if m > 0 {
        let Some(books) = &f.colors.codebooks else { return bad("missing codebooks") };
        if books.stage_count() != quant.rvq_stages || books.size() != quant.rvq_codebook_size {
            return bad("codebook shape differs from header");
        }
        if f.colors.indices.iter().any(|idx| idx.len() != quant.rvq_stages || idx.iter().any(|&i| i as usize >= quant.rvq_codebook_size)) {
            return bad("color index out of range");
        }
    }
    Ok(())
}

/// Serializes a stream. `frames` must match `header.frames` and start with
/// a key-frame.
pub fn write_bitstream(header: &StreamHeader, frames: &[QuantizedFrame]) -> Result<Vec<u8>> {
    header.quant.validate()?;
    if frames.len() != header.frames as usize {
        return Err(Error::InvalidArgument(format!(
            "header announces {} frames, got {}",
            header.frames,
            frames.len()
        )));
    }
    if frames.first().is_some_and(|f| f.kind != FrameKind::I) {
        return Err(Error::InvalidArgument("first frame must be a key-frame".into()));
    }
    let mut prev_len = 0;
    for f in frames {
        check_frame_shape(f, &header.quant)?;
        if f.kind == FrameKind::P && f.slot_mask.len() != prev_len {
            return Err(Error::SlotMap("slot map does not cover the previous frame".into()));
        }
        if f.len() > header.n as usize {
            return Err(Error::InvalidArgument(format!("frame of {} splats exceeds N = {}", f.len(), header.n)));
        }
        prev_len = f.len();
    }
    let mut records = Vec::with_capacity(frames.len());
    for f in frames {
        let mut w = Writer { out: Vec::new() };
        write_frame(&mut w, f, &header.quant)?;
        records.push(w.out);
    }
    let keys: Vec<usize> = (0..frames.len()).filter(|&t| frames[t].kind == FrameKind::I).collect();
    let mut w = Writer { out: Vec::new() };
    w.out.extend_from_slice(&MAGIC);
    w.u16(VERSION);
    w.u16(0);
    w.u32(header.width);
    w.u32(header.height);
    w.u32(header.frames);
    w.u32(header.n);
    w.u8(header.quant.cholesky_bits as u8);
    w.u8(header.quant.rvq_stages as u8);
    w.u32(u32_field(header.quant.rvq_codebook_size, "codebook size")?);
    w.f32(header.quant.commitment_weight as f32);
    w.u32(u32_field(header.quant.finetune_iterations, "fine-tune iterations")?);
    w.u16(header.tile_size);
    w.f32(header.cutoff_sigma);
    w.u32(keys.len() as u32);
    debug_assert_eq!(w.out.len(), HEADER_LEN);
    let mut offset = HEADER_LEN + keys.len() * TABLE_ENTRY_LEN;
    let mut offsets = Vec::with_capacity(records.len());
    for r in &records {
        offsets.push(offset);
        offset += 4 + r.len();
    }
    for &t in &keys {
        w.u32(t as u32);
        w.u64(offsets[t] as u64);
    }
    for r in &records {
        w.u32(u32_field(r.len(), "record length")?);
        w.out.extend_from_slice(r);
    }
    Ok(w.out)
}

// ---------------------------------------------------------------- reading

type BResult<T> = std::result::Result<T, BitstreamError>;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    /// Reads past this point are truncation.
    end: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> BResult<&'a [u8]> {
        let available = self.end - self.pos;
        if n > available {
            return Err(BitstreamError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> BResult<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> BResult<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> BResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> BResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> BResult<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f16(&mut self) -> BResult<f16> {
        let at = self.pos;
        let v = f16::from_bits(self.u16()?);
        if !v.is_finite() {
            return Err(malformed(at, "non-finite 16-bit float"));
        }
        Ok(v)
    }
    /// Ensures `n` bytes remain before allocating for them.
    fn need(&self, n: u64) -> BResult<()> {
        let available = self.end - self.pos;
        if n > available as u64 {
            return Err(BitstreamError::Truncated {
                offset: self.pos,
                needed: n.min(usize::MAX as u64) as usize,
                available,
            });
        }
        Ok(())
    }
    fn packed(&mut self, count: usize, bits: u32) -> BResult<Vec<u32>> {
        if bits == 0 {
            return Ok(vec![0; count]);
        }
        let total_bits = count as u64 * bits as u64;
        let len = total_bits.div_ceil(8);
        self.need(len)?;
        let at = self.pos;
        let raw = self.take(len as usize)?;
        let view = raw.view_bits::<Lsb0>();
        if view[total_bits as usize..].any() {
            return Err(malformed(at + len as usize - 1, "nonzero padding bits"));
        }
        Ok(view[..total_bits as usize]
            .chunks(bits as usize)
            .map(|c| c.load_le::<u32>())
            .collect())
    }
}

fn malformed(offset: usize, reason: &str) -> BitstreamError {
    BitstreamError::Malformed {
        offset,
        reason: reason.to_string(),
    }
}

fn unsupported(offset: usize, what: String) -> BitstreamError {
    BitstreamError::UnsupportedParameter { offset, what }
}

fn read_header(bytes: &[u8]) -> BResult<(StreamHeader, KeyframeTable, usize)> {
    let prefix = &bytes[..bytes.len().min(4)];
    if prefix != &MAGIC[..prefix.len()] {
        return Err(BitstreamError::BadMagic { found: prefix.to_vec() });
    }
    let mut r = Reader {
        bytes,
        pos: 0,
        end: bytes.len(),
    };
    r.take(4)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(BitstreamError::UnsupportedVersion { version });
    }
    let flags = r.u16()?;
    if flags != 0 {
        return Err(unsupported(6, format!("flags {flags:#06x}")));
    }
    let width = r.u32()?;
    let height = r.u32()?;
    if width == 0 || height == 0 {
        return Err(unsupported(8, format!("frame size {width}x{height}")));
    }
    let frames = r.u32()?;
    let n = r.u32()?;
    let bits = r.u8()? as u32;
    if !(1..=16).contains(&bits) {
        return Err(unsupported(24, format!("Cholesky bit width {bits}")));
    }
    let stages = r.u8()? as usize;
    if stages == 0 {
        return Err(unsupported(25, "zero quantizer stages".into()));
    }
    let codebook_size = r.u32()? as usize;
    if !codebook_size.is_power_of_two() || codebook_size > 65536 {
        return Err(unsupported(26, format!("codebook size {codebook_size}")));
    }
    let commitment = r.f32()?;
    if !commitment.is_finite() || commitment < 0.0 {
        return Err(unsupported(30, format!("commitment weight {commitment}")));
    }
    let finetune = r.u32()?;
    let tile_size = r.u16()?;
    if tile_size == 0 {
        return Err(unsupported(38, "tile size 0".into()));
    }
    let cutoff = r.f32()?;
    if !(cutoff.is_finite() && cutoff > 0.0) {
        return Err(unsupported(40, format!("cutoff {cutoff}")));
    }
    let key_count = r.u32()?;
    r.need(key_count as u64 * TABLE_ENTRY_LEN as u64)?;
    let mut table = Vec::with_capacity(key_count as usize);
    for _ in 0..key_count {
        let at = r.pos;
        let t = r.u32()?;
        let offset = r.u64()?;
        if t >= frames {
            return Err(BitstreamError::OutOfRange {
                offset: at,
                what: "key-frame index",
                value: t as u64,
                limit: frames as u64,
            });
        }
        if table.last().is_some_and(|&(prev, _): &(u32, u64)| prev >= t) {
            return Err(malformed(at, "key-frame table not ascending"));
        }
        table.push((t, offset));
    }
    let header = StreamHeader {
        width,
        height,
        frames,
        n,
        quant: QuantConfig {
            cholesky_bits: bits,
            rvq_stages: stages,
            rvq_codebook_size: codebook_size,
            commitment_weight: commitment as f64,
            finetune_iterations: finetune as usize,
        },
        tile_size,
        cutoff_sigma: cutoff,
    };
    Ok((header, table, r.pos))
}

fn read_cholesky(r: &mut Reader, count: usize, bits: u32) -> BResult<CholeskyPlane> {
    if count == 0 {
        return Ok(CholeskyPlane {
            gamma: [f16::ZERO; 3],
            beta: [f16::ZERO; 3],
            codes: Vec::new(),
        });
    }
    let mut gamma = [f16::ZERO; 3];
    for g in &mut gamma {
        let at = r.pos;
        *g = r.f16()?;
        if g.to_f64() <= 0.0 {
            return Err(malformed(at, "non-positive quantizer scale"));
        }
    }
    let mut beta = [f16::ZERO; 3];
    for b in &mut beta {
        *b = r.f16()?;
    }
    let flat = r.packed(count * 3, bits)?;
    Ok(CholeskyPlane {
        gamma,
        beta,
        codes: flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
    })
}

fn read_pairs(r: &mut Reader, count: usize) -> BResult<Vec<[f16; 2]>> {
    r.need(count as u64 * 4)?;
    (0..count).map(|_| Ok([r.f16()?, r.f16()?])).collect()
}

/// Parses one record body; `prev_len` is the splat count of the previous
/// frame, if any.
fn read_frame(r: &mut Reader, header: &StreamHeader, prev_len: Option<usize>, sizes: &mut PlaneSizes) -> BResult<QuantizedFrame> {
    let quant = &header.quant;
    let start = r.pos;
    let kind_at = r.pos;
    let kind = match r.u8()? {
        0 => FrameKind::I,
        1 => FrameKind::P,
        k => return Err(malformed(kind_at, &format!("frame kind {k}"))),
    };
    let count_at = r.pos;
    let m = r.u32()? as usize;
    let injected = r.u32()? as usize;
    let total = m as u64 + injected as u64;
    if total > header.n as u64 {
        return Err(BitstreamError::OutOfRange {
            offset: count_at,
            what: "splat count",
            value: total,
            limit: header.n as u64,
        });
    }
    sizes.record_header += 4 + (r.pos - start);
    let mut slot_mask = Vec::new();
    match kind {
        FrameKind::I => {
            if injected != 0 {
                return Err(malformed(count_at + 4, "key-frame with injected block"));
            }
        }
        FrameKind::P => {
            let at = r.pos;
            let slots = r.u32()? as usize;
            let Some(prev_len) = prev_len else {
                return Err(malformed(kind_at, "P-frame without a previous frame"));
            };
            if slots != prev_len {
                return Err(BitstreamError::OutOfRange {
                    offset: at,
                    what: "slot count",
                    value: slots as u64,
                    limit: prev_len as u64,
                });
            }
            let len = slots.div_ceil(8);
            let raw = r.take(len)?;
            let view = raw.view_bits::<Lsb0>();
            if view[slots..].any() {
                return Err(malformed(at + 4 + len - 1, "nonzero padding bits"));
            }
            slot_mask = view[..slots].iter().by_vals().collect();
            if slot_mask.iter().filter(|b| **b).count() != m {
                return Err(malformed(at, "slot map disagrees with splat count"));
            }
            sizes.slot_map += r.pos - at;
        }
    }
    let at = r.pos;
    let positions = read_pairs(r, m)?;
    sizes.positions += r.pos - at;
    let at = r.pos;
    let cholesky = read_cholesky(r, m, quant.cholesky_bits)?;
    sizes.cholesky += r.pos - at;
    let colors = if m > 0 {
        let at = r.pos;
        let b = quant.rvq_codebook_size;
        r.need(quant.rvq_stages as u64 * b as u64 * 6)?;
        let mut stages = Vec::with_capacity(quant.rvq_stages);
        for _ in 0..quant.rvq_stages {
            let mut stage = Vec::with_capacity(b);
            for _ in 0..b {
                stage.push([r.f16()?.to_f64(), r.f16()?.to_f64(), r.f16()?.to_f64()]);
            }
            stages.push(stage);
        }
        sizes.codebooks += r.pos - at;
        let at = r.pos;
        let flat = r.packed(m * quant.rvq_stages, index_bits(b))?;
        sizes.color_indices += r.pos - at;
        ColorPlane {
            codebooks: Some(Codebooks { stages }),
            indices: flat.chunks_exact(quant.rvq_stages).map(<[u32]>::to_vec).collect(),
        }
    } else {
        ColorPlane {
            codebooks: None,
            indices: Vec::new(),
        }
    };
    let at = r.pos;
    let injected = if injected > 0 {
        let positions = read_pairs(r, injected)?;
        let cholesky = read_cholesky(r, injected, quant.cholesky_bits)?;
        r.need(injected as u64 * 6)?;
        let colors = (0..injected)
            .map(|_| Ok([r.f16()?, r.f16()?, r.f16()?]))
            .collect::<BResult<_>>()?;
        InjectedBlock {
            positions,
            cholesky,
            colors,
        }
    } else {
        InjectedBlock {
            positions: Vec::new(),
            cholesky: read_cholesky(r, 0, quant.cholesky_bits)?,
            colors: Vec::new(),
        }
    };
    sizes.injected += r.pos - at;
    Ok(QuantizedFrame {
        kind,
        slot_mask,
        positions,
        cholesky,
        colors,
        injected,
    })
}

/// Reads records starting at byte `pos`, from frame `first` to the end.
fn read_records(
    bytes: &[u8],
    header: &StreamHeader,
    mut pos: usize,
    first: usize,
) -> BResult<(Vec<QuantizedFrame>, Vec<(usize, PlaneSizes)>)> {
    let mut frames: Vec<QuantizedFrame> = Vec::new();
    let mut sizes = Vec::new();
    for t in first..header.frames as usize {
        let mut r = Reader {
            bytes,
            pos,
            end: bytes.len(),
        };
        let record_at = pos;
        let len = r.u32()? as usize;
        r.need(len as u64)?;
        let mut body = Reader {
            bytes,
            pos: r.pos,
            end: r.pos + len,
        };
        let mut s = PlaneSizes::default();
        let prev_len = frames.last().map(QuantizedFrame::len);
        let frame = read_frame(&mut body, header, prev_len, &mut s)?;
        if t == 0 && frame.kind != FrameKind::I {
            return Err(malformed(record_at + 4, "first frame is not a key-frame"));
        }
        if body.pos != body.end {
            return Err(malformed(body.pos, "record longer than its contents"));
        }
        pos = body.end;
        frames.push(frame);
        sizes.push((record_at, s));
    }
    if pos != bytes.len() {
        return Err(malformed(pos, "trailing bytes after the last frame"));
    }
    Ok((frames, sizes))
}

fn check_table(table: &KeyframeTable, frames: &[QuantizedFrame], sizes: &[(usize, PlaneSizes)], first: usize) -> BResult<()> {
    let keys: Vec<(u32, u64)> = frames
        .iter()
        .zip(sizes)
        .enumerate()
        .filter(|(_, (f, _))| f.kind == FrameKind::I)
        .map(|(k, (_, (offset, _)))| ((first + k) as u32, *offset as u64))
        .collect();
    let listed: Vec<(u32, u64)> = table.iter().copied().filter(|&(t, _)| t as usize >= first).collect();
    if keys != listed {
        return Err(malformed(HEADER_LEN, "key-frame table disagrees with frame records"));
    }
    Ok(())
}

fn parse(bytes: &[u8]) -> BResult<(Bitstream, KeyframeTable, Vec<PlaneSizes>)> {
    let (header, table, pos) = read_header(bytes)?;
    let (frames, sizes) = read_records(bytes, &header, pos, 0)?;
    check_table(&table, &frames, &sizes, 0)?;
    Ok((
        Bitstream { header, frames },
        table,
        sizes.into_iter().map(|(_, s)| s).collect(),
    ))
}

/// Parses a whole stream.
pub fn read_bitstream(bytes: &[u8]) -> Result<Bitstream> {
    Ok(parse(bytes)?.0)
}

/// Parses only the header and the key-frame table.
pub fn read_keyframe_table(bytes: &[u8]) -> Result<(StreamHeader, KeyframeTable)> {
    let (header, table, _) = read_header(bytes)?;
    Ok((header, table))
}

/// Parses the header and the records from key-frame `frame` onwards using
/// the offset table, without touching earlier records.
pub fn read_from_keyframe(bytes: &[u8], frame: usize) -> Result<(StreamHeader, Vec<QuantizedFrame>)> {
    let (header, table, _) = read_header(bytes)?;
    let &(_, offset) = table
        .iter()
        .find(|&&(t, _)| t as usize == frame)
        .ok_or_else(|| Error::InvalidArgument(format!("frame {frame} is not a key-frame")))?;
    let offset = usize::try_from(offset).map_err(|_| Error::InvalidArgument("offset overflow".into()))?;
    if offset > bytes.len() {
        return Err(BitstreamError::Truncated {
            offset: bytes.len(),
            needed: offset - bytes.len(),
            available: 0,
        }
        .into());
    }
    let (frames, sizes) = read_records(bytes, &header, offset, frame)?;
    if frames.first().is_some_and(|f| f.kind != FrameKind::I) {
        return Err(BitstreamError::Malformed {
            offset,
            reason: "key-frame offset points at a P-frame".into(),
        }
        .into());
    }
    check_table(&table, &frames, &sizes, frame)?;
    Ok((header, frames))
}

/// Layout summary of a stream.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StreamInfo {
    pub header: StreamHeader,
    pub keyframes: Vec<u32>,
    pub total_bytes: usize,
    /// Header and key-frame table.
    pub header_bytes: usize,
    pub frame_kinds: Vec<FrameKind>,
    pub frame_sizes: Vec<PlaneSizes>,
    pub planes: PlaneSizes,
    /// Frame record bits per pixel.
    pub bpp: f64,
    /// Whole-stream bits per pixel.
    pub stream_bpp: f64,
}

pub fn inspect(bytes: &[u8]) -> Result<StreamInfo> {
    let (stream, table, frame_sizes) = parse(bytes)?;
    let mut planes = PlaneSizes::default();
    frame_sizes.iter().for_each(|s| planes.add(s));
    let h = &stream.header;
    let pixels = (h.width as f64) * (h.height as f64) * (h.frames.max(1) as f64);
    Ok(StreamInfo {
        keyframes: table.iter().map(|&(t, _)| t).collect(),
        total_bytes: bytes.len(),
        header_bytes: bytes.len() - planes.total(),
        frame_kinds: stream.frames.iter().map(|f| f.kind).collect(),
        bpp: planes.total() as f64 * 8.0 / pixels,
        stream_bpp: bytes.len() as f64 * 8.0 / pixels,
        frame_sizes,
        planes,
        header: stream.header,
    })
}
