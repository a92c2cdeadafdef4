//! Throughput measurements, rate-distortion points and golden-fixture
//! regression checks. Timings exclude file I/O.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::{
    decode_sequence, encode_stream, inspect, read_bitstream, write_bitstream, QuantConfig,
};
use crate::error::{BitstreamError, Error, Result};
use crate::image::Image;
use crate::media::{mean_psnr, ms_ssim, psnr, synth_clip, SynthSpec};
use crate::optim::TrainConfig;
use crate::pipeline::{encode_sequence, EncodeJob, PipelineOptions};
use crate::raster::{render_with, RenderParams};
use crate::splat::Splat;

/// Per-frame render timings.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RenderBench {
    pub n: usize,
    pub width: usize,
    pub height: usize,
    pub repetitions: usize,
    pub median_seconds: f64,
    /// 95th percentile frame time.
    pub p95_seconds: f64,
    pub median_fps: f64,
    /// Frame rate sustained by 95% of the frames.
    pub p95_fps: f64,
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((sorted.len() - 1) as f64 * p).round() as usize;
    sorted[rank]
}

/// `n` random splats with footprints sized so that they tile the image.
pub fn random_splats(n: usize, width: usize, height: usize, seed: u64) -> Vec<Splat> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = ((width * width + height * height) as f64).sqrt();
    let scale = d / (n.max(1) as f64).sqrt();
    (0..n)
        .map(|_| {
            Splat::new(
                [rng.random_range(0.0..width as f64), rng.random_range(0.0..height as f64)],
                [
                    scale * rng.random_range(0.5..1.5),
                    scale * rng.random_range(-0.5..0.5),
                    scale * rng.random_range(0.5..1.5),
                ],
                [rng.random_range(-0.2..0.8), rng.random_range(-0.2..0.8), rng.random_range(-0.2..0.8)],
            )
        })
        .collect()
}

/// Renders a fixed random frame `repetitions` times.
pub fn bench_render(n: usize, width: usize, height: usize, repetitions: usize) -> Result<RenderBench> {
    if repetitions == 0 {
        return Err(Error::InvalidArgument("need at least one repetition".into()));
    }
    let splats = random_splats(n, width, height, 0);
    let params = RenderParams::default();
    render_with(&splats, width, height, false, params)?;
    let mut times: Vec<f64> = (0..repetitions)
        .map(|_| {
            let start = Instant::now();
            let img = render_with(&splats, width, height, false, params);
            let elapsed = start.elapsed().as_secs_f64();
            std::hint::black_box(img).map(|_| elapsed)
        })
        .collect::<Result<_>>()?;
    times.sort_by(f64::total_cmp);
    let median = percentile(&times, 0.5);
    let p95 = percentile(&times, 0.95);
    Ok(RenderBench {
        n,
        width,
        height,
        repetitions,
        median_seconds: median,
        p95_seconds: p95,
        median_fps: 1.0 / median,
        p95_fps: 1.0 / p95,
    })
}

/// Everything needed to encode a clip end to end.
#[derive(Clone, Debug)]
pub struct CodecRun<'a> {
    pub frames: &'a [Image],
    pub n: usize,
    pub config: TrainConfig,
    pub quant: QuantConfig,
    pub options: PipelineOptions,
}

/// One encode and decode of a clip with its quality and timings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub n: usize,
    pub bpp: f64,
    pub psnr: f64,
    pub ms_ssim: f64,
    pub encode_seconds: f64,
    pub decode_fps: f64,
}

/// Encoded stream plus measurements.
#[derive(Clone, Debug)]
pub struct CodecMeasurement {
    pub bytes: Vec<u8>,
    pub decoded: Vec<Image>,
    pub frame_psnr: Vec<f64>,
    pub frame_ms_ssim: Vec<f64>,
    pub point: RdPoint,
    pub decode_seconds: f64,
}

impl CodecMeasurement {
    pub fn encode_seconds_per_frame(&self) -> f64 {
        self.point.encode_seconds / self.decoded.len() as f64
    }

    pub fn decode_seconds_per_frame(&self) -> f64 {
        self.decode_seconds / self.decoded.len() as f64
    }
}

/// Fits, codes, serializes and decodes `run.frames`, timing both ends.
pub fn measure_codec(run: &CodecRun) -> Result<CodecMeasurement> {
    let mut job = EncodeJob::new(run.frames.to_vec(), run.n);
    job.config = run.config.clone();
    job.options = run.options.clone();
    let start = Instant::now();
    let sequence = encode_sequence(&job)?;
    let stream = encode_stream(&sequence, run.frames, run.n, &run.quant, &run.config)?;
    let encode_seconds = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let decoded = decode_sequence(&stream.bytes)?;
    let decode_seconds = start.elapsed().as_secs_f64();
    let frame_psnr: Vec<f64> = decoded
        .iter()
        .zip(run.frames)
        .map(|(a, b)| psnr(a, b))
        .collect::<Result<_>>()?;
    let frame_ms_ssim: Vec<f64> = decoded
        .iter()
        .zip(run.frames)
        .map(|(a, b)| ms_ssim(a, b))
        .collect::<Result<_>>()?;
    let info = inspect(&stream.bytes)?;
    let point = RdPoint {
        n: run.n,
        bpp: info.bpp,
        psnr: mean_psnr(&frame_psnr),
        ms_ssim: frame_ms_ssim.iter().sum::<f64>() / frame_ms_ssim.len() as f64,
        encode_seconds,
        decode_fps: decoded.len() as f64 / decode_seconds.max(f64::MIN_POSITIVE),
    };
    Ok(CodecMeasurement {
        bytes: stream.bytes,
        decoded,
        frame_psnr,
        frame_ms_ssim,
        point,
        decode_seconds,
    })
}

/// One RD point per entry of `ns`, sorted by `n`.
pub fn rd_sweep(run: &CodecRun, ns: &[usize]) -> Result<Vec<RdPoint>> {
    if ns.len() < 2 {
        return Err(Error::InvalidArgument("an RD sweep needs at least two splat counts".into()));
    }
    let mut ns = ns.to_vec();
    ns.sort_unstable();
    ns.dedup();
    ns.iter()
        .map(|&n| measure_codec(&CodecRun { n, ..run.clone() }).map(|m| m.point))
        .collect()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// SHA-256 of the little-endian `f32` pixel buffer.
pub fn image_sha256(image: &Image) -> String {
    let mut h = Sha256::new();
    for v in image.pixels() {
        h.update(v.to_le_bytes());
    }
    hex(&h.finalize())
}

/// How a golden stream was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureRecipe {
    /// Synthetic clip spec, e.g. `jump:16x16x3:10`.
    pub clip: String,
    pub n: usize,
    pub max_iterations: usize,
    pub max_keyframe_interval: Option<usize>,
    pub quant: QuantConfig,
}

impl FixtureRecipe {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let frames = synth_clip(&SynthSpec::parse(&self.clip)?).into_frames();
        let config = TrainConfig {
            max_iterations: self.max_iterations,
            ..TrainConfig::default()
        };
        let options = PipelineOptions {
            dks: false,
            max_keyframe_interval: self.max_keyframe_interval,
            ..PipelineOptions::default()
        };
        let mut job = EncodeJob::new(frames.clone(), self.n);
        job.config = config.clone();
        job.options = options;
        let sequence = encode_sequence(&job)?;
        Ok(encode_stream(&sequence, &frames, self.n, &self.quant, &config)?.bytes)
    }
}

/// Expected hashes for a golden stream `<name>.gsv`, stored as `<name>.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fixture {
    pub recipe: FixtureRecipe,
    pub stream_sha256: String,
    pub frame_sha256: Vec<String>,
}

/// Encodes `recipe` and writes `<name>.gsv` and `<name>.json` into `dir`.
pub fn bless_fixture(dir: &Path, name: &str, recipe: &FixtureRecipe) -> Result<Fixture> {
    let bytes = recipe.encode()?;
    let frames = decode_sequence(&bytes)?;
    let fixture = Fixture {
        recipe: recipe.clone(),
        stream_sha256: sha256_hex(&bytes),
        frame_sha256: frames.iter().map(image_sha256).collect(),
    };
    let gsv = dir.join(format!("{name}.gsv"));
    std::fs::write(&gsv, &bytes).map_err(|e| Error::io(&gsv, e))?;
    let json = dir.join(format!("{name}.json"));
    let text = serde_json::to_string_pretty(&fixture).expect("fixture serializes");
    std::fs::write(&json, text + "\n").map_err(|e| Error::io(&json, e))?;
    Ok(fixture)
}

/// The recipe of the bundled conformance stream.
pub fn conformance_recipe() -> FixtureRecipe {
    FixtureRecipe {
        clip: "jump:16x16x3:10".into(),
        n: 12,
        max_iterations: 100,
        max_keyframe_interval: Some(2),
        quant: QuantConfig {
            rvq_codebook_size: 4,
            finetune_iterations: 10,
            ..QuantConfig::default()
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RegressionReport {
    pub checks: Vec<Check>,
}

impl RegressionReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn push(&mut self, name: String, outcome: std::result::Result<(), String>) {
        let (passed, detail) = match outcome {
            Ok(()) => (true, String::new()),
            Err(d) => (false, d),
        };
        self.checks.push(Check { name, passed, detail });
    }
}

fn check_fixture(bytes: &[u8], fixture: &Fixture, reencode: bool) -> Vec<(&'static str, std::result::Result<(), String>)> {
    let mut out = Vec::new();
    let got = sha256_hex(bytes);
    out.push((
        "stream hash",
        if got == fixture.stream_sha256 {
            Ok(())
        } else {
            Err(format!("stream hash {got} differs from {}", fixture.stream_sha256))
        },
    ));
    let decode = decode_sequence(bytes).map_err(|e| format!("decode failed: {e}")).and_then(|frames| {
        let hashes: Vec<String> = frames.iter().map(image_sha256).collect();
        match hashes.iter().zip(&fixture.frame_sha256).position(|(a, b)| a != b) {
            _ if hashes.len() != fixture.frame_sha256.len() => Err(format!(
                "decoded {} frames, expected {}",
                hashes.len(),
                fixture.frame_sha256.len()
            )),
            Some(t) => Err(format!("frame {t} decodes to {}", hashes[t])),
            None => Ok(()),
        }
    });
    out.push(("decode hashes", decode));
    let params = RenderParams::default();
    let constants = read_bitstream(bytes).map_err(|e| e.to_string()).and_then(|s| {
        let h = &s.header;
        if h.tile_size as usize == params.tile_size && h.cutoff_sigma as f64 == params.cutoff_sigma {
            Ok(s)
        } else {
            Err(format!(
                "stream uses tile {} and cutoff {}, codec has {} and {}",
                h.tile_size, h.cutoff_sigma, params.tile_size, params.cutoff_sigma
            ))
        }
    });
    out.push((
        "canonical form",
        constants.as_ref().map_err(Clone::clone).and_then(|s| match write_bitstream(&s.header, &s.frames) {
            Ok(b) if b == bytes => Ok(()),
            Ok(_) => Err("re-serialization differs".into()),
            Err(e) => Err(e.to_string()),
        }),
    ));
    out.push(("codec constants", constants.map(|_| ())));
    let truncation = (0..bytes.len()).find_map(|len| match read_bitstream(&bytes[..len]) {
        Err(Error::Bitstream(BitstreamError::Truncated { .. })) => None,
        Err(e) => Some(format!("prefix of {len} bytes: {e}")),
        Ok(_) => Some(format!("prefix of {len} bytes parsed")),
    });
    out.push(("truncation diagnostics", truncation.map_or(Ok(()), Err)));
    if reencode {
        out.push((
            "re-encode",
            match fixture.recipe.encode() {
                Ok(b) if b == bytes => Ok(()),
                Ok(b) => Err(format!("re-encoding gives stream {}", sha256_hex(&b))),
                Err(e) => Err(e.to_string()),
            },
        ));
    }
    out
}

/// Checks every `<name>.gsv`/`<name>.json` pair in `dir`: stream and decode
/// hashes, canonical re-serialization, the rendering constants, truncation
/// diagnostics and, if `reencode`, that the recipe reproduces the stream.
pub fn regression_suite(dir: &Path, reencode: bool) -> Result<RegressionReport> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let p = e.path();
            (p.extension()? == "json").then(|| p.file_stem()?.to_str().map(String::from))?
        })
        .collect();
    names.sort();
    let mut report = RegressionReport::default();
    if names.is_empty() {
        report.push("fixtures".into(), Err(format!("no fixtures in {}", dir.display())));
    }
    for name in names {
        let json = dir.join(format!("{name}.json"));
        let gsv = dir.join(format!("{name}.gsv"));
        let loaded = std::fs::read_to_string(&json)
            .map_err(|e| format!("{}: {e}", json.display()))
            .and_then(|t| serde_json::from_str::<Fixture>(&t).map_err(|e| format!("{}: {e}", json.display())))
            .and_then(|f| std::fs::read(&gsv).map(|b| (f, b)).map_err(|e| format!("{}: {e}", gsv.display())));
        match loaded {
            Ok((fixture, bytes)) => {
                for (check, outcome) in check_fixture(&bytes, &fixture, reencode) {
                    report.push(format!("{name}: {check}"), outcome);
                }
            }
            Err(e) => report.push(format!("{name}: load"), Err(e)),
        }
    }
    Ok(report)
}
