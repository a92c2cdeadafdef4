use std::io::Write;
use std::path::Path;

use serde::Serialize;
use splatvid::bench::{
    bench_render, bless_fixture, conformance_recipe, measure_codec, rd_sweep as sweep, regression_suite, CodecRun,
    RdPoint,
};
use splatvid::codec::{decode_from_keyframe, decode_sequence, inspect as inspect_stream, read_keyframe_table, QuantConfig};
use splatvid::lifecycle::LifecyclePlan;
use splatvid::media::{mean_psnr, ms_ssim, psnr, write_image_sequence, write_raw_clip, Clip, ClipSource};
use splatvid::optim::TrainConfig;
use splatvid::pipeline::PipelineOptions;
use splatvid::{FrameKind, Image};

use crate::config::CliConfig;
use crate::error::{exit, CliError, CliResult};
use crate::{
    BenchArgs, ClipFormat, CodecArgs, ConfigArgs, DecodeArgs, EncodeArgs, InspectArgs, MetricsArgs, RdSweepArgs,
    RegressArgs, SynthArgs,
};

struct CodecSettings {
    config: TrainConfig,
    quant: QuantConfig,
    options: PipelineOptions,
}

/// Resolves and validates every encoder setting before any work starts.
fn codec_settings(args: &CodecArgs, ns: &[usize]) -> CliResult<CodecSettings> {
    let file = CliConfig::load(args.config.as_deref())?;
    let mut config = file.train;
    let mut quant = file.quant;
    if let Some(b) = args.budget {
        config.max_iterations = b;
    }
    if let Some(b) = args.pretrain_budget {
        config.pretrain_iterations = b;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(f) = args.finetune {
        quant.finetune_iterations = f;
    }
    if args.no_gsp && !args.no_gsa {
        return Err(CliError::Usage(
            "--no-gsp requires --no-gsa: augmentation keeps the splat count fixed by pruning".into(),
        ));
    }
    let options = PipelineOptions {
        gsp: !args.no_gsp,
        gsa: !args.no_gsa,
        dks: !args.no_dks,
        max_keyframe_interval: args.max_keyframe_interval,
        window: file.pipeline.window,
    };
    let usage = |e: splatvid::Error| CliError::Usage(e.to_string());
    config.validate().map_err(usage)?;
    quant.validate().map_err(usage)?;
    options.validate().map_err(usage)?;
    for &n in ns {
        LifecyclePlan::new(n, &config).map_err(usage)?;
    }
    Ok(CodecSettings { config, quant, options })
}

fn load_clip(text: &str) -> CliResult<Clip> {
    let source = ClipSource::parse(text).map_err(|e| CliError::Usage(e.to_string()))?;
    if let ClipSource::ImageSequence(p) | ClipSource::Raw(p) = &source {
        if !p.exists() {
            return Err(CliError::io(p, std::io::Error::from(std::io::ErrorKind::NotFound)));
        }
    }
    Ok(source.load()?)
}

fn resolve_format(path: &Path, format: ClipFormat) -> ClipFormat {
    match format {
        ClipFormat::Auto => match path.extension().and_then(|e| e.to_str()) {
            Some("rgbc" | "raw") => ClipFormat::Raw,
            _ => ClipFormat::Png,
        },
        f => f,
    }
}

fn write_clip(path: &Path, format: ClipFormat, frames: Vec<Image>) -> CliResult<()> {
    let clip = Clip::new(frames)?;
    match resolve_format(path, format) {
        ClipFormat::Raw => write_raw_clip(path, &clip)?,
        _ => {
            std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))?;
            write_image_sequence(path, &clip)?
        }
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("statistics serialize"));
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::Parse(format!("{}: {other:?}", path.display())),
    }
}

#[derive(Debug, Serialize)]
struct FrameStats {
    frame: usize,
    kind: Option<FrameKind>,
    psnr: f64,
    ms_ssim: f64,
    bytes: Option<usize>,
}

#[derive(Debug, Serialize)]
struct EncodeStats {
    width: usize,
    height: usize,
    n: usize,
    keyframes: Vec<u32>,
    bytes: usize,
    bpp: f64,
    stream_bpp: f64,
    psnr: f64,
    ms_ssim: f64,
    encode_seconds: f64,
    decode_seconds: f64,
    frames: Vec<FrameStats>,
}

fn fmt_db(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.2}")
    } else {
        "inf".into()
    }
}

fn print_frames(frames: &[FrameStats]) {
    println!("{:>6} {:>4} {:>9} {:>8} {:>8}", "frame", "kind", "psnr_db", "ms_ssim", "bytes");
    for f in frames {
        let kind = f.kind.map_or("-", |k| if k == FrameKind::I { "I" } else { "P" });
        let bytes = f.bytes.map_or("-".to_string(), |b| b.to_string());
        println!("{:>6} {:>4} {:>9} {:>8.5} {:>8}", f.frame, kind, fmt_db(f.psnr), f.ms_ssim, bytes);
    }
}

pub fn encode(args: EncodeArgs) -> CliResult<i32> {
    let settings = codec_settings(&args.codec, &[args.n])?;
    let clip = load_clip(&args.input)?;
    let m = measure_codec(&CodecRun {
        frames: clip.frames(),
        n: args.n,
        config: settings.config,
        quant: settings.quant,
        options: settings.options,
    })?;
    let info = inspect_stream(&m.bytes)?;
    let frames: Vec<FrameStats> = (0..m.decoded.len())
        .map(|t| FrameStats {
            frame: t,
            kind: Some(info.frame_kinds[t]),
            psnr: m.frame_psnr[t],
            ms_ssim: m.frame_ms_ssim[t],
            bytes: Some(info.frame_sizes[t].total()),
        })
        .collect();
    write_file(&args.output, &m.bytes)?;
    if let Some(path) = &args.csv {
        write_csv(path, &frames)?;
    }
    let stats = EncodeStats {
        width: clip.width(),
        height: clip.height(),
        n: args.n,
        keyframes: info.keyframes.clone(),
        bytes: m.bytes.len(),
        bpp: info.bpp,
        stream_bpp: info.stream_bpp,
        psnr: m.point.psnr,
        ms_ssim: m.point.ms_ssim,
        encode_seconds: m.point.encode_seconds,
        decode_seconds: m.decode_seconds,
        frames,
    };
    if args.json {
        print_json(&stats);
    } else {
        print_frames(&stats.frames);
        println!(
            "{}x{}x{} N={} key-frames {:?}: {} bytes, {:.4} bpp ({:.4} with header), PSNR {} dB, MS-SSIM {:.5}, \
             encode {:.2} s, decode {:.4} s",
            stats.width,
            stats.height,
            stats.frames.len(),
            stats.n,
            stats.keyframes,
            stats.bytes,
            stats.bpp,
            stats.stream_bpp,
            fmt_db(stats.psnr),
            stats.ms_ssim,
            stats.encode_seconds,
            stats.decode_seconds
        );
    }
    Ok(exit::OK)
}

fn read_input(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn decode(args: DecodeArgs) -> CliResult<i32> {
    let bytes = read_input(&args.input)?;
    let frames = match args.from_keyframe {
        None => decode_sequence(&bytes)?,
        Some(k) => {
            let (_, table) = read_keyframe_table(&bytes)?;
            if !table.iter().any(|&(t, _)| t as usize == k) {
                let keys: Vec<String> = table.iter().map(|(t, _)| t.to_string()).collect();
                return Err(CliError::Usage(format!(
                    "frame {k} is not a key-frame; key-frames are {}",
                    keys.join(", ")
                )));
            }
            decode_from_keyframe(&bytes, k)?
        }
    };
    let count = frames.len();
    write_clip(&args.output, args.format, frames)?;
    log::info!("wrote {count} frames to {}", args.output.display());
    Ok(exit::OK)
}

pub fn inspect(args: InspectArgs) -> CliResult<i32> {
    let bytes = read_input(&args.input)?;
    let info = inspect_stream(&bytes)?;
    if args.json {
        print_json(&info);
        return Ok(exit::OK);
    }
    let h = &info.header;
    let q = &h.quant;
    println!("stream      {} bytes, header and key-frame table {} bytes", info.total_bytes, info.header_bytes);
    println!("frames      {}x{} x {}, N = {}", h.width, h.height, h.frames, h.n);
    println!(
        "quantizer   cholesky {} bits, {} x {} codewords, commitment {}, fine-tune {} iterations",
        q.cholesky_bits, q.rvq_stages, q.rvq_codebook_size, q.commitment_weight, q.finetune_iterations
    );
    println!("rendering   tile {}, cutoff {} sigma", h.tile_size, h.cutoff_sigma);
    println!("key-frames  {:?}", info.keyframes);
    println!("rate        {:.5} bpp ({:.5} with header)", info.bpp, info.stream_bpp);
    println!(
        "{:>6} {:>4} {:>7} {:>6} {:>9} {:>8} {:>9} {:>7} {:>8} {:>7}",
        "frame", "kind", "record", "slots", "positions", "cholesky", "codebooks", "indices", "injected", "total"
    );
    let row = |name: String, kind: &str, s: &splatvid::codec::PlaneSizes| {
        println!(
            "{:>6} {:>4} {:>7} {:>6} {:>9} {:>8} {:>9} {:>7} {:>8} {:>7}",
            name,
            kind,
            s.record_header,
            s.slot_map,
            s.positions,
            s.cholesky,
            s.codebooks,
            s.color_indices,
            s.injected,
            s.total()
        )
    };
    for (t, (s, k)) in info.frame_sizes.iter().zip(&info.frame_kinds).enumerate() {
        row(t.to_string(), if *k == FrameKind::I { "I" } else { "P" }, s);
    }
    row("all".into(), "", &info.planes);
    Ok(exit::OK)
}

pub fn metrics(args: MetricsArgs) -> CliResult<i32> {
    let reference = load_clip(&args.reference)?;
    let distorted = if args.distorted.ends_with(".gsv") {
        decode_sequence(&read_input(Path::new(&args.distorted))?)?
    } else {
        load_clip(&args.distorted)?.into_frames()
    };
    if distorted.len() != reference.len() {
        return Err(CliError::Usage(format!(
            "clips have {} and {} frames",
            reference.len(),
            distorted.len()
        )));
    }
    let frames: Vec<FrameStats> = reference
        .frames()
        .iter()
        .zip(&distorted)
        .enumerate()
        .map(|(t, (a, b))| {
            Ok(FrameStats {
                frame: t,
                kind: None,
                psnr: psnr(a, b)?,
                ms_ssim: ms_ssim(a, b)?,
                bytes: None,
            })
        })
        .collect::<splatvid::Result<_>>()?;
    if let Some(path) = &args.csv {
        write_csv(path, &frames)?;
    }
    let mean_db = mean_psnr(&frames.iter().map(|f| f.psnr).collect::<Vec<_>>());
    let mean_ssim = frames.iter().map(|f| f.ms_ssim).sum::<f64>() / frames.len() as f64;
    if args.json {
        #[derive(Serialize)]
        struct Summary<'a> {
            psnr: f64,
            ms_ssim: f64,
            frames: &'a [FrameStats],
        }
        print_json(&Summary {
            psnr: mean_db,
            ms_ssim: mean_ssim,
            frames: &frames,
        });
    } else {
        print_frames(&frames);
        println!("mean PSNR {} dB, mean MS-SSIM {:.5}", fmt_db(mean_db), mean_ssim);
    }
    Ok(exit::OK)
}

pub fn rd_sweep(args: RdSweepArgs) -> CliResult<i32> {
    if args.n.len() < 2 {
        return Err(CliError::Usage("--n needs at least two splat counts".into()));
    }
    let settings = codec_settings(&args.codec, &args.n)?;
    let clip = load_clip(&args.input)?;
    let points = sweep(
        &CodecRun {
            frames: clip.frames(),
            n: args.n[0],
            config: settings.config,
            quant: settings.quant,
            options: settings.options,
        },
        &args.n,
    )?;
    write_csv(&args.output, &points)?;
    if args.json {
        print_json(&points);
    } else {
        println!("{:>8} {:>10} {:>9} {:>8} {:>10} {:>10}", "n", "bpp", "psnr_db", "ms_ssim", "encode_s", "decode_fps");
        for p in &points {
            println!(
                "{:>8} {:>10.5} {:>9} {:>8.5} {:>10.2} {:>10.1}",
                p.n,
                p.bpp,
                fmt_db(p.psnr),
                p.ms_ssim,
                p.encode_seconds,
                p.decode_fps
            );
        }
    }
    Ok(exit::OK)
}

/// Decode/encode per-frame time ratio required of the codec.
const MIN_SPEED_RATIO: f64 = 100.0;

pub fn bench(args: BenchArgs) -> CliResult<i32> {
    let render = bench_render(args.n, args.width, args.height, args.repetitions)?;
    #[derive(Serialize)]
    struct CodecBench {
        encode_seconds_per_frame: f64,
        decode_seconds_per_frame: f64,
        ratio: f64,
        passed: bool,
        point: RdPoint,
    }
    let codec = match &args.codec {
        Some(input) => {
            let settings = codec_settings(&args.codec_args, &[args.n])?;
            let clip = load_clip(input)?;
            let m = measure_codec(&CodecRun {
                frames: clip.frames(),
                n: args.n,
                config: settings.config,
                quant: settings.quant,
                options: settings.options,
            })?;
            let ratio = m.encode_seconds_per_frame() / m.decode_seconds_per_frame();
            Some(CodecBench {
                encode_seconds_per_frame: m.encode_seconds_per_frame(),
                decode_seconds_per_frame: m.decode_seconds_per_frame(),
                ratio,
                passed: ratio >= MIN_SPEED_RATIO,
                point: m.point,
            })
        }
        None => None,
    };
    if args.json {
        #[derive(Serialize)]
        struct Report<'a> {
            render: &'a splatvid::bench::RenderBench,
            codec: Option<&'a CodecBench>,
        }
        print_json(&Report {
            render: &render,
            codec: codec.as_ref(),
        });
    } else {
        println!(
            "render {}x{} N={}: median {:.1} fps ({:.3} ms), p95 {:.1} fps ({:.3} ms) over {} runs",
            render.width,
            render.height,
            render.n,
            render.median_fps,
            render.median_seconds * 1e3,
            render.p95_fps,
            render.p95_seconds * 1e3,
            render.repetitions
        );
        if let Some(c) = &codec {
            println!(
                "codec: encode {:.3} s/frame, decode {:.5} s/frame, ratio {:.0} ({} {MIN_SPEED_RATIO})",
                c.encode_seconds_per_frame,
                c.decode_seconds_per_frame,
                c.ratio,
                if c.passed { ">=" } else { "<" }
            );
        }
    }
    Ok(match codec {
        Some(c) if !c.passed => 1,
        _ => exit::OK,
    })
}

pub fn regress(args: RegressArgs) -> CliResult<i32> {
    if args.bless {
        std::fs::create_dir_all(&args.fixtures).map_err(|e| CliError::io(&args.fixtures, e))?;
        let f = bless_fixture(&args.fixtures, "conformance", &conformance_recipe())?;
        println!("blessed conformance fixture, stream {}", f.stream_sha256);
        return Ok(exit::OK);
    }
    let report = regression_suite(&args.fixtures, args.reencode)?;
    if args.json {
        print_json(&report);
    } else {
        let mut out = std::io::stdout().lock();
        for c in &report.checks {
            let status = if c.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "{status} {}{}", c.name, if c.detail.is_empty() { String::new() } else { format!(": {}", c.detail) });
        }
    }
    Ok(if report.passed() { exit::OK } else { 1 })
}

pub fn synth(args: SynthArgs) -> CliResult<i32> {
    let clip = load_clip(&format!("synth:{}", args.spec))?;
    write_clip(&args.output, args.format, clip.into_frames())?;
    Ok(exit::OK)
}

pub fn config(args: ConfigArgs) -> CliResult<i32> {
    let c = CliConfig::load(args.config.as_deref())?;
    print!("{}", c.to_toml());
    Ok(exit::OK)
}
