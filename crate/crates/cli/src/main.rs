//! Command-line interface: full video translation plus the individual
//! stages (key-frame rendering, propagation, flow estimation, codec
//! benchmarking, temporal metrics) as standalone subcommands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use vidstyle_core::codec::{roundtrip_error_curve, FidelityConfig, LossyCodec, ToyCodec};
use vidstyle_core::config::EngineConfig;
use vidstyle_core::denoiser::ToyDenoiser;
use vidstyle_core::flow::{estimate_flow_with, occlusion_mask, read_flo, write_flo, FlowPair};
use vidstyle_core::frame::Frame;
use vidstyle_core::pipeline::{
    self, consecutive_flows, key_indices, load_frames, load_indexed_frames, pixel_mse,
    propagate_full_video, save_frames_with_indices, save_gray, translate_keyframes, VideoJob,
};
use vidstyle_core::synth;

#[derive(Parser)]
#[command(name = "vidstyle", version, about = "Video-to-video stylization engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline: key frames, propagation, blending, metrics.
    Translate(TranslateArgs),
    /// Render only the key frames.
    Keyframes(TranslateArgs),
    /// Propagate existing stylized key frames to the remaining frames.
    Propagate(PropagateArgs),
    /// Estimate optical flow between consecutive frames and export .flo files.
    Flow(FlowArgs),
    /// Compare plain and compensated encoding error over repeated round trips.
    CodecBench(CodecBenchArgs),
    /// Flow-aligned consecutive-frame error of rendered outputs.
    Metrics(MetricsArgs),
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Plain-text key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Text prompt (opaque conditioning).
    #[arg(long)]
    prompt: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    key_interval: Option<usize>,
    /// Initialization strength in [0,1]; lower keeps more of the input.
    #[arg(long)]
    strength: Option<f64>,
    /// Channel-statistics alignment to the anchor frame.
    #[arg(long, value_parser = parse_on_off)]
    adain: Option<bool>,
    /// Histogram-match inputs against a noise-initialized render first.
    #[arg(long, value_parser = parse_on_off)]
    color_correct: Option<bool>,
}

fn parse_on_off(s: &str) -> std::result::Result<bool, String> {
    match s {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(format!("expected 'on' or 'off', got '{other}'")),
    }
}

impl ConfigArgs {
    fn load(&self) -> Result<EngineConfig> {
        let mut cfg = match &self.config {
            Some(path) => EngineConfig::from_file(path)
                .with_context(|| format!("reading config {}", path.display()))?,
            None => EngineConfig::default(),
        };
        if let Some(p) = &self.prompt {
            cfg.prompt = p.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(k) = self.key_interval {
            cfg.key_interval = k;
        }
        if let Some(s) = self.strength {
            cfg.strength = s;
        }
        if let Some(a) = self.adain {
            cfg.adain_enabled = a;
        }
        if let Some(c) = self.color_correct {
            cfg.color_correct = c;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TranslateArgs {
    /// Directory of numbered input frames (frame_0000.png, ...).
    #[arg(long)]
    input: PathBuf,
    /// Output directory.
    #[arg(long)]
    output: PathBuf,
    /// Directory of precomputed flow files (flow_fwd_NNNN.flo /
    /// flow_bwd_NNNN.flo per consecutive pair).
    #[arg(long)]
    flows: Option<PathBuf>,
    /// Also write per-frame match-error maps.
    #[arg(long)]
    error_maps: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct PropagateArgs {
    /// Directory of stylized key frames named by original frame index.
    #[arg(long)]
    keys: PathBuf,
    /// Directory of the original input frames.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    flows: Option<PathBuf>,
    #[arg(long)]
    error_maps: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct FlowArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Pyramid levels.
    #[arg(long, default_value_t = 3)]
    levels: usize,
    /// Relaxation iterations per level.
    #[arg(long, default_value_t = 60)]
    iterations: usize,
}

#[derive(Args)]
struct CodecBenchArgs {
    /// Benchmark image; a fixed synthetic corpus is used when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    iterations: usize,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    /// Rendered frames to score.
    #[arg(long)]
    outputs: PathBuf,
    /// Original input frames (alignment flows are computed from these).
    #[arg(long)]
    inputs: PathBuf,
    #[arg(long)]
    flows: Option<PathBuf>,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Translate(args) => translate(args, false),
        Command::Keyframes(args) => translate(args, true),
        Command::Propagate(args) => propagate(args),
        Command::Flow(args) => flow(args),
        Command::CodecBench(args) => codec_bench(args),
        Command::Metrics(args) => metrics(args),
    }
}

/// Load `flow_fwd_NNNN.flo` / `flow_bwd_NNNN.flo` pairs for `count` frames.
fn load_flow_dir(dir: &Path, count: usize, threshold: f32) -> Result<Vec<FlowPair>> {
    let mut pairs = Vec::with_capacity(count.saturating_sub(1));
    for i in 0..count.saturating_sub(1) {
        let fwd = read_flo(&dir.join(format!("flow_fwd_{i:04}.flo")))?;
        let bwd = read_flo(&dir.join(format!("flow_bwd_{i:04}.flo")))?;
        pairs.push(FlowPair::from_fields(fwd, bwd, threshold)?);
    }
    Ok(pairs)
}

fn translate(args: TranslateArgs, keyframes_only: bool) -> Result<()> {
    let cfg = args.config.load()?;
    let frames = load_frames(&args.input)?;
    let precomputed = match &args.flows {
        Some(dir) => Some(load_flow_dir(dir, frames.len(), cfg.occlusion_threshold)?),
        None => None,
    };

    if keyframes_only {
        let pairs = match precomputed {
            Some(p) => p,
            None => consecutive_flows(&frames, &cfg)?,
        };
        let keys = key_indices(frames.len(), cfg.key_interval);
        let codec = ToyCodec::default();
        let denoiser = ToyDenoiser::new(codec.latent_channels(), cfg.t_max);
        let rendered = translate_keyframes(&frames, &keys, &pairs, &cfg, &codec, &denoiser)?;
        save_frames_with_indices(
            &args.output,
            keys.iter().copied().zip(rendered.iter().map(|r| &r.output)),
        )?;
        println!(
            "rendered {} key frames (interval {}) into {}",
            keys.len(),
            cfg.key_interval,
            args.output.display()
        );
        return Ok(());
    }

    let mut job = VideoJob::new(frames, cfg);
    job.output_dir = Some(args.output.clone());
    job.write_error_maps = args.error_maps;
    job.precomputed_flows = precomputed;
    let out = pipeline::run(&job)?;
    println!(
        "translated {} frames; pixel-mse {:.6}",
        out.frames.len(),
        out.metrics.pixel_mse
    );
    Ok(())
}

fn propagate(args: PropagateArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let frames = load_frames(&args.input)?;
    let keys = load_indexed_frames(&args.keys)?;
    for (idx, _) in &keys {
        if *idx >= frames.len() {
            bail!("key frame index {idx} outside the {}-frame video", frames.len());
        }
    }
    let pairs = match &args.flows {
        Some(dir) => load_flow_dir(dir, frames.len(), cfg.occlusion_threshold)?,
        None => consecutive_flows(&frames, &cfg)?,
    };
    let (outputs, _, error_maps) = propagate_full_video(&frames, &keys, &pairs, &cfg)?;
    std::fs::create_dir_all(&args.output)?;
    save_frames_with_indices(&args.output, outputs.iter().enumerate())?;
    if args.error_maps {
        for (i, map) in error_maps.iter().enumerate() {
            if let Some(m) = map {
                save_gray(&args.output.join(format!("error_{i:04}.png")), m)?;
            }
        }
    }
    println!(
        "propagated {} key frames across {} frames into {}",
        keys.len(),
        outputs.len(),
        args.output.display()
    );
    Ok(())
}

fn flow(args: FlowArgs) -> Result<()> {
    let frames = load_frames(&args.input)?;
    if frames.len() < 2 {
        bail!("need at least two frames to estimate flow");
    }
    std::fs::create_dir_all(&args.output)?;
    let params = vidstyle_core::flow::FlowParams::new(args.levels, args.iterations);
    for i in 0..frames.len() - 1 {
        let fwd = estimate_flow_with(&frames[i], &frames[i + 1], &params)?;
        let bwd = estimate_flow_with(&frames[i + 1], &frames[i], &params)?;
        write_flo(&args.output.join(format!("flow_fwd_{i:04}.flo")), &fwd)?;
        write_flo(&args.output.join(format!("flow_bwd_{i:04}.flo")), &bwd)?;
        let mask = occlusion_mask(&fwd, &bwd, 1.0)?;
        let occluded = mask.occluded_count();
        println!(
            "pair {i}-{}: wrote fwd/bwd fields, {occluded} occluded px",
            i + 1
        );
    }
    Ok(())
}

fn codec_bench(args: CodecBenchArgs) -> Result<()> {
    if args.iterations == 0 {
        bail!("iterations must be >= 1");
    }
    let images: Vec<Frame> = match &args.input {
        Some(path) => vec![pipeline::load_frame(path)
            .with_context(|| format!("reading {}", path.display()))?],
        None => synth::codec_corpus(32, 32, 10),
    };
    let codec = ToyCodec::default();
    let cfg = FidelityConfig::default();
    let mut plain = vec![0.0f64; args.iterations];
    let mut fidelity = vec![0.0f64; args.iterations];
    for img in &images {
        let p = roundtrip_error_curve(&codec, img, args.iterations, false, &cfg)?;
        let f = roundtrip_error_curve(&codec, img, args.iterations, true, &cfg)?;
        for k in 0..args.iterations {
            plain[k] += p[k] / images.len() as f64;
            fidelity[k] += f[k] / images.len() as f64;
        }
    }
    let mut csv = String::from("iteration,mse_plain,mse_fidelity\n");
    for k in 0..args.iterations {
        writeln!(csv, "{},{:.8},{:.8}", k + 1, plain[k], fidelity[k])?;
    }
    match &args.output {
        Some(path) => std::fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn metrics(args: MetricsArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let outputs = load_frames(&args.outputs)?;
    let inputs = load_frames(&args.inputs)?;
    if outputs.len() != inputs.len() {
        bail!(
            "output count {} does not match input count {}",
            outputs.len(),
            inputs.len()
        );
    }
    let pairs = match &args.flows {
        Some(dir) => load_flow_dir(dir, inputs.len(), cfg.occlusion_threshold)?,
        None => consecutive_flows(&inputs, &cfg)?,
    };
    let report = pixel_mse(&outputs, &pairs)?;
    let mut csv = String::from("pair,mse\n");
    for (i, v) in report.per_frame.iter().enumerate() {
        writeln!(csv, "{i},{v:.8}")?;
    }
    writeln!(csv, "mean,{:.8}", report.pixel_mse)?;
    match &args.csv {
        Some(path) => {
            std::fs::write(path, csv)?;
            println!("pixel-mse {:.6}", report.pixel_mse);
        }
        None => print!("{csv}"),
    }
    Ok(())
}
