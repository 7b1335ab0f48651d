//! End-to-end orchestration: key-frame selection, sequential key-frame
//! translation with frame contexts, parallel propagation of the remaining
//! frames, blending, metrics, and frame I/O.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;

use crate::codec::{LossyCodec, FidelityConfig, ToyCodec};
use crate::config::EngineConfig;
use crate::denoiser::{edge_map, Conditioning, ToyDenoiser};
use crate::error::{Error, Result};
use crate::flow::{warp_frame, FlowPair, FlowParams};
use crate::frame::Frame;
use crate::histogram::match_histogram;
use crate::propagate::{
    blend, patch_match, synthesize, BlendCandidate, GuideStack, GuideWeights,
};
use crate::sampler::{
    splitmix, FrameContext, KeyframeResult, KeyframeSampler, NoiseBank, NoiseSchedule,
    SamplerOptions, StageSchedule,
};

/// A full translation job: the frames, every knob, and where to write.
#[derive(Debug, Clone)]
pub struct VideoJob {
    pub frames: Vec<Frame>,
    pub config: EngineConfig,
    pub output_dir: Option<PathBuf>,
    pub write_error_maps: bool,
    /// Flow pairs between consecutive input frames, if precomputed (for
    /// example from external `.flo` files). Estimated otherwise.
    pub precomputed_flows: Option<Vec<FlowPair>>,
}

impl VideoJob {
    pub fn new(frames: Vec<Frame>, config: EngineConfig) -> Self {
        VideoJob {
            frames,
            config,
            output_dir: None,
            write_error_maps: false,
            precomputed_flows: None,
        }
    }
}

/// Flow-aligned consecutive-frame error.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub pixel_mse: f64,
    pub per_frame: Vec<f64>,
}

/// How each output frame was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameProvenance {
    Keyframe,
    Blended { left_key: usize, right_key: usize },
    SingleSource { key: usize },
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub frames: Vec<Frame>,
    pub metrics: MetricsReport,
    pub provenance: Vec<FrameProvenance>,
    /// Per-frame match-error maps for propagated frames (None for keys).
    pub error_maps: Vec<Option<Array2<f32>>>,
}

pub fn flow_params(cfg: &EngineConfig) -> FlowParams {
    FlowParams {
        levels: cfg.flow_levels,
        iterations: cfg.flow_iterations,
        alpha: cfg.flow_alpha,
        ..Default::default()
    }
}

pub fn guide_weights(cfg: &EngineConfig) -> GuideWeights {
    GuideWeights {
        color: cfg.weight_color,
        positional: cfg.weight_positional,
        edge: cfg.weight_edge,
        temporal: cfg.weight_temporal,
    }
}

fn build_schedule(cfg: &EngineConfig) -> Result<(NoiseSchedule, StageSchedule)> {
    let schedule = NoiseSchedule::scaled_linear(cfg.t_max, cfg.ddim_steps, cfg.strength)?;
    let stages = StageSchedule::from_fractions(cfg.t_max, cfg.t_s, cfg.t_p0, cfg.t_p1, cfg.t_a)?;
    Ok((schedule, stages))
}

/// Every K-th frame index, anchored at zero.
pub fn key_indices(frame_count: usize, key_interval: usize) -> Vec<usize> {
    (0..frame_count).step_by(key_interval.max(1)).collect()
}

/// Flow pairs between consecutive input frames.
pub fn consecutive_flows(frames: &[Frame], cfg: &EngineConfig) -> Result<Vec<FlowPair>> {
    let params = flow_params(cfg);
    (0..frames.len().saturating_sub(1))
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&i| {
            FlowPair::estimate(
                &frames[i],
                &frames[i + 1],
                &params,
                cfg.occlusion_threshold,
            )
            .map_err(|e| e.at_frame(i))
        })
        .collect()
}

/// Chain consecutive pairs into a single pair spanning `[from, to]`.
fn compose_span(pairs: &[FlowPair], from: usize, to: usize) -> Result<FlowPair> {
    debug_assert!(from < to);
    let mut chain = pairs[from].clone();
    for p in pairs.iter().take(to).skip(from + 1) {
        chain = chain.compose(p)?;
    }
    Ok(chain)
}

fn validate_frames(frames: &[Frame]) -> Result<()> {
    let first = frames.first().ok_or_else(|| {
        Error::InvalidParameter("job contains no frames".into())
    })?;
    for (i, f) in frames.iter().enumerate() {
        if !f.same_size(first) {
            return Err(Error::dim(
                "video frames",
                format!("{}x{}", first.height(), first.width()),
                format!("{}x{}", f.height(), f.width()),
            )
            .at_frame(i));
        }
    }
    Ok(())
}

/// Translate the key frames in order, each conditioned on the anchor and on
/// its predecessor. Returns the rendered keys aligned with `keys`.
pub fn translate_keyframes(
    frames: &[Frame],
    keys: &[usize],
    pairs: &[FlowPair],
    cfg: &EngineConfig,
    codec: &dyn LossyCodec,
    denoiser: &ToyDenoiser,
) -> Result<Vec<KeyframeResult>> {
    let (schedule, stages) = build_schedule(cfg)?;
    let sampler = KeyframeSampler {
        schedule,
        stages,
        codec,
        denoiser,
        fidelity: FidelityConfig {
            lambda_e: cfg.lambda_e,
            artifact_threshold: cfg.artifact_threshold,
        },
        options: SamplerOptions {
            adain_enabled: cfg.adain_enabled,
            shape_fusion_enabled: cfg.sa_fusion,
            pixel_fusion_enabled: cfg.pa_fusion,
        },
        noise: NoiseBank::new(cfg.seed),
    };
    let params = flow_params(cfg);
    let factor = codec.spatial_factor();
    let mut results: Vec<KeyframeResult> = Vec::with_capacity(keys.len());

    for (m, &ki) in keys.iter().enumerate() {
        let cond = Conditioning::new(
            &cfg.prompt,
            edge_map(&frames[ki], factor),
            cfg.control_weight,
        )?;
        let ctx = if m == 0 {
            None
        } else {
            let prev_ki = keys[m - 1];
            // anchor constraints need flow at key-frame distance; estimate it
            // directly rather than chaining
            let from_anchor =
                FlowPair::estimate(&frames[keys[0]], &frames[ki], &params, cfg.occlusion_threshold)
                    .map_err(|e| e.at_frame(ki))?;
            let from_previous = compose_span(pairs, prev_ki, ki).map_err(|e| e.at_frame(ki))?;
            Some(FrameContext {
                anchor_steps: results[0].steps.clone(),
                previous_steps: results[m - 1].steps.iter().map(|s| s.x_t.clone()).collect(),
                anchor_output: results[0].output.clone(),
                previous_output: results[m - 1].output.clone(),
                from_anchor,
                from_previous,
            })
        };
        let result = sampler
            .translate_keyframe(&frames[ki], ctx.as_ref(), &cond, ki)
            .map_err(|e| e.at_frame(ki))?;
        results.push(result);
    }
    Ok(results)
}

struct Propagated {
    frame_index: usize,
    candidate: BlendCandidate,
}

/// Propagate one stylized key along a run of frames in playback order
/// (`direction` +1 or -1), carrying the previous output as temporal guide.
fn propagate_run(
    frames: &[Frame],
    pairs: &[FlowPair],
    key_index: usize,
    stylized_key: &Frame,
    targets: &[usize],
    direction: isize,
    cfg: &EngineConfig,
) -> Result<Vec<Propagated>> {
    let weights = guide_weights(cfg);
    let mut previous = stylized_key.clone();
    let mut out = Vec::with_capacity(targets.len());
    for &i in targets {
        // flow mapping frame i coordinates into the previous frame of this run
        let flow = if direction > 0 {
            &pairs[i - 1].forward
        } else {
            &pairs[i].backward
        };
        let warped_prev = warp_frame(&previous, flow).map_err(|e| e.at_frame(i))?;
        let guides = GuideStack::build(
            &frames[key_index],
            &frames[i],
            Some((stylized_key, &warped_prev)),
            weights,
        )
        .map_err(|e| e.at_frame(i))?;
        let seed = splitmix(cfg.seed ^ splitmix(key_index as u64) ^ (i as u64).rotate_left(24));
        let nnf = patch_match(stylized_key, &guides, cfg.patch_size, cfg.pm_iterations, seed)
            .map_err(|e| e.at_frame(i))?;
        let image = synthesize(stylized_key, &nnf, cfg.patch_size).map_err(|e| e.at_frame(i))?;
        previous = image.clone();
        out.push(Propagated {
            frame_index: i,
            candidate: BlendCandidate::from_nnf(image, &nnf, key_index),
        });
    }
    Ok(out)
}

/// Interpolate all non-key frames from rendered keys. `rendered` pairs each
/// key frame index with its stylized frame.
pub fn propagate_full_video(
    frames: &[Frame],
    rendered: &[(usize, Frame)],
    pairs: &[FlowPair],
    cfg: &EngineConfig,
) -> Result<(Vec<Frame>, Vec<FrameProvenance>, Vec<Option<Array2<f32>>>)> {
    if rendered.is_empty() {
        return Err(Error::InvalidParameter("no rendered key frames".into()));
    }
    let n = frames.len();
    let mut outputs: Vec<Option<Frame>> = vec![None; n];
    let mut provenance = vec![FrameProvenance::Keyframe; n];
    let mut error_maps: Vec<Option<Array2<f32>>> = vec![None; n];
    for (ki, frame) in rendered {
        outputs[*ki] = Some(frame.clone());
    }

    enum Task {
        Segment { left: usize, right: usize },
        Leading { key: usize },
        Trailing { key: usize },
    }
    let mut tasks = Vec::new();
    let first_key = rendered.first().unwrap().0;
    let last_key = rendered.last().unwrap().0;
    if first_key > 0 {
        tasks.push(Task::Leading { key: first_key });
    }
    for w in rendered.windows(2) {
        if w[1].0 - w[0].0 > 1 {
            tasks.push(Task::Segment {
                left: w[0].0,
                right: w[1].0,
            });
        }
    }
    if last_key + 1 < n {
        tasks.push(Task::Trailing { key: last_key });
    }

    let styled = |ki: usize| -> &Frame {
        &rendered.iter().find(|(k, _)| *k == ki).unwrap().1
    };

    type TaskOut = Vec<(usize, Frame, Array2<f32>, FrameProvenance)>;
    let results: Vec<TaskOut> = tasks
        .par_iter()
        .map(|task| -> Result<TaskOut> {
            match task {
                Task::Segment { left, right } => {
                    let fwd_targets: Vec<usize> = (left + 1..*right).collect();
                    let bwd_targets: Vec<usize> = (left + 1..*right).rev().collect();
                    let (from_left, from_right) = rayon::join(
                        || {
                            propagate_run(
                                frames, pairs, *left, styled(*left), &fwd_targets, 1, cfg,
                            )
                        },
                        || {
                            propagate_run(
                                frames, pairs, *right, styled(*right), &bwd_targets, -1, cfg,
                            )
                        },
                    );
                    let from_left = from_left?;
                    let mut from_right = from_right?;
                    from_right.reverse();
                    let mut merged = Vec::with_capacity(from_left.len());
                    for (l, r) in from_left.iter().zip(from_right.iter()) {
                        debug_assert_eq!(l.frame_index, r.frame_index);
                        let blended = blend(&l.candidate, &r.candidate)
                            .map_err(|e| e.at_frame(l.frame_index))?;
                        let mut err = l.candidate.error_map.clone();
                        for (e, re) in err.iter_mut().zip(r.candidate.error_map.iter()) {
                            *e = e.min(*re);
                        }
                        merged.push((
                            l.frame_index,
                            blended,
                            err,
                            FrameProvenance::Blended {
                                left_key: *left,
                                right_key: *right,
                            },
                        ));
                    }
                    Ok(merged)
                }
                Task::Leading { key } => {
                    let targets: Vec<usize> = (0..*key).rev().collect();
                    let run =
                        propagate_run(frames, pairs, *key, styled(*key), &targets, -1, cfg)?;
                    Ok(run
                        .into_iter()
                        .map(|p| {
                            (
                                p.frame_index,
                                p.candidate.image,
                                p.candidate.error_map,
                                FrameProvenance::SingleSource { key: *key },
                            )
                        })
                        .collect())
                }
                Task::Trailing { key } => {
                    let targets: Vec<usize> = (key + 1..n).collect();
                    let run = propagate_run(frames, pairs, *key, styled(*key), &targets, 1, cfg)?;
                    Ok(run
                        .into_iter()
                        .map(|p| {
                            (
                                p.frame_index,
                                p.candidate.image,
                                p.candidate.error_map,
                                FrameProvenance::SingleSource { key: *key },
                            )
                        })
                        .collect())
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;

    for task_out in results {
        for (idx, frame, err, prov) in task_out {
            outputs[idx] = Some(frame);
            error_maps[idx] = Some(err);
            provenance[idx] = prov;
        }
    }

    let frames_out: Vec<Frame> = outputs
        .into_iter()
        .enumerate()
        .map(|(i, f)| f.ok_or_else(|| Error::InvalidParameter(format!("frame {i} unreachable"))))
        .collect::<Result<_>>()?;
    Ok((frames_out, provenance, error_maps))
}

/// Per-channel histogram transfer of `input` toward `reference`.
pub fn color_correct(input: &Frame, reference: &Frame) -> Frame {
    match_histogram(input, reference)
}

/// Flow-aligned MSE between consecutive output frames, averaged over the
/// pixels the consistency check marks visible and then over frame pairs.
pub fn pixel_mse(outputs: &[Frame], pairs: &[FlowPair]) -> Result<MetricsReport> {
    if outputs.len() < 2 {
        return Err(Error::InvalidParameter(
            "pixel-mse needs at least two frames".into(),
        ));
    }
    if pairs.len() + 1 < outputs.len() {
        return Err(Error::InvalidParameter(format!(
            "missing flow: {} pairs for {} frames",
            pairs.len(),
            outputs.len()
        )));
    }
    let mut per_frame = Vec::with_capacity(outputs.len() - 1);
    for i in 0..outputs.len() - 1 {
        let warped = warp_frame(&outputs[i], &pairs[i].forward).map_err(|e| e.at_frame(i))?;
        let mask = &pairs[i].mask;
        let mut acc = 0.0f64;
        let mut count = 0usize;
        for y in 0..warped.height() {
            for x in 0..warped.width() {
                if mask.is_occluded(y, x) {
                    continue;
                }
                for c in 0..3 {
                    let d = (warped.get(y, x, c) - outputs[i + 1].get(y, x, c)) as f64;
                    acc += d * d;
                }
                count += 3;
            }
        }
        per_frame.push(if count > 0 { acc / count as f64 } else { 0.0 });
    }
    let mean = per_frame.iter().sum::<f64>() / per_frame.len() as f64;
    Ok(MetricsReport {
        pixel_mse: mean,
        per_frame,
    })
}

/// Render a color reference by sampling the anchor frame from (almost) pure
/// noise, with no cross-frame constraints.
fn noise_init_reference(
    anchor: &Frame,
    cfg: &EngineConfig,
    codec: &dyn LossyCodec,
    denoiser: &ToyDenoiser,
) -> Result<Frame> {
    let mut full = cfg.clone();
    full.strength = 1.0;
    let (schedule, stages) = build_schedule(&full)?;
    let sampler = KeyframeSampler {
        schedule,
        stages,
        codec,
        denoiser,
        fidelity: FidelityConfig {
            lambda_e: cfg.lambda_e,
            artifact_threshold: cfg.artifact_threshold,
        },
        options: SamplerOptions::default(),
        noise: NoiseBank::new(cfg.seed),
    };
    let cond = Conditioning::new(
        &cfg.prompt,
        edge_map(anchor, codec.spatial_factor()),
        cfg.control_weight,
    )?;
    Ok(sampler.translate_keyframe(anchor, None, &cond, 0)?.output)
}

/// The whole pipeline: translate key frames, propagate, blend, measure, and
/// optionally write results to disk.
pub fn run(job: &VideoJob) -> Result<RunOutput> {
    validate_frames(&job.frames)?;
    job.config.validate()?;
    let cfg = &job.config;
    let codec = ToyCodec::default();
    let denoiser = ToyDenoiser::new(codec.latent_channels(), cfg.t_max);

    let mut inputs = job.frames.clone();
    if cfg.color_correct {
        let reference = noise_init_reference(&inputs[0], cfg, &codec, &denoiser)?;
        for f in inputs.iter_mut() {
            *f = color_correct(f, &reference);
        }
    }

    let pairs = match &job.precomputed_flows {
        Some(p) => {
            if p.len() + 1 < inputs.len() {
                return Err(Error::InvalidParameter(format!(
                    "expected {} flow pairs, got {}",
                    inputs.len() - 1,
                    p.len()
                )));
            }
            p.clone()
        }
        None => consecutive_flows(&inputs, cfg)?,
    };

    let keys = key_indices(inputs.len(), cfg.key_interval);
    let rendered = translate_keyframes(&inputs, &keys, &pairs, cfg, &codec, &denoiser)?;
    let rendered_pairs: Vec<(usize, Frame)> = keys
        .iter()
        .zip(rendered.iter())
        .map(|(k, r)| (*k, r.output.clone()))
        .collect();

    let (frames, provenance, error_maps) = if inputs.len() == 1 {
        (
            vec![rendered_pairs[0].1.clone()],
            vec![FrameProvenance::Keyframe],
            vec![None],
        )
    } else {
        propagate_full_video(&inputs, &rendered_pairs, &pairs, cfg)?
    };

    let metrics = if frames.len() >= 2 {
        pixel_mse(&frames, &pairs)?
    } else {
        MetricsReport {
            pixel_mse: 0.0,
            per_frame: vec![],
        }
    };

    if let Some(dir) = &job.output_dir {
        save_frames(dir, &frames)?;
        if job.write_error_maps {
            for (i, map) in error_maps.iter().enumerate() {
                if let Some(m) = map {
                    save_gray(&dir.join(format!("error_{i:04}.png")), m)?;
                }
            }
        }
    }

    Ok(RunOutput {
        frames,
        metrics,
        provenance,
        error_maps,
    })
}

/// Load `*.png` frames from a directory; lexicographic order is temporal
/// order.
pub fn load_frames(dir: &Path) -> Result<Vec<Frame>> {
    Ok(load_indexed_frames(dir)?.into_iter().map(|(_, f)| f).collect())
}

/// Load one PNG as a frame.
pub fn load_frame(path: &Path) -> Result<Frame> {
    let img = image::open(path)?.into_rgb8();
    Ok(Frame::from_rgb8(img.width(), img.height(), img.as_raw()))
}

/// Like `load_frames` but also reports each file's numeric index (parsed
/// from the digits in its name), for key-frame directories.
pub fn load_indexed_frames(dir: &Path) -> Result<Vec<(usize, Frame)>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "png").unwrap_or(false))
        // skip auxiliary error-map renders living next to the frames
        .filter(|p| {
            p.file_stem()
                .and_then(|s| s.to_str())
                .map(|s| !s.starts_with("error_"))
                .unwrap_or(true)
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::EmptyInput(dir.to_path_buf()));
    }
    let mut frames = Vec::with_capacity(paths.len());
    let mut expected: Option<(usize, usize)> = None;
    for (fallback_idx, path) in paths.iter().enumerate() {
        let img = image::open(path)?.into_rgb8();
        let frame = Frame::from_rgb8(img.width(), img.height(), img.as_raw());
        if let Some((h, w)) = expected {
            if frame.height() != h || frame.width() != w {
                return Err(Error::FrameDimensionMismatch {
                    path: path.clone(),
                    expected: format!("{h}x{w}"),
                    got: format!("{}x{}", frame.height(), frame.width()),
                });
            }
        } else {
            expected = Some((frame.height(), frame.width()));
        }
        let digits: String = path
            .file_stem()
            .and_then(|s| s.to_str())
            .map(|s| s.chars().filter(|c| c.is_ascii_digit()).collect())
            .unwrap_or_default();
        let index = digits.parse::<usize>().unwrap_or(fallback_idx);
        frames.push((index, frame));
    }
    Ok(frames)
}

/// Write frames as `frame_0000.png`, `frame_0001.png`, ...
pub fn save_frames(dir: &Path, frames: &[Frame]) -> Result<()> {
    save_frames_with_indices(dir, frames.iter().enumerate())
}

pub fn save_frames_with_indices<'a>(
    dir: &Path,
    frames: impl Iterator<Item = (usize, &'a Frame)>,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, frame) in frames {
        let path = dir.join(format!("frame_{i:04}.png"));
        let buf = image::RgbImage::from_raw(
            frame.width() as u32,
            frame.height() as u32,
            frame.to_rgb8(),
        )
        .expect("frame buffer size");
        buf.save(&path)?;
    }
    Ok(())
}

/// Grayscale PNG of a [0, 1] map.
pub fn save_gray(path: &Path, map: &Array2<f32>) -> Result<()> {
    let (h, w) = (map.shape()[0], map.shape()[1]);
    let mut bytes = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            bytes.push((map[[y, x]].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let buf = image::GrayImage::from_raw(w as u32, h as u32, bytes).expect("map buffer size");
    buf.save(path)?;
    Ok(())
}
