//! Deterministic noise-prediction backend with real attention layers.
//!
//! The network is intentionally tiny (conv -> attention -> conv with frozen
//! seeded weights) but structurally faithful: prompts, structure guidance,
//! and timesteps all flow through it, and the attention block can take its
//! keys and values from other frames, which is the mechanism the sampling
//! loop relies on for style coherence.

use ndarray::{Array1, Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::latent::Latent;

/// Frozen seed for all network weights.
const WEIGHT_SEED: u64 = 0x544F_5944_454E;
const HIDDEN: usize = 16;
const PROMPT_DIM: usize = 32;

/// Conditioning inputs: an opaque prompt embedding, an edge-based structure
/// map at latent resolution, and the weight of the structure injection.
#[derive(Debug, Clone)]
pub struct Conditioning {
    pub prompt_embedding: Vec<f32>,
    pub structure_map: Array2<f32>,
    pub control_weight: f32,
}

impl Conditioning {
    pub fn new(prompt: &str, structure_map: Array2<f32>, control_weight: f32) -> Result<Self> {
        if control_weight < 0.0 {
            return Err(Error::InvalidParameter(
                "control_weight must be >= 0".into(),
            ));
        }
        Ok(Conditioning {
            prompt_embedding: prompt_embedding(prompt),
            structure_map,
            control_weight,
        })
    }

    /// All-zero conditioning for a given latent resolution.
    pub fn neutral(height: usize, width: usize) -> Self {
        Conditioning {
            prompt_embedding: vec![0.0; PROMPT_DIM],
            structure_map: Array2::zeros((height, width)),
            control_weight: 0.0,
        }
    }
}

/// Deterministic 32-dim expansion of a prompt string via FNV-1a hashing.
pub fn prompt_embedding(prompt: &str) -> Vec<f32> {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in prompt.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hash);
    (0..PROMPT_DIM)
        .map(|_| 0.5 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng) as f32)
        .collect()
}

/// Projected keys and values contributed by one or more reference frames.
/// Row counts always equal the total token count of the contributing frames.
#[derive(Debug, Clone)]
pub struct AttentionState {
    pub keys: Array2<f32>,
    pub values: Array2<f32>,
    /// Identifiers of the frames the rows came from, in row order.
    pub source_frames: Vec<usize>,
}

impl AttentionState {
    pub fn token_count(&self) -> usize {
        self.keys.nrows()
    }
}

/// Row-stochastic attention weights `softmax(Q K^T / sqrt(d))`, accumulated
/// in f64 for stable row sums.
pub fn attention_weights(query: &Array2<f32>, keys: &Array2<f32>) -> Result<Array2<f32>> {
    if query.ncols() != keys.ncols() {
        return Err(Error::dim(
            "attention",
            format!("query dim {}", query.ncols()),
            format!("key dim {}", keys.ncols()),
        ));
    }
    let d = query.ncols() as f64;
    let scale = 1.0 / d.sqrt();
    let (n, m) = (query.nrows(), keys.nrows());
    let mut weights = Array2::zeros((n, m));
    let mut logits = vec![0.0f64; m];
    for i in 0..n {
        for j in 0..m {
            let mut dot = 0.0f64;
            for k in 0..query.ncols() {
                dot += query[[i, k]] as f64 * keys[[j, k]] as f64;
            }
            logits[j] = dot * scale;
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0f64;
        for l in logits.iter_mut() {
            *l = (*l - max).exp();
            sum += *l;
        }
        for j in 0..m {
            weights[[i, j]] = (logits[j] / sum) as f32;
        }
    }
    Ok(weights)
}

/// `softmax(Q K^T / sqrt(d)) V`. When the key/value rows consist of two
/// identical halves the computation collapses to the first half, which is
/// the exact same distribution (duplicating the support of a softmax with
/// equal logits halves each weight and doubles each contribution).
pub fn attention(
    query: &Array2<f32>,
    keys: &Array2<f32>,
    values: &Array2<f32>,
) -> Result<Array2<f32>> {
    if keys.nrows() != values.nrows() {
        return Err(Error::dim(
            "attention",
            format!("{} key rows", keys.nrows()),
            format!("{} value rows", values.nrows()),
        ));
    }
    if let Some((k_half, v_half)) = duplicated_halves(keys, values) {
        return attention(query, &k_half, &v_half);
    }
    let weights = attention_weights(query, keys)?;
    let (n, m) = (weights.nrows(), weights.ncols());
    let dv = values.ncols();
    let mut out = Array2::zeros((n, dv));
    for i in 0..n {
        for c in 0..dv {
            let mut acc = 0.0f64;
            for j in 0..m {
                acc += weights[[i, j]] as f64 * values[[j, c]] as f64;
            }
            out[[i, c]] = acc as f32;
        }
    }
    Ok(out)
}

fn duplicated_halves(
    keys: &Array2<f32>,
    values: &Array2<f32>,
) -> Option<(Array2<f32>, Array2<f32>)> {
    let m = keys.nrows();
    if m < 2 || m % 2 != 0 {
        return None;
    }
    let half = m / 2;
    for j in 0..half {
        for k in 0..keys.ncols() {
            if keys[[j, k]].to_bits() != keys[[j + half, k]].to_bits() {
                return None;
            }
        }
        for k in 0..values.ncols() {
            if values[[j, k]].to_bits() != values[[j + half, k]].to_bits() {
                return None;
            }
        }
    }
    let k_half = keys.slice(ndarray::s![..half, ..]).to_owned();
    let v_half = values.slice(ndarray::s![..half, ..]).to_owned();
    Some((k_half, v_half))
}

/// Fixed-weight noise predictor.
pub struct ToyDenoiser {
    in_channels: usize,
    t_max: usize,
    conv1: Conv3x3,
    conv2: Conv3x3,
    w_query: Array2<f32>,
    w_key: Array2<f32>,
    w_value: Array2<f32>,
    prompt_proj: Array2<f32>,
    w_control: Array1<f32>,
    w_time: Array1<f32>,
}

struct Conv3x3 {
    // (out, in, 3, 3) flattened
    weights: Vec<f32>,
    out_channels: usize,
    in_channels: usize,
}

impl Conv3x3 {
    fn seeded(rng: &mut ChaCha8Rng, out_channels: usize, in_channels: usize) -> Self {
        let scale = 1.0 / ((in_channels * 9) as f32).sqrt();
        let weights = (0..out_channels * in_channels * 9)
            .map(|_| {
                scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng) as f32
            })
            .collect();
        Conv3x3 {
            weights,
            out_channels,
            in_channels,
        }
    }

    /// 3x3 convolution with replicate padding.
    fn apply(&self, input: &Array3<f32>) -> Array3<f32> {
        let (h, w) = (input.shape()[1], input.shape()[2]);
        let mut out = Array3::zeros((self.out_channels, h, w));
        for oc in 0..self.out_channels {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0f32;
                    for ic in 0..self.in_channels {
                        for ky in 0..3usize {
                            for kx in 0..3usize {
                                let sy = (y + ky).saturating_sub(1).min(h - 1);
                                let sx = (x + kx).saturating_sub(1).min(w - 1);
                                let wi = ((oc * self.in_channels + ic) * 3 + ky) * 3 + kx;
                                acc += self.weights[wi] * input[[ic, sy, sx]];
                            }
                        }
                    }
                    out[[oc, y, x]] = acc;
                }
            }
        }
        out
    }
}

fn seeded_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f32> {
    let scale = 1.0 / (cols as f32).sqrt();
    Array2::from_shape_fn((rows, cols), |_| {
        scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng) as f32
    })
}

impl ToyDenoiser {
    pub fn new(in_channels: usize, t_max: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(WEIGHT_SEED);
        let conv1 = Conv3x3::seeded(&mut rng, HIDDEN, in_channels);
        let conv2 = Conv3x3::seeded(&mut rng, in_channels, HIDDEN);
        let w_query = seeded_matrix(&mut rng, HIDDEN, in_channels);
        let w_key = seeded_matrix(&mut rng, HIDDEN, in_channels);
        let w_value = seeded_matrix(&mut rng, HIDDEN, in_channels);
        let prompt_proj = seeded_matrix(&mut rng, HIDDEN, PROMPT_DIM);
        let w_control = seeded_matrix(&mut rng, HIDDEN, 1).column(0).to_owned();
        let w_time = seeded_matrix(&mut rng, HIDDEN, 1).column(0).to_owned();
        ToyDenoiser {
            in_channels,
            t_max,
            conv1,
            conv2,
            w_query,
            w_key,
            w_value,
            prompt_proj,
            w_control,
            w_time,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    fn project(&self, latent: &Latent, matrix: &Array2<f32>) -> Array2<f32> {
        let tokens = latent.to_tokens();
        tokens.dot(&matrix.t())
    }

    /// Keys and values drawn from one frame.
    pub fn make_self_state(&self, latent: &Latent, frame_id: usize) -> AttentionState {
        AttentionState {
            keys: self.project(latent, &self.w_key),
            values: self.project(latent, &self.w_value),
            source_frames: vec![frame_id],
        }
    }

    /// Keys and values concatenated from the anchor frame and the previous
    /// frame, anchor rows first.
    pub fn make_cross_frame_state(
        &self,
        anchor_latent: &Latent,
        previous_latent: &Latent,
    ) -> Result<AttentionState> {
        anchor_latent.require_same_shape(previous_latent, "make_cross_frame_state")?;
        let anchor = self.make_self_state(anchor_latent, 0);
        let previous = self.make_self_state(previous_latent, 1);
        let mut keys = Array2::zeros((anchor.keys.nrows() * 2, anchor.keys.ncols()));
        let mut values = Array2::zeros((anchor.values.nrows() * 2, anchor.values.ncols()));
        keys.slice_mut(ndarray::s![..anchor.keys.nrows(), ..])
            .assign(&anchor.keys);
        keys.slice_mut(ndarray::s![anchor.keys.nrows().., ..])
            .assign(&previous.keys);
        values
            .slice_mut(ndarray::s![..anchor.values.nrows(), ..])
            .assign(&anchor.values);
        values
            .slice_mut(ndarray::s![anchor.values.nrows().., ..])
            .assign(&previous.values);
        Ok(AttentionState {
            keys,
            values,
            source_frames: vec![0, 1],
        })
    }

    /// Predict the noise content of `latent` at timestep `t`. With `attn`
    /// supplied the attention block runs against the provided keys/values;
    /// otherwise it attends to the latent itself.
    pub fn predict_noise(
        &self,
        latent: &Latent,
        t: usize,
        cond: &Conditioning,
        attn: Option<&AttentionState>,
    ) -> Result<Latent> {
        if latent.channels() != self.in_channels {
            return Err(Error::dim(
                "predict_noise",
                format!("{} channels", self.in_channels),
                format!("{} channels", latent.channels()),
            ));
        }
        if t > self.t_max {
            return Err(Error::TimestepOutOfRange { t, t_max: self.t_max });
        }
        let (h, w) = (latent.height(), latent.width());
        if cond.structure_map.shape() != [h, w] {
            return Err(Error::dim(
                "predict_noise",
                format!("structure map {h}x{w}"),
                format!("{:?}", cond.structure_map.shape()),
            ));
        }

        let mut hidden = self.conv1.apply(latent.data());
        let mut prompt_bias = vec![0.0f32; HIDDEN];
        for c in 0..HIDDEN {
            let mut acc = 0.0f32;
            for (k, v) in cond.prompt_embedding.iter().enumerate().take(PROMPT_DIM) {
                acc += self.prompt_proj[[c, k]] * v;
            }
            prompt_bias[c] = acc;
        }
        let time_scale = t as f32 / self.t_max.max(1) as f32;
        for c in 0..HIDDEN {
            let bias = prompt_bias[c] + time_scale * self.w_time[c];
            for y in 0..h {
                for x in 0..w {
                    let ctrl =
                        cond.control_weight * cond.structure_map[[y, x]] * self.w_control[c];
                    let v = hidden[[c, y, x]] + bias + ctrl;
                    hidden[[c, y, x]] = v.tanh();
                }
            }
        }

        let query = self.project(latent, &self.w_query);
        let self_state;
        let state = match attn {
            Some(s) => s,
            None => {
                self_state = self.make_self_state(latent, 0);
                &self_state
            }
        };
        let attended = attention(&query, &state.keys, &state.values)?;

        for c in 0..HIDDEN {
            for y in 0..h {
                for x in 0..w {
                    let v = hidden[[c, y, x]] + attended[[y * w + x, c]];
                    hidden[[c, y, x]] = v.tanh();
                }
            }
        }

        Ok(Latent::new(self.conv2.apply(&hidden)))
    }
}

/// Gradient-magnitude edge map of a frame, max-normalized to [0, 1] and box
/// downsampled to latent resolution.
pub fn edge_map(frame: &Frame, spatial_factor: usize) -> Array2<f32> {
    let (h, w) = (frame.height(), frame.width());
    let luma = frame.to_luma_plane();
    let mut mag = vec![0.0f32; h * w];
    let mut max = 0.0f32;
    for y in 0..h {
        for x in 0..w {
            let xl = luma[y * w + x.saturating_sub(1)];
            let xr = luma[y * w + (x + 1).min(w - 1)];
            let yu = luma[y.saturating_sub(1) * w + x];
            let yd = luma[(y + 1).min(h - 1) * w + x];
            let gx = 0.5 * (xr - xl);
            let gy = 0.5 * (yd - yu);
            let m = (gx * gx + gy * gy).sqrt();
            mag[y * w + x] = m;
            max = max.max(m);
        }
    }
    if max > 1e-12 {
        for m in mag.iter_mut() {
            *m /= max;
        }
    }
    let f = spatial_factor.max(1);
    let (lh, lw) = (h / f, w / f);
    let norm = 1.0 / (f * f) as f32;
    Array2::from_shape_fn((lh, lw), |(y, x)| {
        let mut acc = 0.0f32;
        for by in 0..f {
            for bx in 0..f {
                acc += mag[(y * f + by) * w + (x * f + bx)];
            }
        }
        acc * norm
    })
}
