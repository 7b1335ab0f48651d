//! Lossy encoder/decoder pairs standing in for the diffusion autoencoder,
//! plus compensated encoding that predicts and cancels the codec's
//! systematic reconstruction loss so it does not accumulate when frames are
//! re-encoded over and over.

use crate::error::{Error, Result};
use crate::frame::{Frame, LUMA_WEIGHTS};
use crate::latent::Latent;

/// Deterministic, stateless encoder/decoder pair.
pub trait LossyCodec: Send + Sync {
    fn encode(&self, image: &Frame) -> Result<Latent>;
    fn decode(&self, latent: &Latent) -> Result<Frame>;
    fn latent_channels(&self) -> usize;
    fn spatial_factor(&self) -> usize;
}

/// Compensation settings for the fidelity-oriented encoder.
#[derive(Debug, Clone, Copy)]
pub struct FidelityConfig {
    /// Linear coefficient on the predicted loss; 1.0 cancels it to first
    /// order.
    pub lambda_e: f32,
    /// Per-channel error bound in [0, 1] above which compensation is
    /// considered to have introduced an artifact and is masked off.
    pub artifact_threshold: f32,
}

impl Default for FidelityConfig {
    fn default() -> Self {
        FidelityConfig {
            lambda_e: 1.0,
            artifact_threshold: 0.1,
        }
    }
}

impl FidelityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_e < 0.0 {
            return Err(Error::InvalidParameter("lambda_e must be >= 0".into()));
        }
        if self.artifact_threshold <= 0.0 {
            return Err(Error::InvalidParameter(
                "artifact_threshold must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Pass-through codec: pixels become a 3-channel latent at full resolution.
#[derive(Debug, Clone, Default)]
pub struct IdentityCodec;

impl LossyCodec for IdentityCodec {
    fn encode(&self, image: &Frame) -> Result<Latent> {
        let (h, w) = (image.height(), image.width());
        let mut out = Latent::zeros(3, h, w);
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    out.set(c, y, x, image.get(y, x, c));
                }
            }
        }
        Ok(out)
    }

    fn decode(&self, latent: &Latent) -> Result<Frame> {
        let (h, w) = (latent.height(), latent.width());
        let mut out = Frame::zeros(h, w);
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    out.set(y, x, c, latent.get(c, y, x));
                }
            }
        }
        Ok(out)
    }

    fn latent_channels(&self) -> usize {
        3
    }

    fn spatial_factor(&self) -> usize {
        1
    }
}

/// Visibly lossy toy codec: 2x bilinear downsampling into a 4-channel
/// latent (RGB plus luma) with uniform 6-bit quantization. The repeated
/// blur of encode/decode round trips compounds, which is exactly the
/// behavior the compensated encoder exists to counteract.
#[derive(Debug, Clone)]
pub struct ToyCodec {
    quant_levels: f32,
}

impl Default for ToyCodec {
    fn default() -> Self {
        ToyCodec {
            quant_levels: 63.0, // 6 bits
        }
    }
}

impl ToyCodec {
    fn quantize(&self, v: f32) -> f32 {
        (v.clamp(0.0, 1.0) * self.quant_levels).round() / self.quant_levels
    }
}

impl LossyCodec for ToyCodec {
    fn encode(&self, image: &Frame) -> Result<Latent> {
        let (h, w) = (image.height(), image.width());
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::dim("encode", "even dimensions", format!("{h}x{w}")));
        }
        let (lh, lw) = (h / 2, w / 2);
        let mut out = Latent::zeros(4, lh, lw);
        for y in 0..lh {
            for x in 0..lw {
                let mut rgb = [0.0f32; 3];
                for c in 0..3 {
                    rgb[c] = 0.25
                        * (image.get(2 * y, 2 * x, c)
                            + image.get(2 * y, 2 * x + 1, c)
                            + image.get(2 * y + 1, 2 * x, c)
                            + image.get(2 * y + 1, 2 * x + 1, c));
                    out.set(c, y, x, self.quantize(rgb[c]));
                }
                let luma =
                    LUMA_WEIGHTS[0] * rgb[0] + LUMA_WEIGHTS[1] * rgb[1] + LUMA_WEIGHTS[2] * rgb[2];
                out.set(3, y, x, self.quantize(luma));
            }
        }
        Ok(out)
    }

    fn decode(&self, latent: &Latent) -> Result<Frame> {
        if latent.channels() != 4 {
            return Err(Error::dim(
                "decode",
                "4 channels",
                latent.channels().to_string(),
            ));
        }
        let (lh, lw) = (latent.height(), latent.width());
        let (h, w) = (lh * 2, lw * 2);
        let mut out = Frame::zeros(h, w);
        let up = |c: usize, x: f32, y: f32| -> f32 {
            // bilinear upsample, align-corners=false
            let px = (x.clamp(0.0, (lw - 1) as f32)).floor() as usize;
            let py = (y.clamp(0.0, (lh - 1) as f32)).floor() as usize;
            let fx = x.clamp(0.0, (lw - 1) as f32) - px as f32;
            let fy = y.clamp(0.0, (lh - 1) as f32) - py as f32;
            let px1 = (px + 1).min(lw - 1);
            let py1 = (py + 1).min(lh - 1);
            (1.0 - fy) * ((1.0 - fx) * latent.get(c, py, px) + fx * latent.get(c, py, px1))
                + fy * ((1.0 - fx) * latent.get(c, py1, px) + fx * latent.get(c, py1, px1))
        };
        for y in 0..h {
            for x in 0..w {
                let sx = (x as f32 + 0.5) / 2.0 - 0.5;
                let sy = (y as f32 + 0.5) / 2.0 - 0.5;
                let rgb = [up(0, sx, sy), up(1, sx, sy), up(2, sx, sy)];
                let luma_stored = up(3, sx, sy);
                let luma_rgb = LUMA_WEIGHTS[0] * rgb[0]
                    + LUMA_WEIGHTS[1] * rgb[1]
                    + LUMA_WEIGHTS[2] * rgb[2];
                let correction = 0.5 * (luma_stored - luma_rgb);
                for c in 0..3 {
                    out.set(y, x, c, (rgb[c] + correction).clamp(0.0, 1.0));
                }
            }
        }
        Ok(out)
    }

    fn latent_channels(&self) -> usize {
        4
    }

    fn spatial_factor(&self) -> usize {
        2
    }
}

/// Compensated encoding: encode/decode twice, assume the loss of one round
/// trip predicts the next, and push the latent in the opposite direction.
/// Positions where the compensated result drifts from the source by more
/// than the artifact threshold fall back to the plain encoding.
///
/// Returns `x_r + M * lambda * (x_r - x_rr)` where `x_r = encode(I)`,
/// `x_rr = encode(decode(x_r))`, and `M` masks cells whose decoded error
/// stays below the threshold.
pub fn fidelity_encode(
    codec: &dyn LossyCodec,
    image: &Frame,
    cfg: &FidelityConfig,
) -> Result<Latent> {
    cfg.validate()?;
    let factor = codec.spatial_factor();
    if image.height() % factor != 0 || image.width() % factor != 0 {
        return Err(Error::dim(
            "fidelity_encode",
            format!("dimensions divisible by {factor}"),
            format!("{}x{}", image.height(), image.width()),
        ));
    }
    let x_r = codec.encode(image)?;
    if cfg.lambda_e == 0.0 {
        return Ok(x_r);
    }
    let i_r = codec.decode(&x_r)?;
    let x_rr = codec.encode(&i_r)?;

    let mut candidate = x_r.clone();
    for (c, (r, rr)) in candidate
        .data_mut()
        .iter_mut()
        .zip(x_r.data().iter().zip(x_rr.data().iter()))
    {
        *c = *r + cfg.lambda_e * (*r - *rr);
    }
    let decoded = codec.decode(&candidate)?;
    let mask = compensation_mask(image, &decoded, factor, cfg.artifact_threshold);

    let mut out = x_r.clone();
    let (ch, lh, lw) = (out.channels(), out.height(), out.width());
    for c in 0..ch {
        for y in 0..lh {
            for x in 0..lw {
                if mask[y * lw + x] {
                    let r = x_r.get(c, y, x);
                    let rr = x_rr.get(c, y, x);
                    out.set(c, y, x, r + cfg.lambda_e * (r - rr));
                }
            }
        }
    }
    Ok(out)
}

/// Mean absolute error of the decoded candidate against the source, box
/// aggregated over each latent cell's pixel footprint; true where the
/// compensation stays below the threshold.
fn compensation_mask(
    source: &Frame,
    decoded: &Frame,
    factor: usize,
    threshold: f32,
) -> Vec<bool> {
    let (lh, lw) = (source.height() / factor, source.width() / factor);
    let mut mask = vec![false; lh * lw];
    let norm = 1.0 / (factor * factor * 3) as f32;
    for y in 0..lh {
        for x in 0..lw {
            let mut err = 0.0f32;
            for by in 0..factor {
                for bx in 0..factor {
                    for c in 0..3 {
                        err += (source.get(y * factor + by, x * factor + bx, c)
                            - decoded.get(y * factor + by, x * factor + bx, c))
                        .abs();
                    }
                }
            }
            mask[y * lw + x] = err * norm <= threshold;
        }
    }
    mask
}

/// MSE of the reconstruction against the original after `k` chained
/// round trips, for `k = 1..=iterations`. Each iteration re-encodes the
/// previous decode, either plainly or through the compensated encoder.
pub fn roundtrip_error_curve(
    codec: &dyn LossyCodec,
    image: &Frame,
    iterations: usize,
    use_fidelity: bool,
    cfg: &FidelityConfig,
) -> Result<Vec<f64>> {
    if iterations == 0 {
        return Err(Error::InvalidParameter("iterations must be >= 1".into()));
    }
    let mut current = image.clone();
    let mut curve = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let latent = if use_fidelity {
            fidelity_encode(codec, &current, cfg)?
        } else {
            codec.encode(&current)?
        };
        current = codec.decode(&latent)?;
        curve.push(image.mse(&current));
    }
    Ok(curve)
}
