//! Synthetic test footage: smooth band-limited textures with exact
//! subpixel ground-truth motion, used by the codec benchmark and the test
//! suites.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::frame::Frame;

/// Sum-of-sinusoids texture evaluated analytically at any real coordinate.
/// Smooth enough for variational flow, textured enough for patch matching.
#[derive(Debug, Clone)]
pub struct TexturePattern {
    // (amplitude, fx, fy, phase) per component per color channel
    waves: [Vec<(f32, f32, f32, f32)>; 3],
}

impl TexturePattern {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves = std::array::from_fn(|_| {
            (0..6)
                .map(|_| {
                    let amp = rng.random_range(0.4..1.0);
                    let freq = rng.random_range(0.02..0.10);
                    let angle = rng.random_range(0.0..std::f32::consts::TAU);
                    let phase = rng.random_range(0.0..std::f32::consts::TAU);
                    (amp, freq * angle.cos(), freq * angle.sin(), phase)
                })
                .collect()
        });
        TexturePattern { waves }
    }

    pub fn eval(&self, x: f32, y: f32, channel: usize) -> f32 {
        let mut v = 0.0f32;
        let mut norm = 0.0f32;
        for &(amp, fx, fy, phase) in &self.waves[channel] {
            v += amp * (std::f32::consts::TAU * (fx * x + fy * y) + phase).sin();
            norm += amp;
        }
        // map [-norm, norm] into [0.1, 0.9]
        0.5 + 0.4 * v / norm
    }

    /// Render the pattern shifted so that the content of `offset = (dx, dy)`
    /// appears translated by exactly that many pixels.
    pub fn render(&self, height: usize, width: usize, offset: (f32, f32)) -> Frame {
        Frame::from_fn(height, width, |y, x, c| {
            self.eval(x as f32 - offset.0, y as f32 - offset.1, c)
        })
    }
}

pub fn textured_frame(height: usize, width: usize, seed: u64) -> Frame {
    TexturePattern::new(seed).render(height, width, (0.0, 0.0))
}

/// A sequence whose content translates by `velocity` pixels per frame.
pub fn translating_video(
    height: usize,
    width: usize,
    frames: usize,
    velocity: (f32, f32),
    seed: u64,
) -> Vec<Frame> {
    let pattern = TexturePattern::new(seed);
    (0..frames)
        .map(|i| {
            pattern.render(
                height,
                width,
                (velocity.0 * i as f32, velocity.1 * i as f32),
            )
        })
        .collect()
}

/// Uniform random pixels; rough fixture for patch matching.
pub fn noise_frame(height: usize, width: usize, seed: u64) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Frame::from_fn(height, width, |_, _, _| rng.random_range(0.0..1.0))
}

/// Fixed corpus of smooth synthetic images for codec evaluation.
pub fn codec_corpus(height: usize, width: usize, count: usize) -> Vec<Frame> {
    (0..count)
        .map(|i| textured_frame(height, width, 0x5EED_0000 + i as u64))
        .collect()
}
