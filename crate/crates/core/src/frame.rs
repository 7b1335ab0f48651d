//! RGB frames with channel values in [0, 1], stored as `(height, width, 3)`.

use ndarray::Array3;

use crate::error::{Error, Result};

pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    data: Array3<f32>,
}

impl Frame {
    pub fn new(data: Array3<f32>) -> Self {
        debug_assert_eq!(data.shape()[2], 3, "frames are RGB");
        Frame { data }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Frame {
            data: Array3::zeros((height, width, 3)),
        }
    }

    pub fn constant(height: usize, width: usize, value: [f32; 3]) -> Self {
        let mut data = Array3::zeros((height, width, 3));
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    data[[y, x, c]] = value[c];
                }
            }
        }
        Frame { data }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        Frame {
            data: Array3::from_shape_fn((height, width, 3), |(y, x, c)| f(y, x, c)),
        }
    }

    pub fn height(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[[y, x, c]]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[[y, x, c]] = v;
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        [
            self.data[[y, x, 0]],
            self.data[[y, x, 1]],
            self.data[[y, x, 2]],
        ]
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<f32> {
        &mut self.data
    }

    pub fn same_size(&self, other: &Frame) -> bool {
        self.height() == other.height() && self.width() == other.width()
    }

    pub fn require_same_size(&self, other: &Frame, context: &'static str) -> Result<()> {
        if self.same_size(other) {
            Ok(())
        } else {
            Err(Error::dim(
                context,
                format!("{}x{}", self.height(), self.width()),
                format!("{}x{}", other.height(), other.width()),
            ))
        }
    }

    pub fn luma(&self, y: usize, x: usize) -> f32 {
        let p = self.pixel(y, x);
        LUMA_WEIGHTS[0] * p[0] + LUMA_WEIGHTS[1] * p[1] + LUMA_WEIGHTS[2] * p[2]
    }

    /// Grayscale copy as a flat row-major plane.
    pub fn to_luma_plane(&self) -> Vec<f32> {
        let (h, w) = (self.height(), self.width());
        let mut out = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                out.push(self.luma(y, x));
            }
        }
        out
    }

    pub fn clamp_unit(&mut self) {
        self.data.mapv_inplace(|v| v.clamp(0.0, 1.0));
    }

    /// Mean squared error over all channels and pixels.
    pub fn mse(&self, other: &Frame) -> f64 {
        debug_assert!(self.same_size(other));
        let mut acc = 0.0f64;
        for (a, b) in self.data.iter().zip(other.data.iter()) {
            let d = (*a - *b) as f64;
            acc += d * d;
        }
        acc / self.data.len() as f64
    }

    pub fn from_rgb8(width: u32, height: u32, bytes: &[u8]) -> Self {
        let (h, w) = (height as usize, width as usize);
        let mut data = Array3::zeros((h, w, 3));
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    data[[y, x, c]] = bytes[(y * w + x) * 3 + c] as f32 / 255.0;
                }
            }
        }
        Frame { data }
    }

    /// 8-bit quantization with round-half-up.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len());
        for v in self.data.iter() {
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        out
    }
}
