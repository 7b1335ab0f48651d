//! Reduced-resolution feature tensors, stored channel-first as `(C, h, w)`.

use ndarray::Array3;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    data: Array3<f32>,
}

impl Latent {
    pub fn new(data: Array3<f32>) -> Self {
        Latent { data }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Latent {
            data: Array3::zeros((channels, height, width)),
        }
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[[c, y, x]]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[[c, y, x]] = v;
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<f32> {
        &mut self.data
    }

    pub fn same_shape(&self, other: &Latent) -> bool {
        self.data.shape() == other.data.shape()
    }

    pub fn require_same_shape(&self, other: &Latent, context: &'static str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::dim(
                context,
                format!("{:?}", self.data.shape()),
                format!("{:?}", other.data.shape()),
            ))
        }
    }

    /// Tokens in row-major spatial order; one row per position, one column
    /// per channel.
    pub fn to_tokens(&self) -> ndarray::Array2<f32> {
        let (c, h, w) = (self.channels(), self.height(), self.width());
        let mut tokens = ndarray::Array2::zeros((h * w, c));
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    tokens[[y * w + x, ch]] = self.data[[ch, y, x]];
                }
            }
        }
        tokens
    }

    pub fn mse(&self, other: &Latent) -> f64 {
        debug_assert!(self.same_shape(other));
        let mut acc = 0.0f64;
        for (a, b) in self.data.iter().zip(other.data.iter()) {
            let d = (*a - *b) as f64;
            acc += d * d;
        }
        acc / self.data.len() as f64
    }
}
