//! Dense multi-channel image buffer shared by the renderer, the radiance
//! field, and the image featurizer. Values are `f64`; quantization happens
//! only at the file-format boundary.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Layout: `(y * width + x) * channels + c`.
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Image {
        Image {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        (y * self.width + x) * self.channels
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = self.idx(x, y);
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = self.idx(x, y);
        &mut self.data[i..i + self.channels]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, values: &[f64]) {
        self.pixel_mut(x, y).copy_from_slice(values);
    }

    /// Bilinear sample at continuous pixel coordinates, node convention on
    /// pixel centers: pixel `(i, j)` sits at `(i + 0.5, j + 0.5)`.
    pub fn sample(&self, u: f64, v: f64, out: &mut [f64]) -> Option<()> {
        crate::geometry::bilinear_sample(
            &self.data,
            self.width,
            self.height,
            self.channels,
            u - 0.5,
            v - 0.5,
            out,
        )
    }
}
