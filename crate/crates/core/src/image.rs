//! 8-bit RGB rasters and the geometric helpers used for augmentation and
//! network input preparation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Channel statistics of the pretraining corpus the backbone normalization
/// follows (ImageNet).
pub const NORM_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const NORM_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Interleaved RGB raster, row-major, `width * height * 3` bytes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyInput);
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::InvalidImage(format!(
                "{}x{} image needs {} bytes, got {}",
                width,
                height,
                width * height * 3,
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, pixels)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Values of one channel (0 = R, 1 = G, 2 = B) in raster order.
    pub fn channel_values(&self, channel: usize) -> impl Iterator<Item = u8> + '_ {
        self.pixels.iter().skip(channel).step_by(3).copied()
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = Vec::with_capacity(self.pixels.len());
        for row in self.pixels.chunks_exact(self.width * 3) {
            for px in row.chunks_exact(3).rev() {
                out.extend_from_slice(px);
            }
        }
        Self {
            width: self.width,
            height: self.height,
            pixels: out,
        }
    }

    /// Crops the rectangle `[x0, x0 + w) x [y0, y0 + h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::InvalidImage(format!(
                "crop {}x{}+{}+{} outside {}x{}",
                w, h, x0, y0, self.width, self.height
            )));
        }
        let mut out = Vec::with_capacity(w * h * 3);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * 3;
            out.extend_from_slice(&self.pixels[start..start + w * 3]);
        }
        Self::new(w, h, out)
    }

    /// Bilinear resampling with pixel-center alignment.
    pub fn resize(&self, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyInput);
        }
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut out = vec![0u8; width * height * 3];
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = fy as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let ty = fy - y0 as f64;
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = fx as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let tx = fx - x0 as f64;
                for c in 0..3 {
                    let p = |xx: usize, yy: usize| self.pixels[(yy * self.width + xx) * 3 + c] as f64;
                    let top = p(x0, y0) * (1.0 - tx) + p(x1, y0) * tx;
                    let bottom = p(x0, y1) * (1.0 - tx) + p(x1, y1) * tx;
                    let v = top * (1.0 - ty) + bottom * ty;
                    out[(y * width + x) * 3 + c] = math::round(v).clamp(0.0, 255.0) as u8;
                }
            }
        }
        Self::new(width, height, out)
    }
}

/// Stacks images into an `N x 3 x size x size` tensor, resizing as needed and
/// normalizing with the pretraining channel statistics.
pub fn to_input_tensor(images: &[&RgbImage], size: usize) -> Result<Tensor> {
    if images.is_empty() {
        return Err(Error::EmptyInput);
    }
    let plane = size * size;
    let mut t = Tensor::zeros(images.len(), 3, size, size);
    for (n, img) in images.iter().enumerate() {
        let resized;
        let img = if img.width() == size && img.height() == size {
            *img
        } else {
            resized = img.resize(size, size)?;
            &resized
        };
        let dst = t.sample_mut(n);
        for (i, px) in img.as_bytes().chunks_exact(3).enumerate() {
            for c in 0..3 {
                dst[c * plane + i] = (px[c] as f64 / 255.0 - NORM_MEAN[c]) / NORM_STD[c];
            }
        }
    }
    Ok(t)
}
