//! Pixel containers shared by the data layer, model, and harness.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::bilinear_resize;

/// RGB image with values in [0,1], stored planar (3 × height × width) so it
/// feeds convolutions directly.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuf {
    pub height: usize,
    pub width: usize,
    data: Vec<f32>,
}

impl ImageBuf {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::input("image has a zero dimension"));
        }
        if data.len() != 3 * height * width {
            return Err(Error::input(format!(
                "image data length {} does not match 3x{height}x{width}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::input("image contains non-finite pixels"));
        }
        Ok(ImageBuf { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        ImageBuf {
            height,
            width,
            data: vec![0.0; 3 * height * width],
        }
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let hw = self.height * self.width;
        let i = y * self.width + x;
        [self.data[i], self.data[hw + i], self.data[2 * hw + i]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let hw = self.height * self.width;
        let i = y * self.width + x;
        self.data[i] = rgb[0];
        self.data[hw + i] = rgb[1];
        self.data[2 * hw + i] = rgb[2];
    }

    /// Bilinear resample to a new spatial size.
    pub fn resized(&self, height: usize, width: usize) -> ImageBuf {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let data = bilinear_resize(&self.data, 3, self.height, self.width, height, width);
        ImageBuf { height, width, data }
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        let hw = self.height * self.width;
        let mut out = Vec::with_capacity(3 * hw);
        for i in 0..hw {
            for c in 0..3 {
                out.push((self.data[c * hw + i].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        out
    }

    pub fn from_rgb8(height: usize, width: usize, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != 3 * height * width {
            return Err(Error::input("rgb8 buffer length mismatch"));
        }
        let hw = height * width;
        let mut data = vec![0.0f32; 3 * hw];
        for i in 0..hw {
            for c in 0..3 {
                data[c * hw + i] = rgb[3 * i + c] as f32 / 255.0;
            }
        }
        Ok(ImageBuf { height, width, data })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.to_rgb8())
            .expect("buffer size matches dimensions");
        img.save(path)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        ImageBuf::from_rgb8(img.height() as usize, img.width() as usize, img.as_raw())
    }
}

/// Binary mask with one byte per pixel, each 0 or 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::input(format!(
                "mask data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::input(format!("mask contains non-binary value {v}")));
        }
        Ok(BinaryMask { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    /// Threshold logits at 0, i.e. sigmoid probability at 0.5 (inclusive).
    pub fn from_logits(height: usize, width: usize, logits: &[f32]) -> Result<Self> {
        if logits.len() != height * width {
            return Err(Error::input("logit buffer length mismatch"));
        }
        let data = logits.iter().map(|&z| u8::from(z >= 0.0)).collect();
        Ok(BinaryMask { height, width, data })
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        debug_assert!(v <= 1);
        self.data[y * self.width + x] = v;
    }

    pub fn area(&self) -> u64 {
        self.data.iter().map(|&v| v as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn same_shape(&self, other: &BinaryMask) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Target grid for the mask losses.
    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }

    /// Nearest-neighbor resample; identity when the size already matches.
    pub fn resized_nearest(&self, height: usize, width: usize) -> BinaryMask {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            let sy = ((y as f32 + 0.5) * self.height as f32 / height as f32) as usize;
            let sy = sy.min(self.height - 1);
            for x in 0..width {
                let sx = ((x as f32 + 0.5) * self.width as f32 / width as f32) as usize;
                let sx = sx.min(self.width - 1);
                data.push(self.data[sy * self.width + sx]);
            }
        }
        BinaryMask {
            height,
            width,
            data,
        }
    }
}
