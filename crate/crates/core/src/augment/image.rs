use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 8-bit, 3-channel, row-major (`y`, `x`, channel) pixel buffer.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

pub const CHANNELS: usize = 3;

impl ImageBuffer {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * CHANNELS {
            return Err(Error::invalid(format!(
                "image buffer of {width}x{height}x{CHANNELS} cannot hold {} bytes",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "image extents must be positive");
        let data = rgb.iter().copied().cycle().take(width * height * CHANNELS).collect();
        Self { width, height, data }
    }

    /// Gray image from one intensity per pixel.
    pub fn from_gray(width: usize, height: usize, gray: &[u8]) -> Result<Self> {
        if gray.len() != width * height {
            return Err(Error::invalid(format!(
                "gray plane of {} values does not fit {width}x{height}",
                gray.len()
            )));
        }
        Self::new(width, height, gray.iter().flat_map(|&g| [g, g, g]).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let o = (y * self.width + x) * CHANNELS;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let o = (y * self.width + x) * CHANNELS;
        self.data[o..o + CHANNELS].copy_from_slice(&rgb);
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Self::new(w as usize, h as usize, rgb.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        image::save_buffer_with_format(
            path,
            &self.data,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Bilinear resampling with half-pixel centers; resizing to the current
    /// size returns an identical image.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let axis = |n_out: usize, n_in: usize| -> Vec<(usize, usize, f32)> {
            let scale = n_in as f32 / n_out as f32;
            (0..n_out)
                .map(|o| {
                    let s = ((o as f32 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f32);
                    let i0 = s.floor() as usize;
                    let i1 = (i0 + 1).min(n_in - 1);
                    (i0, i1, s - i0 as f32)
                })
                .collect()
        };
        let xs = axis(width, self.width);
        let ys = axis(height, self.height);
        let mut data = Vec::with_capacity(width * height * CHANNELS);
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                for c in 0..CHANNELS {
                    let p = |x: usize, y: usize| self.data[(y * self.width + x) * CHANNELS + c] as f32;
                    let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
                    let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
                    let v = top * (1.0 - fy) + bottom * fy;
                    data.push(v.round_ties_even().clamp(0.0, 255.0) as u8);
                }
            }
        }
        Self { width, height, data }
    }

    /// `[3, H, W]` tensor scaled to `[0, 1]` by `/255`.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let mut out = vec![0.0f32; self.data.len()];
        self.write_chw(&mut out);
        Tensor::new(vec![CHANNELS, self.height, self.width], out).expect("extents match buffer")
    }

    /// Writes the `[3, H, W]`, `/255`-scaled planes into `out`.
    pub fn write_chw(&self, out: &mut [f32]) {
        let plane = self.width * self.height;
        for (i, px) in self.data.chunks_exact(CHANNELS).enumerate() {
            for c in 0..CHANNELS {
                out[c * plane + i] = px[c] as f32 / 255.0;
            }
        }
    }
}
