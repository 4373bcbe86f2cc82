use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::{ImageBuffer, CHANNELS};
use crate::error::{Error, Result};

pub const BRIGHTNESS_LIMIT: f64 = 0.25;
pub const EXPOSURE_LIMIT: f64 = 0.15;
pub const BLUR_SIGMA_LIMIT: f64 = 3.5;
pub const SALT_PEPPER_FRACTION: f64 = 0.018;

fn quantize(v: f64) -> u8 {
    v.round_ties_even().clamp(0.0, 255.0) as u8
}

pub fn flip_vertical(img: &ImageBuffer) -> ImageBuffer {
    let row = img.width() * CHANNELS;
    let data = img.data().chunks_exact(row).rev().flatten().copied().collect();
    ImageBuffer::new(img.width(), img.height(), data).expect("same extents")
}

pub fn flip_horizontal(img: &ImageBuffer) -> ImageBuffer {
    let row = img.width() * CHANNELS;
    let data = img
        .data()
        .chunks_exact(row)
        .flat_map(|r| r.chunks_exact(CHANNELS).rev().flatten())
        .copied()
        .collect();
    ImageBuffer::new(img.width(), img.height(), data).expect("same extents")
}

fn check_range(name: &str, value: f64, limit: f64) -> Result<()> {
    if !(value.is_finite() && value.abs() <= limit) {
        return Err(Error::invalid(format!("{name} {value} outside [-{limit}, {limit}]")));
    }
    Ok(())
}

fn map_channels(img: &ImageBuffer, f: impl Fn(f64) -> f64) -> ImageBuffer {
    let lut: Vec<u8> = (0..=255u8).map(|v| quantize(f(v as f64))).collect();
    let data = img.data().iter().map(|&v| lut[v as usize]).collect();
    ImageBuffer::new(img.width(), img.height(), data).expect("same extents")
}

/// Adds `delta * 255` to every channel.
pub fn adjust_brightness(img: &ImageBuffer, delta: f64) -> Result<ImageBuffer> {
    check_range("brightness delta", delta, BRIGHTNESS_LIMIT)?;
    let shift = delta * 255.0;
    Ok(map_channels(img, |v| v + shift))
}

/// Multiplies every channel by `2^delta`.
pub fn adjust_exposure(img: &ImageBuffer, delta: f64) -> Result<ImageBuffer> {
    check_range("exposure delta", delta, EXPOSURE_LIMIT)?;
    let gain = delta.exp2();
    Ok(map_channels(img, |v| v * gain))
}

/// Normalized Gaussian taps for offsets `-r..=r`, `r = ceil(3 sigma)`.
/// `sigma == 0` gives the single tap `[1]`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma.is_finite() && (0.0..=BLUR_SIGMA_LIMIT).contains(&sigma)) {
        return Err(Error::invalid(format!(
            "blur sigma {sigma} outside [0, {BLUR_SIGMA_LIMIT}]"
        )));
    }
    if sigma == 0.0 {
        return Ok(vec![1.0]);
    }
    let r = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-r..=r)
        .map(|x| (-((x * x) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    Ok(taps.into_iter().map(|t| t / total).collect())
}

/// Separable Gaussian blur with clamp-to-edge borders.
pub fn gaussian_blur(img: &ImageBuffer, sigma: f64) -> Result<ImageBuffer> {
    let kernel = gaussian_kernel(sigma)?;
    if kernel.len() == 1 {
        return Ok(img.clone());
    }
    let (w, h) = (img.width(), img.height());
    let r = (kernel.len() / 2) as isize;
    let src = img.data();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;

    let mut horiz = vec![0.0f64; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..CHANNELS {
                let mut acc = 0.0;
                for (k, &wt) in kernel.iter().enumerate() {
                    let sx = clamp(x as isize + k as isize - r, w);
                    acc += wt * src[(y * w + sx) * CHANNELS + c] as f64;
                }
                horiz[(y * w + x) * CHANNELS + c] = acc;
            }
        }
    }
    let mut out = vec![0u8; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..CHANNELS {
                let mut acc = 0.0;
                for (k, &wt) in kernel.iter().enumerate() {
                    let sy = clamp(y as isize + k as isize - r, h);
                    acc += wt * horiz[(sy * w + x) * CHANNELS + c];
                }
                out[(y * w + x) * CHANNELS + c] = quantize(acc);
            }
        }
    }
    ImageBuffer::new(w, h, out)
}

/// Number of pixels [`salt_pepper`] corrupts.
pub fn salt_pepper_count(width: usize, height: usize, fraction: f64) -> usize {
    (fraction * (width * height) as f64).round() as usize
}

/// Forces exactly `round(fraction * W * H)` distinct pixels to black or white
/// (all channels), positions and colors drawn from `seed`.
pub fn salt_pepper(img: &ImageBuffer, fraction: f64, seed: u64) -> Result<ImageBuffer> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!(
            "salt-pepper fraction {fraction} outside (0, 1)"
        )));
    }
    let (w, h) = (img.width(), img.height());
    let count = salt_pepper_count(w, h, fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = img.clone();
    for pos in index::sample(&mut rng, w * h, count).into_vec() {
        let v = if rng.random::<bool>() { 255 } else { 0 };
        out.data_mut()[pos * CHANNELS..(pos + 1) * CHANNELS].fill(v);
    }
    Ok(out)
}

/// One transform with concrete parameters, as recorded in provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AppliedTransform {
    FlipVertical,
    FlipHorizontal,
    Brightness { delta: f64 },
    Exposure { delta: f64 },
    GaussianBlur { sigma: f64 },
    SaltPepper { fraction: f64, seed: u64 },
}

impl AppliedTransform {
    pub fn apply(&self, img: &ImageBuffer) -> Result<ImageBuffer> {
        match *self {
            AppliedTransform::FlipVertical => Ok(flip_vertical(img)),
            AppliedTransform::FlipHorizontal => Ok(flip_horizontal(img)),
            AppliedTransform::Brightness { delta } => adjust_brightness(img, delta),
            AppliedTransform::Exposure { delta } => adjust_exposure(img, delta),
            AppliedTransform::GaussianBlur { sigma } => gaussian_blur(img, sigma),
            AppliedTransform::SaltPepper { fraction, seed } => salt_pepper(img, fraction, seed),
        }
    }
}

/// Applies transforms in order.
pub fn apply_recipe(img: &ImageBuffer, recipe: &[AppliedTransform]) -> Result<ImageBuffer> {
    recipe.iter().try_fold(img.clone(), |acc, t| t.apply(&acc))
}
