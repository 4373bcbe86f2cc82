//! Synthetic two-class electroluminescence-like cell images.
//!
//! Both classes share a textured gray cell with smooth shading and dark
//! vertical busbars. Defective cells add thin dark crack polylines and dark
//! blob contaminations. Every image is a pure function of `(seed, index)`.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::augment::ImageBuffer;
use crate::dataset::{DatasetManifest, Provenance, Sample, Split, MANIFEST_FILE};
use crate::error::{Error, Result};

pub const CLASS_NAMES: [&str; 2] = ["defective", "normal"];

/// Minimum darkening of a crack pixel below the median of the surrounding
/// non-crack pixels.
pub const MIN_CRACK_CONTRAST: i32 = 20;

/// Half-width of the neighbourhood used for the local background median.
pub const CONTRAST_RADIUS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthImage {
    pub image: ImageBuffer,
    /// Row-major flags of crack pixels; all false for normal cells.
    pub crack_mask: Vec<bool>,
}

fn stamp_disk(mask: &mut [bool], side: usize, cx: f64, cy: f64, radius: f64) {
    let r = radius.ceil() as isize;
    let (x0, y0) = (cx.round() as isize, cy.round() as isize);
    for dy in -r..=r {
        for dx in -r..=r {
            let (x, y) = (x0 + dx, y0 + dy);
            if x < 0 || y < 0 || x >= side as isize || y >= side as isize {
                continue;
            }
            let (fx, fy) = (x as f64 - cx, y as f64 - cy);
            if fx * fx + fy * fy <= radius * radius + 0.25 {
                mask[y as usize * side + x as usize] = true;
            }
        }
    }
}

fn crack_polyline<R: Rng>(rng: &mut R, side: usize, mask: &mut [bool]) {
    let s = side as f64;
    let half_width = (s / 112.0).max(0.5);
    let (mut x, mut y) = (rng.random_range(0.1 * s..0.9 * s), rng.random_range(0.1 * s..0.9 * s));
    let mut angle = rng.random_range(0.0..2.0 * PI);
    for _ in 0..rng.random_range(3..=6) {
        let len = rng.random_range(s / 8.0..s / 4.0);
        let (nx, ny) = (
            (x + len * angle.cos()).clamp(0.0, s - 1.0),
            (y + len * angle.sin()).clamp(0.0, s - 1.0),
        );
        let steps = (len * 2.0).ceil() as usize;
        for k in 0..=steps {
            let t = k as f64 / steps as f64;
            stamp_disk(mask, side, x + t * (nx - x), y + t * (ny - y), half_width);
        }
        (x, y) = (nx, ny);
        angle += rng.random_range(-0.6..0.6);
    }
}

fn local_median(plane: &[u8], mask: &[bool], side: usize, x: usize, y: usize) -> Option<u8> {
    let r = CONTRAST_RADIUS;
    let mut vals = Vec::with_capacity((2 * r + 1) * (2 * r + 1));
    for yy in y.saturating_sub(r)..(y + r + 1).min(side) {
        for xx in x.saturating_sub(r)..(x + r + 1).min(side) {
            let i = yy * side + xx;
            if !mask[i] {
                vals.push(plane[i]);
            }
        }
    }
    if vals.is_empty() {
        return None;
    }
    vals.sort_unstable();
    Some(vals[vals.len() / 2])
}

/// Generates image `index` of the given class.
pub fn generate(side: usize, defective: bool, seed: u64, index: u64) -> SynthImage {
    assert!(side >= 8, "synthetic images need a side of at least 8 pixels");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let s = side as f64;

    let base = rng.random_range(115.0..155.0);
    let (gx, gy) = (rng.random_range(-12.0..12.0), rng.random_range(-12.0..12.0));
    let (phase, freq) = (rng.random_range(0.0..2.0 * PI), rng.random_range(1.0..2.5));
    let mut plane: Vec<f64> = (0..side * side)
        .map(|i| {
            let (x, y) = ((i % side) as f64 / s, (i / side) as f64 / s);
            let shade = gx * (x - 0.5) + gy * (y - 0.5) + 6.0 * (2.0 * PI * freq * (x + y) + phase).sin();
            base + shade + rng.random_range(-6.0..=6.0)
        })
        .collect();

    let bars = rng.random_range(2..=3);
    let bar_half = (s / 112.0).max(1.0);
    for b in 0..bars {
        let cx = s * (b as f64 + 1.0) / (bars as f64 + 1.0) + rng.random_range(-s / 40.0..s / 40.0);
        for (i, v) in plane.iter_mut().enumerate() {
            if ((i % side) as f64 - cx).abs() <= bar_half {
                *v -= 35.0;
            }
        }
    }

    let mut mask = vec![false; side * side];
    if defective {
        for _ in 0..rng.random_range(1..=2) {
            let (cx, cy) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
            let (rx, ry) = (
                rng.random_range(s / 40.0..s / 14.0),
                rng.random_range(s / 40.0..s / 14.0),
            );
            let depth = rng.random_range(30.0..60.0);
            for (i, v) in plane.iter_mut().enumerate() {
                let (dx, dy) = (((i % side) as f64 - cx) / rx, ((i / side) as f64 - cy) / ry);
                let d2 = dx * dx + dy * dy;
                if d2 < 1.0 {
                    *v -= depth * (1.0 - d2);
                }
            }
        }
        for _ in 0..rng.random_range(1..=3) {
            crack_polyline(&mut rng, side, &mut mask);
        }
    }

    let mut gray: Vec<u8> = plane.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    if defective {
        let background = gray.clone();
        for i in (0..side * side).filter(|&i| mask[i]) {
            let drop: i32 = rng.random_range(45..=80);
            let med = local_median(&background, &mask, side, i % side, i / side).unwrap_or(background[i]) as i32;
            gray[i] = (med - drop).max(0) as u8;
        }
    }
    SynthImage {
        image: ImageBuffer::from_gray(side, side, &gray).expect("plane matches extents"),
        crack_mask: mask,
    }
}

/// Smallest `median(non-crack neighbours) - value` over all crack pixels of
/// the red channel, or `None` without crack pixels.
pub fn min_crack_contrast(img: &SynthImage) -> Option<i32> {
    let side = img.image.width();
    let red: Vec<u8> = img.image.data().iter().step_by(3).copied().collect();
    (0..side * side)
        .filter(|&i| img.crack_mask[i])
        .filter_map(|i| local_median(&red, &img.crack_mask, side, i % side, i / side).map(|m| m as i32 - red[i] as i32))
        .min()
}

/// Writes `per_class` images of each class plus a manifest into `out_dir`,
/// which must not exist. The tree is staged and renamed into place.
pub fn write_synthetic(out_dir: &Path, side: usize, per_class: usize, seed: u64) -> Result<DatasetManifest> {
    if per_class == 0 {
        return Err(Error::invalid("need at least one image per class"));
    }
    if side < 8 {
        return Err(Error::invalid(format!("image side {side} is below the minimum of 8")));
    }
    if out_dir.exists() {
        return Err(Error::Dataset(format!(
            "output directory {} already exists",
            out_dir.display()
        )));
    }
    let mut samples = Vec::with_capacity(2 * per_class);
    for (label, class) in CLASS_NAMES.iter().enumerate() {
        for i in 0..per_class {
            let index = (label * per_class + i) as u64;
            samples.push(Sample {
                path: PathBuf::from(class).join(format!("syn_{index:05}.png")),
                class: class.to_string(),
                label,
                split: Split::Unassigned,
                provenance: Provenance::Synthetic { seed, index },
            });
        }
    }
    let parent = out_dir
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let name = out_dir.file_name().and_then(|n| n.to_str()).unwrap_or("synthetic");
    let staging = parent.join(format!(".{name}.partial"));
    if staging.exists() {
        std::fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    let manifest = DatasetManifest::new(&staging, CLASS_NAMES.map(String::from).to_vec(), samples)?;
    let written = manifest
        .samples
        .par_iter()
        .try_for_each(|s| {
            let Provenance::Synthetic { index, .. } = s.provenance else {
                unreachable!()
            };
            generate(side, s.label == 0, seed, index)
                .image
                .save_png(&manifest.resolve(s))
        })
        .and_then(|_| manifest.write(&staging.join(MANIFEST_FILE)));
    if let Err(e) = written {
        let _ = std::fs::remove_dir_all(&staging);
        return Err(e);
    }
    std::fs::rename(&staging, out_dir).map_err(|e| Error::io(out_dir, e))?;
    Ok(DatasetManifest {
        root: out_dir.to_path_buf(),
        ..manifest
    })
}
