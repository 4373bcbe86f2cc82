use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::image::ImageBuffer;
use super::transforms::{
    apply_recipe, AppliedTransform, BLUR_SIGMA_LIMIT, BRIGHTNESS_LIMIT, EXPOSURE_LIMIT, SALT_PEPPER_FRACTION,
};
use crate::dataset::{DatasetManifest, Provenance, Sample, Split};
use crate::error::{Error, Result};

/// A transform together with the range its parameter is drawn from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformSpec {
    FlipVertical,
    FlipHorizontal,
    Brightness { min: f64, max: f64 },
    Exposure { min: f64, max: f64 },
    GaussianBlur { min_sigma: f64, max_sigma: f64 },
    SaltPepper { fraction: f64 },
}

impl TransformSpec {
    fn validate(&self) -> Result<()> {
        let range = |name: &str, lo: f64, hi: f64, bound_lo: f64, bound_hi: f64| {
            if lo.is_finite() && hi.is_finite() && bound_lo <= lo && lo <= hi && hi <= bound_hi {
                Ok(())
            } else {
                Err(Error::invalid(format!(
                    "{name} range [{lo}, {hi}] must lie within [{bound_lo}, {bound_hi}]"
                )))
            }
        };
        match *self {
            TransformSpec::FlipVertical | TransformSpec::FlipHorizontal => Ok(()),
            TransformSpec::Brightness { min, max } => {
                range("brightness", min, max, -BRIGHTNESS_LIMIT, BRIGHTNESS_LIMIT)
            }
            TransformSpec::Exposure { min, max } => range("exposure", min, max, -EXPOSURE_LIMIT, EXPOSURE_LIMIT),
            TransformSpec::GaussianBlur { min_sigma, max_sigma } => {
                range("blur sigma", min_sigma, max_sigma, 0.0, BLUR_SIGMA_LIMIT)
            }
            TransformSpec::SaltPepper { fraction } if fraction > 0.0 && fraction < 1.0 => Ok(()),
            TransformSpec::SaltPepper { fraction } => Err(Error::invalid(format!(
                "salt-pepper fraction {fraction} outside (0, 1)"
            ))),
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> AppliedTransform {
        match *self {
            TransformSpec::FlipVertical => AppliedTransform::FlipVertical,
            TransformSpec::FlipHorizontal => AppliedTransform::FlipHorizontal,
            TransformSpec::Brightness { min, max } => AppliedTransform::Brightness {
                delta: rng.random_range(min..=max),
            },
            TransformSpec::Exposure { min, max } => AppliedTransform::Exposure {
                delta: rng.random_range(min..=max),
            },
            TransformSpec::GaussianBlur { min_sigma, max_sigma } => AppliedTransform::GaussianBlur {
                sigma: rng.random_range(min_sigma..=max_sigma),
            },
            TransformSpec::SaltPepper { fraction } => AppliedTransform::SaltPepper {
                fraction,
                seed: rng.random(),
            },
        }
    }
}

/// Seeded augmentation policy: every copy includes each transform
/// independently with `inclusion_probability`, parameters uniform in range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub seed: u64,
    #[serde(default = "default_inclusion")]
    pub inclusion_probability: f64,
    #[serde(default = "default_transforms")]
    pub transforms: Vec<TransformSpec>,
    /// Final sample count per class name, originals included.
    #[serde(default = "default_targets")]
    pub targets: BTreeMap<String, usize>,
}

fn default_inclusion() -> f64 {
    0.5
}

fn default_transforms() -> Vec<TransformSpec> {
    vec![
        TransformSpec::FlipVertical,
        TransformSpec::FlipHorizontal,
        TransformSpec::Brightness {
            min: -BRIGHTNESS_LIMIT,
            max: BRIGHTNESS_LIMIT,
        },
        TransformSpec::Exposure {
            min: -EXPOSURE_LIMIT,
            max: EXPOSURE_LIMIT,
        },
        TransformSpec::GaussianBlur {
            min_sigma: 0.0,
            max_sigma: BLUR_SIGMA_LIMIT,
        },
        TransformSpec::SaltPepper {
            fraction: SALT_PEPPER_FRACTION,
        },
    ]
}

fn default_targets() -> BTreeMap<String, usize> {
    BTreeMap::from([("defective".to_string(), 361), ("normal".to_string(), 177)])
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            inclusion_probability: default_inclusion(),
            transforms: default_transforms(),
            targets: default_targets(),
        }
    }
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.inclusion_probability) {
            return Err(Error::invalid(format!(
                "inclusion probability {} outside [0, 1]",
                self.inclusion_probability
            )));
        }
        if self.transforms.is_empty() {
            return Err(Error::invalid("augmentation needs at least one transform"));
        }
        self.transforms.iter().try_for_each(TransformSpec::validate)
    }

    /// Parameters for the copy generated on `stream`. Never empty: when no
    /// transform passes the inclusion draw, one is picked uniformly.
    pub fn recipe(&self, stream: u64) -> Vec<AppliedTransform> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        let chosen: Vec<&TransformSpec> = self
            .transforms
            .iter()
            .filter(|_| rng.random_bool(self.inclusion_probability))
            .collect();
        let chosen = if chosen.is_empty() {
            vec![&self.transforms[rng.random_range(0..self.transforms.len())]]
        } else {
            chosen
        };
        chosen.into_iter().map(|t| t.sample(&mut rng)).collect()
    }
}

/// Adds augmented copies until every class reaches its target.
///
/// Sources cycle through a class's originals in manifest order; copy `k`
/// (counted across all classes, in class order) uses generator stream `k`.
/// The returned manifest lists all input samples first, then the copies, and
/// shares the input root. Copies are named `<class>/aug_<k>_<source stem>.png`
/// and exist only once [`materialize`] has run.
pub fn expand_dataset(manifest: &DatasetManifest, spec: &AugmentationSpec) -> Result<DatasetManifest> {
    spec.validate()?;
    if manifest.is_empty() {
        return Err(Error::Dataset("cannot augment an empty manifest".into()));
    }
    for class in spec.targets.keys() {
        if manifest.label_of(class).is_none() {
            return Err(Error::Dataset(format!(
                "augmentation target for unknown class '{class}' (classes {:?})",
                manifest.class_names
            )));
        }
    }
    let mut samples = manifest.samples.clone();
    let mut stream = 0u64;
    for (label, class) in manifest.class_names.iter().enumerate() {
        let sources: Vec<&Sample> = manifest
            .samples
            .iter()
            .filter(|s| s.label == label && s.provenance.is_original())
            .collect();
        let have = manifest.samples.iter().filter(|s| s.label == label).count();
        let Some(&target) = spec.targets.get(class) else {
            continue;
        };
        if target < have {
            return Err(Error::Dataset(format!(
                "target {target} for class '{class}' is below its {have} existing samples"
            )));
        }
        if target > have && sources.is_empty() {
            return Err(Error::Dataset(format!(
                "class '{class}' has no original images to augment"
            )));
        }
        for j in 0..target - have {
            let src = sources[j % sources.len()];
            let stem = src.path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
            samples.push(Sample {
                path: PathBuf::from(class).join(format!("aug_{stream:05}_{stem}.png")),
                class: class.clone(),
                label,
                split: Split::Unassigned,
                provenance: Provenance::Augmented {
                    source: src.path.clone(),
                    seed: spec.seed,
                    stream,
                    transforms: spec.recipe(stream),
                },
            });
            stream += 1;
        }
    }
    DatasetManifest::new(manifest.root.clone(), manifest.class_names.clone(), samples)
}

/// Recreates an augmented image from its recorded provenance.
pub fn render_augmented(manifest: &DatasetManifest, sample: &Sample) -> Result<ImageBuffer> {
    match &sample.provenance {
        Provenance::Augmented { source, transforms, .. } => {
            apply_recipe(&ImageBuffer::load(&manifest.root.join(source))?, transforms)
        }
        _ => Err(Error::Dataset(format!(
            "{} is not an augmented sample",
            sample.path.display()
        ))),
    }
}

/// Writes every sample of `manifest` plus `manifest.jsonl` into `out_dir`.
///
/// Originals are copied byte for byte, augmented copies rendered from their
/// provenance. The tree is built in a sibling temporary directory and renamed
/// into place, so a failure leaves no partial output. `out_dir` must not
/// exist. Returns the manifest rooted at `out_dir`.
pub fn materialize(manifest: &DatasetManifest, out_dir: &Path) -> Result<DatasetManifest> {
    if out_dir.exists() {
        return Err(Error::Dataset(format!(
            "output directory {} already exists",
            out_dir.display()
        )));
    }
    let parent = out_dir
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let name = out_dir.file_name().and_then(|n| n.to_str()).unwrap_or("dataset");
    let staging = parent.join(format!(".{name}.partial"));
    if staging.exists() {
        std::fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    let result = write_tree(manifest, &staging);
    if let Err(e) = result {
        let _ = std::fs::remove_dir_all(&staging);
        return Err(e);
    }
    std::fs::rename(&staging, out_dir).map_err(|e| Error::io(out_dir, e))?;
    Ok(DatasetManifest {
        root: out_dir.to_path_buf(),
        ..manifest.clone()
    })
}

fn write_tree(manifest: &DatasetManifest, dir: &Path) -> Result<()> {
    for class in &manifest.class_names {
        let d = dir.join(class);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    manifest.samples.par_iter().try_for_each(|s| {
        let dest = dir.join(&s.path);
        if let Some(p) = dest.parent() {
            std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
        }
        match s.provenance {
            Provenance::Augmented { .. } => render_augmented(manifest, s)?.save_png(&dest),
            _ => {
                let src = manifest.resolve(s);
                std::fs::copy(&src, &dest).map(|_| ()).map_err(|e| Error::io(&src, e))
            }
        }
    })?;
    manifest.write(&dir.join("manifest.jsonl"))
}
