use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, Split};
use crate::augment::{ImageBuffer, CHANNELS};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Images `[B, 3, S, S]` scaled to `[0, 1]`, with their labels and manifest
/// indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Map from 8-bit pixel values to network inputs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputScaling {
    /// `v / 255`, in `[0, 1]`.
    UnitRange,
    /// `v / 255 - 0.5`, in `[-0.5, 0.5]`.
    #[default]
    Centered,
}

impl InputScaling {
    pub fn offset(self) -> f32 {
        match self {
            InputScaling::UnitRange => 0.0,
            InputScaling::Centered => 0.5,
        }
    }

    /// Resizes `img` to `side x side` and writes scaled `[3, S, S]` planes.
    pub fn prepare(self, img: &ImageBuffer, side: usize) -> Vec<f32> {
        let img = img.resize_bilinear(side, side);
        let mut out = vec![0.0; CHANNELS * side * side];
        img.write_chw(&mut out);
        let offset = self.offset();
        if offset != 0.0 {
            out.iter_mut().for_each(|v| *v -= offset);
        }
        out
    }

    pub fn name(self) -> &'static str {
        match self {
            InputScaling::UnitRange => "unit_range",
            InputScaling::Centered => "centered",
        }
    }
}

impl fmt::Display for InputScaling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InputScaling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit_range" => Ok(InputScaling::UnitRange),
            "centered" => Ok(InputScaling::Centered),
            other => Err(Error::Parse(format!(
                "unknown input scaling '{other}' (unit_range, centered)"
            ))),
        }
    }
}

/// Decodes manifest images into `side x side` input planes: bilinear resize,
/// then [`InputScaling`]. Optionally holds every decoded sample in memory.
#[derive(Debug)]
pub struct ImageStore {
    manifest: DatasetManifest,
    side: usize,
    scaling: InputScaling,
    cache: Option<Vec<Vec<f32>>>,
}

impl ImageStore {
    pub fn new(manifest: DatasetManifest, side: usize, scaling: InputScaling) -> Result<Self> {
        if side == 0 {
            return Err(Error::invalid("input side must be positive"));
        }
        Ok(Self {
            manifest,
            side,
            scaling,
            cache: None,
        })
    }

    /// Decodes everything up front, failing on the first undecodable image.
    pub fn preloaded(manifest: DatasetManifest, side: usize, scaling: InputScaling) -> Result<Self> {
        let mut store = Self::new(manifest, side, scaling)?;
        let cache = (0..store.manifest.len())
            .into_par_iter()
            .map(|i| store.decode(i))
            .collect::<Result<Vec<_>>>()?;
        store.cache = Some(cache);
        Ok(store)
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn scaling(&self) -> InputScaling {
        self.scaling
    }

    pub fn sample_len(&self) -> usize {
        CHANNELS * self.side * self.side
    }

    fn decode(&self, index: usize) -> Result<Vec<f32>> {
        let path = self.manifest.resolve(&self.manifest.samples[index]);
        Ok(self.scaling.prepare(&ImageBuffer::load(&path)?, self.side))
    }

    /// Input planes `[3, S, S]` of one sample.
    pub fn sample(&self, index: usize) -> Result<Tensor<f32>> {
        let data = match &self.cache {
            Some(c) => c[index].clone(),
            None => self.decode(index)?,
        };
        Tensor::new(vec![CHANNELS, self.side, self.side], data)
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        if indices.is_empty() {
            return Err(Error::invalid("a batch needs at least one sample"));
        }
        let per = self.sample_len();
        let mut data = vec![0.0f32; per * indices.len()];
        data.par_chunks_mut(per)
            .zip(indices)
            .try_for_each(|(dst, &i)| -> Result<()> {
                match &self.cache {
                    Some(c) => dst.copy_from_slice(&c[i]),
                    None => dst.copy_from_slice(&self.decode(i)?),
                }
                Ok(())
            })?;
        Ok(Batch {
            images: Tensor::new(vec![indices.len(), CHANNELS, self.side, self.side], data)?,
            labels: indices.iter().map(|&i| self.manifest.samples[i].label).collect(),
            indices: indices.to_vec(),
        })
    }
}

/// Manifest indices of `split`, shuffled by `(seed, epoch)` and cut into
/// batches of `batch_size`; the last batch may be short.
pub fn epoch_order(
    manifest: &DatasetManifest,
    split: Split,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut idx = manifest.indices(split);
    if idx.is_empty() {
        return Err(Error::Dataset(format!("split '{split}' is empty")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    idx.shuffle(&mut rng);
    Ok(idx.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Unshuffled batches of `split` in manifest order.
pub fn sequential_order(manifest: &DatasetManifest, split: Split, batch_size: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let idx = manifest.indices(split);
    Ok(idx.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Lazily decoded batches of one epoch.
pub fn batches<'a>(
    store: &'a ImageStore,
    split: Split,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<impl Iterator<Item = Result<Batch>> + 'a> {
    let order = epoch_order(store.manifest(), split, batch_size, seed, epoch)?;
    Ok(order.into_iter().map(move |ix| store.batch(&ix)))
}
