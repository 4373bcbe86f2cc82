//! Line-delimited JSON manifest.
//!
//! One JSON object per line, one line per sample, in sample order:
//!
//! | field        | type            | meaning                                              |
//! |--------------|-----------------|------------------------------------------------------|
//! | `path`       | string          | image path relative to the manifest's directory      |
//! | `class`      | string          | class name                                           |
//! | `label`      | integer         | index of `class` in the sorted class list            |
//! | `split`      | string          | `train`, `valid` or `unassigned`                     |
//! | `provenance` | object          | `{"kind":"original"}`, `{"kind":"synthetic",..}` or `{"kind":"augmented",..}` |
//!
//! An optional first line `{"root": "<dir>"}` redirects path resolution to
//! `<dir>` (relative to the manifest's directory when not absolute). Run
//! directories use it to point back at the dataset they trained on.
//!
//! Augmented provenance carries `source` (path of the original), `seed`,
//! `stream` and `transforms` (the exact applied parameters), enough to replay
//! the image byte for byte.

use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AppliedTransform;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    #[default]
    Unassigned,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Unassigned => "unassigned",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "unassigned" => Ok(Split::Unassigned),
            other => Err(Error::Parse(format!(
                "unknown split '{other}' (train, valid, unassigned)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Original,
    Synthetic {
        seed: u64,
        index: u64,
    },
    Augmented {
        source: PathBuf,
        seed: u64,
        stream: u64,
        transforms: Vec<AppliedTransform>,
    },
}

impl Provenance {
    pub fn is_original(&self) -> bool {
        !matches!(self, Provenance::Augmented { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub path: PathBuf,
    pub class: String,
    pub label: usize,
    #[serde(default)]
    pub split: Split,
    pub provenance: Provenance,
}

/// Samples plus the directory their relative paths resolve against.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    /// Sorted; the label of a class is its index here.
    pub class_names: Vec<String>,
    pub samples: Vec<Sample>,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, class_names: Vec<String>, samples: Vec<Sample>) -> Result<Self> {
        let m = Self {
            root: root.into(),
            class_names,
            samples,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_names.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Dataset(format!(
                "class names must be sorted and distinct, got {:?}",
                self.class_names
            )));
        }
        for s in &self.samples {
            if self.class_names.get(s.label) != Some(&s.class) {
                return Err(Error::Dataset(format!(
                    "sample {} has label {} but class '{}' (classes {:?})",
                    s.path.display(),
                    s.label,
                    s.class,
                    self.class_names
                )));
            }
            if s.path.is_absolute() {
                return Err(Error::Dataset(format!(
                    "sample path {} must be relative to the dataset root",
                    s.path.display()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn resolve(&self, sample: &Sample) -> PathBuf {
        self.root.join(&sample.path)
    }

    pub fn label_of(&self, class: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == class)
    }

    /// Samples per label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    pub fn split_counts(&self, split: Split) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for s in self.samples.iter().filter(|s| s.split == split) {
            counts[s.label] += 1;
        }
        counts
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len())
            .filter(|&i| self.samples[i].split == split)
            .collect()
    }

    /// A manifest holding only the samples of `split`, same root and classes.
    pub fn subset(&self, split: Split) -> Self {
        Self {
            root: self.root.clone(),
            class_names: self.class_names.clone(),
            samples: self.samples.iter().filter(|s| s.split == split).cloned().collect(),
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            out.push_str(&serde_json::to_string(s).expect("sample serializes"));
            out.push('\n');
        }
        out
    }

    /// [`Self::to_jsonl`] preceded by a root line holding the absolute
    /// dataset root, so the text can be stored away from the images.
    pub fn to_jsonl_rooted(&self) -> String {
        let root = std::fs::canonicalize(&self.root).unwrap_or_else(|_| self.root.clone());
        let line = serde_json::to_string(&RootLine { root }).expect("root line serializes");
        format!("{line}\n{}", self.to_jsonl())
    }

    /// Parses manifest lines; blank lines are ignored. Class names are the
    /// sorted distinct classes of the samples.
    pub fn from_jsonl(root: impl Into<PathBuf>, text: &str) -> Result<Self> {
        Self::from_reader(root, text.as_bytes())
    }

    fn from_reader(root: impl Into<PathBuf>, reader: impl std::io::Read) -> Result<Self> {
        let mut root: PathBuf = root.into();
        let mut samples = Vec::new();
        let mut first = true;
        for (n, line) in BufReader::new(reader).lines().enumerate() {
            let line = line.map_err(|e| Error::Parse(format!("manifest line {}: {e}", n + 1)))?;
            if line.trim().is_empty() {
                continue;
            }
            if std::mem::take(&mut first) {
                if let Ok(r) = serde_json::from_str::<RootLine>(&line) {
                    root = root.join(r.root);
                    continue;
                }
            }
            let s: Sample =
                serde_json::from_str(&line).map_err(|e| Error::Parse(format!("manifest line {}: {e}", n + 1)))?;
            samples.push(s);
        }
        let mut class_names: Vec<String> = samples.iter().map(|s| s.class.clone()).collect();
        class_names.sort();
        class_names.dedup();
        Self::new(root, class_names, samples)
    }

    /// Reads a manifest whose paths are relative to the file's directory.
    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_reader(root, file).map_err(|e| match e {
            Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(self.to_jsonl().as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RootLine {
    root: PathBuf,
}
