use std::path::{Path, PathBuf};

use super::manifest::{DatasetManifest, Provenance, Sample, Split};
use crate::error::{Error, Result};

pub const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Name of the manifest file a materialized dataset directory carries.
pub const MANIFEST_FILE: &str = "manifest.jsonl";

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

fn is_hidden(p: &Path) -> bool {
    p.file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.starts_with('.'))
}

/// Scans `root/<class>/*.{png,jpg,jpeg}` into a manifest with sorted class
/// names and sorted paths. Exactly two class directories are expected.
/// Files with other extensions are skipped with a warning.
pub fn load_directory(root: &Path) -> Result<DatasetManifest> {
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?
        .into_iter()
        .filter(|p| p.is_dir() && !is_hidden(p))
        .collect();
    let class_names: Vec<String> = class_dirs
        .iter()
        .map(|p| p.file_name().and_then(|n| n.to_str()).map(str::to_owned))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::Dataset(format!("non-UTF-8 class directory under {}", root.display())))?;
    if class_names.len() != 2 {
        return Err(Error::Dataset(format!(
            "{} must contain exactly two class directories, found {:?}",
            root.display(),
            class_names
        )));
    }
    let mut samples = Vec::new();
    for (label, (dir, class)) in class_dirs.iter().zip(&class_names).enumerate() {
        let before = samples.len();
        for path in sorted_entries(dir)? {
            if !path.is_file() || is_hidden(&path) {
                continue;
            }
            let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
            if !ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
                log::warn!("skipping {}: not a png or jpeg file", path.display());
                continue;
            }
            samples.push(Sample {
                path: path.strip_prefix(root).expect("entry lies under root").to_path_buf(),
                class: class.clone(),
                label,
                split: Split::Unassigned,
                provenance: Provenance::Original,
            });
        }
        if samples.len() == before {
            return Err(Error::Dataset(format!(
                "class '{class}' in {} has no images",
                dir.display()
            )));
        }
    }
    DatasetManifest::new(root, class_names, samples)
}

/// Opens a manifest file, a directory holding [`MANIFEST_FILE`], or a bare
/// class-foldered directory.
pub fn open_dataset(path: &Path) -> Result<DatasetManifest> {
    if path.is_file() {
        return DatasetManifest::read(path);
    }
    let manifest = path.join(MANIFEST_FILE);
    if manifest.is_file() {
        DatasetManifest::read(&manifest)
    } else {
        load_directory(path)
    }
}
