//! Class-foldered datasets: manifests, splitting and batching.

mod batch;
mod loader;
mod manifest;
mod split;

pub use batch::{batches, epoch_order, sequential_order, Batch, ImageStore, InputScaling};
pub use loader::{load_directory, open_dataset, IMAGE_EXTENSIONS, MANIFEST_FILE};
pub use manifest::{DatasetManifest, Provenance, Sample, Split};
pub use split::{split_train_valid, stratified_quotas, DEFAULT_VALID_COUNT};
