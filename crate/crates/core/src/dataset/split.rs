use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{DatasetManifest, Provenance, Split};
use crate::error::{Error, Result};

pub const DEFAULT_VALID_COUNT: usize = 48;

/// Per-class validation quotas summing to `valid_count`, proportional to
/// `counts` by largest remainder (ties go to the lower label).
pub fn stratified_quotas(counts: &[usize], valid_count: usize) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return vec![0; counts.len()];
    }
    let mut quotas: Vec<usize> = counts.iter().map(|&n| n * valid_count / total).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    // remainder numerators share the denominator `total`
    order.sort_by_key(|&c| std::cmp::Reverse(counts[c] * valid_count % total));
    let short = valid_count - quotas.iter().sum::<usize>();
    for &c in order.iter().take(short) {
        quotas[c] += 1;
    }
    quotas
}

/// Assigns `valid_count` samples to validation, stratified by class, and the
/// rest to training.
///
/// With `originals_only`, validation is drawn from original samples alone and
/// augmented copies of a validation image are left unassigned, so no variant
/// of a validation image is trained on.
pub fn split_train_valid(
    manifest: &DatasetManifest,
    valid_count: usize,
    seed: u64,
    originals_only: bool,
) -> Result<DatasetManifest> {
    let total = manifest.len();
    if valid_count == 0 || valid_count >= total {
        return Err(Error::Dataset(format!(
            "validation size {valid_count} must lie in 1..{total} for {total} samples"
        )));
    }
    let eligible = |i: usize| !originals_only || manifest.samples[i].provenance.is_original();
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); manifest.class_names.len()];
    for i in (0..total).filter(|&i| eligible(i)) {
        pools[manifest.samples[i].label].push(i);
    }
    let available: usize = pools.iter().map(Vec::len).sum();
    if valid_count > available {
        return Err(Error::Dataset(format!(
            "validation size {valid_count} exceeds the {available} eligible samples"
        )));
    }
    let quotas = stratified_quotas(&pools.iter().map(Vec::len).collect::<Vec<_>>(), valid_count);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = manifest.clone();
    for s in &mut out.samples {
        s.split = Split::Train;
    }
    for (pool, quota) in pools.iter_mut().zip(quotas) {
        pool.shuffle(&mut rng);
        for &i in &pool[..quota] {
            out.samples[i].split = Split::Valid;
        }
    }
    if originals_only {
        let held_out: HashSet<_> = out
            .samples
            .iter()
            .filter(|s| s.split == Split::Valid)
            .map(|s| s.path.clone())
            .collect();
        for s in &mut out.samples {
            if let Provenance::Augmented { source, .. } = &s.provenance {
                if held_out.contains(source) {
                    s.split = Split::Unassigned;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::path::PathBuf;

    use super::*;
    use crate::dataset::Sample;

    fn fixture(counts: &[usize]) -> DatasetManifest {
        let names: Vec<String> = (0..counts.len()).map(|c| format!("c{c}")).collect();
        let mut samples = Vec::new();
        for (label, &n) in counts.iter().enumerate() {
            for i in 0..n {
                samples.push(Sample {
                    path: PathBuf::from(format!("c{label}/{i}.png")),
                    class: names[label].clone(),
                    label,
                    split: Split::Unassigned,
                    provenance: Provenance::Original,
                });
            }
        }
        DatasetManifest::new("r", names, samples).unwrap()
    }

    #[test]
    fn quotas_follow_largest_remainder() {
        assert_eq!(stratified_quotas(&[361, 177], 48), vec![32, 16]);
        assert_eq!(stratified_quotas(&[1, 1], 1), vec![1, 0]);
        assert_eq!(stratified_quotas(&[5, 5], 10), vec![5, 5]);
    }

    #[test]
    fn default_split_of_expanded_set() {
        let m = split_train_valid(&fixture(&[361, 177]), DEFAULT_VALID_COUNT, 9, false).unwrap();
        assert_eq!(m.indices(Split::Valid).len(), 48);
        assert_eq!(m.indices(Split::Train).len(), 490);
        assert_eq!(m.split_counts(Split::Valid), vec![32, 16]);
    }

    #[test]
    fn boundary_and_infeasible_sizes() {
        let m = fixture(&[3, 2]);
        let s = split_train_valid(&m, 4, 0, false).unwrap();
        assert_eq!(s.indices(Split::Train).len(), 1);
        assert!(split_train_valid(&m, 5, 0, false).is_err());
        assert!(split_train_valid(&m, 0, 0, false).is_err());
    }

    #[test]
    fn same_seed_same_split() {
        let m = fixture(&[40, 20]);
        let a = split_train_valid(&m, 12, 5, false).unwrap();
        assert_eq!(a, split_train_valid(&m, 12, 5, false).unwrap());
        assert_ne!(a, split_train_valid(&m, 12, 6, false).unwrap());
    }

    #[test]
    fn originals_only_keeps_copies_of_validation_images_out_of_training() {
        let mut m = fixture(&[4, 4]);
        let copies: Vec<Sample> = m
            .samples
            .iter()
            .map(|s| Sample {
                path: PathBuf::from(format!("{}.aug.png", s.path.display())),
                provenance: Provenance::Augmented {
                    source: s.path.clone(),
                    seed: 0,
                    stream: 0,
                    transforms: vec![],
                },
                ..s.clone()
            })
            .collect();
        m.samples.extend(copies);
        let s = split_train_valid(&m, 4, 1, true).unwrap();
        let valid: Vec<_> = s.samples.iter().filter(|x| x.split == Split::Valid).collect();
        assert_eq!(valid.len(), 4);
        assert!(valid.iter().all(|x| x.provenance.is_original()));
        assert_eq!(s.indices(Split::Unassigned).len(), 4);
        assert_eq!(s.indices(Split::Train).len(), 8);
    }
}
