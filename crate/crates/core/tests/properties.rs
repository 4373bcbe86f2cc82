//! Property tests for the kernel, augmentation, metric and split invariants.

use std::path::PathBuf;

use proptest::prelude::*;
use pvfaultnet::augment::{flip_horizontal, flip_vertical, ImageBuffer};
use pvfaultnet::dataset::{split_train_valid, stratified_quotas, DatasetManifest, Provenance, Sample, Split};
use pvfaultnet::metrics::{f1_score, ConfusionMatrix};
use pvfaultnet::ops::{conv2d, maxpool2, maxpool2_grad, softmax, ConvKernel};
use pvfaultnet::Tensor;

fn tensor(shape: [usize; 3]) -> impl Strategy<Value = Tensor<f64>> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-4.0f64..4.0, n).prop_map(move |d| Tensor::new(shape.to_vec(), d).unwrap())
}

fn shaped(max_c: usize, min_hw: usize, max_hw: usize) -> impl Strategy<Value = Tensor<f64>> {
    (1..=max_c, min_hw..=max_hw, min_hw..=max_hw).prop_flat_map(|(c, h, w)| tensor([c, h, w]))
}

fn image() -> impl Strategy<Value = ImageBuffer> {
    (1usize..=9, 1usize..=9).prop_flat_map(|(w, h)| {
        prop::collection::vec(any::<u8>(), w * h * 3).prop_map(move |d| ImageBuffer::new(w, h, d).unwrap())
    })
}

/// `[C, H, W]` with columns reversed.
fn mirror(t: &Tensor<f64>) -> Tensor<f64> {
    let [c, h, w] = t.shape().try_into().unwrap();
    let mut out = Tensor::zeros(t.shape());
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out.set(&[ch, y, w - 1 - x], t.get(&[ch, y, x]).unwrap()).unwrap();
            }
        }
    }
    out
}

/// Drops the first `dy` rows and `dx` columns.
fn crop(t: &Tensor<f64>, dy: usize, dx: usize) -> Tensor<f64> {
    let [c, h, w] = t.shape().try_into().unwrap();
    let mut data = Vec::with_capacity(c * (h - dy) * (w - dx));
    for ch in 0..c {
        for y in dy..h {
            for x in dx..w {
                data.push(t.get(&[ch, y, x]).unwrap());
            }
        }
    }
    Tensor::new(vec![c, h - dy, w - dx], data).unwrap()
}

fn sorted(mut v: Vec<u8>) -> Vec<u8> {
    v.sort_unstable();
    v
}

fn manifest(counts: &[usize]) -> DatasetManifest {
    let names: Vec<String> = (0..counts.len()).map(|i| format!("c{i}")).collect();
    let samples = counts
        .iter()
        .enumerate()
        .flat_map(|(label, &n)| {
            let class = names[label].clone();
            (0..n).map(move |i| Sample {
                path: PathBuf::from(format!("{class}/{i}.png")),
                class: class.clone(),
                label,
                split: Split::Unassigned,
                provenance: Provenance::Original,
            })
        })
        .collect();
    DatasetManifest::new("/data", names, samples).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn pooling_routes_all_gradient_mass(x in shaped(3, 2, 9), seed in any::<u64>()) {
        let (y, idx) = maxpool2(&x).unwrap();
        let up: Vec<f64> = (0..y.len()).map(|i| ((seed.wrapping_add(i as u64) % 17) as f64) - 8.0).collect();
        let up = Tensor::new(y.shape().to_vec(), up).unwrap();
        let g = maxpool2_grad(&idx, &up).unwrap();
        prop_assert!((g.sum() - up.sum()).abs() < 1e-9);
        // every output is the input value its recorded index points at
        for (o, &i) in y.data().iter().zip(&idx.argmax) {
            prop_assert_eq!(*o, x.data()[i]);
        }
    }

    #[test]
    fn pooling_is_equivariant_to_stride_two_shifts(x in shaped(2, 4, 10)) {
        let shifted = maxpool2(&crop(&x, 2, 2)).unwrap().0;
        let pooled = maxpool2(&x).unwrap().0;
        let expected = crop(&pooled, 1, 1);
        prop_assert_eq!(shifted.data(), expected.data());
    }

    #[test]
    fn pooling_commutes_with_mirroring_on_even_widths(c in 1usize..3, h in 2usize..9, half in 1usize..5, seed in any::<u64>()) {
        let w = 2 * half;
        let data: Vec<f64> = (0..c * h * w).map(|i| (seed.wrapping_mul(i as u64 + 1) % 1009) as f64).collect();
        let x = Tensor::new(vec![c, h, w], data).unwrap();
        let a = maxpool2(&mirror(&x)).unwrap().0;
        let b = mirror(&maxpool2(&x).unwrap().0);
        prop_assert_eq!(a.data(), b.data());
    }

    #[test]
    fn conv_commutes_with_mirroring(x in shaped(2, 3, 8), k in tensor([1, 3, 3])) {
        // a mirrored input convolved with a mirrored kernel is the mirrored output
        let c = x.shape()[0];
        let weights: Vec<f64> = (0..c).flat_map(|_| k.data().to_vec()).collect();
        let kern = |w: Vec<f64>| ConvKernel { weights: Tensor::new(vec![1, c, 3, 3], w).unwrap(), bias: Tensor::full(&[1], 0.25), stride: 1, padding: 1 };
        let flipped: Vec<f64> = weights.chunks(3).flat_map(|r| r.iter().rev().copied().collect::<Vec<_>>()).collect();
        let a = conv2d(&mirror(&x), &kern(flipped)).unwrap();
        let b = mirror(&conv2d(&x, &kern(weights)).unwrap());
        for (p, q) in a.data().iter().zip(b.data()) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn flips_are_involutive_permutations(img in image()) {
        for flip in [flip_horizontal, flip_vertical] {
            let once = flip(&img);
            prop_assert_eq!(&flip(&once), &img);
            prop_assert_eq!(sorted(once.data().to_vec()), sorted(img.data().to_vec()));
        }
        let (w, h) = (img.width(), img.height());
        let fh = flip_horizontal(&img);
        let fv = flip_vertical(&img);
        prop_assert_eq!(fh.pixel(0, 0), img.pixel(w - 1, 0));
        prop_assert_eq!(fv.pixel(0, 0), img.pixel(0, h - 1));
        // the two flips commute
        prop_assert_eq!(flip_vertical(&fh), flip_horizontal(&fv));
    }

    #[test]
    fn f1_lies_between_precision_and_recall(tp in 0u64..50, fn_ in 0u64..50, fp in 0u64..50, tn in 0u64..50) {
        let cm = ConfusionMatrix { counts: [[tp, fn_], [fp, tn]] };
        let (p, r, f) = (cm.precision(), cm.recall(), cm.f1());
        prop_assert!((0.0..=1.0).contains(&f.value));
        if !p.undefined && !r.undefined && tp > 0 {
            prop_assert!(f.value >= p.value.min(r.value) - 1e-12);
            prop_assert!(f.value <= p.value.max(r.value) + 1e-12);
            prop_assert!((f.value - f1_score(p.value, r.value)).abs() < 1e-12);
        }
    }

    #[test]
    fn accuracy_ignores_which_class_is_positive(tp in 0u64..50, fn_ in 0u64..50, fp in 0u64..50, tn in 0u64..50) {
        let cm = ConfusionMatrix { counts: [[tp, fn_], [fp, tn]] };
        let t = cm.transposed_labels();
        prop_assert_eq!(cm.accuracy(), t.accuracy());
        prop_assert_eq!(t.tp(), cm.tn());
        prop_assert_eq!(t.transposed_labels(), cm);
    }

    #[test]
    fn split_partitions_and_stratifies(a in 1usize..60, b in 1usize..60, frac in 0.05f64..0.95, seed in any::<u64>()) {
        let m = manifest(&[a, b]);
        let valid = ((a + b) as f64 * frac).round().clamp(1.0, (a + b - 1) as f64) as usize;
        let s = split_train_valid(&m, valid, seed, false).unwrap();
        prop_assert_eq!(s.samples.len(), a + b);
        prop_assert!(s.samples.iter().all(|x| x.split != Split::Unassigned));
        prop_assert_eq!(s.indices(Split::Valid).len(), valid);
        prop_assert_eq!(s.split_counts(Split::Valid), stratified_quotas(&[a, b], valid));
        let quotas = stratified_quotas(&[a, b], valid);
        for (q, n) in quotas.iter().zip([a, b]) {
            // largest remainder never strays a whole sample from the exact share
            let exact = valid as f64 * n as f64 / (a + b) as f64;
            prop_assert!((*q as f64 - exact).abs() < 1.0);
        }
        // same seed, same split
        prop_assert_eq!(split_train_valid(&m, valid, seed, false).unwrap(), s);
    }

    #[test]
    fn softmax_is_a_shift_invariant_distribution(logits in prop::collection::vec(-50.0f64..50.0, 1..8), shift in -100.0f64..100.0) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
        for (a, b) in p.iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
