//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs without the libtest harness so the lines stay readable.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::naive::{naive_conv, random_case, Case};
use common::{gradcheck, rng};
use pvfaultnet::augment::{
    expand_dataset, flip_horizontal, flip_vertical, salt_pepper, salt_pepper_count, AugmentationSpec, ImageBuffer,
    SALT_PEPPER_FRACTION,
};
use pvfaultnet::dataset::{split_train_valid, DatasetManifest, ImageStore, InputScaling, Split};
use pvfaultnet::metrics::f1_score;
use pvfaultnet::model::{audit_against_published, build_pvfaultnet, shape_propagate, Checkpoint, Network, Shape};
use pvfaultnet::ops::conv2d_batch;
use pvfaultnet::synth::write_synthetic;
use pvfaultnet::trainer::{train_with, TrainConfig, Variant};
use pvfaultnet::Tensor;
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn all_train(mut m: DatasetManifest) -> DatasetManifest {
    for s in &mut m.samples {
        s.split = Split::Train;
    }
    m
}

fn parameter_audit() -> Outcome {
    let start = Instant::now();
    let a = audit_against_published(&build_pvfaultnet(224).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let counts: BTreeMap<&str, usize> = a.audit.rows.iter().map(|r| (r.label.as_str(), r.parameters)).collect();
    let want = [
        ("Convolution-01", 140),
        ("Convolution-02", 460),
        ("FC-01", 2_916_100),
        ("FC-02", 5_050),
        ("Output", 102),
    ];
    for (label, n) in want {
        ensure(counts.get(label) == Some(&n), || {
            format!("{label}: {:?}, expected {n}", counts.get(label))
        })?;
    }
    ensure(a.audit.total == 2_921_852, || format!("total {}", a.audit.total))?;
    ensure(a.all_match(), || "224 audit reports a mismatch".into())?;
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;

    let b = audit_against_published(&build_pvfaultnet(300).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let flagged: Vec<_> = b.mismatches().map(|c| (c.label.clone(), c.computed)).collect();
    ensure(flagged == [("FC-01".to_string(), 5_329_100)], || {
        format!("300 mismatches {flagged:?}")
    })?;
    Ok(format!(
        "total 2,921,852 in {elapsed:?}; 300 input flags FC-01 = 5,329,100"
    ))
}

fn shapes_at_300() -> Outcome {
    let shapes = shape_propagate(&build_pvfaultnet(300).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let spatial: Vec<(usize, usize)> = shapes
        .iter()
        .filter_map(|s| match *s {
            Shape::Map { channels, height, .. } if channels != 3 => Some((channels, height)),
            _ => None,
        })
        .collect();
    ensure(spatial == [(5, 298), (5, 149), (10, 147), (10, 73)], || {
        format!("{spatial:?}")
    })?;
    ensure(shapes.contains(&Shape::Flat(53_290)), || "flatten is not 53,290".into())?;
    Ok("298 -> 149 -> 147 -> 73, flatten 53,290".into())
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let mut worst = [0.0f64; 2];
    for (slot, (checks, tol)) in [
        (&gradcheck::LAYER_CHECKS[..], 1e-4),
        (&gradcheck::NETWORK_CHECKS[..], 1e-3),
    ]
    .into_iter()
    .enumerate()
    {
        for check in checks {
            let mut errs = Vec::new();
            check(&mut errs);
            ensure(!errs.is_empty(), || "a check produced no measurements".into())?;
            for (name, e) in errs {
                ensure(e < tol, || format!("{name}: relative error {e:e} >= {tol:e}"))?;
                worst[slot] = worst[slot].max(e);
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "worst layer {:.1e}, worst network {:.1e}, {elapsed:.1?}",
        worst[0], worst[1]
    ))
}

fn conv_oracle() -> Outcome {
    let mut r = rng(2024);
    for case in 0..1000 {
        let Case { x, kernel } = random_case(&mut r);
        let got = conv2d_batch(&x, &kernel).map_err(|e| e.to_string())?;
        let want = naive_conv(&x, &kernel);
        ensure(got.shape() == want.shape() && got.data() == want.data(), || {
            format!("case {case} differs")
        })?;
    }
    Ok("1000 random cases bit-identical".into())
}

fn augmentation() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    // 153 defective and 75 normal originals
    let mut fixture = write_synthetic(&dir.path().join("d"), 16, 153, 1).map_err(|e| e.to_string())?;
    let mut normals = 0;
    fixture.samples.retain(|s| {
        normals += usize::from(s.class == "normal");
        s.class == "defective" || normals <= 75
    });
    ensure(fixture.class_counts() == [153, 75], || {
        format!("fixture {:?}", fixture.class_counts())
    })?;
    let expanded = expand_dataset(&fixture, &AugmentationSpec::default()).map_err(|e| e.to_string())?;
    let counts = expanded.class_counts();
    ensure(counts == [361, 177], || format!("expanded to {counts:?}"))?;

    let (w, h) = (37, 23);
    let grey = ImageBuffer::filled(w, h, [128; 3]);
    let want = (SALT_PEPPER_FRACTION * (w * h) as f64).round() as usize;
    ensure(salt_pepper_count(w, h, SALT_PEPPER_FRACTION) == want, || {
        "count formula".into()
    })?;
    for seed in 0..20 {
        let noisy = salt_pepper(&grey, SALT_PEPPER_FRACTION, seed).map_err(|e| e.to_string())?;
        let changed = noisy.data().chunks(3).filter(|p| p[0] != 128).count();
        ensure(changed == want, || {
            format!("seed {seed}: {changed} noisy pixels, expected {want}")
        })?;
    }

    let mut r = rng(5);
    for i in 0..1000 {
        let (w, h) = (r.random_range(1..=12), r.random_range(1..=12));
        let data = (0..w * h * 3).map(|_| r.random::<u8>()).collect();
        let img = ImageBuffer::new(w, h, data).map_err(|e| e.to_string())?;
        ensure(flip_horizontal(&flip_horizontal(&img)) == img, || {
            format!("image {i}: horizontal")
        })?;
        ensure(flip_vertical(&flip_vertical(&img)) == img, || {
            format!("image {i}: vertical")
        })?;
    }
    Ok(format!(
        "153/75 -> 361/177 (538); salt-pepper {want} of {} pixels; 1000 flip round trips",
        w * h
    ))
}

fn f1_fixtures() -> Outcome {
    let mut got = Vec::new();
    for (p, r, want) in [
        (75.0, 100.0, 86.0),
        (93.0, 78.0, 85.0),
        (89.0, 89.0, 89.0),
        (91.0, 89.0, 90.0),
    ] {
        let f = 100.0 * f1_score(p / 100.0, r / 100.0);
        ensure((f - want).abs() <= 0.5, || {
            format!("P {p} R {r}: F1 {f:.2}, expected {want}")
        })?;
        got.push(format!("{f:.2}"));
    }
    Ok(format!("F1 {}", got.join(", ")))
}

fn overfit_tiny_set() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let m = write_synthetic(&dir.path().join("data"), 224, 16, 0).map_err(|e| e.to_string())?;
    let store = ImageStore::preloaded(all_train(m), 224, InputScaling::Centered).map_err(|e| e.to_string())?;
    let cfg = TrainConfig::default();
    let mut first_perfect = None;
    train_with(&cfg, &store, None, |r| {
        if r.train_accuracy == 1.0 && first_perfect.is_none() {
            first_perfect = Some(r.epoch);
        }
    })
    .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let epoch = first_perfect.ok_or("train accuracy never reached 1.0 in 50 epochs")?;
    ensure(elapsed < Duration::from_secs(600), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "32 images at 224, train accuracy 1.00 at epoch {epoch}, {elapsed:.1?}"
    ))
}

fn synthetic_generalization() -> Outcome {
    let side = 64;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let m = write_synthetic(&dir.path().join("data"), side, 224, 0).map_err(|e| e.to_string())?;
    let m = split_train_valid(&m, 48, 0, false).map_err(|e| e.to_string())?;
    let store = ImageStore::preloaded(m, side, InputScaling::Centered).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        input_side: side,
        ..Default::default()
    };
    let out = train_with(&cfg, &store, None, |_| {}).map_err(|e| e.to_string())?;
    let best = out
        .record
        .reports
        .iter()
        .max_by(|a, b| a.valid_accuracy.total_cmp(&b.valid_accuracy))
        .unwrap();
    ensure(best.valid_accuracy >= 0.90, || {
        format!("best valid accuracy {:.3}", best.valid_accuracy)
    })?;
    Ok(format!(
        "400 train / 48 valid at {side}px, best valid accuracy {:.3} at epoch {}",
        best.valid_accuracy, best.epoch
    ))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let m = write_synthetic(&dir.path().join("data"), 16, 8, 4).map_err(|e| e.to_string())?;
    let m = split_train_valid(&m, 4, 4, false).map_err(|e| e.to_string())?;
    let store = ImageStore::preloaded(m, 16, InputScaling::Centered).map_err(|e| e.to_string())?;
    let run = |name: &str| -> Result<(Vec<u64>, Vec<u8>), String> {
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 5,
            input_side: 16,
            variant: Variant::BatchnormDropout25,
            seed: 11,
            ..Default::default()
        };
        let out = train_with(&cfg, &store, Some(&dir.path().join(name)), |_| {}).map_err(|e| e.to_string())?;
        let path = out.record.final_checkpoint.as_ref().ok_or("no final checkpoint")?;
        let bytes = std::fs::read(path).map_err(|e| e.to_string())?;
        ensure(
            Checkpoint::from_bytes(&bytes).map_err(|e| e.to_string())? == out.checkpoint,
            || "checkpoint does not round-trip".into(),
        )?;
        Ok((out.record.losses().iter().map(|l| l.to_bits()).collect(), bytes))
    };
    let (la, ca) = run("a")?;
    let (lb, cb) = run("b")?;
    ensure(la == lb, || "loss curves differ".into())?;
    ensure(ca == cb, || "checkpoint bytes differ".into())?;
    Ok(format!(
        "{} losses and {} checkpoint bytes identical across runs",
        la.len(),
        ca.len()
    ))
}

fn forward_latency() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| e.to_string())?;
    pool.install(|| {
        let net: Network<f32> =
            Network::new(&build_pvfaultnet(224).map_err(|e| e.to_string())?, 0).map_err(|e| e.to_string())?;
        let mut r = rng(3);
        let data = (0..3 * 224 * 224).map(|_| r.random_range(-0.5f32..0.5)).collect();
        let x = Tensor::new(vec![1, 3, 224, 224], data).map_err(|e| e.to_string())?;
        for _ in 0..3 {
            net.predict(&x).map_err(|e| e.to_string())?;
        }
        let mut times: Vec<Duration> = (0..11)
            .map(|_| {
                let t = Instant::now();
                net.predict(&x).map(|_| t.elapsed()).map_err(|e| e.to_string())
            })
            .collect::<Result<_, _>>()?;
        times.sort();
        let median = times[times.len() / 2];
        ensure(median < Duration::from_millis(100), || format!("median {median:?}"))?;
        Ok(format!(
            "median single-image forward at 224 on one thread: {median:.2?}"
        ))
    })
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("parameter audit", parameter_audit),
        ("shapes at 300", shapes_at_300),
        ("gradient checks", gradient_checks),
        ("convolution oracle", conv_oracle),
        ("augmentation", augmentation),
        ("F1 fixtures", f1_fixtures),
        ("overfit 32 images", overfit_tiny_set),
        ("synthetic generalization", synthetic_generalization),
        ("determinism", determinism),
        ("forward latency", forward_latency),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("criterion {} [{name}]: PASS ({detail})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} [{name}]: FAIL ({detail})", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
