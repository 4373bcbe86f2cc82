//! Deterministic training loop, evaluation and run directories.
//!
//! A run directory holds:
//!
//! ```text
//! config.toml          training configuration echo
//! architecture.toml    layer list actually trained
//! manifest.jsonl       dataset manifest with the split used, rooted at the dataset
//! metrics.log          one key=value line per epoch
//! metrics.csv          the same reports as CSV
//! checkpoints/         last.ckpt (updated every epoch), epoch_NNN.ckpt, final.ckpt
//! run.json             RunRecord: config, reports, final checkpoint, environment
//! ```

mod config;

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{DecayMode, TrainConfig, Variant};

use crate::augment::{ImageBuffer, CHANNELS};
use crate::dataset::{epoch_order, sequential_order, DatasetManifest, ImageStore, InputScaling, Split};
use crate::error::{Error, Result};
use crate::metrics::{write_csv_file, ConfusionMatrix, EpochReport};
use crate::model::{argmax, ArchitectureConfig, Checkpoint, ForwardMode, Network};
use crate::ops::softmax;
use crate::optim::{sgd_momentum_step, OptimizerState};
use crate::tensor::Tensor;

/// Everything needed to reconstruct a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub architecture: ArchitectureConfig,
    pub architecture_hash: String,
    pub class_names: Vec<String>,
    pub dataset_root: PathBuf,
    pub train_samples: usize,
    pub valid_samples: usize,
    /// Contiguous, starting at epoch 1.
    pub reports: Vec<EpochReport>,
    pub final_checkpoint: Option<PathBuf>,
    pub environment: String,
}

impl RunRecord {
    pub fn losses(&self) -> Vec<f64> {
        self.reports.iter().map(|r| r.train_loss).collect()
    }

    pub fn milestone_reports(&self) -> impl Iterator<Item = &EpochReport> {
        self.reports
            .iter()
            .filter(|r| self.config.milestones.contains(&r.epoch))
    }

    pub fn last(&self) -> Option<&EpochReport> {
        self.reports.last()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub record: RunRecord,
    /// The model after the last epoch.
    pub checkpoint: Checkpoint,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the dropout masks for global optimizer step `step`.
fn step_seed(seed: u64, step: u64) -> u64 {
    splitmix64(seed ^ splitmix64(step))
}

fn environment_note() -> String {
    format!(
        "{}-{} rayon_threads={} pvfaultnet {}",
        std::env::consts::OS,
        std::env::consts::ARCH,
        rayon::current_num_threads(),
        env!("CARGO_PKG_VERSION")
    )
}

fn metadata(config: &TrainConfig, class_names: &[String], epoch: usize) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        m.insert(k.to_string(), v);
    };
    put("epoch", epoch.to_string());
    put("input_side", config.input_side.to_string());
    put("resize", "bilinear, half-pixel centers".into());
    put("input_scaling", config.input_scaling.to_string());
    put(
        "normalization",
        format!(
            "pixel / 255 - {}, no per-channel statistics",
            config.input_scaling.offset()
        ),
    );
    put("layout", "RGB, channel-major [3, H, W]".into());
    put("positive_class", class_names.first().cloned().unwrap_or_default());
    put("variant", config.variant.to_string());
    put("optimizer", "sgd_momentum".into());
    put("learning_rate", config.learning_rate.to_string());
    put("momentum", config.momentum.to_string());
    put("decay", config.decay.to_string());
    put("decay_mode", config.decay_mode.to_string());
    put("batch_size", config.batch_size.to_string());
    put("init", config.init.to_string());
    put("grad_clip", config.grad_clip.to_string());
    m
}

/// Confusion matrix of inference-mode predictions over `split`.
pub fn evaluate_network(
    network: &Network<f32>,
    store: &ImageStore,
    split: Split,
    batch_size: usize,
) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new();
    for indices in sequential_order(store.manifest(), split, batch_size)? {
        let batch = store.batch(&indices)?;
        let logits = network.predict(&batch.images)?;
        let k = logits.shape()[1];
        for (row, &label) in logits.data().chunks_exact(k).zip(&batch.labels) {
            cm.update(label, argmax(row))?;
        }
    }
    Ok(cm)
}

/// Trains without side effects on disk.
pub fn train(config: &TrainConfig, store: &ImageStore) -> Result<TrainOutcome> {
    train_with(config, store, None, |_| {})
}

/// Trains on the `train` split of `store`, validating on `valid` after every
/// epoch. With `run_dir`, writes the run directory described in the module
/// docs; `on_epoch` sees each report as soon as it exists.
///
/// A non-finite loss or parameter aborts with [`Error::Diverged`]; the most
/// recent finite model stays in `checkpoints/last.ckpt`.
pub fn train_with(
    config: &TrainConfig,
    store: &ImageStore,
    run_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<TrainOutcome> {
    config.validate()?;
    if store.side() != config.input_side {
        return Err(Error::invalid(format!(
            "image store produces {0}x{0} inputs but the configuration expects {1}x{1}",
            store.side(),
            config.input_side
        )));
    }
    if store.scaling() != config.input_scaling {
        return Err(Error::invalid(format!(
            "image store scales inputs as {} but the configuration expects {}",
            store.scaling(),
            config.input_scaling
        )));
    }
    let manifest = store.manifest();
    let train_samples = manifest.indices(Split::Train).len();
    if train_samples == 0 {
        return Err(Error::Dataset(
            "manifest has no training samples; assign a split first".into(),
        ));
    }
    let valid_samples = manifest.indices(Split::Valid).len();
    let architecture = config.architecture()?;
    let mut network = Network::<f32>::with_init(&architecture, config.seed, config.init)?;
    let mut optimizer = OptimizerState::new(network.params(), config.learning_rate, config.momentum, 0.0)?;
    let class_names = manifest.class_names.clone();

    let run = run_dir
        .map(|dir| RunFiles::create(dir, config, &architecture, manifest))
        .transpose()?;
    let snapshot = |net: &Network<f32>, epoch: usize| {
        Checkpoint::new(
            net.clone(),
            class_names.clone(),
            config.seed,
            metadata(config, &class_names, epoch),
        )
    };
    if let Some(run) = &run {
        snapshot(&network, 0).save(&run.last_good())?;
    }

    let mut record = RunRecord {
        config: config.clone(),
        architecture_hash: architecture.architecture_hash(),
        architecture,
        class_names: class_names.clone(),
        dataset_root: manifest.root.clone(),
        train_samples,
        valid_samples,
        reports: Vec::with_capacity(config.epochs),
        final_checkpoint: None,
        environment: environment_note(),
    };
    let mut step = 0u64;
    for epoch in 0..config.epochs {
        let started = Instant::now();
        let (lr, wd) = config.schedule(epoch);
        optimizer.learning_rate = lr;
        optimizer.weight_decay = wd;
        let (mut loss_sum, mut correct, mut seen) = (0.0f64, 0u64, 0u64);
        for (b, indices) in epoch_order(manifest, Split::Train, config.batch_size, config.seed, epoch as u64)?
            .into_iter()
            .enumerate()
        {
            let diverged = |reason: String, run: &Option<RunFiles>| Error::Diverged {
                epoch: epoch + 1,
                batch: b,
                reason,
                checkpoint: run.as_ref().map(RunFiles::last_good),
            };
            let batch = store.batch(&indices)?;
            let mode = ForwardMode::Train {
                seed: step_seed(config.seed, step),
            };
            let (logits, cache) = match network.forward(&batch.images, mode) {
                Err(Error::NonFinite(what)) => {
                    return Err(finish_diverged(
                        diverged(format!("non-finite {what}"), &run),
                        &run,
                        &record,
                    ))
                }
                other => other?,
            };
            let (loss, mut grads) = network.backward(&cache, &batch.labels)?;
            if !loss.is_finite() {
                return Err(finish_diverged(
                    diverged(format!("loss is {loss}"), &run),
                    &run,
                    &record,
                ));
            }
            let k = logits.shape()[1];
            correct += logits
                .data()
                .chunks_exact(k)
                .zip(&batch.labels)
                .filter(|(row, &l)| argmax(row) == l)
                .count() as u64;
            seen += batch.len() as u64;
            loss_sum += loss as f64 * batch.len() as f64;
            if config.grad_clip > 0.0 {
                clip_gradients(&mut grads.tensors, config.grad_clip);
            }
            network.update_running_stats(&cache);
            sgd_momentum_step(&mut network.params_mut(), &grads.tensors, &mut optimizer)?;
            if network.params().iter().any(|p| !p.is_finite()) {
                return Err(finish_diverged(
                    diverged("parameters became non-finite".into(), &run),
                    &run,
                    &record,
                ));
            }
            step += 1;
        }
        let cm = if valid_samples > 0 {
            evaluate_network(&network, store, Split::Valid, config.batch_size)?
        } else {
            ConfusionMatrix::new()
        };
        let report = EpochReport::new(
            epoch + 1,
            loss_sum / seen as f64,
            correct,
            seen,
            cm,
            started.elapsed().as_secs_f64(),
        );
        on_epoch(&report);
        record.reports.push(report);
        if let Some(run) = &run {
            let ckpt = snapshot(&network, epoch + 1);
            ckpt.save(&run.last_good())?;
            let e = epoch + 1;
            if config.milestones.contains(&e) || (config.checkpoint_every > 0 && e % config.checkpoint_every == 0) {
                ckpt.save(&run.epoch_checkpoint(e))?;
            }
            run.append_metrics(&record)?;
        }
    }
    let checkpoint = snapshot(&network, config.epochs);
    if let Some(run) = &run {
        let path = run.dir.join("checkpoints").join("final.ckpt");
        checkpoint.save(&path)?;
        record.final_checkpoint = Some(path);
        run.write_record(&record)?;
    }
    Ok(TrainOutcome { record, checkpoint })
}

/// Scales all gradients by `max_norm / norm` when their joint L2 norm
/// exceeds `max_norm`.
fn clip_gradients(grads: &mut [Tensor<f32>], max_norm: f64) {
    let norm = grads.iter().map(|g| g.sq_norm() as f64).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = (max_norm / norm) as f32;
        for g in grads {
            g.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
}

fn finish_diverged(err: Error, run: &Option<RunFiles>, record: &RunRecord) -> Error {
    if let Some(run) = run {
        if let Err(e) = run.write_record(record) {
            log::warn!("could not write run record after divergence: {e}");
        }
    }
    err
}

struct RunFiles {
    dir: PathBuf,
}

impl RunFiles {
    fn create(dir: &Path, config: &TrainConfig, arch: &ArchitectureConfig, manifest: &DatasetManifest) -> Result<Self> {
        let ckpts = dir.join("checkpoints");
        std::fs::create_dir_all(&ckpts).map_err(|e| Error::io(&ckpts, e))?;
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        write("config.toml", config.to_toml())?;
        write("architecture.toml", arch.to_toml())?;
        write("manifest.jsonl", manifest.to_jsonl_rooted())?;
        write("metrics.log", String::new())?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    fn last_good(&self) -> PathBuf {
        self.dir.join("checkpoints").join("last.ckpt")
    }

    fn epoch_checkpoint(&self, epoch: usize) -> PathBuf {
        self.dir.join("checkpoints").join(format!("epoch_{epoch:03}.ckpt"))
    }

    fn append_metrics(&self, record: &RunRecord) -> Result<()> {
        let log = self.dir.join("metrics.log");
        let mut f = std::fs::OpenOptions::new()
            .append(true)
            .open(&log)
            .map_err(|e| Error::io(&log, e))?;
        let last = record.reports.last().expect("called after an epoch");
        writeln!(f, "{}", last.to_log_line()).map_err(|e| Error::io(&log, e))?;
        write_csv_file(&record.reports, &self.dir.join("metrics.csv"))
    }

    fn write_record(&self, record: &RunRecord) -> Result<()> {
        let p = self.dir.join("run.json");
        let text = serde_json::to_string_pretty(record).expect("record serializes");
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }
}

/// Inference-mode report of `checkpoint` over one split of `manifest`.
///
/// With `expected`, the checkpoint must carry exactly that architecture. An
/// empty split yields a flagged all-zero report.
pub fn evaluate(
    checkpoint: &Checkpoint,
    manifest: &DatasetManifest,
    split: Split,
    expected: Option<&ArchitectureConfig>,
) -> Result<EpochReport> {
    if let Some(arch) = expected {
        checkpoint.ensure_architecture(arch)?;
    }
    if checkpoint.header.class_names != manifest.class_names {
        return Err(Error::Dataset(format!(
            "checkpoint classes {:?} differ from dataset classes {:?}",
            checkpoint.header.class_names, manifest.class_names
        )));
    }
    let epoch = checkpoint
        .header
        .metadata
        .get("epoch")
        .and_then(|e| e.parse().ok())
        .unwrap_or(0);
    if manifest.indices(split).is_empty() {
        return Ok(EpochReport::empty(epoch));
    }
    let (_, h, w) = checkpoint.header.architecture.input_shape()?;
    if h != w {
        return Err(Error::invalid(format!("non-square input {h}x{w} is not supported")));
    }
    let started = Instant::now();
    let store = ImageStore::new(manifest.clone(), h, checkpoint_scaling(checkpoint)?)?;
    let batch = checkpoint
        .header
        .metadata
        .get("batch_size")
        .and_then(|b| b.parse().ok())
        .unwrap_or(32);
    let cm = evaluate_network(&checkpoint.network, &store, split, batch)?;
    Ok(EpochReport::new(epoch, 0.0, 0, 0, cm, started.elapsed().as_secs_f64()))
}

/// Input scaling recorded in the checkpoint metadata.
pub fn checkpoint_scaling(checkpoint: &Checkpoint) -> Result<InputScaling> {
    match checkpoint.header.metadata.get("input_scaling") {
        Some(s) => s.parse(),
        None => Ok(InputScaling::default()),
    }
}

/// Class decision for one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub path: PathBuf,
    pub label: usize,
    pub class: String,
    /// Softmax probability of the predicted class.
    pub confidence: f64,
    pub probabilities: Vec<f64>,
}

/// Classifies image files with the preprocessing recorded in `checkpoint`.
pub fn predict_images(checkpoint: &Checkpoint, paths: &[PathBuf]) -> Result<Vec<Prediction>> {
    let (_, side, w) = checkpoint.header.architecture.input_shape()?;
    if side != w {
        return Err(Error::invalid(format!("non-square input {side}x{w} is not supported")));
    }
    let scaling = checkpoint_scaling(checkpoint)?;
    paths
        .iter()
        .map(|path| {
            let planes = scaling.prepare(&ImageBuffer::load(path)?, side);
            let logits = checkpoint
                .network
                .predict(&Tensor::new(vec![CHANNELS, side, side], planes)?)?;
            let probabilities: Vec<f64> = softmax(logits.data()).into_iter().map(f64::from).collect();
            let label = argmax(&probabilities);
            let class = checkpoint
                .header
                .class_names
                .get(label)
                .cloned()
                .unwrap_or_else(|| label.to_string());
            Ok(Prediction {
                path: path.clone(),
                label,
                class,
                confidence: probabilities[label],
                probabilities,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::split_train_valid;
    use crate::synth::write_synthetic;

    fn toy_store(dir: &Path, side: usize, per_class: usize, valid: usize) -> ImageStore {
        let m = write_synthetic(&dir.join("data"), side, per_class, 3).unwrap();
        let m = split_train_valid(&m, valid, 3, false).unwrap();
        ImageStore::preloaded(m, side, InputScaling::Centered).unwrap()
    }

    fn quick(side: usize) -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 4,
            input_side: side,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn step_seeds_differ() {
        assert_ne!(step_seed(1, 0), step_seed(1, 1));
        assert_ne!(step_seed(1, 0), step_seed(2, 0));
    }

    #[test]
    fn reports_are_contiguous_and_run_dir_is_complete() {
        let dir = tempfile::tempdir().unwrap();
        let store = toy_store(dir.path(), 16, 6, 4);
        let run = dir.path().join("run");
        let mut seen = Vec::new();
        let out = train_with(&quick(16), &store, Some(&run), |r| seen.push(r.epoch)).unwrap();
        assert_eq!(seen, vec![1, 2, 3]);
        assert_eq!(out.record.reports.iter().map(|r| r.epoch).collect::<Vec<_>>(), seen);
        for f in [
            "config.toml",
            "architecture.toml",
            "manifest.jsonl",
            "metrics.log",
            "metrics.csv",
            "run.json",
        ] {
            assert!(run.join(f).is_file(), "{f}");
        }
        let log = std::fs::read_to_string(run.join("metrics.log")).unwrap();
        assert_eq!(log.lines().count(), 3);
        let parsed: Vec<EpochReport> = log.lines().map(|l| EpochReport::parse_log_line(l).unwrap()).collect();
        assert_eq!(parsed, out.record.reports);
        let final_ckpt = Checkpoint::load(out.record.final_checkpoint.as_ref().unwrap()).unwrap();
        assert_eq!(final_ckpt, out.checkpoint);
        assert_eq!(
            Checkpoint::load(&run.join("checkpoints/last.ckpt")).unwrap(),
            out.checkpoint
        );
    }

    #[test]
    fn evaluate_matches_last_in_loop_report() {
        let dir = tempfile::tempdir().unwrap();
        let store = toy_store(dir.path(), 16, 6, 4);
        let out = train(&quick(16), &store).unwrap();
        let rep = evaluate(&out.checkpoint, store.manifest(), Split::Valid, None).unwrap();
        let last = out.record.last().unwrap();
        assert_eq!(rep.confusion, last.confusion);
        assert_eq!(rep.valid_accuracy.to_bits(), last.valid_accuracy.to_bits());
        assert_eq!(rep.f1.to_bits(), last.f1.to_bits());
        assert_eq!(rep.epoch, 3);
    }

    #[test]
    fn empty_split_gives_flagged_report() {
        let dir = tempfile::tempdir().unwrap();
        let store = toy_store(dir.path(), 16, 3, 2);
        let out = train(&TrainConfig { epochs: 1, ..quick(16) }, &store).unwrap();
        let rep = evaluate(&out.checkpoint, store.manifest(), Split::Unassigned, None).unwrap();
        assert_eq!(rep.confusion.total(), 0);
        assert!(rep.flags.contains(&"valid_acc".to_string()));
    }

    #[test]
    fn side_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let store = toy_store(dir.path(), 16, 3, 2);
        assert!(train(&quick(24), &store).is_err());
    }

    #[test]
    fn diverging_run_keeps_last_good_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let store = toy_store(dir.path(), 16, 6, 4);
        let cfg = TrainConfig {
            learning_rate: 1e30,
            ..quick(16)
        };
        let run = dir.path().join("run");
        let err = train_with(&cfg, &store, Some(&run), |_| {}).unwrap_err();
        match err {
            Error::Diverged { checkpoint, .. } => {
                let p = checkpoint.unwrap();
                assert!(Checkpoint::load(&p)
                    .unwrap()
                    .network
                    .params()
                    .iter()
                    .all(|t| t.is_finite()));
            }
            other => panic!("expected divergence, got {other}"),
        }
    }
}
