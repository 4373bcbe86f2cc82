use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use pvfaultnet::augment::{expand_dataset, materialize, AugmentationSpec};
use pvfaultnet::dataset::{open_dataset, split_train_valid, DatasetManifest, ImageStore, Split, IMAGE_EXTENSIONS};
use pvfaultnet::model::{audit_against_published, render_reference_comparison, Checkpoint};
use pvfaultnet::synth::write_synthetic;
use pvfaultnet::trainer::{evaluate, predict_images, train_with, TrainConfig};
use pvfaultnet::Error;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::{AuditArgs, AugmentArgs, EvalArgs, PredictArgs, SplitArg, SynthArgs, TrainArgs};

/// `println!` that reports a failed write (a closed pipe) as an error.
macro_rules! out {
    ($($arg:tt)*) => {
        writeln!(std::io::stdout().lock(), $($arg)*)?
    };
}

macro_rules! outp {
    ($($arg:tt)*) => {
        write!(std::io::stdout().lock(), $($arg)*)?
    };
}

/// Removes a freshly created output directory unless disarmed.
struct Cleanup<'a> {
    dir: &'a Path,
    armed: bool,
}

impl Drop for Cleanup<'_> {
    fn drop(&mut self) {
        if self.armed && self.dir.exists() {
            if let Err(e) = std::fs::remove_dir_all(self.dir) {
                log::warn!("could not remove partial output {}: {e}", self.dir.display());
            }
        }
    }
}

fn ensure_absent(dir: &Path) -> Result<()> {
    if dir.exists() {
        bail!("output directory {} already exists", dir.display());
    }
    Ok(())
}

/// Applies the top-level keys of a TOML file over `base`. Unknown keys are
/// rejected by the target type.
fn override_from_file<T: Serialize + DeserializeOwned>(base: &T, path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let overrides: toml::Table = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let mut table = toml::Table::try_from(base).context("serializing flag values")?;
    table.extend(overrides);
    table.try_into().with_context(|| format!("applying {}", path.display()))
}

fn write_echo(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = toml::to_string(value).context("serializing config echo")?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn class_count_lines(manifest: &DatasetManifest) -> Vec<(String, usize)> {
    manifest
        .class_names
        .iter()
        .cloned()
        .zip(manifest.class_counts())
        .collect()
}

pub fn synth_data(a: SynthArgs) -> Result<ExitCode> {
    ensure_absent(&a.out)?;
    log::info!(
        "synth-data out={} per_class={} seed={} side={}",
        a.out.display(),
        a.per_class,
        a.seed,
        a.side
    );
    let manifest = write_synthetic(&a.out, a.side, a.per_class, a.seed)?;
    let mut guard = Cleanup {
        dir: &a.out,
        armed: true,
    };
    #[derive(Serialize)]
    struct Echo {
        per_class: usize,
        seed: u64,
        side: usize,
    }
    write_echo(
        &a.out.join("synth.toml"),
        &Echo {
            per_class: a.per_class,
            seed: a.seed,
            side: a.side,
        },
    )?;
    guard.armed = false;
    for (class, n) in class_count_lines(&manifest) {
        out!("{class:<12} {n:>6}");
    }
    out!("{:<12} {:>6}", "total", manifest.len());
    out!("wrote {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn augment(a: AugmentArgs) -> Result<ExitCode> {
    ensure_absent(&a.out)?;
    let mut spec = AugmentationSpec {
        seed: a.seed,
        inclusion_probability: a.inclusion_probability,
        ..Default::default()
    };
    if !a.targets.is_empty() {
        spec.targets = a.targets.into_iter().collect();
    }
    if let Some(path) = &a.spec {
        spec = override_from_file(&spec, path)?;
    }
    spec.validate()?;
    log::info!(
        "augment root={} out={} spec={spec:?}",
        a.root.display(),
        a.out.display()
    );
    let manifest = open_dataset(&a.root)?;
    let expanded = expand_dataset(&manifest, &spec)?;
    let written = materialize(&expanded, &a.out)?;
    let mut guard = Cleanup {
        dir: &a.out,
        armed: true,
    };
    write_echo(&a.out.join("augmentation.toml"), &spec)?;
    guard.armed = false;

    out!("{:<12} {:>10} {:>10}", "class", "original", "augmented");
    let before = manifest.class_counts();
    let after = written.class_counts();
    for (i, class) in manifest.class_names.iter().enumerate() {
        out!("{class:<12} {:>10} {:>10}", before[i], after[i]);
    }
    out!("{:<12} {:>10} {:>10}", "total", manifest.len(), written.len());
    out!("wrote {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn default_run_dir(seed: u64) -> PathBuf {
    let base = PathBuf::from("runs").join(format!("seed{seed}"));
    if !base.exists() {
        return base;
    }
    (2..)
        .map(|n| PathBuf::from("runs").join(format!("seed{seed}_{n}")))
        .find(|p| !p.exists())
        .expect("unbounded search")
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        momentum: a.momentum,
        decay: a.decay,
        decay_mode: a.decay_mode,
        seed: a.seed,
        variant: a.variant,
        input_side: a.input_side,
        input_scaling: a.input_scaling,
        init: a.init,
        grad_clip: a.grad_clip,
        checkpoint_every: a.checkpoint_every,
        ..Default::default()
    };
    if let Some(path) = &a.config {
        cfg = override_from_file(&cfg, path)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn assign_split(manifest: DatasetManifest, a: &TrainArgs, seed: u64) -> Result<DatasetManifest> {
    let has_split = manifest.samples.iter().any(|s| s.split == Split::Train);
    if has_split && !a.resplit {
        log::info!("using the split stored in the manifest");
        return Ok(manifest);
    }
    if a.valid == 0 {
        let mut m = manifest;
        m.samples.iter_mut().for_each(|s| s.split = Split::Train);
        return Ok(m);
    }
    Ok(split_train_valid(&manifest, a.valid, seed, a.originals_only)?)
}

pub fn train(a: TrainArgs) -> Result<ExitCode> {
    let cfg = train_config(&a)?;
    let out = a.out.clone().unwrap_or_else(|| default_run_dir(cfg.seed));
    ensure_absent(&out)?;
    log::info!("train data={} out={} config={cfg:?}", a.data.display(), out.display());

    let manifest = assign_split(open_dataset(&a.data)?, &a, cfg.seed)?;
    let (train_n, valid_n) = (
        manifest.indices(Split::Train).len(),
        manifest.indices(Split::Valid).len(),
    );
    out!(
        "train {train_n} images, valid {valid_n} images, input {0}x{0}",
        cfg.input_side
    );
    let store = if a.stream {
        ImageStore::new(manifest, cfg.input_side, cfg.input_scaling)?
    } else {
        ImageStore::preloaded(manifest, cfg.input_side, cfg.input_scaling)?
    };

    let mut guard = Cleanup { dir: &out, armed: true };
    let outcome = train_with(&cfg, &store, Some(&out), |r| {
        // a closed stdout must not abort training
        let mut w = std::io::stdout().lock();
        let _ = writeln!(w, "{}", r.to_log_line());
        if cfg.milestones.contains(&r.epoch) {
            let _ = writeln!(w, "{}", r.render_table());
        }
    });
    let outcome = match outcome {
        Ok(o) => o,
        Err(e @ Error::Diverged { .. }) => {
            // the run directory documents the failure; keep it
            guard.armed = false;
            return Err(e.into());
        }
        Err(e) => return Err(e.into()),
    };
    guard.armed = false;
    if let Some(last) = outcome.record.last() {
        out!("{}", last.render_table());
    }
    if let Some(path) = &outcome.record.final_checkpoint {
        out!("final checkpoint {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

pub fn eval(a: EvalArgs) -> Result<ExitCode> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    if a.input_side.is_some() || a.variant.is_some() {
        let (_, side, _) = ckpt.header.architecture.input_shape()?;
        let expected = TrainConfig {
            input_side: a.input_side.unwrap_or(side),
            variant: a.variant.unwrap_or_default(),
            ..Default::default()
        }
        .architecture()?;
        ckpt.ensure_architecture(&expected)?;
    }
    let mut manifest = open_dataset(&a.data)?;
    let split = a.split.unwrap_or(if manifest.indices(Split::Valid).is_empty() {
        SplitArg::All
    } else {
        SplitArg::Valid
    });
    log::info!(
        "eval data={} checkpoint={} split={split:?}",
        a.data.display(),
        a.checkpoint.display()
    );
    let split = match split {
        SplitArg::Train => Split::Train,
        SplitArg::Valid => Split::Valid,
        SplitArg::All => {
            manifest.samples.iter_mut().for_each(|s| s.split = Split::Valid);
            Split::Valid
        }
    };
    let report = evaluate(&ckpt, &manifest, split, None)?;
    if a.json {
        out!(
            "{}",
            serde_json::to_string_pretty(&report).context("serializing report")?
        );
    } else {
        out!("{}", report.render_table());
        out!("{}", report.to_log_line());
    }
    Ok(ExitCode::SUCCESS)
}

fn collect_images(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        let mut entries = std::fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<Vec<_>>>()
            .with_context(|| format!("reading {}", dir.display()))?;
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(&p, out)?;
            } else if p
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            {
                out.push(p);
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            walk(p, &mut out)?;
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            bail!("input {} does not exist", p.display());
        }
    }
    if out.is_empty() {
        bail!("no images found in the given inputs");
    }
    Ok(out)
}

pub fn predict(a: PredictArgs) -> Result<ExitCode> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let paths = collect_images(&a.inputs)?;
    log::info!("predict checkpoint={} images={}", a.checkpoint.display(), paths.len());
    for p in predict_images(&ckpt, &paths)? {
        if a.json {
            out!("{}", serde_json::to_string(&p).context("serializing prediction")?);
        } else {
            out!("{}\t{}\t{:.4}", p.path.display(), p.class, p.confidence);
        }
    }
    Ok(ExitCode::SUCCESS)
}

pub fn audit_params(a: AuditArgs) -> Result<ExitCode> {
    let arch = TrainConfig {
        input_side: a.input_side,
        variant: a.variant,
        ..Default::default()
    }
    .architecture()?;
    let audit = audit_against_published(&arch)?;
    if a.json {
        out!("{}", serde_json::to_string_pretty(&audit).context("serializing audit")?);
    } else {
        outp!("{}", audit.render());
        out!("");
        outp!("{}", render_reference_comparison(audit.audit.total));
    }
    if a.strict && !audit.all_match() {
        eprintln!("error: parameter counts differ from the published figures");
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}
