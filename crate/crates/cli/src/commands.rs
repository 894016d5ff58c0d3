use std::path::{Path, PathBuf};

use candle_core::Device;
use serde::Serialize;

use textsr_core::data::toy::write_toy_dataset;
use textsr_core::data::{iterate_batches, load_dataset, prepare_dataset, BatchOptions};
use textsr_core::eval::{compare_conditions, BicubicUpscaler, ExternalRecognizer, Recognizer, SuperResolver, ToyRecognizer};
use textsr_core::metrics::aggregate_report;
use textsr_core::model::load_model;
use textsr_core::record::LR_SHAPE;
use textsr_core::train::CHECKPOINT_FILE;
use textsr_core::{load_config, Error, ImageTensor, ModelConfig, Result, TrainConfig, Tsrn};

use crate::record::{record_path, RunRecord};
use crate::{EvalArgs, Global, InferArgs, MetricsArgs, PrepareArgs, TrainArgs};

/// True when `output` exists and the run should be skipped.
fn up_to_date(output: &Path, g: &Global) -> bool {
    if output.exists() && !g.force {
        log::info!("{} exists, skipping (use --force to recompute)", output.display());
        return true;
    }
    false
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn configs(path: Option<&Path>) -> Result<(ModelConfig, TrainConfig)> {
    match path {
        Some(p) => load_config(p),
        None => Ok((ModelConfig::default(), TrainConfig::default())),
    }
}

fn load_checked(checkpoint: &Path, config: Option<&Path>) -> Result<Tsrn> {
    let expected = config.map(load_config).transpose()?.map(|(m, _)| m);
    load_model(checkpoint, expected.as_ref(), &Device::Cpu)
}

pub fn prepare(a: &PrepareArgs, g: &Global) -> Result<()> {
    let seed = g.seed.unwrap_or(0);
    let record = RunRecord::new("prepare", a, seed)?;
    match (a.toy, &a.annotations) {
        (Some(n), _) => {
            let manifest = a.out.join("manifest.jsonl");
            if up_to_date(&manifest, g) {
                return Ok(());
            }
            let m = write_toy_dataset(&a.out, n, seed, &a.subsets)?;
            log::info!("rendered {} toy pairs into {}", m.len(), a.out.display());
            record.write(&record_path(&a.out, true))
        }
        (None, Some(ann)) => {
            if up_to_date(&a.out, g) {
                return Ok(());
            }
            let (m, summary) = prepare_dataset(ann, &a.out)?;
            log::info!(
                "kept {} pairs; dropped {} ignored-direction, {} LR and {} HR out of range",
                m.len(),
                summary.ignored_direction,
                summary.lr_out_of_range,
                summary.hr_out_of_range
            );
            record.input(ann)?.write(&record_path(&a.out, false))
        }
        (None, None) => Err(Error::InvalidInput("give --annotations or --toy".into())),
    }
}

pub fn train(a: &TrainArgs, g: &Global) -> Result<()> {
    let (model_cfg, mut cfg) = configs(a.config.as_deref())?;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(n) = a.max_steps {
        cfg.max_steps = n;
    }
    if !a.resume && up_to_date(&a.out.join(CHECKPOINT_FILE), g) {
        return Ok(());
    }
    let mut record = RunRecord::new("train", a, cfg.seed)?
        .with_configs(&model_cfg, Some(&cfg))?
        .input(&a.manifest)?;
    if let Some(c) = &a.config {
        record = record.input(c)?;
    }
    let outcome = textsr_core::train::train(&model_cfg, &cfg, &a.manifest, &a.out, a.resume)?;
    match outcome.last {
        Some(p) => log::info!(
            "{} steps, {} epochs; last loss {:.6} (pixel {:.6}, gp {:.6})",
            outcome.steps,
            outcome.epochs,
            p.total,
            p.pixel,
            p.gp
        ),
        None => log::info!("nothing to do: {} steps, {} epochs", outcome.steps, outcome.epochs),
    }
    record.write(&record_path(&a.out, true))
}

pub fn eval(a: &EvalArgs, g: &Global) -> Result<()> {
    if up_to_date(&a.out, g) {
        return Ok(());
    }
    let model = load_checked(&a.checkpoint, a.config.as_deref())?;
    let manifest = load_dataset(&a.manifest)?;
    let recognizer: Box<dyn Recognizer> = if a.recognizer == "toy" {
        Box::new(ToyRecognizer::new())
    } else {
        Box::new(ExternalRecognizer::spawn(&a.recognizer)?)
    };
    let report = compare_conditions(&model, &manifest, &recognizer, a.batch_size)?;
    print!("{}", report.to_table());
    write_json(&a.out, &report)?;
    let mut record = RunRecord::new("eval", a, g.seed.unwrap_or(0))?
        .with_configs(model.config(), None)?
        .input(&a.checkpoint)?
        .input(&a.manifest)?;
    if let Some(c) = &a.config {
        record = record.input(c)?;
    }
    record.write(&record_path(&a.out, false))
}

fn image_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if !input.is_dir() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(input)
        .map_err(|e| Error::io(input, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    Ok(files)
}

pub fn infer(a: &InferArgs, g: &Global) -> Result<()> {
    let model = load_checked(&a.checkpoint, a.config.as_deref())?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let (h, w) = LR_SHAPE;
    let (mut written, mut skipped, mut failed) = (0, 0, 0);
    for path in image_inputs(&a.input)? {
        let name = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let out = a.out.join(format!("{name}.png"));
        if out.exists() && !g.force {
            skipped += 1;
            continue;
        }
        let lr = match ImageTensor::load_rgb(&path) {
            Ok(img) if (img.height(), img.width()) == (h, w) => img,
            Ok(img) => img.resize_bicubic(h, w)?,
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                failed += 1;
                continue;
            }
        };
        model.super_resolve(&lr)?.save_png(&out)?;
        written += 1;
    }
    log::info!("{written} written, {skipped} already present, {failed} unreadable");
    if written + skipped == 0 {
        return Err(Error::InvalidInput(format!("no readable image in {}", a.input.display())));
    }
    if written == 0 {
        return Ok(());
    }
    RunRecord::new("infer", a, g.seed.unwrap_or(0))?
        .with_configs(model.config(), None)?
        .input(&a.checkpoint)?
        .input(&a.input)?
        .write(&record_path(&a.out, true))
}

pub fn metrics(a: &MetricsArgs, g: &Global) -> Result<()> {
    if up_to_date(&a.out, g) {
        return Ok(());
    }
    let manifest = load_dataset(&a.manifest)?;
    let model = a
        .checkpoint
        .as_ref()
        .map(|c| load_model(c, None, &Device::Cpu))
        .transpose()?;
    let resolver: &dyn SuperResolver = match &model {
        Some(m) => m,
        None => &BicubicUpscaler,
    };
    let mut pairs = Vec::with_capacity(manifest.len());
    for batch in iterate_batches(&manifest, BatchOptions::new(a.batch_size)) {
        let batch = batch?;
        let sr = resolver.super_resolve_batch(&batch.lr)?;
        pairs.extend(sr.into_iter().zip(batch.hr).zip(batch.subset).map(|((s, h), sub)| (s, h, sub)));
    }
    let report = aggregate_report(pairs)?;
    print!("{}", report.to_table());
    write_json(&a.out, &report)?;
    let mut record = RunRecord::new("metrics", a, g.seed.unwrap_or(0))?.input(&a.manifest)?;
    if let (Some(m), Some(c)) = (&model, &a.checkpoint) {
        record = record.with_configs(m.config(), None)?.input(c)?;
    }
    record.write(&record_path(&a.out, false))
}
