use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::data::degrade::upscale_bicubic;
use crate::data::manifest::{iterate_batches, BatchOptions, DatasetManifest};
use crate::error::{Error, Result};
use crate::eval::recognizer::{Concurrency, Recognizer};
use crate::image::ImageTensor;
use crate::metrics::{aggregate_report, MetricsReport};
use crate::model::Tsrn;
use crate::record::Subset;

/// Lowercase, keeping only alphanumeric characters.
pub fn normalize_text(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SubsetAccuracy {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AccuracyResult {
    pub per_subset: BTreeMap<Subset, SubsetAccuracy>,
    /// Samples on which the recognizer returned an error.
    pub failures: usize,
}

impl AccuracyResult {
    /// Accuracy over all samples, i.e. the count-weighted subset average.
    pub fn weighted_average(&self) -> Option<f64> {
        let total: usize = self.per_subset.values().map(|s| s.total).sum();
        let correct: usize = self.per_subset.values().map(|s| s.correct).sum();
        (total > 0).then(|| correct as f64 / total as f64)
    }

    pub fn total(&self) -> usize {
        self.per_subset.values().map(|s| s.total).sum()
    }
}

fn tally(outcomes: impl IntoIterator<Item = (Subset, bool)>, failures: usize) -> AccuracyResult {
    let mut counts: BTreeMap<Subset, (usize, usize)> = BTreeMap::new();
    for (subset, ok) in outcomes {
        let e = counts.entry(subset).or_default();
        e.0 += ok as usize;
        e.1 += 1;
    }
    AccuracyResult {
        per_subset: counts
            .into_iter()
            .map(|(s, (correct, total))| {
                (
                    s,
                    SubsetAccuracy {
                        correct,
                        total,
                        accuracy: correct as f64 / total as f64,
                    },
                )
            })
            .collect(),
        failures,
    }
}

/// Scores `(image, ground truth, subset)` samples. A sample is correct when
/// the normalized prediction equals the normalized label; recognizer errors
/// count as incorrect and are logged.
pub fn accuracy<R, I>(recognizer: &R, samples: I) -> Result<AccuracyResult>
where
    R: Recognizer + ?Sized,
    I: IntoIterator<Item = (ImageTensor, String, Subset)>,
{
    let samples: Vec<(ImageTensor, String, Subset)> = samples.into_iter().collect();
    if samples.is_empty() {
        return Err(Error::InvalidInput("no samples to score".into()));
    }
    let predict = |img: &ImageTensor| recognizer.recognize(img);
    let predictions: Vec<Result<String>> = match recognizer.concurrency() {
        Concurrency::Serial => samples.iter().map(|s| predict(&s.0)).collect(),
        Concurrency::Concurrent => {
            let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
            let chunk = samples.len().div_ceil(workers).max(1);
            std::thread::scope(|scope| {
                let handles: Vec<_> = samples
                    .chunks(chunk)
                    .map(|part| scope.spawn(move || part.iter().map(|s| predict(&s.0)).collect::<Vec<_>>()))
                    .collect();
                handles
                    .into_iter()
                    .flat_map(|h| h.join().expect("recognizer thread panicked"))
                    .collect()
            })
        }
    };
    let mut failures = 0;
    let outcomes: Vec<(Subset, bool)> = samples
        .iter()
        .zip(predictions)
        .enumerate()
        .map(|(i, ((_, text, subset), pred))| match pred {
            Ok(p) => (*subset, normalize_text(&p) == normalize_text(text)),
            Err(e) => {
                log::warn!("recognizer failed on sample {i} ({text:?}): {e}");
                failures += 1;
                (*subset, false)
            }
        })
        .collect();
    Ok(tally(outcomes, failures))
}

/// Anything that maps normalized LR images (3 x 16 x 64) to 3 x 32 x 128.
pub trait SuperResolver {
    fn super_resolve_batch(&self, lrs: &[ImageTensor]) -> Result<Vec<ImageTensor>>;
}

/// Plain bicubic x2 upsampling.
#[derive(Debug, Clone, Copy, Default)]
pub struct BicubicUpscaler;

impl SuperResolver for BicubicUpscaler {
    fn super_resolve_batch(&self, lrs: &[ImageTensor]) -> Result<Vec<ImageTensor>> {
        lrs.iter().map(upscale_bicubic).collect()
    }
}

impl SuperResolver for Tsrn {
    fn super_resolve_batch(&self, lrs: &[ImageTensor]) -> Result<Vec<ImageTensor>> {
        Tsrn::super_resolve_batch(self, lrs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    BicubicLr,
    SrOutput,
    Hr,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::BicubicLr, Condition::SrOutput, Condition::Hr];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::BicubicLr => "bicubic_lr",
            Condition::SrOutput => "sr_output",
            Condition::Hr => "hr",
        }
    }
}

/// Recognition accuracy under the three input conditions plus image metrics
/// of the bicubic and SR outputs against HR.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub accuracy: BTreeMap<Condition, AccuracyResult>,
    pub bicubic_metrics: MetricsReport,
    pub sr_metrics: MetricsReport,
}

impl ComparisonReport {
    /// `sr - bicubic` accuracy per subset.
    pub fn improvement(&self) -> BTreeMap<Subset, f64> {
        let bic = &self.accuracy[&Condition::BicubicLr];
        let sr = &self.accuracy[&Condition::SrOutput];
        sr.per_subset
            .iter()
            .filter_map(|(s, a)| bic.per_subset.get(s).map(|b| (*s, a.accuracy - b.accuracy)))
            .collect()
    }

    pub fn improvement_average(&self) -> Option<f64> {
        Some(
            self.accuracy[&Condition::SrOutput].weighted_average()?
                - self.accuracy[&Condition::BicubicLr].weighted_average()?,
        )
    }

    /// Conditions as rows, subsets plus the weighted average as columns.
    pub fn to_table(&self) -> String {
        let subsets: Vec<Subset> = self.accuracy[&Condition::Hr].per_subset.keys().copied().collect();
        let mut out = String::new();
        let _ = write!(out, "{:<12}", "condition");
        for s in &subsets {
            let _ = write!(out, "{:>10}", s.as_str());
        }
        let _ = writeln!(out, "{:>10}", "average");
        let pct = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |a| format!("{:.2}%", 100.0 * a));
        for c in Condition::ALL {
            let r = &self.accuracy[&c];
            let _ = write!(out, "{:<12}", c.as_str());
            for s in &subsets {
                let _ = write!(out, "{:>10}", pct(r.per_subset.get(s).map(|a| a.accuracy)));
            }
            let _ = writeln!(out, "{:>10}", pct(r.weighted_average()));
        }
        let imp = self.improvement();
        let _ = write!(out, "{:<12}", "improvement");
        for s in &subsets {
            let _ = write!(out, "{:>10}", pct(imp.get(s).copied()));
        }
        let _ = writeln!(out, "{:>10}", pct(self.improvement_average()));
        out
    }
}

/// Runs the two-step protocol on every manifest row: super-resolve, then
/// recognize, alongside the bicubic and HR conditions.
pub fn compare_conditions<S, R>(
    model: &S,
    manifest: &DatasetManifest,
    recognizer: &R,
    batch_size: usize,
) -> Result<ComparisonReport>
where
    S: SuperResolver + ?Sized,
    R: Recognizer + ?Sized,
{
    if manifest.is_empty() {
        return Err(Error::InvalidInput("empty manifest".into()));
    }
    let mut bicubic = Vec::with_capacity(manifest.len());
    let mut sr = Vec::with_capacity(manifest.len());
    let mut hr = Vec::with_capacity(manifest.len());
    for batch in iterate_batches(manifest, BatchOptions::new(batch_size)) {
        let batch = batch?;
        let up = BicubicUpscaler.super_resolve_batch(&batch.lr)?;
        let out = model.super_resolve_batch(&batch.lr)?;
        for i in 0..batch.len() {
            let (text, subset) = (batch.text[i].clone(), batch.subset[i]);
            bicubic.push((up[i].clone(), text.clone(), subset));
            sr.push((out[i].clone(), text.clone(), subset));
            hr.push((batch.hr[i].clone(), text, subset));
        }
    }
    let metrics = |pred: &[(ImageTensor, String, Subset)]| {
        aggregate_report(pred.iter().zip(&hr).map(|(p, h)| (p.0.clone(), h.0.clone(), p.2)))
    };
    let bicubic_metrics = metrics(&bicubic)?;
    let sr_metrics = metrics(&sr)?;
    let mut acc = BTreeMap::new();
    acc.insert(Condition::BicubicLr, accuracy(recognizer, bicubic)?);
    acc.insert(Condition::SrOutput, accuracy(recognizer, sr)?);
    acc.insert(Condition::Hr, accuracy(recognizer, hr)?);
    Ok(ComparisonReport {
        accuracy: acc,
        bicubic_metrics,
        sr_metrics,
    })
}
