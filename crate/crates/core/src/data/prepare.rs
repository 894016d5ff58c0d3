//! Turns annotated raw crops into a normalized pair manifest.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::allocation::{allocate_subset, bucket_by_height, HeightBucket};
use crate::data::degrade::normalize_pair;
use crate::data::manifest::{write_manifest, DatasetManifest, ManifestRow};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::record::{Direction, Source, Subset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One annotated raw crop pair. Image paths are relative to the annotation file.
/// Vertical and top-down boxes are expected to be rotated upstream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRow {
    pub lr_path: String,
    pub hr_path: String,
    pub text: String,
    pub source: Source,
    pub focal_lr_mm: f64,
    pub focal_hr_mm: f64,
    pub direction: Direction,
    pub split: Split,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PrepareSummary {
    pub kept: usize,
    pub ignored_direction: usize,
    pub lr_out_of_range: usize,
    pub hr_out_of_range: usize,
}

/// Why a pair does not enter the dataset, if it doesn't.
pub fn pair_rejection(lr_height: usize, hr_height: usize) -> Option<&'static str> {
    if bucket_by_height(hr_height) != HeightBucket::HrGroup {
        return Some("hr");
    }
    if matches!(
        bucket_by_height(lr_height),
        HeightBucket::Discard | HeightBucket::Oversize
    ) {
        return Some("lr");
    }
    None
}

pub fn read_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotationRow>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| Error::ManifestRow {
            row: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(rows)
}

/// Filters, allocates and resizes annotated crops; writes PNGs under `lr/` and
/// `hr/` next to `out_manifest`, then the manifest itself.
pub fn prepare_dataset(annotations: impl AsRef<Path>, out_manifest: impl AsRef<Path>) -> Result<(DatasetManifest, PrepareSummary)> {
    let annotations = annotations.as_ref();
    let out_manifest = out_manifest.as_ref();
    let in_root = annotations.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    let out_root = out_manifest.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    for sub in ["lr", "hr"] {
        std::fs::create_dir_all(out_root.join(sub)).map_err(|e| Error::io(out_root.join(sub), e))?;
    }

    let mut summary = PrepareSummary::default();
    let mut rows = Vec::new();
    for (i, ann) in read_annotations(annotations)?.into_iter().enumerate() {
        let row_err = |e: Error| Error::ManifestRow {
            row: i + 1,
            msg: e.to_string(),
        };
        if ann.direction == Direction::Ignored {
            summary.ignored_direction += 1;
            continue;
        }
        let lr_raw = ImageTensor::load_rgb(in_root.join(&ann.lr_path)).map_err(row_err)?;
        let hr_raw = ImageTensor::load_rgb(in_root.join(&ann.hr_path)).map_err(row_err)?;
        match pair_rejection(lr_raw.height(), hr_raw.height()) {
            Some("hr") => {
                summary.hr_out_of_range += 1;
                continue;
            }
            Some(_) => {
                summary.lr_out_of_range += 1;
                continue;
            }
            None => {}
        }
        let subset = match ann.split {
            Split::Train => Subset::Train,
            Split::Test => allocate_subset(ann.source, ann.focal_lr_mm).map_err(row_err)?,
        };
        let (lr, hr) = normalize_pair(&lr_raw, &hr_raw).map_err(row_err)?;
        let name = format!("{:06}.png", rows.len());
        lr.save_png(out_root.join("lr").join(&name))?;
        hr.save_png(out_root.join("hr").join(&name))?;
        rows.push(ManifestRow {
            lr_path: format!("lr/{name}"),
            hr_path: format!("hr/{name}"),
            text: ann.text,
            source: ann.source,
            focal_lr_mm: ann.focal_lr_mm,
            focal_hr_mm: ann.focal_hr_mm,
            direction: ann.direction,
            subset,
        });
        summary.kept += 1;
    }
    write_manifest(out_manifest, &rows)?;
    Ok((
        DatasetManifest {
            root: out_root,
            records: rows,
        },
        summary,
    ))
}
