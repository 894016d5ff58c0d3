//! Line-delimited JSON manifests of prepared LR/HR pairs and batch iteration.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::degrade::{make_synthetic_lr, misalign_augment};
use crate::data::mask::with_mask;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::record::{Direction, Source, Subset};

/// One line of a manifest. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub lr_path: String,
    pub hr_path: String,
    pub text: String,
    pub source: Source,
    pub focal_lr_mm: f64,
    pub focal_hr_mm: f64,
    pub direction: Direction,
    pub subset: Subset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRow>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn subset_counts(&self) -> BTreeMap<Subset, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.subset).or_default() += 1;
        }
        counts
    }

    /// Manifest restricted to one subset.
    pub fn filter_subset(&self, subset: Subset) -> DatasetManifest {
        DatasetManifest {
            root: self.root.clone(),
            records: self
                .records
                .iter()
                .filter(|r| r.subset == subset)
                .cloned()
                .collect(),
        }
    }

    pub fn lr_path(&self, row: &ManifestRow) -> PathBuf {
        self.root.join(&row.lr_path)
    }

    pub fn hr_path(&self, row: &ManifestRow) -> PathBuf {
        self.root.join(&row.hr_path)
    }

    /// Writes the rows, one JSON object per line.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_manifest(path, &self.records)
    }
}

pub fn write_manifest(path: impl AsRef<Path>, rows: &[ManifestRow]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a manifest and checks that every referenced image exists.
/// Rows with `direction = ignored` are dropped.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let mut records = Vec::new();
    let mut ignored = 0usize;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let row_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: ManifestRow = serde_json::from_str(&line).map_err(|e| Error::ManifestRow {
            row: row_no,
            msg: e.to_string(),
        })?;
        for p in [&row.lr_path, &row.hr_path] {
            if !root.join(p).is_file() {
                return Err(Error::ManifestRow {
                    row: row_no,
                    msg: format!("missing file {}", root.join(p).display()),
                });
            }
        }
        if row.direction == Direction::Ignored {
            ignored += 1;
            continue;
        }
        records.push(row);
    }
    let manifest = DatasetManifest { root, records };
    let counts = manifest
        .subset_counts()
        .iter()
        .map(|(s, n)| format!("{s}={n}"))
        .collect::<Vec<_>>()
        .join(" ");
    log::info!(
        "loaded {} pairs from {} ({counts}; {ignored} ignored-direction rows skipped)",
        manifest.len(),
        path.display()
    );
    Ok(manifest)
}

/// How samples are materialized into batches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchOptions {
    pub batch_size: usize,
    pub shuffle: bool,
    /// Seeds the shuffle order.
    pub seed: u64,
    /// Append the binary mask as a fourth LR channel.
    pub use_mask: bool,
    /// Replace the stored LR with a bicubic downsample of the HR.
    pub synthetic_lr: bool,
    /// Apply the sliding-crop misalignment, seeded per row by `augment_seed`.
    pub misalign: bool,
    pub augment_seed: u64,
}

impl BatchOptions {
    pub fn new(batch_size: usize) -> Self {
        Self {
            batch_size,
            shuffle: false,
            seed: 0,
            use_mask: false,
            synthetic_lr: false,
            misalign: false,
            augment_seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    /// Manifest row indices of the samples.
    pub indices: Vec<usize>,
    pub lr: Vec<ImageTensor>,
    pub hr: Vec<ImageTensor>,
    pub text: Vec<String>,
    pub subset: Vec<Subset>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Row identifiers used in diagnostics.
    pub fn ids(&self, manifest: &DatasetManifest) -> Vec<String> {
        self.indices
            .iter()
            .map(|&i| format!("{}:{}", i, manifest.records[i].lr_path))
            .collect()
    }
}

/// Sample order for one pass: identity, or a seeded shuffle.
pub fn batch_order(n: usize, shuffle: bool, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order
}

/// Lazily loads batches in a deterministic order; the last batch may be short.
pub fn iterate_batches<'a>(
    manifest: &'a DatasetManifest,
    opts: BatchOptions,
) -> impl Iterator<Item = Result<Batch>> + 'a {
    let order = batch_order(manifest.len(), opts.shuffle, opts.seed);
    let chunks: Vec<Vec<usize>> = order
        .chunks(opts.batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect();
    chunks
        .into_iter()
        .map(move |indices| load_batch(manifest, &indices, &opts))
}

/// Materializes the given manifest rows.
pub fn load_batch(manifest: &DatasetManifest, indices: &[usize], opts: &BatchOptions) -> Result<Batch> {
    let mut batch = Batch {
        indices: indices.to_vec(),
        lr: Vec::with_capacity(indices.len()),
        hr: Vec::with_capacity(indices.len()),
        text: Vec::with_capacity(indices.len()),
        subset: Vec::with_capacity(indices.len()),
    };
    for &i in indices {
        let row = &manifest.records[i];
        let row_err = |e: Error| Error::ManifestRow {
            row: i + 1,
            msg: e.to_string(),
        };
        let hr = ImageTensor::load_rgb(manifest.hr_path(row)).map_err(row_err)?;
        let mut lr = if opts.synthetic_lr {
            make_synthetic_lr(&hr).map_err(row_err)?
        } else {
            ImageTensor::load_rgb(manifest.lr_path(row)).map_err(row_err)?
        };
        if opts.misalign {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.augment_seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            lr = misalign_augment(&lr, &mut rng)?;
        }
        if opts.use_mask {
            lr = with_mask(&lr)?;
        }
        batch.lr.push(lr);
        batch.hr.push(hr);
        batch.text.push(row.text.clone());
        batch.subset.push(row.subset);
    }
    Ok(batch)
}
