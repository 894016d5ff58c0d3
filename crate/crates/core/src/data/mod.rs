//! Dataset ingestion, allocation, masks, degradations and the toy corpus.

pub mod allocation;
pub mod degrade;
pub mod manifest;
pub mod mask;
pub mod prepare;
pub mod toy;

pub use allocation::{allocate_subset, bucket_by_height, HeightBucket};
pub use degrade::{
    make_synthetic_lr, misalign_augment, misalign_augment_at, normalize_pair, upscale_bicubic,
};
pub use manifest::{
    iterate_batches, load_batch, load_dataset, write_manifest, Batch, BatchOptions,
    DatasetManifest, ManifestRow,
};
pub use mask::{make_binary_mask, with_mask};
pub use prepare::{prepare_dataset, AnnotationRow, PrepareSummary, Split};
