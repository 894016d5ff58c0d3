//! Recognition-accuracy evaluation: super-resolve, then read the result.

pub mod harness;
pub mod recognizer;

pub use harness::{
    accuracy, compare_conditions, normalize_text, AccuracyResult, BicubicUpscaler, ComparisonReport,
    Condition, SubsetAccuracy, SuperResolver,
};
pub use recognizer::{Concurrency, ExternalRecognizer, Recognizer, ToyRecognizer};
