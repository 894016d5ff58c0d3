//! Experiment configuration and its flat `key = value` file format.
//!
//! ```text
//! # model
//! num_srb = 5
//! hidden_units = 32
//! # training
//! weight_gp_loss = 1e-4
//! ```
//!
//! Blank lines and `#` comments are ignored. Keys are the struct field names;
//! unknown or repeated keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architectural knobs of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_srb: usize,
    pub hidden_units: usize,
    pub feature_channels: usize,
    pub use_mask: bool,
    pub use_alignment: bool,
    pub scale: usize,
    pub tps_points: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_srb: 5,
            hidden_units: 32,
            feature_channels: 64,
            use_mask: true,
            use_alignment: true,
            scale: 2,
            tps_points: 20,
        }
    }
}

impl ModelConfig {
    /// Config with `hidden_units = h` and the matching `feature_channels = 2h`.
    pub fn with_hidden_units(self, hidden_units: usize) -> Self {
        Self {
            hidden_units,
            feature_channels: 2 * hidden_units,
            ..self
        }
    }

    /// Number of input channels the network expects: RGB plus the optional mask.
    pub fn input_channels(&self) -> usize {
        if self.use_mask {
            4
        } else {
            3
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field, msg: &str| {
            Err(Error::ConfigInvalid {
                field,
                msg: msg.to_string(),
            })
        };
        if self.num_srb == 0 {
            return bad("num_srb", "must be positive");
        }
        if self.hidden_units == 0 {
            return bad("hidden_units", "must be positive");
        }
        if self.feature_channels == 0 {
            return bad("feature_channels", "must be positive");
        }
        if self.feature_channels != 2 * self.hidden_units {
            return Err(Error::ConfigInvalid {
                field: "feature_channels",
                msg: format!(
                    "bidirectional recurrence emits 2 x hidden_units = {} channels, but feature_channels = {}",
                    2 * self.hidden_units,
                    self.feature_channels
                ),
            });
        }
        if self.scale != 2 {
            return bad("scale", "only x2 super-resolution is supported");
        }
        if self.tps_points < 4 || self.tps_points % 2 != 0 {
            return bad("tps_points", "must be an even number >= 4");
        }
        Ok(())
    }
}

/// Optimization and loss settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub weight_pixel_loss: f64,
    pub weight_gp_loss: f64,
    pub epochs: usize,
    pub optimizer_momentum: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Stop after this many optimizer steps; 0 means run all epochs.
    pub max_steps: usize,
    /// Train on bicubic-downsampled HR instead of the captured LR.
    pub synthetic_lr: bool,
    /// Apply the 90% sliding-crop misalignment to every LR input.
    pub misalign_augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            weight_pixel_loss: 1.0,
            weight_gp_loss: 1e-4,
            epochs: 500,
            optimizer_momentum: 0.9,
            learning_rate: 1e-4,
            batch_size: 16,
            seed: 0,
            max_steps: 0,
            synthetic_lr: false,
            misalign_augment: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field, msg: &str| {
            Err(Error::ConfigInvalid {
                field,
                msg: msg.to_string(),
            })
        };
        if !(self.weight_pixel_loss.is_finite() && self.weight_pixel_loss >= 0.0) {
            return bad("weight_pixel_loss", "must be finite and >= 0");
        }
        if !(self.weight_gp_loss.is_finite() && self.weight_gp_loss >= 0.0) {
            return bad("weight_gp_loss", "must be finite and >= 0");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be positive");
        }
        if !(0.0..1.0).contains(&self.optimizer_momentum) {
            return bad("optimizer_momentum", "must lie in [0, 1)");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate", "must be finite and > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        Ok(())
    }
}

const MODEL_KEYS: &[&str] = &[
    "num_srb",
    "hidden_units",
    "feature_channels",
    "use_mask",
    "use_alignment",
    "scale",
    "tps_points",
];

const TRAIN_KEYS: &[&str] = &[
    "weight_pixel_loss",
    "weight_gp_loss",
    "epochs",
    "optimizer_momentum",
    "learning_rate",
    "batch_size",
    "seed",
    "max_steps",
    "synthetic_lr",
    "misalign_augment",
];

/// Which key families a parser accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeySet {
    Model,
    Train,
    Both,
}

impl KeySet {
    fn allows(self, key: &str) -> bool {
        match self {
            KeySet::Model => MODEL_KEYS.contains(&key),
            KeySet::Train => TRAIN_KEYS.contains(&key),
            KeySet::Both => MODEL_KEYS.contains(&key) || TRAIN_KEYS.contains(&key),
        }
    }
}

/// Reads a config file accepting both model and training keys.
pub fn load_config(path: impl AsRef<Path>) -> Result<(ModelConfig, TrainConfig)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, KeySet::Both)
}

/// Parses `key = value` text. Missing keys take their defaults; both configs
/// are validated before returning.
pub fn parse_config(text: &str, keys: KeySet) -> Result<(ModelConfig, TrainConfig)> {
    let mut entries = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::ConfigParse {
            key: line.to_string(),
            msg: format!("line {}: expected `key = value`", lineno + 1),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if !keys.allows(key) {
            return Err(Error::ConfigParse {
                key: key.to_string(),
                msg: "unknown key".into(),
            });
        }
        if entries.insert(key.to_string(), value.to_string()).is_some() {
            return Err(Error::ConfigParse {
                key: key.to_string(),
                msg: "repeated key".into(),
            });
        }
    }

    let mut model = ModelConfig::default();
    let mut train = TrainConfig::default();
    for (key, value) in &entries {
        match key.as_str() {
            "num_srb" => model.num_srb = parse(key, value)?,
            "hidden_units" => model.hidden_units = parse(key, value)?,
            "feature_channels" => model.feature_channels = parse(key, value)?,
            "use_mask" => model.use_mask = parse(key, value)?,
            "use_alignment" => model.use_alignment = parse(key, value)?,
            "scale" => model.scale = parse(key, value)?,
            "tps_points" => model.tps_points = parse(key, value)?,
            "weight_pixel_loss" => train.weight_pixel_loss = parse(key, value)?,
            "weight_gp_loss" => train.weight_gp_loss = parse(key, value)?,
            "epochs" => train.epochs = parse(key, value)?,
            "optimizer_momentum" => train.optimizer_momentum = parse(key, value)?,
            "learning_rate" => train.learning_rate = parse(key, value)?,
            "batch_size" => train.batch_size = parse(key, value)?,
            "seed" => train.seed = parse(key, value)?,
            "max_steps" => train.max_steps = parse(key, value)?,
            "synthetic_lr" => train.synthetic_lr = parse(key, value)?,
            "misalign_augment" => train.misalign_augment = parse(key, value)?,
            _ => unreachable!("key filtered above"),
        }
    }
    model.validate()?;
    train.validate()?;
    Ok((model, train))
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| Error::ConfigParse {
        key: key.to_string(),
        msg: format!("cannot parse `{value}`: {e}"),
    })
}

pub fn model_config_to_string(m: &ModelConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "num_srb = {}", m.num_srb);
    let _ = writeln!(out, "hidden_units = {}", m.hidden_units);
    let _ = writeln!(out, "feature_channels = {}", m.feature_channels);
    let _ = writeln!(out, "use_mask = {}", m.use_mask);
    let _ = writeln!(out, "use_alignment = {}", m.use_alignment);
    let _ = writeln!(out, "scale = {}", m.scale);
    let _ = writeln!(out, "tps_points = {}", m.tps_points);
    out
}

pub fn train_config_to_string(t: &TrainConfig) -> String {
    // `{:?}` on f64 prints the shortest string that parses back to the same value.
    let mut out = String::new();
    let _ = writeln!(out, "weight_pixel_loss = {:?}", t.weight_pixel_loss);
    let _ = writeln!(out, "weight_gp_loss = {:?}", t.weight_gp_loss);
    let _ = writeln!(out, "epochs = {}", t.epochs);
    let _ = writeln!(out, "optimizer_momentum = {:?}", t.optimizer_momentum);
    let _ = writeln!(out, "learning_rate = {:?}", t.learning_rate);
    let _ = writeln!(out, "batch_size = {}", t.batch_size);
    let _ = writeln!(out, "seed = {}", t.seed);
    let _ = writeln!(out, "max_steps = {}", t.max_steps);
    let _ = writeln!(out, "synthetic_lr = {}", t.synthetic_lr);
    let _ = writeln!(out, "misalign_augment = {}", t.misalign_augment);
    out
}

/// Serializes both configs into one file body accepted by [`parse_config`].
pub fn config_to_string(m: &ModelConfig, t: &TrainConfig) -> String {
    format!(
        "# model\n{}# training\n{}",
        model_config_to_string(m),
        train_config_to_string(t)
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_from_minimal_file() {
        let (m, t) = parse_config("num_srb=5\nhidden_units=32\n", KeySet::Both).unwrap();
        assert_eq!(m, ModelConfig::default());
        assert_eq!(t, TrainConfig::default());
    }

    #[test]
    fn gp_weight_is_read() {
        let (_, t) = parse_config("weight_gp_loss=1e-4", KeySet::Both).unwrap();
        assert_eq!(t.weight_gp_loss, 1e-4);
    }

    #[test]
    fn zero_srb_is_rejected_with_field_name() {
        match parse_config("num_srb=0", KeySet::Both) {
            Err(Error::ConfigInvalid { field, .. }) => assert_eq!(field, "num_srb"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_and_repeated_keys_are_rejected() {
        match parse_config("num_blocks = 5", KeySet::Both) {
            Err(Error::ConfigParse { key, .. }) => assert_eq!(key, "num_blocks"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_config("seed=1\nseed=2", KeySet::Both).is_err());
        assert!(parse_config("seed=1", KeySet::Model).is_err());
        assert!(parse_config("num_srb=3", KeySet::Train).is_err());
    }

    #[test]
    fn parse_errors_name_the_key() {
        match parse_config("learning_rate = fast", KeySet::Both) {
            Err(Error::ConfigParse { key, .. }) => assert_eq!(key, "learning_rate"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_config("just text", KeySet::Both).is_err());
    }

    #[test]
    fn channel_invariant_is_enforced() {
        match parse_config("hidden_units = 16", KeySet::Both) {
            Err(Error::ConfigInvalid { field, .. }) => assert_eq!(field, "feature_channels"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_config("hidden_units = 16\nfeature_channels = 32", KeySet::Both).is_ok());
        assert!(parse_config("tps_points = 7", KeySet::Both).is_err());
        assert!(parse_config("scale = 4", KeySet::Both).is_err());
        assert!(parse_config("learning_rate = 0", KeySet::Both).is_err());
        assert!(parse_config("weight_gp_loss = -1", KeySet::Both).is_err());
    }

    #[test]
    fn comments_and_blank_lines() {
        let text = "# header\n\n  num_srb = 4   # fewer blocks\n";
        let (m, _) = parse_config(text, KeySet::Model).unwrap();
        assert_eq!(m.num_srb, 4);
    }

    #[test]
    fn load_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.cfg");
        std::fs::write(&path, "num_srb = 6\nseed = 9\n").unwrap();
        let (m, t) = load_config(&path).unwrap();
        assert_eq!((m.num_srb, t.seed), (6, 9));
        assert!(matches!(load_config(dir.path().join("missing")), Err(Error::Io { .. })));
    }

    proptest! {
        #[test]
        fn round_trip(
            num_srb in 1usize..10,
            hidden in 1usize..200,
            use_mask: bool,
            use_alignment: bool,
            half_k in 2usize..20,
            wp in 0.0f64..10.0,
            wg in 0.0f64..1.0,
            epochs in 1usize..1000,
            mom in 0.0f64..0.999,
            lr in 1e-8f64..1.0,
            batch in 1usize..512,
            seed: u64,
            steps in 0usize..10_000,
            synthetic_lr: bool,
            misalign: bool,
        ) {
            let m = ModelConfig {
                num_srb,
                hidden_units: hidden,
                feature_channels: 2 * hidden,
                use_mask,
                use_alignment,
                scale: 2,
                tps_points: 2 * half_k,
            };
            let t = TrainConfig {
                weight_pixel_loss: wp,
                weight_gp_loss: wg,
                epochs,
                optimizer_momentum: mom,
                learning_rate: lr,
                batch_size: batch,
                seed,
                max_steps: steps,
                synthetic_lr,
                misalign_augment: misalign,
            };
            let (m2, t2) = parse_config(&config_to_string(&m, &t), KeySet::Both).unwrap();
            prop_assert_eq!(m, m2);
            prop_assert_eq!(t, t2);
        }
    }
}
