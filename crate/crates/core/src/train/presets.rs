use serde::Serialize;

use crate::config::ModelConfig;

/// One ablation condition: a model config plus the LR source it trains on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationPreset {
    pub name: String,
    pub model: ModelConfig,
    /// Train on bicubic-downsampled HR instead of captured LR.
    pub synthetic_lr: bool,
}

impl AblationPreset {
    fn new(name: impl Into<String>, model: ModelConfig) -> Self {
        Self {
            name: name.into(),
            model,
            synthetic_lr: false,
        }
    }
}

/// The default model first, then one preset per value of each ablation axis:
/// hidden units, SRB count, mask, alignment, and finally the synthetic-LR
/// training condition.
pub fn ablation_presets() -> Vec<AblationPreset> {
    let base = ModelConfig::default();
    let mut out = vec![AblationPreset::new("default", base)];
    for h in [16, 32, 64, 128] {
        out.push(AblationPreset::new(format!("hidden_{h}"), base.with_hidden_units(h)));
    }
    for n in [4, 5, 6, 7] {
        out.push(AblationPreset::new(format!("srb_{n}"), ModelConfig { num_srb: n, ..base }));
    }
    for on in [true, false] {
        let tag = if on { "on" } else { "off" };
        out.push(AblationPreset::new(format!("mask_{tag}"), ModelConfig { use_mask: on, ..base }));
    }
    for on in [true, false] {
        let tag = if on { "on" } else { "off" };
        out.push(AblationPreset::new(
            format!("align_{tag}"),
            ModelConfig {
                use_alignment: on,
                ..base
            },
        ));
    }
    out.push(AblationPreset {
        synthetic_lr: true,
        ..AblationPreset::new("synthetic_lr", base)
    });
    out
}
