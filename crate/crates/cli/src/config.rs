//! Config resolution: defaults ← JSON file ← `--set key=value` overrides ←
//! dedicated flags, with every unknown key rejected before any work starts.
//!
//! Each subcommand owns a small spec struct whose serde view defines the
//! accepted key set. Overrides are applied to the JSON tree and checked
//! against the serialized defaults, so a typo like `--set epoch=5` fails with
//! the offending path instead of being silently ignored.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use aqa_core::backbone::LayerTag;
use aqa_core::error::AqaError;
use aqa_core::harness::{LrSchedule, TrainConfig};
use aqa_core::losses::{CaptionNorm, LossWeights};
use aqa_core::mtl::{Architecture, ModelConfig, TaskConfig};
use aqa_core::Result;

/// Channel and input-size tier of the model presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizePreset {
    /// Publication-scale networks (C3D at 96×112×112, MSCADC at 16×180×180).
    Full,
    /// Reduced channels and input size for fast runs on modest hardware.
    Tiny,
}

impl SizePreset {
    pub fn model(self, architecture: Architecture, vocab: usize) -> ModelConfig {
        match self {
            SizePreset::Full => ModelConfig::full(architecture, vocab),
            SizePreset::Tiny => ModelConfig::tiny(architecture, vocab),
        }
    }
}

/// JSON-configurable surface of `aqa train`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSpec {
    pub architecture: Architecture,
    pub preset: SizePreset,
    pub tasks: TaskConfig,
    pub weights: LossWeights,
    pub caption_norm: CaptionNorm,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub augment: bool,
    pub seed: u64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        let base = TrainConfig::new(ModelConfig::full(Architecture::C3dAvg, 64));
        TrainSpec {
            architecture: Architecture::C3dAvg,
            preset: SizePreset::Full,
            tasks: base.tasks,
            weights: base.weights,
            caption_norm: base.caption_norm,
            lr: base.lr,
            lr_schedule: base.lr_schedule,
            epochs: base.epochs,
            batch_size: base.batch_size,
            augment: base.augment,
            seed: base.seed,
        }
    }
}

impl TrainSpec {
    /// Finishes the config once the dataset vocabulary size is known.
    pub fn to_train_config(&self, vocab: usize) -> TrainConfig {
        TrainConfig {
            model: self.preset.model(self.architecture, vocab),
            tasks: self.tasks,
            weights: self.weights,
            caption_norm: self.caption_norm,
            lr: self.lr,
            lr_schedule: self.lr_schedule,
            epochs: self.epochs,
            batch_size: self.batch_size,
            augment: self.augment,
            seed: self.seed,
        }
    }
}

/// JSON-configurable surface of `aqa ablate`: one training recipe applied to
/// every task arm of every listed architecture.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblateSpec {
    pub architectures: Vec<Architecture>,
    pub preset: SizePreset,
    pub weights: LossWeights,
    pub caption_norm: CaptionNorm,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub augment: bool,
    pub seed: u64,
}

impl Default for AblateSpec {
    fn default() -> Self {
        let base = TrainSpec::default();
        AblateSpec {
            architectures: vec![Architecture::C3dAvg, Architecture::Mscadc],
            preset: base.preset,
            weights: base.weights,
            caption_norm: base.caption_norm,
            lr: base.lr,
            lr_schedule: base.lr_schedule,
            epochs: base.epochs,
            batch_size: base.batch_size,
            augment: base.augment,
            seed: base.seed,
        }
    }
}

impl AblateSpec {
    pub fn base_config(&self, vocab: usize) -> TrainConfig {
        TrainSpec {
            architecture: *self.architectures.first().unwrap_or(&Architecture::C3dAvg),
            preset: self.preset,
            tasks: TaskConfig::all(),
            weights: self.weights,
            caption_norm: self.caption_norm,
            lr: self.lr,
            lr_schedule: self.lr_schedule,
            epochs: self.epochs,
            batch_size: self.batch_size,
            augment: self.augment,
            seed: self.seed,
        }
        .to_train_config(vocab)
    }

    pub fn models(&self, vocab: usize) -> Vec<ModelConfig> {
        self.architectures
            .iter()
            .map(|&a| self.preset.model(a, vocab))
            .collect()
    }
}

/// JSON-configurable surface of `aqa sweep`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    pub architecture: Architecture,
    pub preset: SizePreset,
    pub sizes: Vec<usize>,
    pub weights: LossWeights,
    pub caption_norm: CaptionNorm,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub augment: bool,
    pub seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        let base = TrainSpec::default();
        SweepSpec {
            architecture: base.architecture,
            preset: base.preset,
            sizes: Vec::new(),
            weights: base.weights,
            caption_norm: base.caption_norm,
            lr: base.lr,
            lr_schedule: base.lr_schedule,
            epochs: base.epochs,
            batch_size: base.batch_size,
            augment: base.augment,
            seed: base.seed,
        }
    }
}

impl SweepSpec {
    pub fn base_config(&self, vocab: usize) -> TrainConfig {
        TrainSpec {
            architecture: self.architecture,
            preset: self.preset,
            tasks: TaskConfig::all(),
            weights: self.weights,
            caption_norm: self.caption_norm,
            lr: self.lr,
            lr_schedule: self.lr_schedule,
            epochs: self.epochs,
            batch_size: self.batch_size,
            augment: self.augment,
            seed: self.seed,
        }
        .to_train_config(vocab)
    }
}

/// JSON-configurable surface of `aqa probe`. The model comes from `--ckpt`
/// when given; otherwise a freshly initialized `architecture`/`preset` model
/// is probed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub architecture: Architecture,
    pub preset: SizePreset,
    pub layers: Vec<LayerTag>,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        ProbeSpec {
            architecture: Architecture::C3dAvg,
            preset: SizePreset::Full,
            layers: LayerTag::ALL.to_vec(),
            lambda: 1e-3,
            seed: 0,
        }
    }
}

/// Resolves a subcommand config: the struct's defaults, overlaid with the
/// JSON file at `config_path` (when given), then with each `key=value`
/// override in order. Keys outside the spec's schema are rejected with their
/// full dotted path.
pub fn resolve<T: Serialize + DeserializeOwned>(
    default: T,
    config_path: Option<&Path>,
    overrides: &[String],
) -> Result<T> {
    let reference = serde_json::to_value(&default)?;
    let mut tree = reference.clone();

    if let Some(path) = config_path {
        if !path.exists() {
            return Err(AqaError::MissingInput(path.to_path_buf()));
        }
        let user: Value = serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| {
            AqaError::Config(format!("{} is not valid JSON: {e}", path.display()))
        })?;
        let mut unknown = Vec::new();
        collect_unknown_keys(&user, &reference, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(AqaError::Config(format!(
                "unknown keys in {}: {}",
                path.display(),
                unknown.join(", ")
            )));
        }
        merge(&mut tree, user);
    }

    for entry in overrides {
        let (key, raw) = entry.split_once('=').ok_or_else(|| {
            AqaError::Config(format!("--set expects key=value, got `{entry}`"))
        })?;
        set_dotted(&mut tree, &reference, key, raw)?;
    }

    serde_json::from_value(tree).map_err(|e| AqaError::Config(format!("invalid config value: {e}")))
}

fn collect_unknown_keys(user: &Value, reference: &Value, prefix: &str, out: &mut Vec<String>) {
    if let (Value::Object(user), Value::Object(reference)) = (user, reference) {
        for (key, value) in user {
            let path = if prefix.is_empty() {
                key.clone()
            } else {
                format!("{prefix}.{key}")
            };
            match reference.get(key) {
                None => out.push(path),
                Some(r) => collect_unknown_keys(value, r, &path, out),
            }
        }
    }
}

fn merge(dst: &mut Value, src: Value) {
    match (dst, src) {
        (Value::Object(dst), Value::Object(src)) => {
            for (key, value) in src {
                match dst.get_mut(&key) {
                    Some(slot) => merge(slot, value),
                    None => {
                        dst.insert(key, value);
                    }
                }
            }
        }
        (dst, src) => *dst = src,
    }
}

fn set_dotted(tree: &mut Value, reference: &Value, key: &str, raw: &str) -> Result<()> {
    let mut ref_cursor = reference;
    for part in key.split('.') {
        ref_cursor = ref_cursor
            .as_object()
            .and_then(|o| o.get(part))
            .ok_or_else(|| AqaError::Config(format!("unknown config key `{key}`")))?;
    }
    // Bare words are strings; everything JSON-parseable (numbers, booleans,
    // arrays, quoted strings) is taken as typed.
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cursor = tree;
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        let map = cursor.as_object_mut().expect("reference walk passed");
        if parts.peek().is_none() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        cursor = map.get_mut(part).expect("reference walk passed");
    }
    unreachable!("split produces at least one part");
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_in_order_and_flags_parse_typed() {
        let spec: TrainSpec = resolve(
            TrainSpec::default(),
            None,
            &[
                "epochs=5".to_string(),
                "epochs=7".to_string(),
                "architecture=mscadc".to_string(),
                "weights.caption=0.5".to_string(),
                "augment=false".to_string(),
            ],
        )
        .unwrap();
        assert_eq!(spec.epochs, 7);
        assert_eq!(spec.architecture, Architecture::Mscadc);
        assert_eq!(spec.weights.caption, 0.5);
        assert!(!spec.augment);
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_path() {
        let top = resolve(TrainSpec::default(), None, &["epoch=5".to_string()]);
        assert!(matches!(top, Err(AqaError::Config(_))));
        let nested = resolve(TrainSpec::default(), None, &["weights.capton=0.5".to_string()]);
        let err = nested.unwrap_err().to_string();
        assert!(err.contains("weights.capton"), "{err}");
    }

    #[test]
    fn config_file_overlays_defaults_and_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.json");
        std::fs::write(&path, r#"{"epochs": 3, "preset": "tiny"}"#).unwrap();
        let spec: TrainSpec = resolve(TrainSpec::default(), Some(&path), &[]).unwrap();
        assert_eq!(spec.epochs, 3);
        assert_eq!(spec.preset, SizePreset::Tiny);
        assert_eq!(spec.batch_size, 3);

        std::fs::write(&path, r#"{"weights": {"aqa": 2.0, "bogus": 1.0}}"#).unwrap();
        let err = resolve::<TrainSpec>(TrainSpec::default(), Some(&path), &[]).unwrap_err();
        assert!(err.to_string().contains("weights.bogus"), "{err}");

        let missing = resolve::<TrainSpec>(
            TrainSpec::default(),
            Some(&dir.path().join("absent.json")),
            &[],
        );
        assert!(matches!(missing, Err(AqaError::MissingInput(_))));
    }

    #[test]
    fn set_values_fall_back_to_strings_and_support_arrays() {
        let spec: SweepSpec = resolve(
            SweepSpec::default(),
            None,
            &["sizes=[4,8]".to_string(), "preset=tiny".to_string()],
        )
        .unwrap();
        assert_eq!(spec.sizes, vec![4, 8]);
        assert_eq!(spec.preset, SizePreset::Tiny);
    }

    #[test]
    fn type_mismatches_surface_as_config_errors() {
        let err = resolve::<TrainSpec>(
            TrainSpec::default(),
            None,
            &["epochs=lots".to_string()],
        )
        .unwrap_err();
        assert!(matches!(err, AqaError::Config(_)));
        assert!(err.is_validation());
    }
}
