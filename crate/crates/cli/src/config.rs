//! The TOML configuration file and its dotted-key overrides.
//!
//! One file drives every subcommand; each reads the sections it needs.
//! `--override a.b=value` edits the parsed document before it is
//! deserialized, and the fully resolved document is written into the run
//! directory so any run can be reproduced from its artifacts alone.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

use jicd_core::model::{ModelConfig, Profile};
use jicd_core::noise::{NoiseKind, NoiseSpec};
use jicd_core::train::TrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub data: DataSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub profile: String,
    pub total_channels: Option<usize>,
    pub base_channels: Option<usize>,
    pub width: Option<usize>,
    pub hyper_channels: Option<usize>,
    pub use_attention: Option<bool>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            profile: "toy".into(),
            total_channels: None,
            base_channels: None,
            width: None,
            hyper_channels: None,
            use_attention: None,
        }
    }
}

impl ModelSection {
    pub fn to_model_config(&self) -> Result<ModelConfig> {
        let mut cfg = match self.profile.as_str() {
            "paper" => ModelConfig::paper(self.base_channels.unwrap_or(160)),
            "toy" => ModelConfig::toy(),
            "custom" => ModelConfig { profile: Profile::Custom, ..ModelConfig::toy() },
            other => bail!("unknown model profile {other:?} (expected paper, toy or custom)"),
        };
        if let Some(c) = self.total_channels {
            cfg.total_channels = c;
        }
        if let Some(i) = self.base_channels {
            cfg.base_channels = i;
        }
        if let Some(w) = self.width {
            cfg.width = w;
        }
        if let Some(h) = self.hyper_channels {
            cfg.hyper_channels = h;
        }
        if let Some(a) = self.use_attention {
            cfg.use_attention = a;
        }
        cfg.validate().map_err(|e| anyhow::anyhow!("invalid model config: {e}"))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lambda: f64,
    pub task_weight: f64,
    pub crop: usize,
    pub batch: usize,
    pub epochs: usize,
    pub lr_init: f64,
    pub lr_factor: f64,
    pub plateau_patience: u32,
    pub plateau_min_rel_improvement: f64,
    pub seed: u64,
    /// Checkpoint cadence in epochs.
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            lambda: 0.013,
            task_weight: 0.05,
            crop: 256,
            batch: 16,
            epochs: 300,
            lr_init: 1e-4,
            lr_factor: 0.5,
            plateau_patience: 10,
            plateau_min_rel_improvement: 1e-3,
            seed: 0,
            checkpoint_every: 1,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, noise: NoiseSpec) -> TrainConfig {
        TrainConfig {
            lambda: self.lambda,
            task_weight: self.task_weight,
            crop: self.crop,
            batch: self.batch,
            epochs: self.epochs,
            lr_init: self.lr_init,
            lr_factor: self.lr_factor,
            plateau_patience: self.plateau_patience,
            plateau_min_rel_improvement: self.plateau_min_rel_improvement,
            noise,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub kind: String,
    pub sigma: f64,
    pub sigma_set: Vec<f64>,
    pub a: f64,
    pub b: f64,
    pub exact_poisson: bool,
    pub seed: u64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            kind: "awgn".into(),
            sigma: 50.0,
            sigma_set: vec![50.0, 25.0, 15.0],
            a: jicd_core::noise::DEFAULT_PRACTICAL_A,
            b: jicd_core::noise::DEFAULT_PRACTICAL_B,
            exact_poisson: false,
            seed: 0,
        }
    }
}

impl NoiseSection {
    pub fn to_noise_spec(&self) -> Result<NoiseSpec> {
        let kind = match self.kind.as_str() {
            "awgn" => NoiseKind::Awgn { sigma: self.sigma },
            "variable_awgn" => NoiseKind::VariableAwgn { sigma_set: self.sigma_set.clone() },
            "practical" => NoiseKind::Practical {
                a: [self.a; 3],
                b: [self.b; 3],
                exact_poisson: self.exact_poisson,
            },
            other => bail!("unknown noise kind {other:?} (expected awgn, variable_awgn or practical)"),
        };
        let spec = NoiseSpec { kind, seed: self.seed };
        spec.validate().map_err(|e| anyhow::anyhow!("invalid noise spec: {e}"))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Directory of clean PNGs; when unset, a synthetic corpus is used.
    pub clean_dir: Option<String>,
    /// Directory of matching noisy PNGs for evaluation (optional; noise is
    /// synthesized per the noise section when absent).
    pub noisy_dir: Option<String>,
    pub dataset_label: String,
    pub synthetic_count: usize,
    pub synthetic_height: usize,
    pub synthetic_width: usize,
    pub synthetic_seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            clean_dir: None,
            noisy_dir: None,
            dataset_label: "synthetic".into(),
            synthetic_count: 128,
            synthetic_height: 96,
            synthetic_width: 96,
            synthetic_seed: 1,
        }
    }
}

/// Loads a config file, applies `--override key=value` pairs, and returns
/// the typed config plus the resolved TOML text.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<(Config, String)> {
    let mut doc: toml::Table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("cannot read config {}", p.display()))?;
            text.parse().with_context(|| format!("cannot parse config {}", p.display()))?
        }
        None => toml::Table::new(),
    };
    for ov in overrides {
        apply_override(&mut doc, ov)?;
    }
    let config: Config =
        Config::deserialize(toml::Value::Table(doc.clone())).context("invalid config")?;
    // Re-serialize the typed config so the resolved file carries every
    // field, defaults included.
    let resolved = toml::to_string_pretty(&config).context("serialize resolved config")?;
    Ok((config, resolved))
}

fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<()> {
    let Some((key, raw)) = spec.split_once('=') else {
        bail!("override {spec:?} is not of the form key.path=value");
    };
    let value = parse_toml_scalar(raw.trim());
    let mut parts = key.trim().split('.').collect::<Vec<_>>();
    let last = parts.pop().context("empty override key")?;
    let mut node = doc;
    for part in parts {
        node = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .with_context(|| format!("override {key:?} crosses a non-table value"))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

/// Parses an override value as a TOML literal, falling back to a string.
fn parse_toml_scalar(raw: &str) -> toml::Value {
    let probe = format!("v = {raw}");
    if let Ok(t) = probe.parse::<toml::Table>() {
        if let Some(v) = t.get("v") {
            return v.clone();
        }
    }
    toml::Value::String(raw.to_string())
}
