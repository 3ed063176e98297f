//! Experiment configuration: one TOML document with a section per component
//! plus dotted-path overrides (`--set sampler.delta=0.3`).
//!
//! Every field has a default, unknown keys are rejected everywhere, and the
//! fully resolved document round-trips through [`ExperimentConfig::to_toml`]
//! so a finished run's `resolved_config` file can be fed straight back in.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dwmoe::ModelConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::ingest::StreamConfig;
use crate::nn::Activation;
use crate::sampling::{SamplerConfig, Strategy};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Interaction file; empty means "must be provided before running".
    pub path: String,
    /// Field separator — `","` for CSV exports, `"::"` for the MovieLens-1M
    /// ratings layout.
    pub delimiter: String,
    /// Users with at most this many interactions are dropped.
    pub min_user_interactions: usize,
    /// Optional uniform user subsample applied after filtering.
    pub sample_users: Option<usize>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            path: String::new(),
            delimiter: ",".to_string(),
            min_user_interactions: 10,
            sample_users: None,
        }
    }
}

impl DatasetSection {
    pub fn validate(&self) -> Result<()> {
        if self.delimiter.is_empty() {
            return Err(Error::config("dataset.delimiter must be non-empty"));
        }
        if self.sample_users == Some(0) {
            return Err(Error::config("dataset.sample_users must be >= 1 when set"));
        }
        Ok(())
    }
}

/// Sampling-strategy knobs as they appear in the config file. The working
/// batch size is deliberately absent: it is always `stream.s_p`, so the
/// processing speed has a single source of truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub strategy: Strategy,
    pub delta: f64,
    pub lambda_res: f64,
    pub lambda_new: f64,
    pub reservoir_capacity: usize,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let base = SamplerConfig::default();
        SamplerSection {
            strategy: base.strategy,
            delta: base.delta,
            lambda_res: base.lambda_res,
            lambda_new: base.lambda_new,
            reservoir_capacity: 10_000,
        }
    }
}

impl SamplerSection {
    pub fn resolve(&self, batch_size: usize) -> SamplerConfig {
        SamplerConfig {
            strategy: self.strategy,
            delta: self.delta,
            lambda_res: self.lambda_res,
            lambda_new: self.lambda_new,
            batch_size,
        }
    }

    pub fn validate(&self, batch_size: usize) -> Result<()> {
        if self.reservoir_capacity == 0 {
            return Err(Error::config("sampler.reservoir_capacity must be >= 1"));
        }
        self.resolve(batch_size).validate()
    }
}

/// Model architecture as configured; user and item counts come from the
/// ingested dataset at run time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub n_experts: usize,
    pub embedding_dim: usize,
    pub expert_widths: Vec<usize>,
    pub hidden_activation: Activation,
    pub gate_activation: Activation,
    pub output_activation: Activation,
}

impl Default for ModelSection {
    fn default() -> Self {
        let base = ModelConfig::default();
        ModelSection {
            n_experts: base.n_experts,
            embedding_dim: base.embedding_dim,
            expert_widths: base.expert_widths,
            hidden_activation: base.hidden_activation,
            gate_activation: base.gate_activation,
            output_activation: base.output_activation,
        }
    }
}

impl ModelSection {
    pub fn resolve(&self, n_users: usize, n_items: usize) -> ModelConfig {
        ModelConfig {
            n_users,
            n_items,
            n_experts: self.n_experts,
            embedding_dim: self.embedding_dim,
            expert_widths: self.expert_widths.clone(),
            hidden_activation: self.hidden_activation,
            gate_activation: self.gate_activation,
            output_activation: self.output_activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        // placeholder counts: the data-independent checks are what matter here
        self.resolve(1, 1).validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Default report directory; `--out` overrides it.
    pub dir: String,
    /// Also write the final model parameters next to the reports.
    pub save_model: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "out".to_string(), save_model: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetSection,
    pub stream: StreamConfig,
    pub sampler: SamplerSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("config parse error: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::config(format!("config serialization error: {e}")))
    }

    /// Applies one `--set key=value` override. The key is a dotted path into
    /// the document; the value is parsed as a TOML literal (`0.5`, `true`,
    /// `[64, 32]`) and falls back to a plain string (`vrs`) so enum values
    /// do not need shell-level quoting. Typos in the key surface as unknown
    /// or ill-typed fields when the patched document is re-deserialized.
    pub fn apply_set(&mut self, dotted_key: &str, raw_value: &str) -> Result<()> {
        let mut root = toml::Table::try_from(&*self)
            .map_err(|e| Error::config(format!("config could not be re-encoded: {e}")))?;

        let segments: Vec<&str> = dotted_key.split('.').collect();
        if segments.iter().any(|s| s.is_empty()) {
            return Err(Error::config(format!("bad override key '{dotted_key}'")));
        }
        let (last, parents) = segments.split_last().expect("split yields at least one segment");
        let mut node = &mut root;
        for parent in parents {
            node = node
                .get_mut(*parent)
                .and_then(toml::Value::as_table_mut)
                .ok_or_else(|| {
                    Error::config(format!("override key '{dotted_key}': no section '{parent}'"))
                })?;
        }
        node.insert((*last).to_string(), parse_toml_literal(raw_value));

        *self = toml::Value::Table(root).try_into().map_err(|e| {
            Error::config(format!("override '{dotted_key}={raw_value}' rejected: {e}"))
        })?;
        Ok(())
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        self.sampler.resolve(self.stream.s_p)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.stream.validate()?;
        self.sampler.validate(self.stream.s_p)?;
        self.model.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        Ok(())
    }
}

/// Parses a `--set` value: TOML literal first, bare string as the fallback.
fn parse_toml_literal(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut table) => table.remove("v").expect("parsed table contains the wrapped key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// One sweep dimension: a dotted config key and the values to try.
#[derive(Debug, Clone, PartialEq)]
pub struct GridAxis {
    pub key: String,
    pub values: Vec<String>,
}

/// Parses a `--grid key=v1,v2,...` specification.
pub fn parse_grid_axis(spec: &str) -> Result<GridAxis> {
    let (key, values) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(format!("grid spec '{spec}' is not of the form key=v1,v2")))?;
    let values: Vec<String> =
        values.split(',').map(str::trim).filter(|v| !v.is_empty()).map(String::from).collect();
    if key.is_empty() || values.is_empty() {
        return Err(Error::config(format!("grid spec '{spec}' needs a key and at least one value")));
    }
    Ok(GridAxis { key: key.to_string(), values })
}

/// All combinations of axis values, odometer order (last axis fastest).
pub fn grid_points(axes: &[GridAxis]) -> Vec<Vec<(String, String)>> {
    let mut points: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for axis in axes {
        let mut next = Vec::with_capacity(points.len() * axis.values.len());
        for point in &points {
            for value in &axis.values {
                let mut grown = point.clone();
                grown.push((axis.key.clone(), value.clone()));
                next.push(grown);
            }
        }
        points = next;
    }
    points
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let config = ExperimentConfig::default();
        let text = config.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn defaults_mirror_the_reference_settings() {
        let c = ExperimentConfig::default();
        assert_eq!(c.stream.s_p, 256);
        assert_eq!(c.train.learning_rate, 0.001);
        assert_eq!(c.train.gamma, 0.01);
        assert_eq!(c.train.n_negative, 4);
        assert_eq!(c.sampler.reservoir_capacity, 10_000);
        assert_eq!(c.eval.n_negatives, 99);
        assert_eq!(c.eval.k, 10);
        assert_eq!(c.model.n_experts, 8);
        assert_eq!(c.model.embedding_dim, 32);
        assert_eq!(c.dataset.min_user_interactions, 10);
        assert!((c.stream.train_fraction - 0.9).abs() < 1e-12);
    }

    #[test]
    fn partial_documents_fill_in_defaults() {
        let config = ExperimentConfig::from_toml(
            r#"
            seed = 7
            [sampler]
            strategy = "sw"
            delta = 0.25
            "#,
        )
        .unwrap();
        assert_eq!(config.seed, 7);
        assert_eq!(config.sampler.strategy, Strategy::Sw);
        assert_eq!(config.sampler.delta, 0.25);
        assert_eq!(config.sampler.reservoir_capacity, 10_000, "untouched fields keep defaults");
        assert_eq!(config.train.n_negative, 4);
    }

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        assert!(ExperimentConfig::from_toml("frobnicate = 1").is_err());
        assert!(ExperimentConfig::from_toml("[train]\nlearning_rat = 0.1").is_err());
        assert!(ExperimentConfig::from_toml("[sampler]\nbatch_size = 64").is_err(),
            "batch size lives in stream.s_p only");
    }

    #[test]
    fn set_overrides_patch_nested_fields_with_toml_literals() {
        let mut config = ExperimentConfig::default();
        config.apply_set("sampler.delta", "0.75").unwrap();
        config.apply_set("model.expert_widths", "[64, 32]").unwrap();
        config.apply_set("sampler.strategy", "rr").unwrap();
        config.apply_set("seed", "42").unwrap();
        config.apply_set("dataset.path", "data/stream.csv").unwrap();
        config.apply_set("train.gate_loss_batch_level", "true").unwrap();
        assert_eq!(config.sampler.delta, 0.75);
        assert_eq!(config.model.expert_widths, vec![64, 32]);
        assert_eq!(config.sampler.strategy, Strategy::Rr);
        assert_eq!(config.seed, 42);
        assert_eq!(config.dataset.path, "data/stream.csv");
        assert!(config.train.gate_loss_batch_level);
    }

    #[test]
    fn set_overrides_reach_optional_fields_that_defaults_omit() {
        let mut config = ExperimentConfig::default();
        assert_eq!(config.dataset.sample_users, None);
        config.apply_set("dataset.sample_users", "500").unwrap();
        assert_eq!(config.dataset.sample_users, Some(500));
    }

    #[test]
    fn bad_overrides_are_rejected_loudly() {
        let mut config = ExperimentConfig::default();
        assert!(config.apply_set("sampler.no_such_knob", "1").is_err());
        assert!(config.apply_set("no_such_section.x", "1").is_err());
        assert!(config.apply_set("train.learning_rate", "\"fast\"").is_err(), "type mismatch");
        assert!(config.apply_set("sampler..delta", "1").is_err());
        // failed overrides must not half-apply
        assert_eq!(config, ExperimentConfig::default());
    }

    #[test]
    fn validation_composes_component_checks() {
        let mut config = ExperimentConfig::default();
        assert!(config.validate().is_ok());
        config.sampler.delta = -0.5;
        assert!(config.validate().is_err());
        let mut config = ExperimentConfig::default();
        config.stream.train_fraction = 1.0;
        assert!(config.validate().is_err());
        let mut config = ExperimentConfig::default();
        config.model.expert_widths.clear();
        assert!(config.validate().is_err());
        let mut config = ExperimentConfig::default();
        config.sampler.reservoir_capacity = 0;
        assert!(config.validate().is_err());
    }

    #[test]
    fn resolved_sampler_takes_its_batch_size_from_the_stream() {
        let mut config = ExperimentConfig::default();
        config.stream.s_p = 128;
        assert_eq!(config.sampler_config().batch_size, 128);
    }

    #[test]
    fn grid_axes_parse_and_expand_to_the_cartesian_product() {
        let a = parse_grid_axis("model.n_experts=2,4,8").unwrap();
        assert_eq!(a.key, "model.n_experts");
        assert_eq!(a.values, vec!["2", "4", "8"]);
        let b = parse_grid_axis("stream.s_r=128,512").unwrap();
        let points = grid_points(&[a, b]);
        assert_eq!(points.len(), 6);
        assert_eq!(points[0], vec![
            ("model.n_experts".to_string(), "2".to_string()),
            ("stream.s_r".to_string(), "128".to_string()),
        ]);
        assert_eq!(points[5], vec![
            ("model.n_experts".to_string(), "8".to_string()),
            ("stream.s_r".to_string(), "512".to_string()),
        ]);
        assert!(parse_grid_axis("nonsense").is_err());
        assert!(parse_grid_axis("key=").is_err());
    }

    #[test]
    fn empty_grid_yields_the_single_template_point() {
        let points = grid_points(&[]);
        assert_eq!(points, vec![Vec::new()]);
    }
}
