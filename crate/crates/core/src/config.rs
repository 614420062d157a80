//! Every tunable threshold and default used by the pipeline.
//!
//! The whole tree deserializes from JSON with per-field defaults, so a config
//! file only needs to name the values it overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::localize::InfraClass;

pub const DEFAULT_PAYLOAD_CAP: usize = 16 * 1024;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub wire: WireConfig,
    pub intent: IntentConfig,
    pub metrics: MetricsConfig,
    pub localize: LocalizeConfig,
    pub diagnose: DiagnoseConfig,
    pub gate: GateConfig,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let m = &self.metrics;
        if m.window_len < 2 {
            return Err(ConfigError::Invalid(format!("metrics.window_len must be >= 2, got {}", m.window_len)));
        }
        if m.stride < 1 {
            return Err(ConfigError::Invalid("metrics.stride must be >= 1".into()));
        }
        if m.context_limit == 0 {
            return Err(ConfigError::Invalid("metrics.context_limit must be positive".into()));
        }
        let l = &self.localize;
        for (name, q) in [
            ("upper_quantile", l.upper_quantile),
            ("lower_quantile", l.lower_quantile),
            ("surprise_quantile", l.surprise_quantile),
        ] {
            if !(0.0..=1.0).contains(&q) {
                return Err(ConfigError::Invalid(format!("localize.{name} must lie in [0,1]")));
            }
        }
        if l.z_thresh.is_nan() || l.z_thresh <= 0.0 {
            return Err(ConfigError::Invalid("localize.z_thresh must be positive".into()));
        }
        if l.forest_trees == 0 || l.forest_subsample < 2 {
            return Err(ConfigError::Invalid("localize forest needs >= 1 tree and subsample >= 2".into()));
        }
        if !(0.0..=1.0).contains(&self.diagnose.fallback_confidence) {
            return Err(ConfigError::Invalid("diagnose.fallback_confidence must lie in [0,1]".into()));
        }
        if self.gate.budget_tokens < crate::gate::MIN_BUDGET_TOKENS {
            return Err(ConfigError::Invalid(format!(
                "gate.budget_tokens must be >= {}",
                crate::gate::MIN_BUDGET_TOKENS
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WireConfig {
    pub payload_cap_bytes: usize,
    /// Skip malformed lines instead of aborting the read.
    pub skip_malformed: bool,
    /// Reject traces not sorted by (step, ts_ms) instead of re-sorting them.
    pub strict_order: bool,
}

impl Default for WireConfig {
    fn default() -> Self {
        WireConfig {
            payload_cap_bytes: DEFAULT_PAYLOAD_CAP,
            skip_malformed: false,
            strict_order: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntentConfig {
    /// Tool names whose calls count as editing an artifact.
    pub edit_tools: Vec<String>,
}

impl Default for IntentConfig {
    fn default() -> Self {
        let tools = [
            "file_write",
            "write_file",
            "edit_file",
            "str_replace_editor",
            "patch_apply",
            "apply_patch",
            "config_apply",
            "kubectl_apply",
        ];
        IntentConfig {
            edit_tools: tools.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub window_len: u64,
    pub stride: u64,
    /// Denominator for context saturation, in prompt tokens.
    pub context_limit: u64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            window_len: 8,
            stride: 4,
            context_limit: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalizeConfig {
    pub z_thresh: f64,
    pub upper_quantile: f64,
    pub lower_quantile: f64,
    pub surprise_quantile: f64,
    pub surprise_floor_bits: f64,
    pub repeat_min: usize,
    pub forest_trees: usize,
    pub forest_subsample: usize,
    pub forest_seed: u64,
    /// Phrases in a model response that count as a success claim.
    pub claim_phrases: Vec<String>,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        LocalizeConfig {
            z_thresh: 3.5,
            upper_quantile: 0.95,
            lower_quantile: 0.05,
            surprise_quantile: 0.95,
            surprise_floor_bits: 1.0,
            repeat_min: 3,
            forest_trees: 100,
            forest_subsample: 256,
            forest_seed: 0,
            claim_phrases: vec![
                "completed successfully".into(),
                "task is resolved".into(),
                "fix verified".into(),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnoseConfig {
    pub top_k: usize,
    pub max_factors: usize,
    pub fallback_confidence: f64,
    pub summary_max_chars: usize,
    pub backend: BackendConfig,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        DiagnoseConfig {
            top_k: 12,
            max_factors: 5,
            fallback_confidence: 0.3,
            summary_max_chars: 1200,
            backend: BackendConfig::Fallback,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    #[default]
    Fallback,
    /// Runs `program args... <context.json> <diagnosis.json>`.
    Command {
        program: String,
        #[serde(default)]
        args: Vec<String>,
        #[serde(default = "default_backend_timeout")]
        timeout_ms: u64,
    },
}

fn default_backend_timeout() -> u64 {
    60_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateConfig {
    /// Infrastructure classes that, when they dominate a cause, block
    /// corrective guidance.
    pub deny_list: Vec<InfraClass>,
    pub budget_tokens: usize,
    pub max_citations: usize,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            deny_list: vec![
                InfraClass::Platform,
                InfraClass::Connection,
                InfraClass::OutOfMemory,
                InfraClass::Container,
            ],
            budget_tokens: 1200,
            max_citations: 3,
        }
    }
}
