//! Search hyperparameters and the JSON config file format.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// All hyperparameters of a run. Field names double as the JSON config
/// schema; unknown fields are rejected, missing fields take the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    /// Mutation cycles per run (N).
    pub mutation_cycles: usize,
    /// Mutations generated per cycle (n).
    pub mutations_per_cycle: usize,
    /// Beams decoded per mutated instruction (n_b).
    pub beams_per_mutation: usize,
    /// Tokens decoded between replacements (m).
    pub replacement_period: usize,
    /// Beams kept on each replacement (k).
    pub top_k: usize,
    /// Cap on instructions admitted to the archive per cycle.
    pub archive_top_p: usize,
    /// Extra tokens generated for scoring previews, then discarded (l).
    pub lookahead: usize,
    pub max_new_tokens: usize,
    pub temperature: f64,
    pub sampling_top_k: usize,
    /// Root seed for every labeled random stream in the run.
    pub rng_seed: u64,
    /// Persistence parameter for rank-biased overlap.
    pub rbo_persistence: f64,
    /// Trailing moving-average window for metric series.
    pub smoothing_window: usize,
    /// Drop the candidate from the archive when one of its mutations is
    /// admitted. The seed is never dropped.
    pub archive_replace_candidate: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            mutation_cycles: 3,
            mutations_per_cycle: 5,
            beams_per_mutation: 1,
            replacement_period: 40,
            top_k: 3,
            archive_top_p: 3,
            lookahead: 0,
            max_new_tokens: 2048,
            temperature: 0.7,
            sampling_top_k: 40,
            rng_seed: 0,
            rbo_persistence: 0.9,
            smoothing_window: 5,
            archive_replace_candidate: false,
        }
    }
}

impl SearchConfig {
    /// Beams alive in one mutation cycle: n · n_b.
    pub fn beam_count(&self) -> usize {
        self.mutations_per_cycle * self.beams_per_mutation
    }

    /// Upper bound on replacement cycles: ceil(max_new_tokens / m). The
    /// actual count is lower when every beam finishes early.
    pub fn max_replacement_cycles(&self) -> usize {
        self.max_new_tokens.div_ceil(self.replacement_period)
    }

    /// Paper defaults with `overrides` applied on top; unknown keys and
    /// invariant violations are rejected.
    pub fn from_overrides(
        overrides: &serde_json::Map<String, serde_json::Value>,
    ) -> Result<Self, ConfigError> {
        let mut base = serde_json::to_value(Self::default())?;
        let obj = base.as_object_mut().expect("config serializes to an object");
        for (key, value) in overrides {
            obj.insert(key.clone(), value.clone());
        }
        let config: Self = serde_json::from_value(base)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_json_str(json: &str) -> Result<Self, ConfigError> {
        let config: Self = serde_json::from_str(json)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn at_least_one(field: &'static str, value: usize) -> Result<(), ConfigError> {
            if value == 0 {
                return Err(ConfigError::Invalid {
                    field,
                    reason: "must be at least 1".into(),
                });
            }
            Ok(())
        }
        at_least_one("mutation_cycles", self.mutation_cycles)?;
        at_least_one("mutations_per_cycle", self.mutations_per_cycle)?;
        at_least_one("beams_per_mutation", self.beams_per_mutation)?;
        at_least_one("replacement_period", self.replacement_period)?;
        at_least_one("top_k", self.top_k)?;
        at_least_one("archive_top_p", self.archive_top_p)?;
        at_least_one("max_new_tokens", self.max_new_tokens)?;
        at_least_one("sampling_top_k", self.sampling_top_k)?;
        at_least_one("smoothing_window", self.smoothing_window)?;
        if self.top_k > self.beam_count() {
            return Err(ConfigError::Invalid {
                field: "top_k",
                reason: "k exceeds beam count".into(),
            });
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(ConfigError::Invalid {
                field: "temperature",
                reason: "must be a finite non-negative number".into(),
            });
        }
        if !(self.rbo_persistence > 0.0 && self.rbo_persistence < 1.0) {
            return Err(ConfigError::Invalid {
                field: "rbo_persistence",
                reason: "must lie strictly between 0 and 1".into(),
            });
        }
        Ok(())
    }
}
