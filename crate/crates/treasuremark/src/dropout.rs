//! Dual marker dropout (dataset-level, sample-level) on the prompt side.
//!
//! Draws are derived from a stable hash of (seed, record id[, tag name])
//! rather than a sequential RNG stream, so decisions are insensitive to
//! record processing order and parallelism. The completion-side list never
//! passes through here.

use crate::taxonomy::{Category, MarkerList};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutConfig {
    pub dataset_rate: f64,
    pub sample_rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DropoutConfigError {
    #[error("rate {0} is outside [0,1]")]
    RateOutOfRange(String),
    #[error("unknown dropout preset `{0}`")]
    UnknownPreset(String),
}

impl DropoutConfig {
    pub fn new(dataset_rate: f64, sample_rate: f64, seed: u64) -> Result<Self, DropoutConfigError> {
        for rate in [dataset_rate, sample_rate] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(DropoutConfigError::RateOutOfRange(rate.to_string()));
            }
        }
        Ok(Self {
            dataset_rate,
            sample_rate,
            seed,
        })
    }

    /// Named presets: `0_50`, `50_50`, `70_50` (dataset_sample percentages).
    pub fn preset(name: &str, seed: u64) -> Result<Self, DropoutConfigError> {
        let (dataset_rate, sample_rate) = match name {
            "0_50" => (0.0, 0.5),
            "50_50" => (0.5, 0.5),
            "70_50" => (0.7, 0.5),
            other => return Err(DropoutConfigError::UnknownPreset(other.to_string())),
        };
        Ok(Self {
            dataset_rate,
            sample_rate,
            seed,
        })
    }

    pub fn validate(&self) -> Result<(), DropoutConfigError> {
        Self::new(self.dataset_rate, self.sample_rate, self.seed).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DropoutDecision {
    pub record_id: String,
    pub dataset_dropped: bool,
    pub kept_categories: Vec<Category>,
}

// FNV-1a 64, seeded; stable across platforms and runs.
fn stable_hash(seed: u64, parts: &[&[u8]]) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut h = OFFSET;
    for b in seed.to_le_bytes() {
        h = (h ^ b as u64).wrapping_mul(PRIME);
    }
    for part in parts {
        for &b in *part {
            h = (h ^ b as u64).wrapping_mul(PRIME);
        }
        h = (h ^ 0xff).wrapping_mul(PRIME);
    }
    // final avalanche (splitmix64)
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d049bb133111eb);
    h ^ (h >> 31)
}

fn unit_draw(seed: u64, parts: &[&[u8]]) -> f64 {
    (stable_hash(seed, parts) >> 11) as f64 / (1u64 << 53) as f64
}

/// Decide which prompt-side markers survive for one record.
pub fn decide(record_id: &str, markers: &MarkerList, cfg: &DropoutConfig) -> DropoutDecision {
    let dataset_draw = unit_draw(cfg.seed, &[b"dataset", record_id.as_bytes()]);
    if dataset_draw < cfg.dataset_rate {
        return DropoutDecision {
            record_id: record_id.to_string(),
            dataset_dropped: true,
            kept_categories: Vec::new(),
        };
    }
    let kept_categories = markers
        .categories()
        .filter(|c| {
            unit_draw(
                cfg.seed,
                &[b"sample", record_id.as_bytes(), c.tag_name().as_bytes()],
            ) >= cfg.sample_rate
        })
        .collect();
    DropoutDecision {
        record_id: record_id.to_string(),
        dataset_dropped: false,
        kept_categories,
    }
}

/// Filter a marker list down to the decision's kept categories.
pub fn apply_prompt_dropout(markers: &MarkerList, decision: &DropoutDecision) -> MarkerList {
    if decision.dataset_dropped {
        return MarkerList::new();
    }
    let mut out = markers.clone();
    out.retain_categories(&decision.kept_categories);
    out
}
